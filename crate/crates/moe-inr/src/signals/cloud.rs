//! Oriented point clouds, nearest-neighbor queries, and SDF sample batches.
//!
//! Ground-truth signed distance at a query is the distance to the closest
//! cloud point, signed by that single point's normal (negative inside).

use std::io::{BufRead, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// SDF training domain bound; samples clamp into `[-DOMAIN, DOMAIN]^3`.
pub const SDF_DOMAIN: f64 = 1.2;

#[derive(Debug, Clone)]
pub struct OrientedPointCloud {
    points: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    index: GridIndex,
    /// (center, scale) of the normalization that mapped the input into
    /// `[-1, 1]^3`; identity for analytic clouds.
    transform: ([f64; 3], f64),
}

impl OrientedPointCloud {
    /// Normalize raw points into `[-1, 1]^3` (uniform scale about the
    /// bounding-box center) and unitize normals.
    pub fn from_points(points: Vec<[f64; 3]>, normals: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Cloud("empty point cloud".into()));
        }
        if points.len() != normals.len() {
            return Err(Error::Cloud("points and normals differ in length".into()));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
        let half = (0..3).map(|d| (hi[d] - lo[d]) / 2.0).fold(0.0f64, f64::max).max(1e-12);
        let scale = 1.0 / half;
        let points: Vec<[f64; 3]> = points
            .iter()
            .map(|p| {
                [
                    (p[0] - center[0]) * scale,
                    (p[1] - center[1]) * scale,
                    (p[2] - center[2]) * scale,
                ]
            })
            .collect();
        Self::from_normalized_with_transform(points, normals, (center, scale))
    }

    /// Use points already inside the domain, skipping normalization.
    pub fn from_normalized(points: Vec<[f64; 3]>, normals: Vec<[f64; 3]>) -> Result<Self> {
        Self::from_normalized_with_transform(points, normals, ([0.0; 3], 1.0))
    }

    fn from_normalized_with_transform(
        points: Vec<[f64; 3]>,
        normals: Vec<[f64; 3]>,
        transform: ([f64; 3], f64),
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Cloud("empty point cloud".into()));
        }
        let normals: Vec<[f64; 3]> = normals
            .iter()
            .map(|n| {
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                if len < 1e-12 {
                    Err(Error::Cloud("zero-length normal".into()))
                } else {
                    Ok([n[0] / len, n[1] / len, n[2] / len])
                }
            })
            .collect::<Result<_>>()?;
        let index = GridIndex::build(&points);
        Ok(Self { points, normals, index, transform })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    /// Map a point from the original input frame into the normalized frame.
    pub fn normalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        let (c, s) = self.transform;
        [(p[0] - c[0]) * s, (p[1] - c[1]) * s, (p[2] - c[2]) * s]
    }

    /// Inverse of [`Self::normalize_point`].
    pub fn denormalize_point(&self, p: [f64; 3]) -> [f64; 3] {
        let (c, s) = self.transform;
        [p[0] / s + c[0], p[1] / s + c[1], p[2] / s + c[2]]
    }

    /// Index and squared distance of the nearest cloud point.
    pub fn nearest(&self, q: [f64; 3]) -> (usize, f64) {
        self.index.nearest(&self.points, q)
    }
}

/// Signed distance to the cloud at `query`: distance to the nearest point,
/// negative when the offset opposes that point's normal.
pub fn sdf_ground_truth(query: [f64; 3], cloud: &OrientedPointCloud) -> f64 {
    let (i, d2) = cloud.nearest(query);
    let p = cloud.points[i];
    let n = cloud.normals[i];
    let off = [query[0] - p[0], query[1] - p[1], query[2] - p[2]];
    let dot = off[0] * n[0] + off[1] * n[1] + off[2] * n[2];
    let d = d2.sqrt();
    if dot < 0.0 {
        -d
    } else {
        d
    }
}

/// Uniform hash grid over a point set for nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct GridIndex {
    lo: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
}

impl GridIndex {
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0f64, f64::max).max(1e-9);
        let k = ((points.len() as f64 / 4.0).cbrt().ceil() as usize).clamp(1, 96);
        let cell = extent / k as f64;
        let dims = [
            (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1),
            (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1),
            (((hi[2] - lo[2]) / cell).floor() as usize + 1).max(1),
        ];
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(lo, cell, dims, *p);
            cells[Self::flat(dims, c)].push(i as u32);
        }
        Self { lo, cell, dims, cells }
    }

    fn cell_of(lo: [f64; 3], cell: f64, dims: [usize; 3], p: [f64; 3]) -> [usize; 3] {
        let mut c = [0usize; 3];
        for d in 0..3 {
            let t = ((p[d] - lo[d]) / cell).floor();
            c[d] = (t.max(0.0) as usize).min(dims[d] - 1);
        }
        c
    }

    fn flat(dims: [usize; 3], c: [usize; 3]) -> usize {
        (c[0] * dims[1] + c[1]) * dims[2] + c[2]
    }

    /// Squared distance from `q` to the axis-aligned box of cell `c`.
    fn cell_dist2(&self, q: [f64; 3], c: [isize; 3]) -> f64 {
        let mut d2 = 0.0;
        for d in 0..3 {
            let lo = self.lo[d] + c[d] as f64 * self.cell;
            let hi = lo + self.cell;
            let v = q[d];
            let gap = if v < lo { lo - v } else if v > hi { v - hi } else { 0.0 };
            d2 += gap * gap;
        }
        d2
    }

    /// Index and squared distance of the nearest point to `q`.
    ///
    /// Expanding shell search: after finishing a shell, stop as soon as no
    /// unexplored cell can beat the best candidate. Queries may lie outside
    /// the indexed bounding box.
    pub fn nearest(&self, points: &[[f64; 3]], q: [f64; 3]) -> (usize, f64) {
        let home = Self::cell_of(self.lo, self.cell, self.dims, q);
        let home = [home[0] as isize, home[1] as isize, home[2] as isize];
        let max_dim = *self.dims.iter().max().unwrap() as isize;
        let mut best = (usize::MAX, f64::INFINITY);

        for ring in 0..=(max_dim + 1) {
            let mut ring_min = f64::INFINITY;
            let visit = |c: [isize; 3], best: &mut (usize, f64), ring_min: &mut f64| {
                if c[0] < 0
                    || c[1] < 0
                    || c[2] < 0
                    || c[0] >= self.dims[0] as isize
                    || c[1] >= self.dims[1] as isize
                    || c[2] >= self.dims[2] as isize
                {
                    return;
                }
                let d2 = self.cell_dist2(q, c);
                *ring_min = ring_min.min(d2);
                if d2 >= best.1 {
                    return;
                }
                let cell = &self.cells[Self::flat(self.dims, [c[0] as usize, c[1] as usize, c[2] as usize])];
                for &pi in cell {
                    let p = points[pi as usize];
                    let dx = p[0] - q[0];
                    let dy = p[1] - q[1];
                    let dz = p[2] - q[2];
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 < best.1 || (d2 == best.1 && (pi as usize) < best.0) {
                        *best = (pi as usize, d2);
                    }
                }
            };

            if ring == 0 {
                visit(home, &mut best, &mut ring_min);
            } else {
                // Iterate the shell at Chebyshev distance `ring`.
                for a in -ring..=ring {
                    for b in -ring..=ring {
                        visit([home[0] - ring, home[1] + a, home[2] + b], &mut best, &mut ring_min);
                        visit([home[0] + ring, home[1] + a, home[2] + b], &mut best, &mut ring_min);
                    }
                }
                for a in (-ring + 1)..ring {
                    for b in -ring..=ring {
                        visit([home[0] + a, home[1] - ring, home[2] + b], &mut best, &mut ring_min);
                        visit([home[0] + a, home[1] + ring, home[2] + b], &mut best, &mut ring_min);
                    }
                }
                for a in (-ring + 1)..ring {
                    for b in (-ring + 1)..ring {
                        visit([home[0] + a, home[1] + b, home[2] - ring], &mut best, &mut ring_min);
                        visit([home[0] + a, home[1] + b, home[2] + ring], &mut best, &mut ring_min);
                    }
                }
            }
            // The next shell is at least one cell farther out than this
            // shell's closest face; once even this shell cannot beat the
            // best squared distance, no farther shell can.
            if best.0 != usize::MAX && ring_min > best.1 {
                break;
            }
        }
        best
    }
}

/// One batch of SDF supervision points: surface (gt 0), fine, and coarse.
#[derive(Debug, Clone)]
pub struct SdfSampleBatch {
    /// `(n_surface + n_fine + n_coarse) x 3` points inside the domain cube.
    pub points: Tensor<f64>,
    /// Matching ground-truth signed distances, `n x 1`.
    pub sdf: Tensor<f64>,
    pub n_surface: usize,
    pub n_fine: usize,
    pub n_coarse: usize,
}

/// Laplace sample with per-axis standard deviation `sigma` (scale b = sigma/sqrt 2).
fn laplace(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let b = sigma / std::f64::consts::SQRT_2;
    let u: f64 = rng.gen_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Draw a supervision batch: surface points uniformly from the cloud (with
/// replacement, gt fixed at 0), fine and coarse points as surface points
/// plus per-axis Laplacian offsets, clamped to the domain cube, with ground
/// truth from [`sdf_ground_truth`].
pub fn sample_sdf_batch(
    cloud: &OrientedPointCloud,
    counts: (usize, usize, usize),
    sigma_coarse: f64,
    sigma_fine: f64,
    seed: u64,
) -> Result<SdfSampleBatch> {
    if sigma_coarse <= 0.0 || sigma_fine <= 0.0 {
        return Err(Error::Config("Laplace noise deviations must be positive".into()));
    }
    let (n_surface, n_fine, n_coarse) = counts;
    let total = n_surface + n_fine + n_coarse;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(total * 3);
    let mut sdf = Vec::with_capacity(total);

    for _ in 0..n_surface {
        let p = cloud.points[rng.gen_range(0..cloud.len())];
        points.extend_from_slice(&p);
        sdf.push(0.0);
    }
    for (count, sigma) in [(n_fine, sigma_fine), (n_coarse, sigma_coarse)] {
        for _ in 0..count {
            let p = cloud.points[rng.gen_range(0..cloud.len())];
            let q = [
                (p[0] + laplace(&mut rng, sigma)).clamp(-SDF_DOMAIN, SDF_DOMAIN),
                (p[1] + laplace(&mut rng, sigma)).clamp(-SDF_DOMAIN, SDF_DOMAIN),
                (p[2] + laplace(&mut rng, sigma)).clamp(-SDF_DOMAIN, SDF_DOMAIN),
            ];
            points.extend_from_slice(&q);
            sdf.push(sdf_ground_truth(q, cloud));
        }
    }
    Ok(SdfSampleBatch {
        points: Tensor::new(vec![total, 3], points)?,
        sdf: Tensor::new(vec![total, 1], sdf)?,
        n_surface,
        n_fine,
        n_coarse,
    })
}

/// Fibonacci-spiral sphere cloud of radius `r`, outward normals.
pub fn sphere_cloud(n: usize, r: f64) -> OrientedPointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let rad = (1.0 - z * z).sqrt();
        let th = golden * i as f64;
        let nrm = [rad * th.cos(), rad * th.sin(), z];
        points.push([nrm[0] * r, nrm[1] * r, nrm[2] * r]);
        normals.push(nrm);
    }
    OrientedPointCloud::from_normalized(points, normals).unwrap()
}

/// Torus cloud (major radius `big_r`, tube radius `small_r`), outward normals.
pub fn torus_cloud(n_theta: usize, n_phi: usize, big_r: f64, small_r: f64) -> OrientedPointCloud {
    let tau = 2.0 * std::f64::consts::PI;
    let mut points = Vec::with_capacity(n_theta * n_phi);
    let mut normals = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let th = tau * i as f64 / n_theta as f64;
        for j in 0..n_phi {
            let ph = tau * j as f64 / n_phi as f64;
            let (ct, st) = (th.cos(), th.sin());
            let (cp, sp) = (ph.cos(), ph.sin());
            points.push([(big_r + small_r * cp) * ct, (big_r + small_r * cp) * st, small_r * sp]);
            normals.push([cp * ct, cp * st, sp]);
        }
    }
    OrientedPointCloud::from_normalized(points, normals).unwrap()
}

/// Read a whitespace `x y z nx ny nz` text file.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Cloud(format!("line {}: {}", ln + 1, e)))?;
        if vals.len() < 6 {
            return Err(Error::Cloud(format!("line {}: expected 6 values", ln + 1)));
        }
        points.push([vals[0], vals[1], vals[2]]);
        normals.push([vals[3], vals[4], vals[5]]);
    }
    OrientedPointCloud::from_points(points, normals)
}

/// Read vertices with normals from an ASCII or binary little-endian PLY.
pub fn read_ply(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    // Header is ASCII lines up to end_header.
    loop {
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            file.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
        }
        let text = String::from_utf8_lossy(&line).trim().to_string();
        let done = text == "end_header";
        header.push(text);
        if done {
            break;
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(Error::Cloud("not a PLY file".into()));
    }
    let mut binary = false;
    let mut n_vertices = 0usize;
    let mut props: Vec<(String, usize)> = Vec::new(); // (name, byte size)
    let mut in_vertex = false;
    for line in &header {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", ..] => binary = false,
            ["format", "binary_little_endian", ..] => binary = true,
            ["format", other, ..] => {
                return Err(Error::Cloud(format!("unsupported PLY format {}", other)))
            }
            ["element", "vertex", n] => {
                in_vertex = true;
                n_vertices = n.parse().map_err(|_| Error::Cloud("bad vertex count".into()))?;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                let size = match *ty {
                    "float" | "float32" | "int" | "int32" | "uint" | "uint32" => 4,
                    "double" | "float64" => 8,
                    "uchar" | "uint8" | "char" | "int8" => 1,
                    "short" | "ushort" | "int16" | "uint16" => 2,
                    other => return Err(Error::Cloud(format!("unsupported property type {}", other))),
                };
                props.push((name.to_string(), size));
            }
            _ => {}
        }
    }
    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    let need = ["x", "y", "z", "nx", "ny", "nz"];
    let cols: Vec<usize> = need
        .iter()
        .map(|n| find(n).ok_or_else(|| Error::Cloud(format!("PLY missing property {}", n))))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(n_vertices);
    let mut normals = Vec::with_capacity(n_vertices);
    if binary {
        let types: Vec<usize> = props.iter().map(|(_, s)| *s).collect();
        let row_bytes: usize = types.iter().sum();
        let mut buf = vec![0u8; row_bytes];
        for _ in 0..n_vertices {
            file.read_exact(&mut buf)?;
            let mut vals = vec![0.0f64; props.len()];
            let mut off = 0;
            for (k, &size) in types.iter().enumerate() {
                vals[k] = match size {
                    4 => f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
                        as f64,
                    8 => f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()),
                    1 => buf[off] as f64,
                    _ => {
                        let v = i16::from_le_bytes([buf[off], buf[off + 1]]);
                        v as f64
                    }
                };
                off += size;
            }
            points.push([vals[cols[0]], vals[cols[1]], vals[cols[2]]]);
            normals.push([vals[cols[3]], vals[cols[4]], vals[cols[5]]]);
        }
    } else {
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        for line in text.lines().take(n_vertices) {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Cloud(e.to_string()))?;
            if vals.len() < props.len() {
                return Err(Error::Cloud("short PLY vertex row".into()));
            }
            points.push([vals[cols[0]], vals[cols[1]], vals[cols[2]]]);
            normals.push([vals[cols[3]], vals[cols[4]], vals[cols[5]]]);
        }
    }
    OrientedPointCloud::from_points(points, normals)
}

/// Load a point cloud by extension (`.xyz` text or `.ply`).
pub fn read_cloud(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_nearest(points: &[[f64; 3]], q: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn query_on_a_cloud_point_is_zero() {
        let cloud = sphere_cloud(500, 0.8);
        let p = cloud.points()[123];
        assert_eq!(sdf_ground_truth(p, &cloud), 0.0);
    }

    #[test]
    fn origin_inside_unit_sphere_is_minus_one() {
        let cloud = sphere_cloud(2000, 1.0);
        let d = sdf_ground_truth([0.0, 0.0, 0.0], &cloud);
        assert!((d + 1.0).abs() < 1e-12, "sdf at origin {}", d);
    }

    #[test]
    fn sphere_sdf_matches_analytic_form() {
        let r = 0.5;
        let cloud = sphere_cloud(20_000, r);
        // Sampling resolution ~ sqrt(area / n).
        let res = (4.0 * std::f64::consts::PI * r * r / 20_000.0).sqrt() * 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let q: [f64; 3] = [
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-1.1..1.1),
                rng.gen_range(-1.1..1.1),
            ];
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
            let analytic = norm - r;
            let got = sdf_ground_truth(q, &cloud);
            assert!((got - analytic).abs() < res, "{} vs {}", got, analytic);
        }
    }

    #[test]
    fn grid_index_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<[f64; 3]> = (0..3000)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let idx = GridIndex::build(&points);
        for _ in 0..1000 {
            // Include queries outside the indexed bounding box.
            let q = [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ];
            let fast = idx.nearest(&points, q);
            let brute = brute_nearest(&points, q);
            assert_eq!(fast.0, brute.0, "at {:?}", q);
            assert!((fast.1 - brute.1).abs() < 1e-15);
        }
    }

    #[test]
    fn sign_matches_linear_scan_oracle() {
        let cloud = torus_cloud(120, 60, 0.7, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let q = [
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            ];
            let (bi, bd2) = brute_nearest(cloud.points(), q);
            let p = cloud.points()[bi];
            let n = cloud.normals()[bi];
            let dot = (q[0] - p[0]) * n[0] + (q[1] - p[1]) * n[1] + (q[2] - p[2]) * n[2];
            let expect = if dot < 0.0 { -bd2.sqrt() } else { bd2.sqrt() };
            assert_eq!(sdf_ground_truth(q, &cloud), expect);
        }
    }

    #[test]
    fn laplace_offsets_have_requested_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = 4e-2;
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let v = laplace(&mut rng, sigma);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        assert!((std - sigma).abs() < 0.02 * sigma, "std {}", std);
    }

    #[test]
    fn sdf_batches_are_deterministic_and_clamped() {
        let cloud = sphere_cloud(2000, 0.9);
        let a = sample_sdf_batch(&cloud, (100, 100, 100), 4e-2, 4e-6, 7).unwrap();
        let b = sample_sdf_batch(&cloud, (100, 100, 100), 4e-2, 4e-6, 7).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.sdf, b.sdf);
        assert!(a.points.data().iter().all(|&v| v.abs() <= SDF_DOMAIN));
        // Surface block has gt exactly zero.
        assert!(a.sdf.data()[..100].iter().all(|&v| v == 0.0));
        // Fine block stays near the surface.
        assert!(a.sdf.data()[100..200].iter().all(|&v| v.abs() < 1e-4));
    }

    #[test]
    fn normalization_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    rng.gen_range(10.0..20.0),
                    rng.gen_range(-5.0..30.0),
                    rng.gen_range(100.0..101.0),
                ]
            })
            .collect();
        let normals = vec![[0.0, 0.0, 1.0]; 200];
        let cloud = OrientedPointCloud::from_points(points.clone(), normals).unwrap();
        assert!(cloud.points().iter().all(|p| p.iter().all(|v| v.abs() <= 1.0 + 1e-9)));
        for (orig, norm) in points.iter().zip(cloud.points()) {
            let back = cloud.denormalize_point(*norm);
            for d in 0..3 {
                assert!((back[d] - orig[d]).abs() < 1e-9);
            }
            let fwd = cloud.normalize_point(*orig);
            for d in 0..3 {
                assert!((fwd[d] - norm[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sdf_is_approximately_lipschitz_on_dense_sphere() {
        let cloud = sphere_cloud(50_000, 0.6);
        let gap = (4.0 * std::f64::consts::PI * 0.36 / 50_000.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let p: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let q: [f64; 3] = [
                p[0] + rng.gen_range(-0.1..0.1),
                p[1] + rng.gen_range(-0.1..0.1),
                p[2] + rng.gen_range(-0.1..0.1),
            ];
            let dist =
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            let diff = (sdf_ground_truth(p, &cloud) - sdf_ground_truth(q, &cloud)).abs();
            assert!(diff <= dist + 2.0 * gap + 1e-6, "diff {} dist {}", diff, dist);
        }
    }

    #[test]
    fn xyz_roundtrip() {
        let cloud = sphere_cloud(100, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        let mut text = String::new();
        for (p, n) in cloud.points().iter().zip(cloud.normals()) {
            text.push_str(&format!(
                "{} {} {} {} {} {}\n",
                p[0], p[1], p[2], n[0], n[1], n[2]
            ));
        }
        std::fs::write(&path, text).unwrap();
        let back = read_xyz(&path).unwrap();
        assert_eq!(back.len(), 100);
    }

    #[test]
    fn binary_ply_reads_points_and_normals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n",
        );
        for row in [[0.0f32, 0.0, 0.0, 0.0, 0.0, 1.0], [1.0, 2.0, 3.0, 0.0, 1.0, 0.0]] {
            for v in row {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&path, bytes).unwrap();
        let cloud = read_ply(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        // Normals survive normalization untouched.
        assert_eq!(cloud.normals()[1], [0.0, 1.0, 0.0]);
    }
}
