//! Dense grid evaluation of SDF models, marching-cubes extraction, and mesh
//! export with per-expert coloring.

mod tables;

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::GridField;
use crate::moe::MoeModel;
use crate::scalar::Scalar;
use crate::signals::SDF_DOMAIN;

/// Largest grid resolution `eval_grid` accepts without an explicit cap raise.
pub const DEFAULT_RESOLUTION_CAP: usize = 512;

/// Fixed palette for expert segmentation figures (8 distinct colors).
pub const EXPERT_PALETTE: [[u8; 3]; 8] = [
    [230, 55, 60],
    [60, 120, 230],
    [60, 180, 90],
    [240, 180, 40],
    [160, 80, 200],
    [60, 200, 210],
    [235, 120, 180],
    [140, 110, 70],
];

#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Vertex index triples; consistent outward orientation for closed
    /// negative-inside fields.
    pub triangles: Vec<[u32; 3]>,
    /// Optional per-vertex RGB (expert segmentation coloring).
    pub colors: Option<Vec<[u8; 3]>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Signed volume by the divergence theorem; positive for outward-oriented
    /// closed meshes.
    pub fn signed_volume(&self) -> f64 {
        let mut v6 = 0.0;
        for t in &self.triangles {
            let a = self.vertices[t[0] as usize];
            let b = self.vertices[t[1] as usize];
            let c = self.vertices[t[2] as usize];
            v6 += a[0] * (b[1] * c[2] - b[2] * c[1])
                - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]);
        }
        v6 / 6.0
    }

    fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }
}

/// Evaluate a 3D model on a cubic lattice over `[lo, hi]^3`; returns the SDF
/// field and the routed expert index per lattice point.
pub fn eval_grid<S: Scalar>(
    model: &MoeModel<S>,
    resolution: usize,
    domain: (f64, f64),
    cap: usize,
) -> Result<(GridField, GridField)> {
    if model.config().in_dim != 3 {
        return Err(Error::Config("eval_grid needs a 3D-input model".into()));
    }
    if resolution > cap {
        return Err(Error::ResolutionCap { requested: resolution, cap });
    }
    let (lo, hi) = domain;
    let r = resolution;
    let mut sdf = vec![0.0f64; r * r * r];
    let mut experts = vec![0.0f64; r * r * r];
    // One z-slab per model evaluation keeps peak memory at O(r^2).
    let mut coords = Vec::with_capacity(r * r * 3);
    for iz in 0..r {
        let z = GridField::axis_coord(r, lo, hi, iz);
        coords.clear();
        for iy in 0..r {
            let y = GridField::axis_coord(r, lo, hi, iy);
            for ix in 0..r {
                let x = GridField::axis_coord(r, lo, hi, ix);
                coords.extend_from_slice(&[x, y, z]);
            }
        }
        let batch = Tensor::new(vec![r * r, 3], coords.clone())?;
        let (out, assignment) = model.route_and_reconstruct(&batch)?;
        let base = iz * r * r;
        for i in 0..r * r {
            sdf[base + i] = out.data()[i].as_f64();
            experts[base + i] = assignment[i] as f64;
        }
    }
    Ok((GridField::new(r, lo, hi, sdf)?, GridField::new(r, lo, hi, experts)?))
}

/// Convenience wrapper over the paper-standard SDF domain.
pub fn eval_grid_default<S: Scalar>(
    model: &MoeModel<S>,
    resolution: usize,
) -> Result<(GridField, GridField)> {
    eval_grid(model, resolution, (-SDF_DOMAIN, SDF_DOMAIN), DEFAULT_RESOLUTION_CAP)
}

/// Classic 256-case marching cubes with linear edge interpolation.
///
/// Inside is `value < iso`. Vertices on shared cell edges are deduplicated by
/// lattice edge key, so closed surfaces come out watertight. A grid that
/// never crosses the iso level yields an empty mesh.
pub fn marching_cubes(grid: &GridField, iso: f64) -> Result<TriangleMesh> {
    let r = grid.resolution;
    if r < 2 {
        return Err(Error::Config("marching cubes needs resolution >= 2".into()));
    }
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Key = (base lattice point, axis 0/1/2).
    let mut edge_vertex: HashMap<(u32, u32, u32, u8), u32> = HashMap::new();

    let mut corner_vals = [0.0f64; 8];
    for iz in 0..r - 1 {
        for iy in 0..r - 1 {
            for ix in 0..r - 1 {
                let mut case = 0usize;
                for (ci, (dx, dy, dz)) in tables::CORNER_OFFSETS.iter().enumerate() {
                    let v = grid.value(ix + dx, iy + dy, iz + dz);
                    corner_vals[ci] = v;
                    if v < iso {
                        case |= 1 << ci;
                    }
                }
                if tables::EDGE_MASKS[case] == 0 {
                    continue;
                }
                let mut edge_ids = [u32::MAX; 12];
                for (e, &(ca, cb)) in tables::EDGE_CORNERS.iter().enumerate() {
                    if tables::EDGE_MASKS[case] & (1 << e) == 0 {
                        continue;
                    }
                    // Canonicalize to the lower corner so both cells sharing
                    // this edge interpolate with identical operand order.
                    let (oa, ob) = (tables::CORNER_OFFSETS[ca], tables::CORNER_OFFSETS[cb]);
                    let (lo_c, hi_c, axis) = if oa <= ob { (ca, cb, axis_of(oa, ob)) } else { (cb, ca, axis_of(ob, oa)) };
                    let off = tables::CORNER_OFFSETS[lo_c];
                    let key = ((ix + off.0) as u32, (iy + off.1) as u32, (iz + off.2) as u32, axis);
                    let id = *edge_vertex.entry(key).or_insert_with(|| {
                        let v0 = corner_vals[lo_c];
                        let v1 = corner_vals[hi_c];
                        let t = (iso - v0) / (v1 - v0);
                        let p0 = corner_pos(grid, ix, iy, iz, lo_c);
                        let p1 = corner_pos(grid, ix, iy, iz, hi_c);
                        vertices.push([
                            p0[0] + t * (p1[0] - p0[0]),
                            p0[1] + t * (p1[1] - p0[1]),
                            p0[2] + t * (p1[2] - p0[2]),
                        ]);
                        (vertices.len() - 1) as u32
                    });
                    edge_ids[e] = id;
                }
                let tri_row = &tables::TRI_TABLE[case];
                let mut k = 0;
                while tri_row[k] >= 0 {
                    let a = edge_ids[tri_row[k] as usize];
                    let b = edge_ids[tri_row[k + 1] as usize];
                    let c = edge_ids[tri_row[k + 2] as usize];
                    if a != b && b != c && a != c {
                        // Table order is inward under the value<iso convention;
                        // swap to keep normals outward for negative-inside fields.
                        triangles.push([a, c, b]);
                    }
                    k += 3;
                }
            }
        }
    }
    let mut mesh = TriangleMesh { vertices, triangles, colors: None };
    mesh.triangles.retain(|t| mesh_area_ok(&mesh.vertices, t));
    Ok(mesh)
}

fn mesh_area_ok(vertices: &[[f64; 3]], t: &[u32; 3]) -> bool {
    let a = vertices[t[0] as usize];
    let b = vertices[t[1] as usize];
    let c = vertices[t[2] as usize];
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = u[1] * v[2] - u[2] * v[1];
    let cy = u[2] * v[0] - u[0] * v[2];
    let cz = u[0] * v[1] - u[1] * v[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt() > 1e-12
}

fn axis_of(lo: (usize, usize, usize), hi: (usize, usize, usize)) -> u8 {
    if hi.0 > lo.0 {
        0
    } else if hi.1 > lo.1 {
        1
    } else {
        2
    }
}

fn corner_pos(grid: &GridField, ix: usize, iy: usize, iz: usize, corner: usize) -> [f64; 3] {
    let (dx, dy, dz) = tables::CORNER_OFFSETS[corner];
    [grid.coord(ix + dx), grid.coord(iy + dy), grid.coord(iz + dz)]
}

/// Color mesh vertices by the expert owning the nearest lattice point.
pub fn color_mesh_by_expert(mesh: &mut TriangleMesh, experts: &GridField) {
    let r = experts.resolution;
    let colors = mesh
        .vertices
        .iter()
        .map(|v| {
            let mut idx = [0usize; 3];
            for d in 0..3 {
                let t = (v[d] - experts.lo) / (experts.hi - experts.lo);
                idx[d] = ((t * (r - 1) as f64).round() as usize).min(r - 1);
            }
            let e = experts.value(idx[0], idx[1], idx[2]) as usize;
            EXPERT_PALETTE[e % EXPERT_PALETTE.len()]
        })
        .collect();
    mesh.colors = Some(colors);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    PlyBinary,
}

/// Write a mesh as ASCII OBJ (1-based indices) or binary little-endian PLY
/// (per-vertex uchar RGB when colors are present).
pub fn export_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        MeshFormat::Obj => {
            for v in &mesh.vertices {
                writeln!(f, "v {} {} {}", v[0], v[1], v[2])?;
            }
            for t in &mesh.triangles {
                writeln!(f, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
        }
        MeshFormat::PlyBinary => {
            let has_colors = mesh.colors.is_some();
            write!(
                f,
                "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
                mesh.vertices.len()
            )?;
            if has_colors {
                write!(f, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
            }
            write!(
                f,
                "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
                mesh.triangles.len()
            )?;
            for (i, v) in mesh.vertices.iter().enumerate() {
                for d in 0..3 {
                    f.write_all(&(v[d] as f32).to_le_bytes())?;
                }
                if let Some(colors) = &mesh.colors {
                    f.write_all(&colors[i])?;
                }
            }
            for t in &mesh.triangles {
                f.write_all(&[3u8])?;
                for &i in t {
                    f.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    f.flush()?;
    Ok(())
}

/// Read back a mesh written by [`export_mesh`].
pub fn import_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("obj") => import_obj(path),
        Some("ply") => import_ply(path),
        other => Err(Error::Mesh(format!("unsupported mesh extension {:?}", other))),
    }
}

fn import_obj(path: &Path) -> Result<TriangleMesh> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut mesh = TriangleMesh::default();
    for line in f.lines() {
        let line = line?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["v", x, y, z] => {
                let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Mesh(e.to_string()));
                mesh.vertices.push([parse(x)?, parse(y)?, parse(z)?]);
            }
            ["f", a, b, c] => {
                let parse = |s: &str| -> Result<u32> {
                    let first = s.split('/').next().unwrap_or(s);
                    let i: i64 = first.parse().map_err(|e: std::num::ParseIntError| {
                        Error::Mesh(e.to_string())
                    })?;
                    Ok((i - 1) as u32)
                };
                mesh.triangles.push([parse(a)?, parse(b)?, parse(c)?]);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

fn import_ply(path: &Path) -> Result<TriangleMesh> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut has_colors = false;
    loop {
        line.clear();
        let mut byte = [0u8; 1];
        loop {
            f.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0] as char);
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", n] => n_vertices = n.parse().unwrap_or(0),
            ["element", "face", n] => n_faces = n.parse().unwrap_or(0),
            ["property", "uchar", "red"] => has_colors = true,
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::default();
    let mut colors = Vec::new();
    for _ in 0..n_vertices {
        let mut buf = [0u8; 12];
        f.read_exact(&mut buf)?;
        let x = f32::from_le_bytes(buf[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(buf[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(buf[8..12].try_into().unwrap()) as f64;
        mesh.vertices.push([x, y, z]);
        if has_colors {
            let mut c = [0u8; 3];
            f.read_exact(&mut c)?;
            colors.push(c);
        }
    }
    for _ in 0..n_faces {
        let mut count = [0u8; 1];
        f.read_exact(&mut count)?;
        if count[0] != 3 {
            return Err(Error::Mesh(format!("non-triangle face with {} vertices", count[0])));
        }
        let mut idx = [0u8; 12];
        f.read_exact(&mut idx)?;
        mesh.triangles.push([
            i32::from_le_bytes(idx[0..4].try_into().unwrap()) as u32,
            i32::from_le_bytes(idx[4..8].try_into().unwrap()) as u32,
            i32::from_le_bytes(idx[8..12].try_into().unwrap()) as u32,
        ]);
    }
    if has_colors {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn sphere_field(res: usize, r: f64) -> GridField {
        GridField::from_fn(res, -1.2, 1.2, move |x, y, z| (x * x + y * y + z * z).sqrt() - r)
    }

    #[test]
    fn all_positive_grid_gives_empty_mesh() {
        let g = GridField::from_fn(16, -1.0, 1.0, |_, _, _| 1.0);
        let mesh = marching_cubes(&g, 0.0).unwrap();
        assert!(mesh.is_empty());
        assert!(mesh.vertices.is_empty());
    }

    #[test]
    fn sphere_vertices_lie_near_the_analytic_surface() {
        let g = sphere_field(64, 0.5);
        let mesh = marching_cubes(&g, 0.0).unwrap();
        assert!(!mesh.is_empty());
        let tol = 2.0 * g.spacing();
        for v in &mesh.vertices {
            let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((r - 0.5).abs() <= tol, "vertex radius {}", r);
        }
    }

    #[test]
    fn sphere_volume_within_five_percent() {
        let g = sphere_field(64, 0.5);
        let mesh = marching_cubes(&g, 0.0).unwrap();
        let expect = 4.0 / 3.0 * std::f64::consts::PI * 0.5f64.powi(3);
        let vol = mesh.signed_volume();
        assert!(vol > 0.0, "orientation should be outward, got volume {}", vol);
        assert!((vol - expect).abs() / expect < 0.05, "volume {} vs {}", vol, expect);
    }

    #[test]
    fn flipping_the_field_flips_orientation() {
        let g = sphere_field(24, 0.5);
        let flipped = GridField::new(24, -1.2, 1.2, g.values.iter().map(|v| -v).collect()).unwrap();
        let a = marching_cubes(&g, 0.0).unwrap();
        let b = marching_cubes(&flipped, 0.0).unwrap();
        assert!(a.signed_volume() > 0.0);
        assert!(b.signed_volume() < 0.0);
        assert!((a.signed_volume() + b.signed_volume()).abs() < 1e-9);
    }

    fn assert_watertight(mesh: &TriangleMesh) {
        let mut edge_count: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *edge_count.entry(key).or_insert(0) += 1;
            }
        }
        for (edge, count) in edge_count {
            assert_eq!(count, 2, "edge {:?} shared by {} triangles", edge, count);
        }
    }

    #[test]
    fn closed_surfaces_are_watertight() {
        assert_watertight(&marching_cubes(&sphere_field(32, 0.6), 0.0).unwrap());
        let torus = GridField::from_fn(48, -1.2, 1.2, |x, y, z| {
            let q = ((x * x + y * y).sqrt() - 0.7, z);
            (q.0 * q.0 + q.1 * q.1).sqrt() - 0.25
        });
        assert_watertight(&marching_cubes(&torus, 0.0).unwrap());
    }

    #[test]
    fn mesh_roundtrips_through_obj_and_ply() {
        let g = sphere_field(16, 0.5);
        let mut mesh = marching_cubes(&g, 0.0).unwrap();
        let experts = GridField::from_fn(16, -1.2, 1.2, |x, _, _| if x < 0.0 { 0.0 } else { 3.0 });
        color_mesh_by_expert(&mut mesh, &experts);
        let dir = tempfile::tempdir().unwrap();

        let obj = dir.path().join("mesh.obj");
        export_mesh(&mesh, &obj, MeshFormat::Obj).unwrap();
        let back = import_mesh(&obj).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() < 1e-9);
            }
        }

        let ply = dir.path().join("mesh.ply");
        export_mesh(&mesh, &ply, MeshFormat::PlyBinary).unwrap();
        let back = import_mesh(&ply).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.colors.as_ref().unwrap(), mesh.colors.as_ref().unwrap());
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for d in 0..3 {
                // PLY stores f32.
                assert!((a[d] - b[d]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_mesh_exports_valid_files() {
        let mesh = TriangleMesh::default();
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("e.obj", MeshFormat::Obj), ("e.ply", MeshFormat::PlyBinary)] {
            let p = dir.path().join(name);
            export_mesh(&mesh, &p, fmt).unwrap();
            let back = import_mesh(&p).unwrap();
            assert!(back.is_empty());
        }
    }

    #[test]
    fn obj_indices_are_one_based() {
        let mesh = TriangleMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
            colors: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tri.obj");
        export_mesh(&mesh, &p, MeshFormat::Obj).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("f 1 2 3"));
    }

    #[test]
    fn eval_grid_matches_pointwise_evaluation() {
        use crate::moe::MoeConfig;
        use crate::nets::ActivationFamily;
        let model =
            MoeModel::<f64>::new(MoeConfig::uniform(2, 3, 1, 8, 1, ActivationFamily::sine()), 3)
                .unwrap();
        let (sdf, experts) = eval_grid(&model, 9, (-1.2, 1.2), 64).unwrap();
        assert_eq!(sdf.values.len(), 9 * 9 * 9);
        // Check 40 random lattice points against single-sample evaluation.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            let (ix, iy, iz) =
                (rng.gen_range(0..9), rng.gen_range(0..9), rng.gen_range(0..9));
            let coords = Tensor::new(
                vec![1, 3],
                vec![sdf.coord(ix), sdf.coord(iy), sdf.coord(iz)],
            )
            .unwrap();
            let (out, assign) = model.route_and_reconstruct(&coords).unwrap();
            assert_eq!(out.item(), sdf.value(ix, iy, iz));
            assert_eq!(assign[0] as f64, experts.value(ix, iy, iz));
        }
    }

    #[test]
    fn eval_grid_respects_the_resolution_cap() {
        use crate::moe::MoeConfig;
        use crate::nets::ActivationFamily;
        let model =
            MoeModel::<f64>::new(MoeConfig::uniform(2, 3, 1, 8, 1, ActivationFamily::sine()), 3)
                .unwrap();
        assert!(matches!(
            eval_grid(&model, 100, (-1.2, 1.2), 64),
            Err(Error::ResolutionCap { .. })
        ));
    }

    #[test]
    fn constant_model_gives_constant_grid() {
        use crate::moe::MoeConfig;
        use crate::nets::ActivationFamily;
        let mut model =
            MoeModel::<f64>::new(MoeConfig::uniform(2, 3, 1, 8, 1, ActivationFamily::sine()), 4)
                .unwrap();
        // Zero all expert parameters, then set each expert's output bias.
        for i in 0..model.store.len() {
            let name = model.store.name(i).to_string();
            if name.starts_with("exp") {
                let shape = model.store.values()[i].shape().to_vec();
                let zero = Tensor::zeros(&shape);
                *model.store.get_mut(crate::nets::ParamId(i)) = zero;
            }
        }
        let last_bias = format!(".b{}", model.config().expert.hidden_layers + 1);
        for i in 0..model.store.len() {
            if model.store.name(i).ends_with(&last_bias) && model.store.name(i).starts_with("exp") {
                let shape = model.store.values()[i].shape().to_vec();
                *model.store.get_mut(crate::nets::ParamId(i)) = Tensor::full(&shape, 0.25);
            }
        }
        let (sdf, _) = eval_grid(&model, 6, (-1.2, 1.2), 64).unwrap();
        assert!(sdf.values.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn degenerate_triangles_are_cleaned_up() {
        let g = sphere_field(20, 0.5);
        let mesh = marching_cubes(&g, 0.0).unwrap();
        for t in &mesh.triangles {
            assert!(mesh.triangle_area(t) > 1e-12);
        }
    }
}
