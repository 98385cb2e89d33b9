//! Quantitative evaluation: PSNR, SSIM, MSE, volumetric IoU, Trimap IoU, and
//! Chamfer distance.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::signals::GridIndex;

/// Mean squared error over all components.
pub fn mse(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape {
            op: "mse",
            detail: format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        });
    }
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(pred: &Tensor<f64>, gt: &Tensor<f64>, peak: f64) -> Result<f64> {
    let e = mse(pred, gt)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// BT.601 luma weights used for RGB-to-gray conversion before SSIM.
pub fn luma(values: &Tensor<f64>) -> Result<Vec<f64>> {
    if values.rank() != 2 || values.cols() != 3 {
        return Err(Error::Shape {
            op: "luma",
            detail: format!("expected n x 3 RGB, got {:?}", values.shape()),
        });
    }
    Ok(values
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter; output is `(w-10) x (h-10)`.
fn gauss_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for t in 0..SSIM_WINDOW {
                s += img[y * w + x + t] * k[t];
            }
            tmp[y * ow + x] = s;
        }
    }
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for t in 0..SSIM_WINDOW {
                s += tmp[(y + t) * ow + x] * k[t];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean local SSIM over a grayscale image pair (11x11 Gaussian window,
/// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim_gray(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    if a.len() != w * h || b.len() != w * h {
        return Err(Error::Shape {
            op: "ssim",
            detail: format!("buffer length vs {}x{}", w, h),
        });
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::SsimWindow(w, h));
    }
    let k = gaussian_kernel();
    let a2: Vec<f64> = a.iter().map(|v| v * v).collect();
    let b2: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = gauss_valid(a, w, h, &k);
    let mu_b = gauss_valid(b, w, h, &k);
    let m_a2 = gauss_valid(&a2, w, h, &k);
    let m_b2 = gauss_valid(&b2, w, h, &k);
    let m_ab = gauss_valid(&ab, w, h, &k);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_a2[i] - ma * ma;
        let vb = m_b2[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += s;
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM of two `h*w x 3` RGB value tensors after luma conversion.
pub fn ssim_rgb(pred: &Tensor<f64>, gt: &Tensor<f64>, w: usize, h: usize) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape {
            op: "ssim",
            detail: format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        });
    }
    ssim_gray(&luma(pred)?, &luma(gt)?, w, h)
}

/// Scalar field sampled on a corner-inclusive cubic lattice.
#[derive(Debug, Clone)]
pub struct GridField {
    pub resolution: usize,
    /// `resolution^3` values, x fastest, then y, then z.
    pub values: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl GridField {
    pub fn new(resolution: usize, lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != resolution * resolution * resolution {
            return Err(Error::Shape {
                op: "grid_field",
                detail: format!("{} values for resolution {}", values.len(), resolution),
            });
        }
        Ok(Self { resolution, values, lo, hi })
    }

    pub fn from_fn(resolution: usize, lo: f64, hi: f64, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(resolution.pow(3));
        for iz in 0..resolution {
            let z = Self::axis_coord(resolution, lo, hi, iz);
            for iy in 0..resolution {
                let y = Self::axis_coord(resolution, lo, hi, iy);
                for ix in 0..resolution {
                    let x = Self::axis_coord(resolution, lo, hi, ix);
                    values.push(f(x, y, z));
                }
            }
        }
        Self { resolution, values, lo, hi }
    }

    pub fn axis_coord(resolution: usize, lo: f64, hi: f64, i: usize) -> f64 {
        if resolution > 1 {
            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
        } else {
            lo
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        Self::axis_coord(self.resolution, self.lo, self.hi, i)
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution + iy) * self.resolution + ix
    }

    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.index(ix, iy, iz)]
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.resolution - 1) as f64
    }

    /// Inside = strictly negative value.
    pub fn inside(&self, i: usize) -> bool {
        self.values[i] < 0.0
    }
}

/// Volumetric IoU between the insides of two fields; 1 when both are empty.
pub fn iou_grid(pred: &GridField, gt: &GridField) -> Result<f64> {
    if pred.resolution != gt.resolution {
        return Err(Error::ResolutionMismatch(pred.resolution, gt.resolution));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..pred.values.len() {
        let (a, b) = (pred.inside(i), gt.inside(i));
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// IoU restricted to lattice points within ground-truth distance `d` of the
/// surface (`|gt| <= d`). Errors when the band is empty.
pub fn trimap_iou(pred: &GridField, gt: &GridField, d: f64) -> Result<f64> {
    if pred.resolution != gt.resolution {
        return Err(Error::ResolutionMismatch(pred.resolution, gt.resolution));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    let mut band = 0usize;
    for i in 0..pred.values.len() {
        if gt.values[i].abs() <= d {
            band += 1;
            let (a, b) = (pred.inside(i), gt.inside(i));
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
    }
    if band == 0 {
        return Err(Error::BandEmpty(d));
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance in both
/// directions, scaled by 1e5.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Cloud("chamfer needs nonempty point sets".into()));
    }
    let one_way = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        let idx = GridIndex::build(to);
        let sum: f64 = from.iter().map(|&q| idx.nearest(to, q).1).sum();
        sum / from.len() as f64
    };
    Ok((one_way(a, b) + one_way(b, a)) * 1e5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_values(seed: u64, n: usize, c: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, c], (0..n * c).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let x = rand_values(0, 64, 3);
        assert!(psnr(&x, &x, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_closed_form() {
        // MSE 0.01 at peak 1 is exactly 20 dB.
        let a = Tensor::new(vec![4, 1], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![4, 1], vec![0.1, 0.1, -0.1, -0.1]).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_brute_force() {
        let a = rand_values(1, 200, 3);
        let b = rand_values(2, 200, 3);
        let mut sum = 0.0;
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            sum += d * d;
        }
        let expect = 10.0 * (1.0 / (sum / a.len() as f64)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let gt = rand_values(3, 32 * 32, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..gt.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for level in [0.001, 0.003, 0.01, 0.03, 0.1] {
            let noisy = Tensor::new(
                vec![32 * 32, 3],
                gt.data().iter().zip(&noise).map(|(v, n)| v + level * n).collect(),
            )
            .unwrap();
            let p = psnr(&noisy, &gt, 1.0).unwrap();
            assert!(p < last, "psnr {} at level {}", p, level);
            last = p;
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let x = rand_values(5, 32 * 32, 3);
        let s = ssim_rgb(&x, &x, 32, 32).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "ssim {}", s);
    }

    #[test]
    fn ssim_constant_images_match_closed_form() {
        let (a, b) = (0.3f64, 0.7f64);
        let ta = Tensor::full(&[20 * 20, 3], a);
        let tb = Tensor::full(&[20 * 20, 3], b);
        let c1 = 0.01f64.powi(2);
        let expect = (2.0 * a * b + c1) / (a * a + b * b + c1);
        let got = ssim_rgb(&ta, &tb, 20, 20).unwrap();
        assert!((got - expect).abs() < 1e-12, "{} vs {}", got, expect);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = rand_values(6, 24 * 24, 3);
        let b = rand_values(7, 24 * 24, 3);
        let ab = ssim_rgb(&a, &b, 24, 24).unwrap();
        let ba = ssim_rgb(&b, &a, 24, 24).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let x = rand_values(8, 8 * 8, 3);
        assert!(matches!(ssim_rgb(&x, &x, 8, 8), Err(Error::SsimWindow(..))));
    }

    fn box_field(res: usize, x0: f64, x1: f64) -> GridField {
        // Inside an axis-aligned box spanning [x0, x1] in x, full in y/z.
        GridField::from_fn(res, -1.0, 1.0, |x, _, _| {
            if x >= x0 && x <= x1 {
                -1.0
            } else {
                1.0
            }
        })
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = box_field(16, -0.5, 0.0);
        let b = box_field(16, 0.25, 0.75);
        assert_eq!(iou_grid(&a, &a).unwrap(), 1.0);
        assert_eq!(iou_grid(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_matches_voxel_counting_oracle() {
        let a = box_field(32, -0.6, 0.2);
        let b = box_field(32, -0.2, 0.6);
        let mut inter = 0;
        let mut union = 0;
        for i in 0..a.values.len() {
            let (ia, ib) = (a.values[i] < 0.0, b.values[i] < 0.0);
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
        let expect = inter as f64 / union as f64;
        assert_eq!(iou_grid(&a, &b).unwrap(), expect);
        assert!(expect > 0.0 && expect < 1.0);
    }

    #[test]
    fn iou_empty_union_is_one() {
        let empty = GridField::from_fn(8, -1.0, 1.0, |_, _, _| 1.0);
        assert_eq!(iou_grid(&empty, &empty).unwrap(), 1.0);
    }

    fn sphere_field(res: usize, r: f64) -> GridField {
        GridField::from_fn(res, -1.2, 1.2, move |x, y, z| (x * x + y * y + z * z).sqrt() - r)
    }

    #[test]
    fn trimap_identical_is_one_and_wide_band_equals_iou() {
        let gt = sphere_field(24, 0.5);
        let pred = sphere_field(24, 0.55);
        assert_eq!(trimap_iou(&gt, &gt, 0.05).unwrap(), 1.0);
        let diameter = 2.0 * 1.2 * 3.0f64.sqrt();
        let wide = trimap_iou(&pred, &gt, diameter).unwrap();
        let plain = iou_grid(&pred, &gt).unwrap();
        assert!((wide - plain).abs() < 1e-12);
    }

    #[test]
    fn trimap_matches_banded_voxel_count() {
        let gt = sphere_field(32, 0.5);
        let pred = sphere_field(32, 0.56);
        let d = 0.05;
        let mut inter = 0;
        let mut union = 0;
        for i in 0..gt.values.len() {
            if gt.values[i].abs() <= d {
                let (a, b) = (pred.values[i] < 0.0, gt.values[i] < 0.0);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
        }
        let expect = inter as f64 / union as f64;
        assert_eq!(trimap_iou(&pred, &gt, d).unwrap(), expect);
        assert!(expect < 1.0);
    }

    #[test]
    fn trimap_empty_band_errors() {
        let gt = GridField::from_fn(8, -1.0, 1.0, |_, _, _| 5.0);
        assert!(matches!(trimap_iou(&gt, &gt, 0.01), Err(Error::BandEmpty(_))));
    }

    #[test]
    fn trimap_bounds_hold() {
        let gt = sphere_field(20, 0.5);
        for rp in [0.4, 0.5, 0.6, 0.7] {
            let pred = sphere_field(20, rp);
            for d in [0.05, 0.2, 1.0] {
                let v = trimap_iou(&pred, &gt, d).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn chamfer_identical_is_zero_and_closed_form() {
        let a = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        let single_a = vec![[0.0, 0.0, 0.0]];
        let single_b = vec![[0.01, 0.0, 0.0]];
        let v = chamfer(&single_a, &single_b).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "chamfer {}", v);
    }

    #[test]
    fn chamfer_matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<[f64; 3]> = (0..150)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let b: Vec<[f64; 3]> = (0..130)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let brute = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
            from.iter()
                .map(|p| {
                    to.iter()
                        .map(|q| {
                            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / from.len() as f64
        };
        let expect = (brute(&a, &b) + brute(&b, &a)) * 1e5;
        assert!((chamfer(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn chamfer_is_symmetric_and_rejects_empty() {
        let a = vec![[0.1, 0.2, 0.3], [0.5, -0.5, 0.0]];
        let b = vec![[-0.3, 0.1, 0.9]];
        assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        assert!(chamfer(&a, &[]).is_err());
    }
}
