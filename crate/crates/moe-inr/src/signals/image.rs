//! Image datasets: center-crop, box downscale, [0,1] RGB on a [-1,1]^2 grid.

use std::path::Path;

use image::RgbImage;

use super::grid_coords_2d;
use crate::autodiff::Tensor;
use crate::error::Result;

/// One image as a coordinate/value dataset.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    /// `h*w x 2` coordinates in `[-1, 1]^2`, row-major.
    pub coords: Tensor<f64>,
    /// `h*w x 3` RGB values in `[0, 1]`.
    pub values: Tensor<f64>,
    pub width: usize,
    pub height: usize,
}

impl ImageDataset {
    /// Build from an 8-bit RGB image, optionally center-cropped square and
    /// box-downscaled by an integer factor.
    pub fn from_rgb8(img: &RgbImage, crop_square: bool, downscale: usize) -> Self {
        let (mut w, mut h) = (img.width() as usize, img.height() as usize);
        let (mut x0, mut y0) = (0usize, 0usize);
        if crop_square {
            let side = w.min(h);
            x0 = (w - side) / 2;
            y0 = (h - side) / 2;
            w = side;
            h = side;
        }
        let f = downscale.max(1);
        let (ow, oh) = (w / f, h / f);
        let mut values = Vec::with_capacity(ow * oh * 3);
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = [0.0f64; 3];
                for di in 0..f {
                    for dj in 0..f {
                        let p = img.get_pixel((x0 + j * f + dj) as u32, (y0 + i * f + di) as u32);
                        for c in 0..3 {
                            acc[c] += p.0[c] as f64;
                        }
                    }
                }
                let norm = (f * f) as f64 * 255.0;
                for c in 0..3 {
                    values.push(acc[c] / norm);
                }
            }
        }
        Self {
            coords: grid_coords_2d(ow, oh),
            values: Tensor::new(vec![ow * oh, 3], values).unwrap(),
            width: ow,
            height: oh,
        }
    }

    /// Convert a `h*w x 3` value tensor back into an 8-bit image, clamping.
    pub fn values_to_rgb8(values: &Tensor<f64>, width: usize, height: usize) -> RgbImage {
        let mut img = RgbImage::new(width as u32, height as u32);
        for i in 0..height {
            for j in 0..width {
                let r = i * width + j;
                let px = [
                    (values.get2(r, 0).clamp(0.0, 1.0) * 255.0).round() as u8,
                    (values.get2(r, 1).clamp(0.0, 1.0) * 255.0).round() as u8,
                    (values.get2(r, 2).clamp(0.0, 1.0) * 255.0).round() as u8,
                ];
                img.put_pixel(j as u32, i as u32, image::Rgb(px));
            }
        }
        img
    }
}

/// Decode an image file and build a dataset from it.
pub fn load_image(path: impl AsRef<Path>, crop_square: bool, downscale: usize) -> Result<ImageDataset> {
    let img = image::open(path)?.to_rgb8();
    Ok(ImageDataset::from_rgb8(&img, crop_square, downscale))
}

/// Deterministic procedural test image: smooth color gradients, a textured
/// disc, a striped wedge, and a ringed dark disc, so there are distinct
/// regions at several frequency bands. Used by the offline test suite and
/// available to the CLI as the input `builtin:image`.
pub fn synthetic_image(size: usize) -> ImageDataset {
    let mut values = Vec::with_capacity(size * size * 3);
    for i in 0..size {
        for j in 0..size {
            let x = -1.0 + 2.0 * j as f64 / (size - 1) as f64;
            let y = -1.0 + 2.0 * i as f64 / (size - 1) as f64;
            let mut r = 0.45 + 0.35 * (2.2 * x + 0.8).sin() * (1.7 * y).cos();
            let mut g = 0.50 + 0.30 * (1.3 * x).sin() * (2.9 * y + 0.4).sin();
            let mut b = 0.55 + 0.30 * (2.5 * x).cos() * (1.1 * y).cos();

            let d1 = ((x + 0.35).powi(2) + (y - 0.25).powi(2)).sqrt();
            if d1 < 0.45 {
                let c = 0.5 + 0.45 * (14.0 * x).sin() * (14.0 * y).sin();
                r = c;
                g = 0.9 * c;
                b = 0.3 + 0.5 * c;
            }
            if x + y > 0.9 {
                let s = 0.5 + 0.5 * (25.0 * (x - y)).sin();
                r = 0.15 + 0.8 * s;
                g = 0.75 - 0.3 * s;
                b = 0.2 + 0.6 * s;
            }
            let d2 = ((x - 0.55).powi(2) + (y + 0.5).powi(2)).sqrt();
            if d2 < 0.3 {
                let ring = 0.5 + 0.5 * (20.0 * d2).cos();
                r = 0.1 + 0.25 * ring;
                g = 0.1 + 0.2 * ring;
                b = 0.2 + 0.3 * ring;
            }
            values.push(r.clamp(0.0, 1.0));
            values.push(g.clamp(0.0, 1.0));
            values.push(b.clamp(0.0, 1.0));
        }
    }
    ImageDataset {
        coords: grid_coords_2d(size, size),
        values: Tensor::new(vec![size * size, 3], values).unwrap(),
        width: size,
        height: size,
    }
}
