//! Dataset construction for the three supported modalities: image pixel
//! grids, audio waveforms, and SDF sample batches drawn around an oriented
//! point cloud.

mod audio;
mod cloud;
mod image;

pub use audio::{read_wav, write_wav, synthetic_audio, AudioDataset};
pub use cloud::{
    read_cloud, read_ply, read_xyz, sample_sdf_batch, sdf_ground_truth, sphere_cloud,
    torus_cloud, GridIndex, OrientedPointCloud, SdfSampleBatch, SDF_DOMAIN,
};
pub use image::{load_image, synthetic_image, ImageDataset};

use crate::autodiff::Tensor;

/// Coordinates of a regular `h x w` grid spanning `[-1, 1]^2` corner to
/// corner, row-major, x varying fastest.
pub fn grid_coords_2d(w: usize, h: usize) -> Tensor<f64> {
    let mut data = Vec::with_capacity(w * h * 2);
    for i in 0..h {
        for j in 0..w {
            let x = if w > 1 { -1.0 + 2.0 * j as f64 / (w - 1) as f64 } else { 0.0 };
            let y = if h > 1 { -1.0 + 2.0 * i as f64 / (h - 1) as f64 } else { 0.0 };
            data.push(x);
            data.push(y);
        }
    }
    Tensor::new(vec![w * h, 2], data).unwrap()
}

/// `n` time coordinates spanning `[-1, 1]`.
pub fn time_coords(n: usize) -> Tensor<f64> {
    let data = (0..n)
        .map(|i| if n > 1 { -1.0 + 2.0 * i as f64 / (n - 1) as f64 } else { 0.0 })
        .collect();
    Tensor::new(vec![n, 1], data).unwrap()
}
