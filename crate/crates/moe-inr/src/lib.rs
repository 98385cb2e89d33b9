//! Mixture-of-experts implicit neural representations.
//!
//! This crate trains coordinate networks ("INRs") that store a signal in
//! their weights: an image as a map `(x, y) -> RGB`, an audio clip as
//! `t -> amplitude`, or a 3D shape as a signed distance field
//! `(x, y, z) -> distance`. On top of the usual single-MLP formulation it
//! implements a mixture-of-experts architecture: a shared expert encoder
//! feeds several small expert heads, while a manager network (conditioned on
//! the expert encoder's features) learns a soft partition of the domain and
//! routes each coordinate to one expert at inference time.
//!
//! The pieces are deliberately self-contained: a small reverse-mode autodiff
//! engine ([`autodiff`]), MLP layers and initializations ([`nets`]), the
//! mixture model ([`moe`]), losses and the phased training loop
//! ([`training`]), dataset construction for the three modalities
//! ([`signals`]), evaluation metrics ([`metrics`]), isosurface extraction
//! ([`geometry`]), and a config-driven experiment runner ([`experiment`]).
//!
//! Start with the `examples/` directory, which has one runnable program per
//! capability (`cargo run --release --example fit_image`, `fit_audio`,
//! `fit_sdf`, ...), or use the thin `moe-inr` binary to drive TOML-configured
//! runs.

pub mod autodiff;
pub mod geometry;
pub mod metrics;
pub mod moe;
pub mod nets;
pub mod error;
pub mod scalar;
pub mod signals;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

#[doc(hidden)]
pub fn bench_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    autodiff::kernels::matmul_nn(a, b, m, k, n)
}

#[doc(hidden)]
pub fn bench_matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    autodiff::kernels::matmul_nt(g, b, m, n, k)
}

#[doc(hidden)]
pub fn bench_matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    autodiff::kernels::matmul_tn(a, g, m, k, n)
}

#[doc(hidden)]
pub fn bench_fast_sin(x: f64) -> f64 {
    autodiff::kernels::fast_sin(x)
}
