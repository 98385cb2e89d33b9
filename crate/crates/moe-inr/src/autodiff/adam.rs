//! Adam with bias correction and per-step exponential learning-rate decay.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    /// Learning rate at step 0.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative decay applied per step: lr(t) = lr * decay^t.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, decay: 1.0 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64, decay: f64) -> Self {
        Self { lr, decay, ..Self::default() }
    }
}

/// Moment accumulators for one ordered parameter list.
pub struct AdamState<S> {
    cfg: AdamConfig,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<S>]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { cfg, m, v, step: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the next `step` call will use: `lr * decay^t`.
    pub fn current_lr(&self) -> f64 {
        self.cfg.lr * self.cfg.decay.powi(self.step as i32)
    }

    /// One Adam update over all parameters. `grads[i] = None` means a zero
    /// gradient (parameter unreachable from the loss). Indices for which
    /// `frozen` returns true are left untouched, moments included.
    pub fn step(
        &mut self,
        params: &mut [Tensor<S>],
        grads: &[Option<Tensor<S>>],
        frozen: impl Fn(usize) -> bool,
    ) -> Result<()> {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(params.len(), grads.len());
        let lr = S::from_f64(self.current_lr());
        let t1 = (self.step + 1) as i32;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let one_b1 = S::one() - b1;
        let one_b2 = S::one() - b2;
        let bc1 = S::from_f64(1.0 - self.cfg.beta1.powi(t1));
        let bc2 = S::from_f64(1.0 - self.cfg.beta2.powi(t1));
        let eps = S::from_f64(self.cfg.eps);

        for (i, p) in params.iter_mut().enumerate() {
            if frozen(i) {
                continue;
            }
            if let Some(g) = &grads[i] {
                if g.shape() != p.shape() {
                    return Err(Error::Shape {
                        op: "adam_step",
                        detail: format!("grad {:?} vs param {:?}", g.shape(), p.shape()),
                    });
                }
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient(format!("index {}", i)));
                }
                let m = self.m[i].data_mut();
                let v = self.v[i].data_mut();
                let pd = p.data_mut();
                for (k, &gk) in g.data().iter().enumerate() {
                    m[k] = b1 * m[k] + one_b1 * gk;
                    v[k] = b2 * v[k] + one_b2 * gk * gk;
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    pd[k] = pd[k] - lr * mhat / (vhat.sqrt() + eps);
                }
            } else {
                // Zero gradient: moments decay, parameters still move if they
                // carry momentum; from a fresh state this is a no-op.
                let m = self.m[i].data_mut();
                let v = self.v[i].data_mut();
                let pd = p.data_mut();
                for k in 0..m.len() {
                    m[k] = b1 * m[k];
                    v[k] = b2 * v[k];
                    let mhat = m[k] / bc1;
                    let vhat = v[k] / bc2;
                    pd[k] = pd[k] - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}
