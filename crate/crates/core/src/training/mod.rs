//! Loss, optimizer, learning-rate schedule, image metrics and the train and
//! evaluation loops.

mod metrics;
mod trainer;

pub use metrics::{psnr, ssim, SSIM_SIGMA, SSIM_WINDOW};
pub use trainer::{
    evaluate, evaluate_samples, fingerprint, train, Batch, EvalReport, PreparedSample, SampleMetrics, StepStats,
    TrainSummary, Trainer, LAST_CHECKPOINT, BEST_CHECKPOINT, TRAIN_LOG,
};

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Charbonnier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_initial: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halving_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adamax_eps: f64,
    pub loss: LossKind,
    pub charbonnier_eps: f64,
    /// Global gradient norm ceiling; zero disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Write the last checkpoint every this many epochs.
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps even mid-epoch; zero means no cap.
    pub max_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_initial: 8e-4,
            lr_halving_period: 8,
            epochs: 36,
            batch_size: 6,
            beta1: 0.9,
            beta2: 0.999,
            adamax_eps: 1e-8,
            loss: LossKind::Charbonnier,
            charbonnier_eps: 1e-6,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 1,
            max_iterations: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_initial", self.lr_initial),
            ("adamax_eps", self.adamax_eps),
            ("charbonnier_eps", self.charbonnier_eps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halving_period == 0 || self.checkpoint_every == 0 {
            return Err(Error::config("epochs, batch_size, lr_halving_period and checkpoint_every must be positive"));
        }
        if self.lr_halving_period > self.epochs {
            return Err(Error::config(format!(
                "lr_halving_period {} exceeds epochs {}",
                self.lr_halving_period, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("grad_clip must be non-negative"));
        }
        Ok(())
    }

    /// Step-wise decay: `lr_initial · 0.5^⌊epoch / lr_halving_period⌋`.
    pub fn lr_schedule(&self, epoch: usize) -> f64 {
        self.lr_initial * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }
}

/// Mean Charbonnier penalty `mean(√((p − t)² + ε²))`, accumulated in `f64`.
pub fn charbonnier<'t, T: Scalar>(pred: Var<'t, T>, target: &Tensor<T>, eps: f64) -> Result<Var<'t, T>> {
    let p = pred.value();
    p.expect_same_shape(target)?;
    let eps2 = eps * eps;
    let n = p.numel() as f64;
    let total: f64 = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            (d * d + eps2).sqrt()
        })
        .sum();
    let target = target.clone();
    Ok(pred.tape().record(
        Tensor::scalar(T::from_f64(total / n)),
        &[pred],
        Box::new(move |g, _| {
            let scale = g.data()[0].as_f64() / n;
            let d = p
                .zip_map(&target, |a, b| {
                    let d = (a - b).as_f64();
                    T::from_f64(scale * d / (d * d + eps2).sqrt())
                })
                .expect("shape checked");
            vec![Some(d)]
        }),
    ))
}

/// AdaMax moments for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaMax<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First moments.
    pub m: Vec<Tensor<T>>,
    /// Exponentially weighted infinity norms.
    pub u: Vec<Tensor<T>>,
}

impl<T: Scalar> AdaMax<T> {
    pub fn new(shapes: &[&[usize]], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            u: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update:
    /// `m ← β1·m + (1 − β1)·g`, `u ← max(β2·u, |g| + ε)`,
    /// `θ ← θ − lr/(1 − β1ᵗ) · m/u`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let (b1, b2, eps) = (T::from_f64(self.beta1), T::from_f64(self.beta2), T::from_f64(self.eps));
        let clr = T::from_f64(lr / (1.0 - self.beta1.powi(self.step as i32)));
        let one = T::one();
        for (((p, g), m), u) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.u) {
            p.expect_same_shape(g)?;
            p.expect_same_shape(m)?;
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(u.data_mut());
            for (((p, &g), m), u) in iter {
                *m = b1 * *m + (one - b1) * g;
                *u = (b2 * *u).max(g.abs() + eps);
                *p -= clr * *m / *u;
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_inplace(s);
        }
    }
    norm
}
