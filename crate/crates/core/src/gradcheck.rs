//! Central finite-difference gradient checking in `f64`.
//!
//! The checked function may return a tensor of any shape; it is reduced to a
//! scalar through a fixed random projection `Σ r ⊙ f(x)` so that every output
//! element contributes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Elements probed per input tensor; larger inputs are subsampled on an
    /// even stride.
    pub max_probes: usize,
    pub seed: u64,
    /// Lower bound on the error denominator, so gradients that are zero
    /// analytically do not turn rounding noise into a relative error of 1.
    pub abs_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_probes: 64,
            seed: 7,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub probes: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, abs_floor)` over
    /// the probes.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub max_rel_error: f64,
}

fn projected<'t>(out: Var<'t, f64>, weights: &Tensor<f64>) -> Result<Var<'t, f64>> {
    let r = out.tape().constant(weights.clone());
    Ok(out.mul(r)?.mean())
}

fn projection(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Compares the tape's gradients of `f` against central differences for
/// every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], cfg: GradCheck, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |values: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> Result<(f64, Tensor<f64>)> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&vars)?;
        let shape = out.shape();
        let w = match weights {
            Some(w) => w.clone(),
            None => projection(&shape, cfg.seed),
        };
        let loss = projected(out, &w)?;
        Ok((loss.value().data()[0], w))
    };

    let (_, weights) = eval(inputs, None)?;

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.var(v.clone())).collect();
    let loss = projected(f(&vars)?, &weights)?;
    let grads = tape.backward(loss)?;

    let mut reports = Vec::with_capacity(inputs.len());
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let numel = inputs[idx].numel();
        let stride = numel.div_ceil(cfg.max_probes.max(1)).max(1);
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        let mut probes = 0;
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for e in (0..numel).step_by(stride) {
            let orig = inputs[idx].data()[e];
            work[idx].data_mut()[e] = orig + cfg.step;
            let (plus, _) = eval(&work, Some(&weights))?;
            work[idx].data_mut()[e] = orig - cfg.step;
            let (minus, _) = eval(&work, Some(&weights))?;
            work[idx].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.data()[e];
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
            probes += 1;
        }
        let denom = a_sq.sqrt().max(n_sq.sqrt()).max(cfg.abs_floor);
        let rel_error = if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom };
        if !rel_error.is_finite() {
            return Err(Error::Numeric(format!("gradient check produced {rel_error}")));
        }
        reports.push(InputReport {
            probes,
            rel_error,
            analytic_norm: a_sq.sqrt(),
        });
    }
    let max_rel_error = reports.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        inputs: reports,
        max_rel_error,
    })
}
