//! Parameterized layers built from the primitives in [`crate::nn`].

use crate::autograd::Var;
use crate::error::Result;
use crate::nn::conv2d;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How a convolution's parameters start out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvInit {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    FanIn,
    /// Zero weights, zero bias.
    Zero,
    /// Fan-in weights and a constant bias.
    FanInBias(f64),
}

/// Square stride-1 convolution with "same" padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        how: ConvInit,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let shape = [out_channels, in_channels, kernel, kernel];
        let fan_in = (in_channels * kernel * kernel) as f64;
        let (bound, bias) = match how {
            ConvInit::FanIn => (1.0 / fan_in.sqrt(), 0.0),
            ConvInit::Zero => (0.0, 0.0),
            ConvInit::FanInBias(b) => (1.0 / fan_in.sqrt(), b),
        };
        let weight = store.add(format!("{name}.weight"), init.uniform(&shape, bound));
        let bias = store.add(format!("{name}.bias"), Tensor::full(&[out_channels], bias));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        conv2d(x, p.get(self.weight), Some(p.get(self.bias)), self.kernel / 2)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
    }
}

/// A leading 3×3 convolution followed by `depth` residual blocks of
/// conv → SiLU → conv with an identity skip.
#[derive(Debug, Clone)]
pub struct SmoothNet {
    pub lead: Conv2d,
    pub blocks: Vec<(Conv2d, Conv2d)>,
}

impl SmoothNet {
    pub fn new(
        store: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        channels: usize,
        depth: usize,
    ) -> Self {
        let lead = Conv2d::new(store, init, &format!("{name}.lead"), in_channels, channels, 3, ConvInit::FanIn);
        let blocks = (0..depth)
            .map(|i| {
                let a = Conv2d::new(store, init, &format!("{name}.res{i}.a"), channels, channels, 3, ConvInit::FanIn);
                let b = Conv2d::new(store, init, &format!("{name}.res{i}.b"), channels, channels, 3, ConvInit::FanIn);
                (a, b)
            })
            .collect();
        Self { lead, blocks }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = self.lead.forward(p, x)?;
        for (a, b) in &self.blocks {
            let r = b.forward(p, a.forward(p, h)?.silu())?;
            h = h.add(r)?;
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.lead.param_count()
            + self
                .blocks
                .iter()
                .map(|(a, b)| a.param_count() + b.param_count())
                .sum::<usize>()
    }

    /// Every parameter of the residual branches (both convolutions of each
    /// block).
    pub fn residual_params(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|(a, b)| [a.weight, a.bias, b.weight, b.bias])
            .collect()
    }
}
