//! Event encoder: voxel grids to a three-level feature pyramid.
//!
//! Every time-bin slice is lifted to `embed_channels` features by a 3×3
//! convolution, the slices of each interval attend to each other at every
//! pixel, adjacent time bins are merged by temporal abs-max pooling, and the
//! result passes through a SmoothNet per scale with spatial abs-max pooling
//! between scales.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvInit, SmoothNet};
use crate::nn::{abs_max_pool, layer_norm_channels, temporal_attention, PoolAxis};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_time_bins: usize,
    pub embed_channels: usize,
    pub msa_enabled: bool,
    pub msa_heads: usize,
    /// Window and stride of the temporal pooling; 1 disables it.
    pub temporal_pool: usize,
    pub channels: [usize; LEVELS],
    pub smoothnet_depth: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_time_bins < 2 {
            return Err(Error::config("n_time_bins must be at least 2"));
        }
        if self.embed_channels == 0 || self.channels.contains(&0) {
            return Err(Error::config("channel widths must be positive"));
        }
        if self.temporal_pool == 0 || self.n_time_bins % self.temporal_pool != 0 {
            return Err(Error::config(format!(
                "temporal pool {} does not divide {} time bins",
                self.temporal_pool, self.n_time_bins
            )));
        }
        if self.msa_enabled && (self.msa_heads == 0 || self.embed_channels % self.msa_heads != 0) {
            return Err(Error::config(format!(
                "{} attention heads do not divide {} embedding channels",
                self.msa_heads, self.embed_channels
            )));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c % 4 != 0) {
            return Err(Error::config(format!(
                "level width {c} is not divisible into four temporal parts"
            )));
        }
        Ok(())
    }

    /// Channels entering the first SmoothNet.
    pub fn pooled_channels(&self) -> usize {
        4 * (self.n_time_bins / self.temporal_pool) * self.embed_channels
    }
}

/// Pre-norm multi-head self-attention over the time bins of each interval,
/// wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct TemporalMsa {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
    pub out: Conv2d,
    pub heads: usize,
}

impl TemporalMsa {
    pub fn new(store: &mut ParamStore<f64>, init: &mut Init, name: &str, channels: usize, heads: usize) -> Self {
        let gamma = store.add(format!("{name}.norm.weight"), Tensor::full(&[channels], 1.0));
        let beta = store.add(format!("{name}.norm.bias"), Tensor::zeros(&[channels]));
        let mut proj = |suffix: &str, how| Conv2d::new(store, init, &format!("{name}.{suffix}"), channels, channels, 1, how);
        let query = proj("query", ConvInit::FanIn);
        let key = proj("key", ConvInit::FanIn);
        let value = proj("value", ConvInit::FanIn);
        let out = proj("out", ConvInit::Zero);
        Self {
            gamma,
            beta,
            query,
            key,
            value,
            out,
            heads,
        }
    }

    /// `x` is `(G·tokens) × C × H × W`, each run of `tokens` entries one
    /// sequence.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>, tokens: usize) -> Result<Var<'t, T>> {
        let n = layer_norm_channels(x, p.get(self.gamma), p.get(self.beta))?;
        let attended = temporal_attention(
            self.query.forward(p, n)?,
            self.key.forward(p, n)?,
            self.value.forward(p, n)?,
            tokens,
            self.heads,
        )?;
        x.add(self.out.forward(p, attended)?)
    }

    pub fn param_count(&self) -> usize {
        2 * self.query.in_channels
            + self.query.param_count()
            + self.key.param_count()
            + self.value.param_count()
            + self.out.param_count()
    }
}

/// Encoded event features `f_l`, each `B × channels_l × H/2^l × W/2^l`.
#[derive(Debug, Clone, Copy)]
pub struct FeaturePyramid<'t, T> {
    pub levels: [Var<'t, T>; LEVELS],
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embed: Conv2d,
    pub msa: Option<TemporalMsa>,
    pub smooth: Vec<SmoothNet>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore<f64>, init: &mut Init, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let ce = config.embed_channels;
        let embed = Conv2d::new(store, init, "encoder.embed", 1, ce, 3, ConvInit::FanIn);
        let msa = config
            .msa_enabled
            .then(|| TemporalMsa::new(store, init, "encoder.msa", ce, config.msa_heads));
        let mut smooth = Vec::with_capacity(LEVELS);
        let mut cin = config.pooled_channels();
        for (l, &c) in config.channels.iter().enumerate() {
            smooth.push(SmoothNet::new(store, init, &format!("encoder.smooth{l}"), cin, c, config.smoothnet_depth));
            cin = c;
        }
        Ok(Self {
            config: config.clone(),
            embed,
            msa,
            smooth,
        })
    }

    pub fn param_count(&self) -> usize {
        self.embed.param_count()
            + self.msa.as_ref().map_or(0, TemporalMsa::param_count)
            + self.smooth.iter().map(SmoothNet::param_count).sum::<usize>()
    }

    /// Encodes voxels shaped `B × 4 × n_time_bins × H × W`.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, voxels: Var<'t, T>) -> Result<FeaturePyramid<'t, T>> {
        let cfg = &self.config;
        let shape = voxels.shape();
        let [b, 4, nt, h, w] = shape[..] else {
            return Err(Error::shape(format!("voxels must be B×4×T×H×W, got {shape:?}")));
        };
        if nt != cfg.n_time_bins {
            return Err(Error::shape(format!("voxels carry {nt} time bins, encoder expects {}", cfg.n_time_bins)));
        }
        let scale = 1 << (LEVELS - 1);
        if h % scale != 0 || w % scale != 0 {
            return Err(Error::config(format!("{h}x{w} is not divisible by {scale}")));
        }
        let ce = cfg.embed_channels;
        let mut x = self.embed.forward(p, voxels.reshape(&[b * 4 * nt, 1, h, w])?)?;
        if let Some(msa) = &self.msa {
            x = msa.forward(p, x, nt)?;
        }
        let pooled_t = nt / cfg.temporal_pool;
        if cfg.temporal_pool > 1 {
            let seq = x.reshape(&[b * 4, nt, ce * h * w])?;
            x = abs_max_pool(seq, PoolAxis::Temporal, cfg.temporal_pool, cfg.temporal_pool)?;
        }
        let mut f = x.reshape(&[b, 4 * pooled_t * ce, h, w])?;
        let f0 = self.smooth[0].forward(p, f)?;
        f = abs_max_pool(f0, PoolAxis::Spatial, 2, 2)?;
        let f1 = self.smooth[1].forward(p, f)?;
        f = abs_max_pool(f1, PoolAxis::Spatial, 2, 2)?;
        let f2 = self.smooth[2].forward(p, f)?;
        Ok(FeaturePyramid { levels: [f0, f1, f2] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::gradcheck::{check_gradients, GradCheck};

    fn small(msa: bool, bins: usize) -> EncoderConfig {
        EncoderConfig {
            n_time_bins: bins,
            embed_channels: 4,
            msa_enabled: msa,
            msa_heads: 2,
            temporal_pool: 2,
            channels: [8, 8, 12],
            smoothnet_depth: 1,
        }
    }

    fn build(cfg: &EncoderConfig) -> (ParamStore<f64>, Encoder) {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &mut Init::new(5), cfg).unwrap();
        (store, enc)
    }

    fn run(store: &ParamStore<f64>, enc: &Encoder, vox: Tensor<f64>) -> Vec<Tensor<f64>> {
        let tape = Tape::new();
        let p = store.bind_constant(&tape);
        let pyr = enc.forward(&p, tape.constant(vox)).unwrap();
        pyr.levels.iter().map(|v| (*v.value()).clone()).collect()
    }

    #[test]
    fn zero_voxels_give_zero_features() {
        let cfg = small(true, 4);
        let (store, enc) = build(&cfg);
        for f in run(&store, &enc, Tensor::zeros(&[1, 4, 4, 8, 8])) {
            assert!(f.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pyramid_shapes_follow_the_input() {
        for bins in [8, 16] {
            let mut cfg = small(true, bins);
            cfg.embed_channels = 2;
            cfg.channels = [4, 4, 8];
            let (store, enc) = build(&cfg);
            let fs = run(&store, &enc, Tensor::full(&[2, 4, bins, 16, 12], 0.1));
            assert_eq!(fs[0].shape(), &[2, 4, 16, 12]);
            assert_eq!(fs[1].shape(), &[2, 4, 8, 6]);
            assert_eq!(fs[2].shape(), &[2, 8, 4, 3]);
        }
    }

    #[test]
    fn config_errors() {
        let mut cfg = small(true, 4);
        cfg.msa_heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small(true, 5);
        cfg.temporal_pool = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = small(false, 4);
        cfg.channels = [8, 6, 8];
        assert!(cfg.validate().is_err());
        let (store, enc) = build(&small(false, 4));
        let tape = Tape::new();
        let p = store.bind_constant(&tape);
        assert!(matches!(
            enc.forward(&p, tape.constant(Tensor::zeros(&[1, 4, 4, 6, 8]))),
            Err(Error::Config(_))
        ));
        assert!(enc.forward(&p, tape.constant(Tensor::zeros(&[1, 4, 2, 8, 8]))).is_err());
    }

    #[test]
    fn msa_adds_parameters() {
        let (with, e1) = build(&small(true, 4));
        let (without, e2) = build(&small(false, 4));
        assert!(with.numel() > without.numel());
        assert_eq!(with.numel(), e1.param_count());
        assert_eq!(without.numel(), e2.param_count());
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        // one time bin per sequence: softmax over one key is 1
        let (mut store, enc) = build(&small(true, 4));
        let msa = enc.msa.as_ref().unwrap();
        *store.get_mut(msa.out.weight) = Init::new(9).uniform(&[4, 4, 1, 1], 0.5);
        let x = Tensor::from_fn(&[3, 4, 2, 2], |i| (i as f64 * 0.9).sin());
        let tape = Tape::new();
        let p = store.bind_constant(&tape);
        let xv = tape.constant(x);
        let y = msa.forward(&p, xv, 1).unwrap().value();
        let n = layer_norm_channels(xv, p.get(msa.gamma), p.get(msa.beta)).unwrap();
        let expect = xv.add(msa.out.forward(&p, msa.value.forward(&p, n).unwrap()).unwrap()).unwrap().value();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut cfg = small(true, 4);
        cfg.channels = [4, 4, 4];
        let (mut store, enc) = build(&cfg);
        // give the attention a live output projection so its branch is probed
        let msa = enc.msa.as_ref().unwrap();
        *store.get_mut(msa.out.weight) = Init::new(2).uniform(&[4, 4, 1, 1], 0.7);
        let vox = Tensor::from_fn(&[1, 4, 4, 4, 4], |i| ((i as f64) * 0.71).sin() * 0.8 + 0.013 * i as f64);
        let mut inputs = vec![vox];
        inputs.extend(store.tensors().iter().cloned());
        let report = check_gradients(&inputs, GradCheck::default(), |v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let pyr = enc.forward(&p, v[0])?;
            let flat: Vec<_> = pyr
                .levels
                .iter()
                .map(|f| f.reshape(&[f.value().numel()]))
                .collect::<Result<_>>()?;
            let s: Vec<_> = flat.iter().map(|f| f.mean()).collect();
            Var::sum_all(&s)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
