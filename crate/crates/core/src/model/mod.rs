//! The full interpolation network: event encoder, one synthesis block per
//! scale and coarse-to-fine composition.

mod checkpoint;
mod sample;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use sample::ClipSample;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::input_stage::{Encoder, EncoderConfig, FeaturePyramid, LEVELS};
use crate::params::{Bound, Init, ParamStore};
use crate::scalar::Scalar;
use crate::synthesis::{
    clamp_unit, compose_pyramid, downscale_clip, KeyframeClip, SynBlock, SynBlockOutput, SynthesisConfig, FRAMES,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_time_bins: usize,
    pub embed_channels: usize,
    pub msa_enabled: bool,
    pub msa_heads: usize,
    pub temporal_pool: usize,
    pub channels: [usize; LEVELS],
    pub smoothnet_depth: usize,
    pub head_hidden: [usize; LEVELS],
    pub head_depth: [usize; LEVELS],
    pub kernel_taps: usize,
    pub reverse_negates_polarity: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_time_bins: 8,
            embed_channels: 16,
            msa_enabled: true,
            msa_heads: 16,
            temporal_pool: 2,
            channels: [32, 64, 96],
            smoothnet_depth: 2,
            head_hidden: [16, 32, 64],
            head_depth: [0, 1, 1],
            kernel_taps: 25,
            reverse_negates_polarity: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            n_time_bins: self.n_time_bins,
            embed_channels: self.embed_channels,
            msa_enabled: self.msa_enabled,
            msa_heads: self.msa_heads,
            temporal_pool: self.temporal_pool,
            channels: self.channels,
            smoothnet_depth: self.smoothnet_depth,
        }
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            channels: self.channels,
            hidden: self.head_hidden,
            head_depth: self.head_depth,
            kernel_taps: self.kernel_taps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.synthesis().validate()
    }
}

/// Layer structure without parameter values.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub encoder: Encoder,
    pub synth: Vec<SynBlock>,
}

impl Architecture {
    /// Builds the layers and their freshly initialized parameters.
    ///
    /// Offset heads and the attention output projection start at zero. The
    /// finest scale's kernel weights start at `1/K` per tap so the untrained
    /// network is a mask-weighted average of the keyframes; coarser scales
    /// start as zero residuals.
    pub fn build(config: &ModelConfig) -> Result<(Self, ParamStore<f64>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let encoder = Encoder::new(&mut store, &mut init, &config.encoder())?;
        let scfg = config.synthesis();
        let synth = (0..LEVELS)
            .map(|l| {
                let bias = if l == 0 { 1.0 / config.kernel_taps as f64 } else { 0.0 };
                SynBlock::new(&mut store, &mut init, &scfg, l, bias)
            })
            .collect();
        Ok((Self { encoder, synth }, store))
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.synth.iter().map(SynBlock::param_count).sum::<usize>()
    }
}

/// Exact number of trainable scalars for `config`.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    Ok(Architecture::build(config)?.0.param_count())
}

/// Everything computed by one forward pass.
pub struct ForwardTrace<'t, T> {
    pub features: FeaturePyramid<'t, T>,
    pub levels: Vec<SynBlockOutput<'t, T>>,
    /// Composed frame before clamping, `N × 3 × H × W`.
    pub image: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let (arch, store) = Architecture::build(config)?;
        Ok(Self {
            config: config.clone(),
            arch,
            params: store.cast(),
        })
    }

    /// Rebuilds a model around saved parameters; names and shapes must match
    /// the architecture `config` describes.
    pub fn from_params(config: &ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let (arch, fresh) = Architecture::build(config)?;
        if fresh.names() != params.names() {
            return Err(Error::config("saved parameter names do not match the configured architecture"));
        }
        let mut store = fresh.cast::<T>();
        store.set_all(params.tensors().to_vec())?;
        Ok(Self {
            config: config.clone(),
            arch,
            params: store,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Runs the network on bound parameters. `voxels` is
    /// `N × 4 × n_time_bins × H × W`.
    pub fn forward_on<'t>(
        &self,
        p: &Bound<'t, T>,
        voxels: Var<'t, T>,
        clip: &KeyframeClip<T>,
    ) -> Result<ForwardTrace<'t, T>> {
        let vs = voxels.shape();
        let (n, h, w) = clip.dims();
        if vs.len() != 5 || vs[0] != n || vs[3] != h || vs[4] != w {
            return Err(Error::shape(format!(
                "voxels {vs:?} do not match {n} clips of {h}x{w}"
            )));
        }
        let features = self.arch.encoder.forward(p, voxels)?;
        let tape = voxels.tape();
        let mut levels = Vec::with_capacity(LEVELS);
        for (l, block) in self.arch.synth.iter().enumerate() {
            let scaled = downscale_clip(clip, l)?;
            let frames: [Var<'t, T>; FRAMES] = std::array::from_fn(|t| tape.constant(scaled.frames[t].clone()));
            levels.push(block.forward(p, features.levels[l], &frames)?);
        }
        let image = compose_pyramid([levels[0].combined, levels[1].combined, levels[2].combined])?;
        Ok(ForwardTrace {
            features,
            levels,
            image,
        })
    }

    /// Inference: the clamped interpolated frames, `N × 3 × H × W`.
    pub fn predict(&self, voxels: &Tensor<T>, clip: &KeyframeClip<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params.bind_constant(&tape);
        let trace = self.forward_on(&p, tape.constant(voxels.clone()), clip)?;
        let out = clamp_unit(&trace.image.value());
        if !out.all_finite() {
            return Err(Error::Numeric("forward pass produced non-finite values".into()));
        }
        Ok(out)
    }
}

/// The configuration with the attention stage removed.
pub fn build_variant<T: Scalar>(config: &ModelConfig) -> Result<Model<T>> {
    let cfg = ModelConfig {
        msa_enabled: false,
        ..config.clone()
    };
    Model::new(&cfg)
}
