//! Frame synthesis from event features and keyframes.
//!
//! At each scale a [`SynBlock`] splits the features into four channel groups,
//! one per keyframe, predicts per-pixel deformable kernels from each group,
//! applies them to that keyframe and blends the four results with softmax
//! masks. [`compose_pyramid`] then accumulates the three scales coarse to
//! fine.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::input_stage::LEVELS;
use crate::layers::{Conv2d, ConvInit};
use crate::nn::{deformable_conv, downsample2x_forward, upsample2x};
use crate::params::{Bound, Init, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FRAMES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub channels: [usize; LEVELS],
    /// Hidden width of the kernel and mask heads per level.
    pub hidden: [usize; LEVELS],
    /// Extra hidden convolutions in each kernel head per level.
    pub head_depth: [usize; LEVELS],
    pub kernel_taps: usize,
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_taps == 0 {
            return Err(Error::config("kernel_taps must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("head widths must be positive"));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % FRAMES != 0) {
            return Err(Error::config(format!("level width {c} is not divisible by {FRAMES}")));
        }
        Ok(())
    }
}

/// The four keyframes `I_{-2}, I_{-1}, I_{+1}, I_{+2}`, each `N × 3 × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeClip<T> {
    pub frames: [Tensor<T>; FRAMES],
}

impl<T: Scalar> KeyframeClip<T> {
    pub fn new(frames: [Tensor<T>; FRAMES]) -> Result<Self> {
        let shape = frames[0].shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(format!("keyframes must be N×3×H×W, got {shape:?}")));
        }
        if let Some(f) = frames.iter().find(|f| f.shape() != shape.as_slice()) {
            return Err(Error::shape(format!("keyframes disagree: {shape:?} vs {:?}", f.shape())));
        }
        Ok(Self { frames })
    }

    /// Rejects values outside `[0, 1]` or non-finite values.
    pub fn check_range(&self) -> Result<()> {
        let ok = self
            .frames
            .iter()
            .all(|f| f.data().iter().all(|&v| v >= T::zero() && v <= T::one()));
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset("keyframe values must be finite and within [0, 1]".into()))
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.frames[0].shape();
        (s[0], s[2], s[3])
    }
}

/// Shrinks every keyframe by `2^level` through repeated 2×2 averaging.
pub fn downscale_clip<T: Scalar>(clip: &KeyframeClip<T>, level: usize) -> Result<KeyframeClip<T>> {
    let (_, h, w) = clip.dims();
    let f = 1usize << level;
    if h % f != 0 || w % f != 0 {
        return Err(Error::shape(format!("{h}x{w} cannot be reduced by {f}")));
    }
    let mut frames = clip.frames.clone();
    for _ in 0..level {
        for fr in frames.iter_mut() {
            *fr = downsample2x_forward(fr)?;
        }
    }
    Ok(KeyframeClip { frames })
}

/// Conv stack `cin → hidden (→ hidden)* → out` with SiLU between layers.
#[derive(Debug, Clone)]
pub struct Head {
    pub layers: Vec<Conv2d>,
}

impl Head {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore<f64>,
        init: &mut Init,
        name: &str,
        cin: usize,
        hidden: usize,
        extra: usize,
        cout: usize,
        last: ConvInit,
    ) -> Self {
        let mut layers = vec![Conv2d::new(store, init, &format!("{name}.0"), cin, hidden, 3, ConvInit::FanIn)];
        for i in 0..extra {
            layers.push(Conv2d::new(store, init, &format!("{name}.{}", i + 1), hidden, hidden, 3, ConvInit::FanIn));
        }
        layers.push(Conv2d::new(store, init, &format!("{name}.{}", extra + 1), hidden, cout, 3, last));
        Self { layers }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (last, body) = self.layers.split_last().expect("heads have layers");
        let mut h = x;
        for l in body {
            h = l.forward(p, h)?.silu();
        }
        last.forward(p, h)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    pub fn last(&self) -> &Conv2d {
        self.layers.last().expect("heads have layers")
    }
}

/// Kernel heads for one keyframe.
#[derive(Debug, Clone)]
pub struct KernelHeads {
    pub weights: Head,
    pub offsets_x: Head,
    pub offsets_y: Head,
}

#[derive(Debug, Clone)]
pub struct SynBlock {
    pub level: usize,
    pub channels: usize,
    pub kernel_taps: usize,
    pub heads: Vec<KernelHeads>,
    pub mask: Head,
}

/// Per-pixel kernels `W_t, α_t, β_t` for one keyframe, each `N × K × H × W`.
#[derive(Debug, Clone, Copy)]
pub struct DeformableKernelSet<'t, T> {
    pub weights: Var<'t, T>,
    pub offsets_x: Var<'t, T>,
    pub offsets_y: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct SynBlockOutput<'t, T> {
    pub kernels: Vec<DeformableKernelSet<'t, T>>,
    /// `O_t`, each `N × 3 × H × W`.
    pub per_frame: Vec<Var<'t, T>>,
    /// Softmax masks, `N × 4 × H × W`; channel `t` is `B_t`.
    pub masks: Var<'t, T>,
    /// `Σ_t B_t ⊙ O_t`.
    pub combined: Var<'t, T>,
}

impl SynBlock {
    /// `weight_bias` seeds the bias of the kernel-weight heads' output layer.
    pub fn new(
        store: &mut ParamStore<f64>,
        init: &mut Init,
        cfg: &SynthesisConfig,
        level: usize,
        weight_bias: f64,
    ) -> Self {
        let c = cfg.channels[level];
        let (hidden, extra, k) = (cfg.hidden[level], cfg.head_depth[level], cfg.kernel_taps);
        let group = c / FRAMES;
        let name = format!("synth{level}");
        let heads = (0..FRAMES)
            .map(|t| {
                let mut head = |kind: &str, last| {
                    Head::new(store, init, &format!("{name}.frame{t}.{kind}"), group, hidden, extra, k, last)
                };
                KernelHeads {
                    weights: head("weights", ConvInit::FanInBias(weight_bias)),
                    offsets_x: head("offset_x", ConvInit::Zero),
                    offsets_y: head("offset_y", ConvInit::Zero),
                }
            })
            .collect();
        let mask = Head::new(store, init, &format!("{name}.mask"), c + 3 * FRAMES, hidden, 0, FRAMES, ConvInit::FanIn);
        Self {
            level,
            channels: c,
            kernel_taps: k,
            heads,
            mask,
        }
    }

    pub fn param_count(&self) -> usize {
        self.mask.param_count()
            + self
                .heads
                .iter()
                .map(|h| h.weights.param_count() + h.offsets_x.param_count() + h.offsets_y.param_count())
                .sum::<usize>()
    }

    /// Predicts kernels and masks from `features` (`N × C × H × W`); the
    /// frames must share the features' batch and spatial size.
    pub fn predict<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        features: Var<'t, T>,
        frames: &[Var<'t, T>; FRAMES],
    ) -> Result<(Vec<DeformableKernelSet<'t, T>>, Var<'t, T>)> {
        self.check_shapes(features, frames)?;
        let group = self.channels / FRAMES;
        let mut kernels = Vec::with_capacity(FRAMES);
        for (t, heads) in self.heads.iter().enumerate() {
            let part = features.narrow_channels(t * group, group)?;
            kernels.push(DeformableKernelSet {
                weights: heads.weights.forward(p, part)?,
                offsets_x: heads.offsets_x.forward(p, part)?,
                offsets_y: heads.offsets_y.forward(p, part)?,
            });
        }
        let mut mask_in = vec![features];
        mask_in.extend_from_slice(frames);
        let masks = self.mask.forward(p, Var::concat_channels(&mask_in)?)?.softmax_channels()?;
        Ok((kernels, masks))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        features: Var<'t, T>,
        frames: &[Var<'t, T>; FRAMES],
    ) -> Result<SynBlockOutput<'t, T>> {
        let (kernels, masks) = self.predict(p, features, frames)?;
        blend(kernels, masks, frames)
    }

    fn check_shapes<T: Scalar>(&self, features: Var<'_, T>, frames: &[Var<'_, T>; FRAMES]) -> Result<()> {
        let fs = features.shape();
        let [n, c, h, w] = fs[..] else {
            return Err(Error::shape(format!("features must be N×C×H×W, got {fs:?}")));
        };
        if c != self.channels {
            return Err(Error::shape(format!(
                "level {} expects {} feature channels, got {c}",
                self.level, self.channels
            )));
        }
        for f in frames {
            if f.shape() != [n, 3, h, w] {
                return Err(Error::shape(format!(
                    "frame {:?} does not match features {fs:?}",
                    f.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Applies each kernel set to its frame and mixes the results with the
/// masks.
pub fn blend<'t, T: Scalar>(
    kernels: Vec<DeformableKernelSet<'t, T>>,
    masks: Var<'t, T>,
    frames: &[Var<'t, T>; FRAMES],
) -> Result<SynBlockOutput<'t, T>> {
    if kernels.len() != FRAMES {
        return Err(Error::shape(format!("need {FRAMES} kernel sets, got {}", kernels.len())));
    }
    let mut per_frame = Vec::with_capacity(FRAMES);
    let mut weighted = Vec::with_capacity(FRAMES);
    for (t, k) in kernels.iter().enumerate() {
        let o = deformable_conv(frames[t], k.weights, k.offsets_x, k.offsets_y)?;
        weighted.push(o.mul_channel_broadcast(masks.narrow_channels(t, 1)?)?);
        per_frame.push(o);
    }
    let combined = Var::sum_all(&weighted)?;
    Ok(SynBlockOutput {
        kernels,
        per_frame,
        masks,
        combined,
    })
}

/// `Î² = O²`, `Î¹ = up(Î²) + O¹`, `Î⁰ = up(Î¹) + O⁰`. Not clamped.
pub fn compose_pyramid<'t, T: Scalar>(outputs: [Var<'t, T>; LEVELS]) -> Result<Var<'t, T>> {
    let [o0, o1, o2] = outputs;
    let i1 = upsample2x(o2)?.add(o1)?;
    upsample2x(i1)?.add(o0)
}

/// Clamps to `[0, 1]` for emission.
pub fn clamp_unit<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    image.map(|v| v.max(T::zero()).min(T::one()))
}
