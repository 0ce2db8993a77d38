//! Synthetic event-camera clips: moving sprites rendered at a fine time step,
//! an idealized log-intensity event simulator, and a reader/writer for
//! on-disk sample directories.

mod dataset;

pub use dataset::{
    generate_dataset, load_bsergb_style, read_sample, read_sample_inputs, write_manifest, write_sample, DatasetManifest,
    ManifestEntry, SampleInputs, Split, SyntheticConfig, MANIFEST_FILE,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventInterval, Polarity};
use crate::imageio::quantize;
use crate::model::ClipSample;
use crate::synthesis::KeyframeClip;
use crate::tensor::Tensor;

/// Offset inside the log so black pixels stay finite.
pub const LOG_EPS: f64 = 1e-3;
pub const DEFAULT_THRESHOLD: f64 = 0.15;
pub const DEFAULT_SUBSTEPS: usize = 32;
pub const MIN_SUBSTEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Disc,
    Square,
}

/// Sprite centre in pixels as a function of time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// `x(t) = Σ x[i]·tⁱ`, likewise for `y`.
    Polynomial { x: Vec<f64>, y: Vec<f64> },
    /// `centre + amplitude·sin(2πt/period + phase)` per axis.
    Sinusoidal {
        center: [f64; 2],
        amplitude: [f64; 2],
        period: f64,
        phase: [f64; 2],
    },
}

impl Trajectory {
    pub fn fixed(x: f64, y: f64) -> Self {
        Trajectory::Polynomial { x: vec![x], y: vec![y] }
    }

    pub fn linear(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Trajectory::Polynomial {
            x: vec![x, vx],
            y: vec![y, vy],
        }
    }

    pub fn position(&self, t: f64) -> (f64, f64) {
        match self {
            Trajectory::Polynomial { x, y } => {
                let horner = |c: &[f64]| c.iter().rev().fold(0.0, |acc, &a| acc * t + a);
                (horner(x), horner(y))
            }
            Trajectory::Sinusoidal {
                center,
                amplitude,
                period,
                phase,
            } => {
                let w = std::f64::consts::TAU / period;
                (
                    center[0] + amplitude[0] * (w * t + phase[0]).sin(),
                    center[1] + amplitude[1] * (w * t + phase[1]).sin(),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: SpriteShape,
    pub color: [f64; 3],
    /// Radius of a disc or half the side of a square, in pixels.
    pub size: f64,
    pub trajectory: Trajectory,
}

impl Sprite {
    /// Fraction of the pixel centred at `(px, py)` covered at time `t`, with a
    /// one-pixel linear ramp at the edge.
    fn coverage(&self, cx: f64, cy: f64, px: f64, py: f64) -> f64 {
        let (dx, dy) = (px - cx, py - cy);
        let d = match self.shape {
            SpriteShape::Disc => dx.hypot(dy),
            SpriteShape::Square => dx.abs().max(dy.abs()),
        };
        (self.size - d + 0.5).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: [f64; 3],
    /// Drawn in order, later sprites on top.
    pub sprites: Vec<Sprite>,
    /// Standard deviation of per-pixel Gaussian noise added to every render.
    pub noise: f64,
    /// Log-intensity contrast threshold of the simulated sensor.
    pub threshold: f64,
    /// Time between consecutive keyframes, microseconds.
    pub frame_interval_us: u64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height > 1 << 16 || self.width > 1 << 16 {
            return Err(Error::config(format!("bad canvas {}x{}", self.height, self.width)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::config(format!("event threshold must be positive, got {}", self.threshold)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise level must be non-negative"));
        }
        if self.frame_interval_us == 0 {
            return Err(Error::config("frame interval must be positive"));
        }
        let unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !unit(&self.background) {
            return Err(Error::config("background color outside [0, 1]"));
        }
        let span = 4.0 * self.frame_interval_us as f64 * 1e-6;
        for (i, s) in self.sprites.iter().enumerate() {
            if !unit(&s.color) || !(s.size > 0.0) {
                return Err(Error::config(format!("sprite {i} has a bad color or size")));
            }
            for k in 0..=64 {
                let (x, y) = s.trajectory.position(span * k as f64 / 64.0);
                let on_x = x + s.size > 0.0 && x - s.size < self.width as f64 - 1.0;
                let on_y = y + s.size > 0.0 && y - s.size < self.height as f64 - 1.0;
                if !(on_x && on_y) {
                    return Err(Error::config(format!("sprite {i} leaves the canvas at ({x:.1}, {y:.1})")));
                }
            }
        }
        Ok(())
    }

    /// `0, Δ, 2Δ, 3Δ, 4Δ` with `Δ` the frame interval.
    pub fn keyframe_times(&self) -> [u64; 5] {
        std::array::from_fn(|k| k as u64 * self.frame_interval_us)
    }
}

/// Renders the scene at `t_us` microseconds as a `3 × H × W` image in
/// `[0, 1]`. Noise is a pure function of the seed and the instant.
pub fn render_frame(spec: &SceneSpec, t_us: f64) -> Tensor<f64> {
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;
    let mut img = Tensor::from_fn(&[3, h, w], |i| spec.background[i / plane]);
    let t = t_us * 1e-6;
    let data = img.data_mut();
    for s in &spec.sprites {
        let (cx, cy) = s.trajectory.position(t);
        let reach = s.size * std::f64::consts::SQRT_2 + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil().max(-1.0) + 1.0).min(h as f64) as usize;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil().max(-1.0) + 1.0).min(w as f64) as usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let a = s.coverage(cx, cy, x as f64, y as f64);
                if a > 0.0 {
                    for c in 0..3 {
                        let v = &mut data[c * plane + y * w + x];
                        *v = *v * (1.0 - a) + s.color[c] * a;
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t_us.to_bits());
        let normal = Normal::new(0.0, spec.noise).expect("noise level validated");
        for v in data.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    img
}

/// `n_substeps + 1` frames evenly spaced over `[t0, t1]`, both ends included.
pub fn render_span(spec: &SceneSpec, t0: u64, t1: u64, n_substeps: usize) -> Result<Vec<Tensor<f64>>> {
    if n_substeps < MIN_SUBSTEPS {
        return Err(Error::config(format!(
            "need at least {MIN_SUBSTEPS} substeps per keyframe gap, got {n_substeps}"
        )));
    }
    let (a, b) = (t0 as f64, t1 as f64);
    Ok((0..=n_substeps)
        .map(|i| render_frame(spec, a + (b - a) * i as f64 / n_substeps as f64))
        .collect())
}

/// Frames across the scene's four keyframe gaps at `n_substeps` per gap:
/// `4·n_substeps + 1` images, keyframes at every `n_substeps`-th index.
pub fn render_sequence(spec: &SceneSpec, n_substeps: usize) -> Result<Vec<Tensor<f64>>> {
    spec.validate()?;
    let times = spec.keyframe_times();
    let mut frames = render_span(spec, times[0], times[1], n_substeps)?;
    for g in 1..4 {
        frames.extend(render_span(spec, times[g], times[g + 1], n_substeps)?.into_iter().skip(1));
    }
    Ok(frames)
}

/// `ln(luma + ε)` per pixel with Rec. 601 luma weights.
pub fn log_luma(img: &Tensor<f64>) -> Vec<f64> {
    let plane = img.numel() / 3;
    let d = img.data();
    (0..plane)
        .map(|p| (0.299 * d[p] + 0.587 * d[plane + p] + 0.114 * d[2 * plane + p] + LOG_EPS).ln())
        .collect()
}

/// Idealized event sensor over frames evenly spaced across `[t0, t1]`.
///
/// Each pixel keeps a reference log intensity, initially that of the first
/// frame. Whenever the current value is a full threshold away from the
/// reference, the reference moves one threshold towards it and an event of
/// that sign is emitted at the linearly interpolated crossing time.
/// Timestamps are floored to microseconds and kept inside `[t0, t1)`.
pub fn simulate_events(frames: &[Tensor<f64>], threshold: f64, t0: u64, t1: u64) -> Result<EventInterval> {
    if !(threshold > 0.0) {
        return Err(Error::config(format!("event threshold must be positive, got {threshold}")));
    }
    if frames.len() < 2 {
        return Err(Error::config("event simulation needs at least two frames"));
    }
    if t1 <= t0 {
        return Err(Error::Events(format!("empty time span [{t0}, {t1})")));
    }
    let s = frames[0].shape();
    if s.len() != 3 || s[0] != 3 || frames.iter().any(|f| f.shape() != s) {
        return Err(Error::shape("frames must share one 3×H×W shape"));
    }
    let w = s[2];
    if s[1] > 1 << 16 || w > 1 << 16 {
        return Err(Error::shape("frames too large for 16-bit event coordinates"));
    }
    let dt = (t1 - t0) as f64 / (frames.len() - 1) as f64;
    let mut reference = log_luma(&frames[0]);
    let mut prev = reference.clone();
    let mut events = Vec::new();
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let cur = log_luma(frame);
        let base = t0 as f64 + dt * (k - 1) as f64;
        for (p, (&l0, &l1)) in prev.iter().zip(&cur).enumerate() {
            let r = &mut reference[p];
            loop {
                let polarity = if l1 - *r >= threshold {
                    Polarity::Positive
                } else if *r - l1 >= threshold {
                    Polarity::Negative
                } else {
                    break;
                };
                *r += polarity.sign() * threshold;
                // |l0 - r| < threshold held before this step, so the crossing
                // lies inside (l0, l1]
                let frac = ((*r - l0) / (l1 - l0)).clamp(0.0, 1.0);
                let t = ((base + frac * dt).floor() as u64).clamp(t0, t1 - 1);
                events.push(Event::new(t, (p % w) as u16, (p / w) as u16, polarity));
            }
        }
        prev = cur;
    }
    events.sort_by_key(|e| (e.t, e.y, e.x));
    EventInterval::new(t0, t1, events)
}

fn keyframe(img: &Tensor<f64>) -> Tensor<f32> {
    let s = img.shape().to_vec();
    quantize(img).cast::<f32>().reshape(&[1, s[0], s[1], s[2]]).expect("same element count")
}

/// Builds one sample from five instants `t_{-2} < t_{-1} < t_0 < t_{+1} <
/// t_{+2}` (microseconds). Keyframes and target are snapped to 8-bit levels
/// so that writing and reloading the sample is lossless.
pub fn make_clip(spec: &SceneSpec, times: [u64; 5], n_substeps: usize) -> Result<ClipSample> {
    spec.validate()?;
    if times.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::config(format!("keyframe times must increase strictly: {times:?}")));
    }
    let mut intervals = Vec::with_capacity(4);
    for g in 0..4 {
        let frames = render_span(spec, times[g], times[g + 1], n_substeps)?;
        intervals.push(simulate_events(&frames, spec.threshold, times[g], times[g + 1])?);
    }
    let render = |k: usize| render_frame(spec, times[k] as f64);
    let clip = KeyframeClip::new([keyframe(&render(0)), keyframe(&render(1)), keyframe(&render(3)), keyframe(&render(4))])?;
    let target = quantize(&render(2)).cast::<f32>();
    let intervals: [EventInterval; 4] = intervals.try_into().expect("four intervals");
    ClipSample::new(clip, intervals, target)
}

/// Ranges for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub height: usize,
    pub width: usize,
    pub min_sprites: usize,
    pub max_sprites: usize,
    /// Sprite size range as a fraction of the shorter canvas side.
    pub min_size: f64,
    pub max_size: f64,
    /// Largest sprite displacement per keyframe gap, pixels.
    pub max_speed: f64,
    pub noise: f64,
    pub threshold: f64,
    pub frame_interval_us: u64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_sprites: 1,
            max_sprites: 3,
            min_size: 0.08,
            max_size: 0.2,
            max_speed: 3.0,
            noise: 0.0,
            threshold: DEFAULT_THRESHOLD,
            frame_interval_us: 33_333,
        }
    }
}

/// Draws a scene whose sprites stay fully on the canvas for the four
/// keyframe gaps. Same options and seed give the same scene.
pub fn random_scene(opts: &SceneOptions, seed: u64) -> Result<SceneSpec> {
    if opts.min_sprites > opts.max_sprites || !(opts.min_size > 0.0 && opts.min_size <= opts.max_size) {
        return Err(Error::config("inconsistent scene option ranges"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = opts.frame_interval_us as f64 * 1e-6;
    let short = opts.height.min(opts.width) as f64;
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(0.05..0.95)) };
    let background = color(&mut rng);
    let n = rng.random_range(opts.min_sprites..=opts.max_sprites);
    let mut sprites = Vec::with_capacity(n);
    for _ in 0..n {
        let size = short * rng.random_range(opts.min_size..=opts.max_size);
        let shape = if rng.random_bool(0.5) { SpriteShape::Disc } else { SpriteShape::Square };
        // keep the whole sprite inside for any travel up to two gaps either
        // side of the middle instant
        let travel = 2.0 * opts.max_speed;
        let room = |extent: usize| {
            let lo = size * std::f64::consts::SQRT_2 + travel;
            let hi = extent as f64 - 1.0 - lo;
            if hi < lo {
                return Err(Error::config(format!(
                    "a {}x{} canvas has no room for sprites of size {size:.1} moving {} px per frame",
                    opts.height, opts.width, opts.max_speed
                )));
            }
            Ok((lo, hi))
        };
        let (xl, xh) = room(opts.width)?;
        let (yl, yh) = room(opts.height)?;
        let mid = (rng.random_range(xl..=xh), rng.random_range(yl..=yh));
        let trajectory = if opts.max_speed > 0.0 && rng.random_bool(0.3) {
            let amplitude = [
                rng.random_range(0.0..=opts.max_speed),
                rng.random_range(0.0..=opts.max_speed),
            ];
            // |d/dt| ≤ 2π·A/period stays under max_speed per gap
            let period = gap * std::f64::consts::TAU * rng.random_range(1.0..3.0);
            let phase = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
            let w = std::f64::consts::TAU / period;
            let t_mid = 2.0 * gap;
            Trajectory::Sinusoidal {
                center: [
                    mid.0 - amplitude[0] * (w * t_mid + phase[0]).sin(),
                    mid.1 - amplitude[1] * (w * t_mid + phase[1]).sin(),
                ],
                amplitude,
                period,
                phase,
            }
        } else {
            let speed = rng.random_range(0.0..=opts.max_speed);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            // sideways acceleration, capped so drift over two gaps stays
            // within 2·max_speed
            let accel = rng.random_range(-0.5..=0.5) * (opts.max_speed - speed);
            let (vx, vy) = (speed * angle.cos() / gap, speed * angle.sin() / gap);
            let (ax, ay) = (accel * angle.sin() / (gap * gap), -accel * angle.cos() / (gap * gap));
            // mid + v·(t - tm) + a·(t - tm)² in monomial form
            let tm = 2.0 * gap;
            Trajectory::Polynomial {
                x: vec![mid.0 - vx * tm + ax * tm * tm, vx - 2.0 * ax * tm, ax],
                y: vec![mid.1 - vy * tm + ay * tm * tm, vy - 2.0 * ay * tm, ay],
            }
        };
        sprites.push(Sprite {
            shape,
            color: color(&mut rng),
            size,
            trajectory,
        });
    }
    let spec = SceneSpec {
        height: opts.height,
        width: opts.width,
        background,
        sprites,
        noise: opts.noise,
        threshold: opts.threshold,
        frame_interval_us: opts.frame_interval_us,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{decode_events, encode_events};

    fn scene(sprites: Vec<Sprite>) -> SceneSpec {
        SceneSpec {
            height: 32,
            width: 40,
            background: [0.2, 0.3, 0.4],
            sprites,
            noise: 0.0,
            threshold: DEFAULT_THRESHOLD,
            frame_interval_us: 10_000,
            seed: 5,
        }
    }

    fn disc(trajectory: Trajectory) -> Sprite {
        Sprite {
            shape: SpriteShape::Disc,
            color: [0.9, 0.8, 0.1],
            size: 5.0,
            trajectory,
        }
    }

    /// Centroid of the pixels that differ from the background, weighted by
    /// how much they differ.
    fn centroid(img: &Tensor<f64>, bg: [f64; 3]) -> (f64, f64) {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let m = (img.data()[y * w + x] - bg[0]).abs();
                sx += m * x as f64;
                sy += m * y as f64;
                sw += m;
            }
        }
        (sx / sw, sy / sw)
    }

    #[test]
    fn static_sprite_renders_identical_frames() {
        let frames = render_sequence(&scene(vec![disc(Trajectory::fixed(20.0, 16.0))]), 16).unwrap();
        assert_eq!(frames.len(), 65);
        assert!(frames.iter().all(|f| f == &frames[0]));
        assert!(frames[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn linear_motion_moves_the_centroid_by_velocity_times_time() {
        // 100 px/s over 10 ms gaps is one pixel per keyframe gap
        let spec = scene(vec![disc(Trajectory::linear(14.0, 12.0, 100.0, 50.0))]);
        let frames = render_sequence(&spec, 16).unwrap();
        let c0 = centroid(&frames[0], spec.background);
        let c4 = centroid(&frames[64], spec.background);
        assert!((c4.0 - c0.0 - 4.0).abs() < 1e-6, "{c0:?} {c4:?}");
        assert!((c4.1 - c0.1 - 2.0).abs() < 1e-6, "{c0:?} {c4:?}");
        let c1 = centroid(&frames[16], spec.background);
        assert!((c1.0 - c0.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rendering_is_seeded() {
        let mut spec = scene(vec![disc(Trajectory::linear(14.0, 12.0, 100.0, 0.0))]);
        spec.noise = 0.05;
        let a = render_sequence(&spec, 16).unwrap();
        assert_eq!(a, render_sequence(&spec, 16).unwrap());
        assert_ne!(a[3], a[4]);
        spec.seed += 1;
        assert_ne!(a[0], render_sequence(&spec, 16).unwrap()[0]);
    }

    #[test]
    fn substeps_and_scene_are_validated() {
        let spec = scene(vec![disc(Trajectory::fixed(20.0, 16.0))]);
        assert!(render_sequence(&spec, 15).is_err());
        let mut off = scene(vec![disc(Trajectory::linear(20.0, 16.0, 2000.0, 0.0))]);
        assert!(off.validate().is_err());
        off.sprites.clear();
        off.threshold = 0.0;
        assert!(matches!(off.validate(), Err(Error::Config(_))));
    }

    fn gray(level: f64) -> Tensor<f64> {
        Tensor::full(&[3, 2, 3], level)
    }

    #[test]
    fn constant_frames_emit_nothing() {
        let iv = simulate_events(&[gray(0.5), gray(0.5), gray(0.5)], 0.15, 0, 100).unwrap();
        assert!(iv.is_empty());
        assert!(simulate_events(&[gray(0.5), gray(0.6)], 0.0, 0, 10).is_err());
        assert!(simulate_events(&[gray(0.5)], 0.15, 0, 10).is_err());
    }

    #[test]
    fn a_step_of_two_and_a_half_thresholds_fires_twice() {
        let c = 0.15;
        let l0 = (0.2f64 + LOG_EPS).ln();
        let bright = (l0 + 2.5 * c).exp() - LOG_EPS;
        let mut next = gray(0.2);
        let plane = 6;
        for ch in 0..3 {
            next.data_mut()[ch * plane + 4] = bright;
        }
        let iv = simulate_events(&[gray(0.2), next], c, 1000, 2000).unwrap();
        assert_eq!(iv.len(), 2);
        for e in iv.events() {
            assert_eq!((e.x, e.y, e.polarity), (1, 1, Polarity::Positive));
        }
        // crossings at 1/2.5 and 2/2.5 of the step
        assert_eq!(iv.events()[0].t, 1400);
        assert_eq!(iv.events()[1].t, 1800);
    }

    #[test]
    fn darkening_ramp_is_all_negative_and_conserves_log_change() {
        let frames: Vec<_> = (0..=40).map(|k| gray(0.9 - 0.02 * k as f64)).collect();
        let c = 0.15;
        let iv = simulate_events(&frames, c, 0, 40_000).unwrap();
        assert!(!iv.is_empty());
        assert!(iv.events().iter().all(|e| e.polarity == Polarity::Negative));
        let dl = log_luma(&frames[40])[0] - log_luma(&frames[0])[0];
        let per_pixel = iv.polarity_sum() / 6.0;
        assert!((per_pixel - dl / c).abs() <= 1.0, "{per_pixel} vs {}", dl / c);
    }

    #[test]
    fn static_scene_clip_has_no_events_and_equal_frames() {
        let spec = scene(vec![disc(Trajectory::fixed(20.0, 16.0))]);
        let s = make_clip(&spec, spec.keyframe_times(), 16).unwrap();
        assert!(s.intervals.iter().all(|iv| iv.is_empty()));
        for f in &s.clip.frames {
            assert_eq!(f.data(), s.target.data());
        }
    }

    #[test]
    fn clip_intervals_tile_the_span_and_survive_encoding() {
        let spec = scene(vec![disc(Trajectory::linear(12.0, 16.0, 400.0, 0.0))]);
        let times = [100, 10_100, 20_100, 30_100, 40_100];
        let s = make_clip(&spec, times, 16).unwrap();
        assert_eq!(s.instants(), times);
        assert!(s.intervals.iter().all(|iv| !iv.is_empty()));
        let back = decode_events(&encode_events(&s.intervals)).unwrap();
        assert_eq!(back.as_slice(), s.intervals.as_slice());
        assert!(make_clip(&spec, [0, 10, 10, 20, 30], 16).is_err());
    }

    #[test]
    fn faster_sprites_make_more_events() {
        let count = |v: f64| {
            let spec = scene(vec![disc(Trajectory::linear(12.0, 16.0, v, 0.0))]);
            let s = make_clip(&spec, spec.keyframe_times(), 16).unwrap();
            s.intervals.iter().map(EventInterval::len).sum::<usize>()
        };
        let (slow, fast) = (count(100.0), count(300.0));
        assert!(fast > slow, "{slow} {fast}");
    }

    #[test]
    fn random_scenes_are_valid_and_seeded() {
        let opts = SceneOptions::default();
        for seed in 0..40 {
            let s = random_scene(&opts, seed).unwrap();
            assert!((1..=3).contains(&s.sprites.len()));
            assert_eq!(s, random_scene(&opts, seed).unwrap());
        }
        assert_ne!(random_scene(&opts, 1).unwrap(), random_scene(&opts, 2).unwrap());
    }
}
