// On-disk layout, one directory per sample:
//   frame_0.png frame_1.png   keyframes before the missing frame
//   frame_2.png               the missing frame (ground truth)
//   frame_3.png frame_4.png   keyframes after it
//   events_0.evf .. events_3.evf   one interval each, consecutive
// A dataset root may carry `manifest.txt`: a header line followed by
// `split<TAB>relative path` lines.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{make_clip, random_scene, SceneOptions, DEFAULT_SUBSTEPS};
use crate::error::{Error, Result};
use crate::events::{read_events, write_events, Event, EventInterval};
use crate::imageio::{read_png, write_png};
use crate::model::ClipSample;
use crate::synthesis::KeyframeClip;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "evinterp-manifest 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown split '{s}' (expected train, val or test)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    /// Sample directory relative to the dataset root.
    pub path: PathBuf,
}

/// The usable samples under a dataset root and the geometry they are
/// delivered at.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub entries: Vec<ManifestEntry>,
    /// Samples left out while indexing, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads one sample and fits it to the manifest geometry.
    pub fn load(&self, entry: &ManifestEntry) -> Result<ClipSample> {
        let raw = read_sample(self.root.join(&entry.path))?;
        fit(&raw, self.height, self.width)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<ClipSample>> {
        self.split(split).map(|e| self.load(e)).collect()
    }
}

fn frame_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k}.png"))
}

fn events_path(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("events_{g}.evf"))
}

pub fn write_sample(dir: impl AsRef<Path>, sample: &ClipSample) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (sample.height(), sample.width());
    let frames = &sample.clip.frames;
    let images = [&frames[0], &frames[1], &sample.target, &frames[2], &frames[3]];
    for (k, img) in images.into_iter().enumerate() {
        let img = img.clone().reshape(&[3, h, w])?;
        write_png(&img, frame_path(dir, k))?;
    }
    for (g, iv) in sample.intervals.iter().enumerate() {
        write_events(std::slice::from_ref(iv), events_path(dir, g))?;
    }
    Ok(())
}

/// Keyframes and intervals of a sample directory plus the ground truth when
/// `frame_2.png` is present.
pub type SampleInputs = (KeyframeClip<f32>, [EventInterval; 4], Option<Tensor<f32>>);

pub fn read_sample_inputs(dir: impl AsRef<Path>) -> Result<SampleInputs> {
    let dir = dir.as_ref();
    let mut images = Vec::with_capacity(5);
    for k in 0..5 {
        let path = frame_path(dir, k);
        images.push(if k == 2 && !path.exists() { None } else { Some(read_png::<f32>(path)?) });
    }
    let shape = images[0].as_ref().unwrap().shape().to_vec();
    for (k, im) in images.iter().enumerate() {
        if let Some(im) = im.as_ref().filter(|im| im.shape() != shape.as_slice()) {
            return Err(Error::Dataset(format!(
                "{}: frame_{k} is {:?}, frame_0 is {shape:?}",
                dir.display(),
                im.shape()
            )));
        }
    }
    let mut intervals = Vec::with_capacity(4);
    for g in 0..4 {
        let path = events_path(dir, g);
        let mut ivs = read_events(&path)?;
        if ivs.len() != 1 {
            return Err(Error::format(path, format!("expected one interval, found {}", ivs.len())));
        }
        intervals.push(ivs.pop().unwrap());
    }
    let target = images[2].take();
    let mut keyframes = images.into_iter().flatten();
    let mut next = || keyframes.next().unwrap().reshape(&[1, shape[0], shape[1], shape[2]]);
    let clip = KeyframeClip::new([next()?, next()?, next()?, next()?])?;
    Ok((clip, intervals.try_into().unwrap(), target))
}

/// Reads a sample directory as stored, without resizing.
pub fn read_sample(dir: impl AsRef<Path>) -> Result<ClipSample> {
    let dir = dir.as_ref();
    let (clip, intervals, target) = read_sample_inputs(dir)?;
    let target = target.ok_or_else(|| Error::Dataset(format!("{}: frame_2.png is missing", dir.display())))?;
    ClipSample::new(clip, intervals, target).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))
}

/// Scales a sample down by the largest integer factor that keeps it at least
/// `height × width`, then crops the centre. Events are binned the same way
/// and those outside the crop dropped.
fn fit(sample: &ClipSample, height: usize, width: usize) -> Result<ClipSample> {
    let (h, w) = (sample.height(), sample.width());
    if (h, w) == (height, width) {
        return Ok(sample.clone());
    }
    if h < height || w < width {
        return Err(Error::Dataset(format!("{h}x{w} sample is smaller than {height}x{width}")));
    }
    let f = (h / height).min(w / width);
    let (sh, sw) = (h / f, w / f);
    let (oy, ox) = ((sh - height) / 2, (sw - width) / 2);
    let shrink = |img: &Tensor<f32>| -> Tensor<f32> {
        let n = img.numel() / (3 * h * w);
        let d = img.data();
        let norm = 1.0 / (f * f) as f32;
        Tensor::from_fn(&[n, 3, height, width], |i| {
            let x = i % width;
            let y = (i / width) % height;
            let nc = i / (width * height);
            let (y0, x0) = ((y + oy) * f, (x + ox) * f);
            let mut acc = 0.0;
            for dy in 0..f {
                let row = nc * h * w + (y0 + dy) * w + x0;
                acc += d[row..row + f].iter().sum::<f32>();
            }
            acc * norm
        })
    };
    let frames = sample.clip.frames.each_ref().map(shrink);
    let target = shrink(&sample.target).reshape(&[3, height, width])?;
    let mut intervals = Vec::with_capacity(4);
    for iv in &sample.intervals {
        let events = iv
            .events()
            .iter()
            .filter_map(|e| {
                let x = (e.x as usize / f).checked_sub(ox).filter(|&x| x < width)?;
                let y = (e.y as usize / f).checked_sub(oy).filter(|&y| y < height)?;
                Some(Event::new(e.t, x as u16, y as u16, e.polarity))
            })
            .collect();
        intervals.push(EventInterval::new(iv.t_start(), iv.t_end(), events)?);
    }
    ClipSample::new(KeyframeClip::new(frames)?, intervals.try_into().unwrap(), target)
}

fn parse_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::format(&path, format!("first line must be '{MANIFEST_HEADER}'")));
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (split, rel) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(&path, format!("line {}: expected 'split<TAB>path'", i + 2)))?;
        entries.push(ManifestEntry {
            split: split.parse()?,
            path: PathBuf::from(rel),
        });
    }
    Ok(entries)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Without a manifest file: immediate subdirectories named after a split
/// hold that split's samples, any other subdirectory is a training sample.
fn scan(root: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for dir in subdirs(root)? {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let rel = |p: &Path| p.strip_prefix(root).unwrap().to_path_buf();
        match name.parse::<Split>() {
            Ok(split) => {
                for sample in subdirs(&dir)? {
                    entries.push(ManifestEntry { split, path: rel(&sample) });
                }
            }
            Err(_) => entries.push(ManifestEntry {
                split: Split::Train,
                path: rel(&dir),
            }),
        }
    }
    Ok(entries)
}

/// Indexes a dataset directory. Samples that are incomplete, unreadable or
/// cannot be brought to the target geometry are skipped with a warning.
/// With no `resolution` every sample must match the first usable one.
pub fn load_bsergb_style(root: impl AsRef<Path>, resolution: Option<(usize, usize)>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let candidates = if root.join(MANIFEST_FILE).is_file() {
        parse_manifest(root)?
    } else {
        scan(root)?
    };
    let mut geometry = resolution;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for entry in candidates {
        let dir = root.join(&entry.path);
        let checked = read_sample(&dir).and_then(|s| {
            let (h, w) = *geometry.get_or_insert((s.height(), s.width()));
            fit(&s, h, w).map(|_| ())
        });
        match checked {
            Ok(()) => entries.push(entry),
            Err(e) => {
                log::warn!("skipping sample {}: {e}", dir.display());
                skipped.push((entry.path, e.to_string()));
            }
        }
    }
    let Some((height, width)) = geometry.filter(|_| !entries.is_empty()) else {
        return Err(Error::Dataset(format!("no usable samples under {}", root.display())));
    };
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        height,
        width,
        entries,
        skipped,
    })
}

pub fn write_manifest(root: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.as_ref().join(MANIFEST_FILE);
    let mut text = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        text.push_str(&format!("{}\t{}\n", e.split, e.path.display()));
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Parameters for a generated dataset. Clip `i` uses scene seed
/// `seed + i`; the first clips go to train, then val, then test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub substeps: usize,
    pub seed: u64,
    pub scene: SceneOptions,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train_clips: 8,
            val_clips: 2,
            test_clips: 2,
            substeps: DEFAULT_SUBSTEPS,
            seed: 0,
            scene: SceneOptions::default(),
        }
    }
}

/// Generates, writes and indexes a synthetic dataset under `root`.
pub fn generate_dataset(root: impl AsRef<Path>, cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let plan = Split::ALL
        .into_iter()
        .zip([cfg.train_clips, cfg.val_clips, cfg.test_clips])
        .flat_map(|(split, n)| std::iter::repeat_n(split, n));
    let mut entries = Vec::new();
    for (i, split) in plan.enumerate() {
        let spec = random_scene(&cfg.scene, cfg.seed.wrapping_add(i as u64))?;
        let sample = make_clip(&spec, spec.keyframe_times(), cfg.substeps)?;
        let path = PathBuf::from(split.as_str()).join(format!("clip_{i:04}"));
        write_sample(root.join(&path), &sample)?;
        entries.push(ManifestEntry { split, path });
    }
    write_manifest(root, &entries)?;
    load_bsergb_style(root, Some((cfg.scene.height, cfg.scene.width)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{SceneSpec, Sprite, SpriteShape, Trajectory};

    fn sample(h: usize, w: usize) -> ClipSample {
        let spec = SceneSpec {
            height: h,
            width: w,
            background: [0.1, 0.5, 0.3],
            sprites: vec![Sprite {
                shape: SpriteShape::Square,
                color: [1.0, 0.9, 0.2],
                size: 3.0,
                trajectory: Trajectory::linear(6.0, 5.0, 150.0, 60.0),
            }],
            noise: 0.0,
            threshold: 0.15,
            frame_interval_us: 10_000,
            seed: 3,
        };
        make_clip(&spec, spec.keyframe_times(), 16).unwrap()
    }

    #[test]
    fn empty_root_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bsergb_style(dir.path(), None), Err(Error::Dataset(_))));
    }

    #[test]
    fn one_sample_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample(16, 20);
        write_sample(dir.path().join("a"), &s).unwrap();
        let m = load_bsergb_style(dir.path(), None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m.height, m.width), (16, 20));
        assert_eq!(m.entries[0].split, Split::Train);
        assert_eq!(m.load(&m.entries[0]).unwrap(), s);
    }

    #[test]
    fn incomplete_samples_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample(16, 16);
        write_sample(dir.path().join("good"), &s).unwrap();
        write_sample(dir.path().join("short"), &s).unwrap();
        fs::remove_file(dir.path().join("short/frame_3.png")).unwrap();
        fs::remove_file(dir.path().join("short/frame_4.png")).unwrap();
        write_sample(dir.path().join("small"), &sample(16, 12)).unwrap();
        let m = load_bsergb_style(dir.path(), None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries[0].path, PathBuf::from("good"));
        assert_eq!(m.skipped.len(), 2);
    }

    #[test]
    fn larger_samples_are_downscaled_and_cropped() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample(20, 24);
        write_sample(dir.path().join("val/x"), &s).unwrap();
        let m = load_bsergb_style(dir.path(), Some((8, 8))).unwrap();
        assert_eq!(m.entries[0].split, Split::Val);
        let small = m.load(&m.entries[0]).unwrap();
        assert_eq!((small.height(), small.width()), (8, 8));
        assert_eq!(small.instants(), s.instants());
        // factor 2 leaves 10x12, cropped by (1, 2)
        let expect: f32 = [(2, 4), (2, 5), (3, 4), (3, 5)]
            .iter()
            .map(|&(y, x)| s.target.data()[y * 24 + x])
            .sum::<f32>()
            / 4.0;
        assert!((small.target.data()[0] - expect).abs() < 1e-6);
        for iv in &small.intervals {
            iv.check_bounds(8, 8).unwrap();
        }
    }

    #[test]
    fn generated_dataset_follows_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            train_clips: 2,
            val_clips: 1,
            test_clips: 0,
            substeps: 16,
            seed: 9,
            scene: SceneOptions {
                height: 16,
                width: 16,
                max_speed: 1.5,
                ..Default::default()
            },
        };
        let m = generate_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(m.split(Split::Train).count(), 2);
        assert_eq!(m.split(Split::Val).count(), 1);
        let again = tempfile::tempdir().unwrap();
        let m2 = generate_dataset(again.path(), &cfg).unwrap();
        assert_eq!(m.load_split(Split::Train).unwrap(), m2.load_split(Split::Train).unwrap());
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.starts_with(MANIFEST_HEADER));
        assert!(text.contains("val\tval/clip_0002"));
        assert_eq!(parse_manifest(dir.path()).unwrap(), m.entries);
    }
}
