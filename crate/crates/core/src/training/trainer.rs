use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{charbonnier, clip_grad_norm, psnr, ssim, AdaMax, TrainConfig};
use crate::autograd::Tape;
use crate::datagen::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ClipSample, Model, ModelConfig};
use crate::synthesis::{KeyframeClip, FRAMES};
use crate::tensor::Tensor;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
const NAN_DUMP: &str = "nan_dump.json";
const EVAL_BATCH: usize = 4;

/// Hex SHA-256 of a value's JSON form.
pub fn fingerprint<S: Serialize>(value: &S) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// A sample with its voxel grids computed once.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub name: String,
    /// `4 × n_time_bins × H × W`.
    pub voxels: Tensor<f32>,
    pub clip: KeyframeClip<f32>,
    pub target: Tensor<f32>,
}

impl PreparedSample {
    pub fn new(name: impl Into<String>, sample: &ClipSample, config: &ModelConfig) -> Result<Self> {
        let voxels = sample
            .voxels(config.n_time_bins, config.reverse_negates_polarity)?
            .to_tensor();
        Ok(Self {
            name: name.into(),
            voxels,
            clip: sample.clip.clone(),
            target: sample.target.clone(),
        })
    }
}

/// Samples stacked along a leading batch dimension.
#[derive(Debug, Clone)]
pub struct Batch {
    pub voxels: Tensor<f32>,
    pub clip: KeyframeClip<f32>,
    pub target: Tensor<f32>,
}

fn stack(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let shape = parts[0].shape();
    if parts.iter().any(|p| p.shape() != shape) {
        return Err(Error::shape("batch members differ in shape"));
    }
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let mut out = vec![parts.len()];
    // keyframes already carry a batch dimension of one
    out.extend_from_slice(if shape.len() == 4 && shape[0] == 1 { &shape[1..] } else { shape });
    Tensor::from_vec(&out, data)
}

impl Batch {
    pub fn assemble(samples: &[&PreparedSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        let voxels = stack(&samples.iter().map(|s| &s.voxels).collect::<Vec<_>>())?;
        let frames: Vec<Tensor<f32>> = (0..FRAMES)
            .map(|t| stack(&samples.iter().map(|s| &s.clip.frames[t]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let target = stack(&samples.iter().map(|s| &s.target).collect::<Vec<_>>())?;
        Ok(Self {
            voxels,
            clip: KeyframeClip::new(frames.try_into().unwrap())?,
            target,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    /// This step finished its epoch.
    pub epoch_end: bool,
}

/// Optimization state for one run. Everything that influences later steps
/// is saved in checkpoints, so a resumed run continues identically.
pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    pub optimizer: AdaMax<f32>,
    pub train: Vec<PreparedSample>,
    pub epoch: usize,
    /// Samples of the current epoch already consumed.
    pub cursor: usize,
    pub iteration: usize,
    pub best_score: f64,
    /// Indices of the batch most recently started.
    pub last_batch: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    epoch: usize,
    cursor: usize,
    iteration: usize,
    optimizer_step: u64,
    best_score: f64,
    train_config: TrainConfig,
}

impl Trainer {
    pub fn new(model_config: &ModelConfig, config: &TrainConfig, train: Vec<PreparedSample>) -> Result<Self> {
        Self::from_model(Model::new(model_config)?, config, train)
    }

    fn from_model(model: Model<f32>, config: &TrainConfig, train: Vec<PreparedSample>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Dataset("the training split is empty".into()));
        }
        let shapes: Vec<&[usize]> = model.params.tensors().iter().map(|t| t.shape()).collect();
        let optimizer = AdaMax::new(&shapes, config.beta1, config.beta2, config.adamax_eps);
        Ok(Self {
            model,
            config: config.clone(),
            optimizer,
            train,
            epoch: 0,
            cursor: 0,
            iteration: 0,
            best_score: f64::NEG_INFINITY,
            last_batch: Vec::new(),
        })
    }

    /// The sample order of `epoch`, a pure function of the seed and epoch.
    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn finished(&self) -> bool {
        let cap = self.config.max_iterations;
        self.epoch >= self.config.epochs || (cap > 0 && self.iteration >= cap)
    }

    /// One optimizer step on the next batch of the current epoch. A final
    /// partial batch is used as is.
    pub fn step(&mut self) -> Result<StepStats> {
        let order = self.permutation(self.epoch);
        let end = (self.cursor + self.config.batch_size).min(order.len());
        self.last_batch = order[self.cursor..end].to_vec();
        let members: Vec<&PreparedSample> = self.last_batch.iter().map(|&i| &self.train[i]).collect();
        let batch = Batch::assemble(&members)?;
        let lr = self.config.lr_schedule(self.epoch);

        let tape = Tape::new();
        let p = self.model.params.bind(&tape);
        let trace = self.model.forward_on(&p, tape.constant(batch.voxels), &batch.clip)?;
        let loss = charbonnier(trace.image, &batch.target, self.config.charbonnier_eps)?;
        let loss_value = loss.value().data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "loss is {loss_value} at iteration {} (epoch {})",
                self.iteration, self.epoch
            )));
        }
        let mut grads = tape.backward(loss)?;
        let mut g = p.gradients(&mut grads);
        drop(trace);
        if let Some(i) = g.iter().position(|t| !t.all_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {} at iteration {}",
                self.model.params.names()[i],
                self.iteration
            )));
        }
        let grad_norm = clip_grad_norm(&mut g, self.config.grad_clip);
        self.optimizer.step(self.model.params.tensors_mut(), &g, lr)?;

        let stats = StepStats {
            epoch: self.epoch,
            iteration: self.iteration,
            loss: loss_value,
            grad_norm,
            lr,
            epoch_end: end == order.len(),
        };
        self.iteration += 1;
        self.cursor = end;
        if stats.epoch_end {
            self.epoch += 1;
            self.cursor = 0;
        }
        Ok(stats)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint<f32>> {
        let names = self.model.params.names();
        let mut aux = Vec::with_capacity(2 * names.len());
        for (n, (m, u)) in names.iter().zip(self.optimizer.m.iter().zip(&self.optimizer.u)) {
            aux.push((format!("adamax.m.{n}"), m.clone()));
            aux.push((format!("adamax.u.{n}"), u.clone()));
        }
        let progress = Progress {
            epoch: self.epoch,
            cursor: self.cursor,
            iteration: self.iteration,
            optimizer_step: self.optimizer.step,
            best_score: self.best_score,
            train_config: self.config.clone(),
        };
        Ok(Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            aux,
            meta: serde_json::to_value(progress)?,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The
    /// training configuration may differ from the saved one (for example a
    /// larger epoch count).
    pub fn resume(ckpt: Checkpoint<f32>, config: &TrainConfig, train: Vec<PreparedSample>) -> Result<Self> {
        let progress: Progress = serde_json::from_value(ckpt.meta.clone())
            .map_err(|e| Error::config(format!("checkpoint has no training state: {e}")))?;
        let model = Model::from_params(&ckpt.config, ckpt.params)?;
        let mut t = Self::from_model(model, config, train)?;
        let expected = 2 * t.model.params.len();
        if ckpt.aux.len() != expected {
            return Err(Error::config(format!(
                "checkpoint holds {} optimizer tensors, expected {expected}",
                ckpt.aux.len()
            )));
        }
        let mut aux = ckpt.aux.into_iter().map(|(_, t)| t);
        for i in 0..t.model.params.len() {
            let (m, u) = (aux.next().unwrap(), aux.next().unwrap());
            let shape = t.model.params.tensors()[i].shape();
            if m.shape() != shape || u.shape() != shape {
                return Err(Error::shape("optimizer state does not match the parameters"));
            }
            t.optimizer.m[i] = m;
            t.optimizer.u[i] = u;
        }
        t.optimizer.step = progress.optimizer_step;
        t.epoch = progress.epoch;
        t.cursor = progress.cursor;
        t.iteration = progress.iteration;
        t.best_score = progress.best_score;
        Ok(t)
    }
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub name: String,
    /// `"inf"` in JSON for an exact reconstruction.
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub samples: Vec<SampleMetrics>,
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub parameter_count: usize,
    pub config_fingerprint: String,
    pub wall_time_s: f64,
    /// Published full-resolution results of the original method, for
    /// orientation only.
    pub reference_psnr_db: f64,
    pub reference_ssim: f64,
    pub reference_parameters_m: f64,
}

/// PSNR and SSIM of the model's prediction for every sample.
pub fn evaluate_samples(model: &Model<f32>, samples: &[PreparedSample]) -> Result<Vec<SampleMetrics>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = Batch::assemble(&chunk.iter().collect::<Vec<_>>())?;
        let pred = model.predict(&batch.voxels, &batch.clip)?;
        let per = pred.numel() / chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            let p = Tensor::from_vec(s.target.shape(), pred.data()[i * per..(i + 1) * per].to_vec())?;
            out.push(SampleMetrics {
                name: s.name.clone(),
                psnr: psnr(&p, &s.target)?,
                ssim: ssim(&p, &s.target)?,
            });
        }
    }
    Ok(out)
}

fn mean(metrics: &[SampleMetrics], f: impl Fn(&SampleMetrics) -> f64) -> f64 {
    metrics.iter().map(f).sum::<f64>() / metrics.len().max(1) as f64
}

fn prepare_split(manifest: &DatasetManifest, split: Split, config: &ModelConfig) -> Result<Vec<PreparedSample>> {
    manifest
        .split(split)
        .map(|e| PreparedSample::new(e.path.display().to_string(), &manifest.load(e)?, config))
        .collect()
}

/// Metrics of a saved model on one split of a dataset.
pub fn evaluate(manifest: &DatasetManifest, checkpoint: impl AsRef<Path>, split: Split) -> Result<EvalReport> {
    let start = Instant::now();
    let ckpt = load_checkpoint::<f32>(checkpoint)?;
    let model = Model::from_params(&ckpt.config, ckpt.params)?;
    let samples = prepare_split(manifest, split, &model.config)?;
    if samples.is_empty() {
        return Err(Error::Dataset(format!("the {split} split is empty")));
    }
    let metrics = evaluate_samples(&model, &samples)?;
    Ok(EvalReport {
        split: split.to_string(),
        mean_psnr: mean(&metrics, |m| m.psnr),
        mean_ssim: mean(&metrics, |m| m.ssim),
        samples: metrics,
        parameter_count: model.parameter_count(),
        config_fingerprint: fingerprint(&model.config)?,
        wall_time_s: start.elapsed().as_secs_f64(),
        reference_psnr_db: 32.23,
        reference_ssim: 0.9581,
        reference_parameters_m: 2.07,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub iterations: usize,
    /// Loss of every step taken in this call.
    pub losses: Vec<f64>,
    pub best_score: f64,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepStats),
    Epoch {
        epoch: usize,
        mean_loss: f64,
        #[serde(serialize_with = "serialize_db")]
        val_psnr: f64,
        val_ssim: f64,
        best: bool,
    },
}

fn write_line(log: &mut impl Write, line: &LogLine, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *log, line)?;
    writeln!(log).and_then(|_| log.flush()).map_err(|e| Error::io(path, e))
}

/// Trains on the manifest's train split, validating on its val split after
/// every epoch. Writes `train_log.jsonl`, `last.ckpt` and `best.ckpt` (best
/// validation PSNR, or lowest epoch loss when there is no val split) into
/// `out_dir`. With `resume` the run continues from that checkpoint and the
/// log is appended to.
pub fn train(
    manifest: &DatasetManifest,
    model_config: &ModelConfig,
    config: &TrainConfig,
    out_dir: impl AsRef<Path>,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            let samples = prepare_split(manifest, Split::Train, &ckpt.config)?;
            Trainer::resume(ckpt, config, samples)?
        }
        None => Trainer::new(model_config, config, prepare_split(manifest, Split::Train, model_config)?)?,
    };
    let val = prepare_split(manifest, Split::Val, &trainer.model.config)?;
    if val.is_empty() {
        log::warn!("no validation samples; best checkpoint follows the training loss");
    }
    let log_path = out.join(TRAIN_LOG);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let (last, best) = (out.join(LAST_CHECKPOINT), out.join(BEST_CHECKPOINT));

    let mut losses = Vec::new();
    let mut epoch_losses = Vec::new();
    while !trainer.finished() {
        let stats = match trainer.step() {
            Ok(s) => s,
            Err(e @ Error::Numeric(_)) => {
                let dump = serde_json::json!({
                    "error": e.to_string(),
                    "epoch": trainer.epoch,
                    "iteration": trainer.iteration,
                    "batch": trainer.last_batch.iter().map(|&i| &trainer.train[i].name).collect::<Vec<_>>(),
                });
                let path = out.join(NAN_DUMP);
                fs::write(&path, serde_json::to_vec_pretty(&dump)?).map_err(|e| Error::io(&path, e))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        losses.push(stats.loss);
        epoch_losses.push(stats.loss);
        write_line(&mut log, &LogLine::Step(&stats), &log_path)?;
        if !stats.epoch_end {
            continue;
        }
        let mean_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        epoch_losses.clear();
        let (val_psnr, val_ssim, score) = if val.is_empty() {
            (f64::NAN, f64::NAN, -mean_loss)
        } else {
            let m = evaluate_samples(&trainer.model, &val)?;
            let p = mean(&m, |m| m.psnr);
            (p, mean(&m, |m| m.ssim), p)
        };
        let improved = score > trainer.best_score;
        if improved {
            trainer.best_score = score;
            save_checkpoint(&trainer.checkpoint()?, &best)?;
        }
        let line = LogLine::Epoch {
            epoch: stats.epoch,
            mean_loss,
            val_psnr,
            val_ssim,
            best: improved,
        };
        write_line(&mut log, &line, &log_path)?;
        if trainer.epoch % config.checkpoint_every == 0 {
            save_checkpoint(&trainer.checkpoint()?, &last)?;
        }
    }
    save_checkpoint(&trainer.checkpoint()?, &last)?;
    if !best.exists() {
        fs::copy(&last, &best).map_err(|e| Error::io(&best, e))?;
    }
    Ok(TrainSummary {
        epochs: trainer.epoch,
        iterations: trainer.iteration,
        losses,
        best_score: trainer.best_score,
        last_checkpoint: last,
        best_checkpoint: best,
        log: log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, SceneOptions, SyntheticConfig};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            n_time_bins: 4,
            embed_channels: 4,
            msa_heads: 2,
            channels: [8, 8, 12],
            smoothnet_depth: 1,
            head_hidden: [4, 4, 4],
            head_depth: [0, 0, 1],
            kernel_taps: 4,
            seed: 2,
            ..Default::default()
        }
    }

    fn dataset(dir: &Path) -> DatasetManifest {
        let cfg = SyntheticConfig {
            train_clips: 3,
            val_clips: 1,
            test_clips: 0,
            substeps: 16,
            seed: 4,
            scene: SceneOptions {
                height: 16,
                width: 16,
                max_speed: 1.5,
                ..Default::default()
            },
        };
        generate_dataset(dir, &cfg).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            lr_halving_period: 2,
            batch_size: 2,
            lr_initial: 2e-3,
            ..Default::default()
        }
    }

    #[test]
    fn permutations_depend_on_seed_and_epoch_only() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(dir.path());
        let train = prepare_split(&m, Split::Train, &tiny_model()).unwrap();
        let t = Trainer::new(&tiny_model(), &quick(), train.clone()).unwrap();
        let u = Trainer::new(&tiny_model(), &quick(), train).unwrap();
        assert_eq!(t.permutation(5), u.permutation(5));
        let mut sorted = t.permutation(1);
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn resumed_run_matches_an_uninterrupted_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(&dir.path().join("data"));
        let full = train(&m, &tiny_model(), &quick(), dir.path().join("a"), None).unwrap();
        assert_eq!(full.iterations, 6);
        assert_eq!(full.epochs, 3);

        // stop after three steps (mid-epoch), then resume to the end
        let partial = TrainConfig {
            max_iterations: 3,
            ..quick()
        };
        let first = train(&m, &tiny_model(), &partial, dir.path().join("b"), None).unwrap();
        let resumed = train(
            &m,
            &tiny_model(),
            &quick(),
            dir.path().join("b"),
            Some(&first.last_checkpoint),
        )
        .unwrap();
        let mut joined = first.losses.clone();
        joined.extend(&resumed.losses);
        assert_eq!(joined, full.losses);

        let log = fs::read_to_string(&full.log).unwrap();
        let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.iter().filter(|l| l["event"] == "epoch").count(), 3);
        assert!(lines[0]["loss"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn evaluation_is_reproducible_from_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(&dir.path().join("data"));
        let run = train(
            &m,
            &tiny_model(),
            &TrainConfig { epochs: 1, lr_halving_period: 1, ..quick() },
            dir.path().join("run"),
            None,
        )
        .unwrap();
        let a = evaluate(&m, &run.best_checkpoint, Split::Val).unwrap();
        let b = evaluate(&m, &run.best_checkpoint, Split::Val).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.parameter_count, crate::model::parameter_count(&tiny_model()).unwrap());
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["split"], "val");
        assert!(json["mean_ssim"].as_f64().unwrap() <= 1.0);
        assert!(evaluate(&m, &run.best_checkpoint, Split::Test).is_err());
    }

    #[test]
    fn infinite_psnr_is_written_as_a_string() {
        let m = SampleMetrics {
            name: "x".into(),
            psnr: f64::INFINITY,
            ssim: 1.0,
        };
        assert_eq!(serde_json::to_value(&m).unwrap()["psnr"], "inf");
    }

    #[test]
    fn nan_loss_aborts_with_a_dump() {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(&dir.path().join("data"));
        let cfg = TrainConfig {
            lr_initial: 1e30,
            grad_clip: 0.0,
            ..quick()
        };
        let err = train(&m, &tiny_model(), &cfg, dir.path().join("run"), None).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        let dump: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("run").join(NAN_DUMP)).unwrap()).unwrap();
        assert!(!dump["batch"].as_array().unwrap().is_empty());
    }
}
