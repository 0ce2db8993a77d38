use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

use evinterp_core::autograd::Tape;
use evinterp_core::datagen::{generate_dataset, load_bsergb_style, read_sample_inputs, DatasetManifest, Split, MANIFEST_FILE};
use evinterp_core::events::{build_clip_voxels, read_events, voxelize as voxelize_interval};
use evinterp_core::imageio::write_png;
use evinterp_core::model::{load_checkpoint, parameter_count, Architecture, Model};
use evinterp_core::synthesis::KeyframeClip;
use evinterp_core::training::{self, psnr, ssim, SSIM_WINDOW, BEST_CHECKPOINT, LAST_CHECKPOINT};
use evinterp_core::{Error, Tensor};

use crate::config::RunConfig;
use crate::CliError;

const CONFIG_FILE: &str = "config.txt";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

/// Creates the run directory and records the configuration that names it.
fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.dump()).map_err(io(&path))?;
    Ok(dir)
}

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    Ok(load_bsergb_style(&cfg.data.dir, Some((cfg.data.height, cfg.data.width)))?)
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Path::new(&cfg.data.dir);
    if root.exists() {
        // regenerate over a previous dataset, but never over unrelated files
        if root.join(MANIFEST_FILE).is_file() {
            fs::remove_dir_all(root).map_err(io(root))?;
        } else if fs::read_dir(root).map_err(io(root))?.next().is_some() {
            return Err(Error::Dataset(format!(
                "{} exists, is not empty and holds no {MANIFEST_FILE}; refusing to write into it",
                root.display()
            ))
            .into());
        }
    }
    let m = generate_dataset(root, &cfg.data.synthetic())?;
    for split in Split::ALL {
        info!("{split}: {} clips", m.split(split).count());
    }
    println!("{}", root.display());
    Ok(())
}

pub fn voxelize(cfg: &RunConfig, events: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let intervals = read_events(events)?;
    let (n_bins, h, w) = (cfg.model.n_time_bins, cfg.data.height, cfg.data.width);
    let mut grids = Vec::with_capacity(intervals.len());
    for iv in &intervals {
        let g = voxelize_interval(iv, n_bins, h, w)?;
        grids.push(json!({
            "t_start": iv.t_start(),
            "t_end": iv.t_end(),
            "events": iv.len(),
            "sum": g.sum(),
            "data": g.data(),
        }));
    }
    let out = out.unwrap_or_else(|| events.with_extension("voxels.json"));
    let dump = json!({ "n_bins": n_bins, "height": h, "width": w, "intervals": grids });
    write_json(&out, &dump)?;
    println!("{}", out.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    let m = manifest(cfg)?;
    let dir = prepare_run_dir(cfg)?;
    let last = dir.join(LAST_CHECKPOINT);
    if resume && !last.is_file() {
        return Err(CliError::Usage(format!("nothing to resume: {} does not exist", last.display())));
    }
    let summary = training::train(&m, &cfg.model, &cfg.train, &dir, resume.then_some(last.as_path()))?;
    info!(
        "{} iterations over {} epochs, final loss {:.6}",
        summary.iterations,
        summary.epochs,
        summary.losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("{}", dir.display());
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, given: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let path = given.unwrap_or_else(|| cfg.run_dir().join(BEST_CHECKPOINT));
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} not found; train first or pass --checkpoint",
            path.display()
        )));
    }
    Ok(path)
}

pub fn eval(cfg: &RunConfig, checkpoint: Option<PathBuf>, split: &str) -> Result<(), CliError> {
    let split: Split = split.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let ckpt = checkpoint_path(cfg, checkpoint)?;
    let report = training::evaluate(&manifest(cfg)?, &ckpt, split)?;
    let dir = prepare_run_dir(cfg)?;
    let path = dir.join(format!("eval_{split}.json"));
    write_json(&path, &report)?;
    info!("{split}: PSNR {:.3} dB, SSIM {:.4}", report.mean_psnr, report.mean_ssim);
    println!("{}", path.display());
    Ok(())
}

pub fn interpolate(
    cfg: &RunConfig,
    sample: &Path,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint::<f32>(checkpoint_path(cfg, checkpoint)?)?;
    let model = Model::from_params(&ckpt.config, ckpt.params)?;
    let (clip, intervals, target) = read_sample_inputs(sample)?;
    let (_, h, w) = clip.dims();
    let voxels = build_clip_voxels(
        &intervals,
        model.config.n_time_bins,
        h,
        w,
        model.config.reverse_negates_polarity,
    )?;
    let voxels = voxels.to_tensor::<f32>().reshape(&[1, 4, model.config.n_time_bins, h, w])?;
    let pred = model.predict(&voxels, &clip)?.reshape(&[3, h, w])?;

    let name = sample.file_name().map_or("sample".into(), |n| n.to_string_lossy().into_owned());
    let out = match out {
        Some(dir) => dir,
        None => prepare_run_dir(cfg)?.join("interpolate").join(&name),
    };
    fs::create_dir_all(&out).map_err(io(&out))?;
    write_png(&pred, out.join("prediction.png"))?;
    let mut metrics = json!({ "sample": sample.display().to_string() });
    if let Some(target) = target {
        let diff = pred.zip_map(&target, |a, b| (a - b).abs())?;
        write_png(&diff, out.join("difference.png"))?;
        let p = psnr(&pred, &target)?;
        metrics["psnr"] = if p.is_finite() { json!(p) } else { json!("inf") };
        if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
            metrics["ssim"] = json!(ssim(&pred, &target)?);
        }
        info!("PSNR against the ground truth: {p:.3} dB");
    }
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("{}", out.display());
    Ok(())
}

pub fn inspect(cfg: &RunConfig) -> Result<(), CliError> {
    let (arch, _) = Architecture::build(&cfg.model)?;
    let total = parameter_count(&cfg.model)?;
    println!("parameters: {total} ({:.3} M)", total as f64 / 1e6);
    println!("  encoder: {}", arch.encoder.param_count());
    for (l, block) in arch.synth.iter().enumerate() {
        println!("  synthesis level {l}: {}", block.param_count());
    }
    println!("run directory: {}", cfg.run_dir().display());

    let (h, w, t) = (cfg.data.height, cfg.data.width, cfg.model.n_time_bins);
    let model = Model::<f32>::new(&cfg.model)?;
    let frame = Tensor::full(&[1, 3, h, w], 0.5f32);
    let clip = KeyframeClip::new(std::array::from_fn(|_| frame.clone()))?;
    let tape = Tape::new();
    let p = model.params.bind_constant(&tape);
    let voxels = tape.constant(Tensor::zeros(&[1, 4, t, h, w]));
    let trace = model.forward_on(&p, voxels, &clip)?;
    println!("shape trace:");
    println!("  voxels {:?}", voxels.shape());
    for (l, f) in trace.features.levels.iter().enumerate() {
        println!("  features level {l} {:?}", f.shape());
    }
    for (l, o) in trace.levels.iter().enumerate() {
        println!("  synthesis level {l} {:?}", o.combined.shape());
    }
    println!("  output {:?}", trace.image.shape());
    println!();
    print!("{}", cfg.dump());
    Ok(())
}
