//! Run configuration as flat `section.key = value` text.
//!
//! The schema is the serde form of the section structs: every key that
//! appears in the defaults is accepted, anything else is rejected. Dumps list
//! sections in a fixed order and keys alphabetically, so dump → parse → dump
//! is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use evinterp_core::datagen::{SceneOptions, SyntheticConfig, DEFAULT_SUBSTEPS, DEFAULT_THRESHOLD};
use evinterp_core::model::ModelConfig;
use evinterp_core::training::{fingerprint, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root, written by `simulate` and read by the other commands.
    pub dir: String,
    pub height: usize,
    pub width: usize,
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub substeps: usize,
    pub seed: u64,
    pub min_sprites: usize,
    pub max_sprites: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub max_speed: f64,
    pub noise: f64,
    pub threshold: f64,
    pub frame_interval_us: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let scene = SceneOptions::default();
        Self {
            dir: "data".into(),
            height: scene.height,
            width: scene.width,
            train_clips: 8,
            val_clips: 2,
            test_clips: 2,
            substeps: DEFAULT_SUBSTEPS,
            seed: 0,
            min_sprites: scene.min_sprites,
            max_sprites: scene.max_sprites,
            min_size: scene.min_size,
            max_size: scene.max_size,
            max_speed: scene.max_speed,
            noise: scene.noise,
            threshold: DEFAULT_THRESHOLD,
            frame_interval_us: scene.frame_interval_us,
        }
    }
}

impl DataConfig {
    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            train_clips: self.train_clips,
            val_clips: self.val_clips,
            test_clips: self.test_clips,
            substeps: self.substeps,
            seed: self.seed,
            scene: SceneOptions {
                height: self.height,
                width: self.width,
                min_sprites: self.min_sprites,
                max_sprites: self.max_sprites,
                min_size: self.min_size,
                max_size: self.max_size,
                max_speed: self.max_speed,
                noise: self.noise,
                threshold: self.threshold,
                frame_interval_us: self.frame_interval_us,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Parent of the per-configuration run directories.
    pub run_root: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { run_root: "runs".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

const SECTIONS: [&str; 4] = ["model", "train", "data", "output"];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn format_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(format_value).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}

/// Parses `text` into the JSON type of `template`.
fn parse_value(key: &str, text: &str, template: &Value) -> Result<Value, CliError> {
    let bad = || usage(format!("{key}: cannot read '{text}' as {}", kind(template)));
    let text = text.trim();
    Ok(match template {
        Value::Bool(_) => Value::Bool(text.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_f64() => {
            let v: f64 = text.parse().map_err(|_| bad())?;
            Value::from(serde_json::Number::from_f64(v).ok_or_else(bad)?)
        }
        Value::Number(_) => Value::from(text.parse::<u64>().map_err(|_| bad())?),
        Value::String(_) => Value::String(text.to_string()),
        Value::Array(items) => {
            let elem = items.first().ok_or_else(bad)?;
            let parts: Vec<&str> = text.split(',').collect();
            if parts.len() != items.len() {
                return Err(usage(format!("{key}: expected {} comma-separated values", items.len())));
            }
            Value::Array(parts.iter().map(|p| parse_value(key, p, elem)).collect::<Result<_, _>>()?)
        }
        _ => return Err(bad()),
    })
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "true or false",
        Value::Number(n) if n.is_f64() => "a number",
        Value::Number(_) => "a non-negative integer",
        Value::String(_) => "text",
        Value::Array(_) => "a list",
        _ => "a value",
    }
}

impl RunConfig {
    fn sections(&self) -> [(&'static str, Value); 4] {
        let json = |x: serde_json::Result<Value>| x.expect("config sections serialize");
        [
            (SECTIONS[0], json(serde_json::to_value(&self.model))),
            (SECTIONS[1], json(serde_json::to_value(&self.train))),
            (SECTIONS[2], json(serde_json::to_value(&self.data))),
            (SECTIONS[3], json(serde_json::to_value(&self.output))),
        ]
    }

    /// Canonical text form.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, (name, value)) in self.sections().iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "# {name}").unwrap();
            for (k, v) in value.as_object().expect("struct sections") {
                writeln!(out, "{name}.{k} = {}", format_value(v)).unwrap();
            }
        }
        out
    }

    /// Applies `key = value` assignments on top of `self`. Later assignments
    /// win.
    pub fn with_assignments<'a>(
        &self,
        assignments: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<RunConfig, CliError> {
        let mut sections: Vec<(&str, Map<String, Value>)> = self
            .sections()
            .into_iter()
            .map(|(n, v)| match v {
                Value::Object(m) => (n, m),
                _ => unreachable!("sections serialize as objects"),
            })
            .collect();
        for (key, text) in assignments {
            let (section, field) = key
                .split_once('.')
                .ok_or_else(|| usage(format!("unknown key '{key}' (keys look like section.name)")))?;
            let map = sections
                .iter_mut()
                .find(|(n, _)| *n == section)
                .map(|(_, m)| m)
                .ok_or_else(|| usage(format!("unknown section in '{key}' (expected one of {SECTIONS:?})")))?;
            let template = map.get(field).ok_or_else(|| usage(format!("unknown key '{key}'")))?;
            let value = parse_value(key, text, template)?;
            map.insert(field.to_string(), value);
        }
        let take = |i: usize| Value::Object(sections[i].1.clone());
        let cfg = RunConfig {
            model: serde_json::from_value(take(0)).map_err(|e| usage(format!("model: {e}")))?,
            train: serde_json::from_value(take(1)).map_err(|e| usage(format!("train: {e}")))?,
            data: serde_json::from_value(take(2)).map_err(|e| usage(format!("data: {e}")))?,
            output: serde_json::from_value(take(3)).map_err(|e| usage(format!("output: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected 'key = value'", i + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        RunConfig::default().with_assignments(pairs)
    }

    /// Defaults, then the file, then command-line overrides given as
    /// `--section.key value` pairs.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let base = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let mut pairs = Vec::new();
        let mut it = overrides.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| usage(format!("unexpected argument '{flag}'")))?;
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k, v),
                None => (key, it.next().ok_or_else(|| usage(format!("{flag} needs a value")))?.as_str()),
            };
            pairs.push((key, value));
        }
        base.with_assignments(pairs)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        let d = &self.data;
        if d.height % 4 != 0 || d.width % 4 != 0 || d.height == 0 || d.width == 0 {
            return Err(usage(format!(
                "data.height and data.width must be positive multiples of 4, got {}x{}",
                d.height, d.width
            )));
        }
        Ok(())
    }

    /// `run-` and the first 12 hex digits of the hash of everything except
    /// the output section and the training budget, so that a longer run
    /// resumes a shorter one.
    pub fn run_dir(&self) -> PathBuf {
        let train = TrainConfig {
            epochs: 0,
            max_iterations: 0,
            checkpoint_every: 0,
            ..self.train.clone()
        };
        let key = (&self.model, &train, &self.data);
        let hash = fingerprint(&key).expect("serializable");
        Path::new(&self.output.run_root).join(format!("run-{}", &hash[..12]))
    }
}
