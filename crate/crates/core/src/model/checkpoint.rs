// Checkpoint container:
//   b"EVCK" | u32 version | u64 header length | JSON header | tensor data
// The header names every tensor with its shape; data follows in header
// order as little-endian values of the declared dtype.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model parameters plus any auxiliary tensors (optimizer moments) and free
/// form metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub aux: Vec<(String, Tensor<T>)>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    meta: serde_json::Value,
    params: Vec<Entry>,
    aux: Vec<Entry>,
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let entry = |name: &str, t: &Tensor<T>| Entry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
    };
    let header = Header {
        dtype: T::DTYPE.to_string(),
        config: ckpt.config.clone(),
        meta: ckpt.meta.clone(),
        params: ckpt
            .params
            .names()
            .iter()
            .zip(ckpt.params.tensors())
            .map(|(n, t)| entry(n, t))
            .collect(),
        aux: ckpt.aux.iter().map(|(n, t)| entry(n, t)).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let values = ckpt.params.numel() + ckpt.aux.iter().map(|(_, t)| t.numel()).sum::<usize>();
    let mut buf = Vec::with_capacity(16 + json.len() + values * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let tensors = ckpt.params.tensors().iter().chain(ckpt.aux.iter().map(|(_, t)| t));
    for t in tensors {
        for &v in t.data() {
            match T::DTYPE {
                "f32" => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    // write-then-rename so a crash never leaves a torn checkpoint behind
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, converting stored values to `T`.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(bad(format!("unknown dtype {other}"))),
    };
    let mut data = &body[hlen..];
    let mut take = |e: &Entry| -> Result<Tensor<T>> {
        let n: usize = e.shape.iter().product();
        if data.len() < n * width {
            return Err(bad(format!("truncated data for {}", e.name)));
        }
        let (chunk, rest) = data.split_at(n * width);
        data = rest;
        let values = chunk
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64),
                _ => T::from_f64(f64::from_le_bytes(c.try_into().unwrap())),
            })
            .collect();
        Tensor::from_vec(&e.shape, values)
    };
    let mut params = ParamStore::new();
    for e in &header.params {
        let t = take(e)?;
        params.add(e.name.clone(), t);
    }
    let mut aux = Vec::with_capacity(header.aux.len());
    for e in &header.aux {
        aux.push((e.name.clone(), take(e)?));
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        aux,
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tests::tiny, Model};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(&tiny()).unwrap();
        let ckpt = Checkpoint {
            config: m.config.clone(),
            params: m.params.clone(),
            aux: vec![("adam.m.0".into(), Tensor::full(&[2, 2], 0.1f32))],
            meta: serde_json::json!({"epoch": 3}),
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, ckpt.config);
        assert_eq!(back.meta["epoch"], 3);
        assert_eq!(back.aux[0].1.data(), ckpt.aux[0].1.data());
        for (a, b) in back.params.tensors().iter().zip(m.params.tensors()) {
            assert_eq!(a.data(), b.data());
        }
        let rebuilt = Model::from_params(&back.config, back.params).unwrap();
        assert_eq!(rebuilt.params.names(), m.params.names());
    }

    #[test]
    fn version_and_architecture_mismatches_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::<f64>::new(&tiny()).unwrap();
        let ckpt = Checkpoint {
            config: m.config.clone(),
            params: m.params.clone(),
            aux: vec![],
            meta: serde_json::Value::Null,
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 2;
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");

        let mut other = tiny();
        other.msa_enabled = false;
        assert!(Model::from_params(&other, m.params.clone()).is_err());

        save_checkpoint(&ckpt, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
