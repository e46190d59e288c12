//! Binary model checkpoints.
//!
//! Layout (all integers little-endian u32):
//!
//! ```text
//! "TDCK" version kind_len kind config_len config(TOML) n_tensors
//! { name_len name ndim dims[ndim] f32[prod(dims)] }*
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::classifier::{Classifier, ClassifierConfig};
use super::embedder::{Embedder, EmbedderConfig};
use super::tensor::{Param, Parameterized};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TDCK";
const VERSION: u32 = 1;

pub const KIND_EMBEDDER: &str = "embedder";
pub const KIND_CLASSIFIER: &str = "classifier";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

pub fn encode_checkpoint<C: Serialize>(kind: &str, config: &C, params: &[&Param<f32>]) -> Result<Vec<u8>> {
    let config = toml::to_string(config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.str(kind);
    w.str(&config);
    w.u32(params.len() as u32);
    for p in params {
        w.str(&p.name);
        w.u32(p.shape.len() as u32);
        for &d in &p.shape {
            w.u32(d as u32);
        }
        for v in &p.value {
            w.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(w.0)
}

pub struct DecodedCheckpoint<C> {
    pub kind: String,
    pub config: C,
    pub tensors: Vec<Param<f32>>,
}

pub fn decode_checkpoint<C: DeserializeOwned>(bytes: &[u8]) -> Result<DecodedCheckpoint<C>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = r.str()?;
    let config: C = toml::from_str(&r.str()?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.str()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let value = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Param { name, shape, value });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(DecodedCheckpoint { kind, config, tensors })
}

fn load_params<M: Parameterized<f32>>(model: &mut M, tensors: Vec<Param<f32>>) -> Result<()> {
    let mut targets = model.params_mut();
    if targets.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            targets.len(),
            tensors.len()
        )));
    }
    for (dst, src) in targets.iter_mut().zip(tensors) {
        if dst.name != src.name || dst.shape != src.shape {
            return Err(Error::Checkpoint(format!(
                "tensor mismatch: {} {:?} vs {} {:?}",
                dst.name, dst.shape, src.name, src.shape
            )));
        }
        dst.value = src.value;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn read_kind<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<DecodedCheckpoint<C>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ck = decode_checkpoint::<C>(&bytes)?;
    if ck.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", ck.kind)));
    }
    Ok(ck)
}

/// Writes the model and returns the SHA-256 of the file.
pub fn save_embedder(path: impl AsRef<Path>, model: &Embedder<f32>) -> Result<String> {
    write_bytes(path.as_ref(), &encode_checkpoint(KIND_EMBEDDER, &model.config, &model.params())?)
}

pub fn load_embedder(path: impl AsRef<Path>) -> Result<Embedder<f32>> {
    let ck = read_kind::<EmbedderConfig>(path.as_ref(), KIND_EMBEDDER)?;
    let mut model = Embedder::new(ck.config)?;
    load_params(&mut model, ck.tensors)?;
    Ok(model)
}

pub fn save_classifier(path: impl AsRef<Path>, model: &Classifier<f32>) -> Result<String> {
    write_bytes(path.as_ref(), &encode_checkpoint(KIND_CLASSIFIER, &model.config, &model.params())?)
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<Classifier<f32>> {
    let ck = read_kind::<ClassifierConfig>(path.as_ref(), KIND_CLASSIFIER)?;
    let mut model = Classifier::new(ck.config)?;
    load_params(&mut model, ck.tensors)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::embedder::ConvBlock;

    #[test]
    fn round_trips_and_hashes_stably() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EmbedderConfig {
            input_frames: 16,
            input_mels: 8,
            conv_blocks: vec![ConvBlock {
                out_channels: 2,
                stride: 1,
            }],
            embedding_dim: 4,
            seed: 3,
            ..Default::default()
        };
        let model = Embedder::<f32>::new(cfg).unwrap();
        let path = dir.path().join("e.ckpt");
        let h1 = save_embedder(&path, &model).unwrap();
        let h2 = save_embedder(dir.path().join("again.ckpt"), &model).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(load_embedder(&path).unwrap(), model);
        assert!(load_classifier(&path).is_err());

        let clf = Classifier::<f32>::new(ClassifierConfig {
            input_dim: 4,
            hidden_dims: vec![3],
            ..Default::default()
        })
        .unwrap();
        let cpath = dir.path().join("c.ckpt");
        save_classifier(&cpath, &clf).unwrap();
        assert_eq!(load_classifier(&cpath).unwrap(), clf);
    }

    #[test]
    fn rejects_corruption() {
        let clf = Classifier::<f32>::new(ClassifierConfig {
            input_dim: 4,
            hidden_dims: vec![3],
            ..Default::default()
        })
        .unwrap();
        let bytes = encode_checkpoint(KIND_CLASSIFIER, &clf.config, &clf.params()).unwrap();
        assert!(decode_checkpoint::<ClassifierConfig>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint::<ClassifierConfig>(&bad).is_err());
        bad = bytes;
        bad.push(0);
        assert!(decode_checkpoint::<ClassifierConfig>(&bad).is_err());
    }
}
