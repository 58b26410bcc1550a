//! Binary checkpoint format.
//!
//! Layout: magic "MCAP", version byte 0x01, u32 LE tensor count, then per
//! tensor: u16 LE name length, UTF-8 name, u8 rank, rank x u64 LE dims,
//! product(dims) x f64 LE values; finally u32 LE config-JSON length and the
//! UTF-8 config JSON.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fully::FullModel;
use crate::nn::ParamSet;
use crate::seq2seq::Seq2SeqModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MCAP";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PretrainFeatures,
    FullyTrain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub mode: Mode,
    pub d_a: usize,
    pub d_w: usize,
    pub d_s: usize,
    pub hidden: usize,
    pub labels: usize,
    pub seed: u64,
    pub vocab_hash: String,
    pub max_caption_len: usize,
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)] // the parameter data lives on the heap either way
pub enum LoadedModel {
    Pretrain(Seq2SeqModel),
    Fully(FullModel),
}

fn encode(tensors: &[(String, &Tensor)], config: &CheckpointConfig) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(config)?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(buf: &[u8]) -> Result<(Vec<(String, Tensor)>, CheckpointConfig)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        // guard against absurd dims (overflow included) before allocating
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name:?} dims {shape:?} overflow")))?;
        if len > buf.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} declares {len} values, larger than the file"
            )));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        tensors.push((name, Tensor { shape, data }));
    }
    let json_len = r.u32()? as usize;
    let json = r.take(json_len)?;
    let config: CheckpointConfig = serde_json::from_slice(json)
        .map_err(|e| Error::Checkpoint(format!("bad config JSON: {e}")))?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after config",
            buf.len() - r.pos
        )));
    }
    Ok((tensors, config))
}

pub fn save_pretrain(path: &Path, model: &Seq2SeqModel, config: &CheckpointConfig) -> Result<()> {
    let bytes = encode(&model.param_tensors(), config)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_fully(path: &Path, model: &FullModel, config: &CheckpointConfig) -> Result<()> {
    let bytes = encode(&model.param_tensors(), config)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Fills a zero-built model of the config's dimensions from the named
/// tensors, rejecting missing, extra, or misshapen tensors.
fn fill_model<M: ParamSet>(mut model: M, tensors: Vec<(String, Tensor)>) -> Result<M> {
    let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
    for (name, slot) in model.param_tensors_mut() {
        let t = by_name
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
        if t.shape != slot.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has dims {:?}, config implies {:?}",
                t.shape, slot.shape
            )));
        }
        slot.data = t.data;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra:?}")));
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<(LoadedModel, CheckpointConfig)> {
    let buf = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let (tensors, config) = decode(&buf)?;
    let model = match config.mode {
        Mode::PretrainFeatures => {
            let skeleton = Seq2SeqModel::zeros(config.d_a + config.d_w, config.d_w, config.hidden);
            LoadedModel::Pretrain(fill_model(skeleton, tensors)?)
        }
        Mode::FullyTrain => {
            let skeleton = FullModel::zeros(
                config.d_a,
                config.d_w,
                config.d_s,
                config.hidden,
                config.labels,
            );
            LoadedModel::Fully(fill_model(skeleton, tensors)?)
        }
    };
    Ok((model, config))
}

/// Tensor names and shapes as stored in a checkpoint.
pub type TensorListing = Vec<(String, Vec<usize>)>;

/// Raw tensor listing for `inspect`, no model reconstruction.
pub fn inspect(path: &Path) -> Result<(TensorListing, CheckpointConfig)> {
    let buf = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let (tensors, config) = decode(&buf)?;
    Ok((
        tensors.into_iter().map(|(n, t)| (n, t.shape)).collect(),
        config,
    ))
}

pub fn checkpoint_bytes_pretrain(
    model: &Seq2SeqModel,
    config: &CheckpointConfig,
) -> Result<Vec<u8>> {
    encode(&model.param_tensors(), config)
}

impl CheckpointConfig {
    pub fn pretrain_model_from_seed(&self) -> Seq2SeqModel {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Seq2SeqModel::init(self.d_a + self.d_w, self.d_w, self.hidden, &mut rng)
    }
}
