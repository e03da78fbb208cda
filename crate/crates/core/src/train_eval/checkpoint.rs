//! Checkpoint container: magic `ECKP`, u16 version, u32 header length, JSON
//! header, u32 tensor count, then per tensor a u32-length-prefixed UTF-8
//! name followed by one STFS tensor. Integers little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, TrainConfig, TrainError};
use crate::architectures::{instantiate, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};
use crate::tfr::stfs;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ECKP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u16,
    pub model: ModelSpec,
    /// Hash of the featurizer config the training features were built with.
    pub feature_hash: String,
    /// Pooling factor of the 1D wrap, for 1D models.
    pub pool_k: Option<usize>,
    pub seed: u64,
    pub split: DatasetSplit,
    pub train: TrainConfig,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> std::result::Result<[u8; N], TrainError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(b)
}

fn read_bytes(r: &mut impl Read) -> std::result::Result<Vec<u8>, TrainError> {
    let len = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

impl Checkpoint {
    pub fn from_network(header: CheckpointHeader, net: &Network<f32>) -> Self {
        let params = net
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone_values()))
            .collect();
        Self { header, params }
    }

    /// Rebuilds the network described by the header and loads the weights.
    pub fn to_network(&self) -> std::result::Result<Network<f32>, Error> {
        let mut net = instantiate::<f32>(&self.header.model, 0)?;
        net.load_params(&self.params)?;
        Ok(net)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec_pretty(&self.header).map_err(std::io::Error::other)?;
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            stfs::write_to(w, t.dims(), t.data())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("in-memory write");
        out
    }

    pub fn read_from(r: &mut impl Read) -> std::result::Result<Self, TrainError> {
        if read_exact::<4>(r)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(read_exact(r)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header: CheckpointHeader = serde_json::from_slice(&read_bytes(r)?)
            .map_err(|e| bad(format!("header: {e}")))?;
        let count = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(r)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            let (dims, data) = stfs::read_from(r).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            params.push((name, Tensor::from_vec(&dims, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| bad(e.to_string()))?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::read_from(&mut bytes.as_slice())?)
    }
}
