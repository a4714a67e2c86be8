//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "CBRNNCKP"
//! version  u32       1
//! config   u32 len + UTF-8 JSON of ModelConfig
//! extra    u32 len + UTF-8 JSON (trainer state, or `null`)
//! count    u32       number of tensors
//! tensor   u32 len + UTF-8 name, u32 ndim, ndim x u64 dims, numel x f64
//! ```
//!
//! Model parameters use their dotted names. Optimizer moments, when present,
//! are stored as `adam.m:<name>` and `adam.v:<name>`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

use super::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CBRNNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const FIRST_MOMENT: &str = "adam.m:";
const SECOND_MOMENT: &str = "adam.v:";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub extra: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(w, &serde_json::to_string(&self.config).map_err(io::Error::other)?)?;
        write_str(w, &serde_json::to_string(&self.extra).map_err(io::Error::other)?)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a cbrnn checkpoint"));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config: ModelConfig =
            serde_json::from_str(&read_str(r)?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let extra: serde_json::Value =
            serde_json::from_str(&read_str(r)?).map_err(|e| Error::Checkpoint(format!("extra: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            if shape.contains(&0) {
                return Err(Error::Checkpoint(format!("tensor `{name}` has a zero dimension")));
            }
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated tensor data"))?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(shape, data)));
        }
        Ok(Checkpoint { config, extra, tensors })
    }

    /// Writes via a temporary sibling file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| Error::Checkpoint("truncated string".into()))?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
}

impl Model {
    /// Snapshot of the parameters, optionally with optimizer moments.
    pub fn to_checkpoint(&self, with_moments: bool, extra: serde_json::Value) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> =
            self.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        if with_moments {
            for (_, p) in self.params.iter() {
                let shape = p.value.shape().to_vec();
                tensors.push((format!("{FIRST_MOMENT}{}", p.name), Tensor::new(shape.clone(), p.first_moment.clone())));
                tensors.push((format!("{SECOND_MOMENT}{}", p.name), Tensor::new(shape, p.second_moment.clone())));
            }
        }
        Checkpoint { config: self.config.clone(), extra, tensors }
    }

    /// Rebuilds a model; moments present in the checkpoint are restored too.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, t) in &ckpt.tensors {
            if !name.starts_with(FIRST_MOMENT) && !name.starts_with(SECOND_MOMENT) {
                store.insert(name.clone(), t.clone())?;
            }
        }
        let mut model = Model::from_params(ckpt.config.clone(), store)?;
        for (name, t) in &ckpt.tensors {
            let (moment, base) = if let Some(b) = name.strip_prefix(FIRST_MOMENT) {
                (0, b)
            } else if let Some(b) = name.strip_prefix(SECOND_MOMENT) {
                (1, b)
            } else {
                continue;
            };
            let id = model
                .params
                .id(base)
                .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter `{base}`")))?;
            let p = model.params.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("moment shape mismatch for `{base}`")));
            }
            let slot = if moment == 0 { &mut p.first_moment } else { &mut p.second_moment };
            slot.copy_from_slice(t.data());
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint(false, serde_json::Value::Null).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
