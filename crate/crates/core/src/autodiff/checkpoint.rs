//! Binary checkpoint layout.
//!
//! All integers and floats are little-endian. Strings are a `u32` byte
//! length followed by UTF-8 bytes.
//!
//! ```text
//! magic      8 bytes  "SGCKPT01"
//! meta       string   free-form key = value text (model config, epoch, ...)
//! groups     u32      number of parameter groups
//! per group:
//!   name     string
//!   step     u64      Adam step counter
//!   lr beta1 beta2 eps  4 × f64
//!   count    u32      number of tensors
//!   per tensor:
//!     name   string
//!     rank   u32, then rank × u64 dims
//!     values n × f64, then Adam first moment n × f64, second moment n × f64
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use super::optim::Adam;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SGCKPT01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Named tensors optimized together with one Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub adam: Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub groups: Vec<ParamGroup>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            put_str(&mut out, &g.name);
            out.extend_from_slice(&g.adam.step.to_le_bytes());
            put_f64s(&mut out, &[g.adam.lr, g.adam.beta1, g.adam.beta2, g.adam.eps]);
            out.extend_from_slice(&(g.params.len() as u32).to_le_bytes());
            for (i, p) in g.params.iter().enumerate() {
                put_str(&mut out, &g.names[i]);
                out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
                for &d in p.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                put_f64s(&mut out, p.data());
                put_f64s(&mut out, g.adam.m[i].data());
                put_f64s(&mut out, g.adam.v[i].data());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let meta = r.string()?;
        let ngroups = r.u32()? as usize;
        let mut groups = Vec::with_capacity(ngroups);
        for _ in 0..ngroups {
            let name = r.string()?;
            let step = r.u64()?;
            let lr = r.f64()?;
            let beta1 = r.f64()?;
            let beta2 = r.f64()?;
            let eps = r.f64()?;
            let count = r.u32()? as usize;
            let mut names = Vec::with_capacity(count);
            let mut params = Vec::with_capacity(count);
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                names.push(r.string()?);
                let rank = r.u32()? as usize;
                let shape = (0..rank)
                    .map(|_| r.u64().map(|d| d as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                let n: usize = shape.iter().product();
                let mut tensor = || -> Result<Tensor, CheckpointError> {
                    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
                    Tensor::new(shape.clone(), data).map_err(|e| CheckpointError::Format(e.to_string()))
                };
                params.push(tensor()?);
                m.push(tensor()?);
                v.push(tensor()?);
            }
            groups.push(ParamGroup {
                name,
                names,
                params,
                adam: Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    step,
                    m,
                    v,
                },
            });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { meta, groups })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| CheckpointError::Format(format!("invalid UTF-8: {e}")))
    }
}
