//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SWGRCKPT"
//! version    u32      1
//! config     u64 length + UTF-8 TOML of the run configuration
//! tensors    u32 count, then per tensor:
//!              u32 name length + name, u32 rank, rank × u64 dims,
//!              row-major f32 payload
//! adam       u8 present flag; if 1: u64 step count, then the m/<name> and
//!            v/<name> moments in the tensor scheme above
//! iteration  u64
//! rng        u32 count, then per stream: u32 name length + name,
//!            u32 length + state bytes
//! ```
//!
//! Loading parses the whole file before anything is returned, so a
//! truncated or corrupt file never yields partial state.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gradtape::{AdamState, ParamSet, Tensor};
use crate::policy::{layout_diff, Policy, PolicyConfig};

pub const MAGIC: &[u8; 8] = b"SWGRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_toml: String,
    pub params: ParamSet<f32>,
    pub adam: Option<AdamState<f32>>,
    pub iteration: u64,
    pub rng_states: Vec<(String, Vec<u8>)>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes32(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_bytes32(out, name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("file truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn bytes32(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        String::from_utf8(self.bytes32(what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string("tensor name")?;
        let rank = self.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor {name} has implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("tensor dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|c| c.checked_mul(4).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has implausible shape {shape:?}")))?;
        let raw = self.take(count * 4, "tensor payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u64(&mut out, self.config_toml.len() as u64);
        out.extend_from_slice(self.config_toml.as_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.iter() {
            put_tensor(&mut out, &p.name, &p.value);
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                put_u64(&mut out, a.t);
                for (prefix, moments) in [("m", &a.m), ("v", &a.v)] {
                    for (p, t) in self.params.iter().zip(moments) {
                        put_tensor(&mut out, &format!("{prefix}/{}", p.name), t);
                    }
                }
            }
        }
        put_u64(&mut out, self.iteration);
        put_u32(&mut out, self.rng_states.len() as u32);
        for (name, state) in &self.rng_states {
            put_bytes32(&mut out, name.as_bytes());
            put_bytes32(&mut out, state);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic bytes)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let len = r.u64("config length")? as usize;
        let config_toml = String::from_utf8(r.take(len, "config")?.to_vec())
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let count = r.u32("tensor count")?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            params
                .insert(name, t)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        let adam = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let mut a = AdamState::new(&params);
                a.t = r.u64("optimizer step")?;
                for prefix in ["m", "v"] {
                    for i in 0..params.len() {
                        let (name, t) = r.tensor()?;
                        let p = params.get(crate::gradtape::ParamId(i));
                        if name != format!("{prefix}/{}", p.name) || t.shape() != p.value.shape() {
                            return Err(Error::Checkpoint(format!(
                                "optimizer tensor {name} {:?} does not match parameter {} {:?}",
                                t.shape(),
                                p.name,
                                p.value.shape()
                            )));
                        }
                        if prefix == "m" {
                            a.m[i] = t;
                        } else {
                            a.v[i] = t;
                        }
                    }
                }
                Some(a)
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        let iteration = r.u64("iteration")?;
        let n = r.u32("rng count")?;
        let mut rng_states = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.string("rng name")?;
            let state = r.bytes32("rng state")?.to_vec();
            rng_states.push((name, state));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            config_toml,
            params,
            adam,
            iteration,
            rng_states,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Builds a policy for `config`, listing every tensor that disagrees.
    pub fn policy(&self, config: &PolicyConfig) -> Result<Policy<f32>> {
        let diff = layout_diff(&config.param_layout(), &self.params);
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!(
                "parameters do not fit the configured network:\n  {}",
                diff.join("\n  ")
            )));
        }
        Policy::from_params(config.clone(), self.params.clone())
    }
}
