//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IRFW" u8:version u32:count
//! count × { u32:name_len name u32:rank rank×u32:dim f32×∏dim }
//! ```
//!
//! Parameters come first under their layer names, then the Adam moments
//! as `__adam_m.<name>` / `__adam_v.<name>`, then `__meta` (counters,
//! mode and architecture) and `__meta.config` (the config echo, one byte
//! per value).

use std::path::Path;

use irflow_core::model::{ArchConfig, Checkpoint};
use irflow_core::{Tensor, VelocityMode};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"IRFW";
pub const VERSION: u8 = 1;
const META: &str = "__meta";
const META_CONFIG: &str = "__meta.config";

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("extent fits in u32").to_le_bytes());
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f32>) {
    push_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    push_u32(out, shape.len());
    for &d in shape {
        push_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Splits a counter into four 16-bit limbs, each exact in f32.
fn limbs(v: u64) -> [f32; 4] {
    [0, 16, 32, 48].map(|s| ((v >> s) & 0xffff) as f32)
}

fn unlimbs(l: &[f32]) -> u64 {
    l.iter().enumerate().map(|(i, &x)| (x as u64) << (16 * i)).sum()
}

fn meta_values(ckpt: &Checkpoint) -> Vec<f32> {
    let a = &ckpt.arch;
    let mut m = Vec::new();
    m.extend(limbs(ckpt.iteration));
    m.extend(limbs(ckpt.adam_step));
    m.push(match ckpt.mode {
        VelocityMode::Standard => 0.0,
        VelocityMode::Cumulative => 1.0,
    });
    m.push(a.input_dim as f32);
    m.push(a.time_features as f32);
    m.push(a.input_offset as f32);
    m.push(a.input_scale as f32);
    m.push(a.hidden.len() as f32);
    m.extend(a.hidden.iter().map(|&w| w as f32));
    m
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let f32s = |t: &Tensor| t.data().iter().map(|&v| v as f32).collect::<Vec<_>>().into_iter();
    let n = ckpt.params.len();
    let mut out = MAGIC.to_vec();
    out.push(VERSION);
    push_u32(&mut out, 3 * n + 2);
    for (name, t) in &ckpt.params {
        push_tensor(&mut out, name, t.shape(), f32s(t));
    }
    for (prefix, moments) in [("__adam_m.", &ckpt.adam_m), ("__adam_v.", &ckpt.adam_v)] {
        for ((name, _), t) in ckpt.params.iter().zip(moments.iter()) {
            push_tensor(&mut out, &format!("{prefix}{name}"), t.shape(), f32s(t));
        }
    }
    let meta = meta_values(ckpt);
    push_tensor(&mut out, META, &[meta.len()], meta.into_iter());
    let echo = ckpt.config_echo.as_bytes();
    push_tensor(&mut out, META_CONFIG, &[echo.len()], echo.iter().map(|&b| b as f32));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::CheckpointFormat {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
    }
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
    offset: usize,
}

impl RawTensor {
    fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect()).map_err(|e| {
            Error::CheckpointFormat {
                offset: self.offset,
                reason: format!("tensor {}: {e}", self.name),
            }
        })
    }
}

fn read_tensors(bytes: &[u8]) -> Result<Vec<RawTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic"));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let offset = r.pos;
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.fail("name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.fail("tensor too large"))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| r.fail("tensor too large"))?, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        out.push(RawTensor {
            name,
            shape,
            data,
            offset,
        });
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after last tensor"));
    }
    Ok(out)
}

fn arch_from_meta(m: &RawTensor) -> Result<(ArchConfig, VelocityMode, u64, u64)> {
    let bad = |reason: &str| Error::CheckpointFormat {
        offset: m.offset,
        reason: format!("{META}: {reason}"),
    };
    let d = &m.data;
    if d.len() < 14 {
        return Err(bad("too short"));
    }
    let iteration = unlimbs(&d[0..4]);
    let adam_step = unlimbs(&d[4..8]);
    let mode = match d[8] {
        0.0 => VelocityMode::Standard,
        1.0 => VelocityMode::Cumulative,
        _ => return Err(bad("unknown mode")),
    };
    let depth = d[13] as usize;
    if d.len() != 14 + depth {
        return Err(bad("hidden layer list length"));
    }
    let arch = ArchConfig {
        input_dim: d[9] as usize,
        time_features: d[10] as usize,
        input_offset: d[11] as f64,
        input_scale: d[12] as f64,
        hidden: d[14..].iter().map(|&w| w as usize).collect(),
    };
    arch.validate().map_err(|e| bad(&e.to_string()))?;
    Ok((arch, mode, iteration, adam_step))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let tensors = read_tensors(bytes)?;
    let find = |name: &str| -> Result<&RawTensor> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::CheckpointFormat {
                offset: bytes.len(),
                reason: format!("missing tensor {name}"),
            })
    };
    let (arch, mode, iteration, adam_step) = arch_from_meta(find(META)?)?;
    let names = arch.param_names();
    let mut params = Vec::new();
    let mut adam_m = Vec::new();
    let mut adam_v = Vec::new();
    for name in &names {
        params.push((name.clone(), find(name)?.to_tensor()?));
        adam_m.push(find(&format!("__adam_m.{name}"))?.to_tensor()?);
        adam_v.push(find(&format!("__adam_v.{name}"))?.to_tensor()?);
    }
    if tensors.len() != 3 * names.len() + 2 {
        return Err(Error::CheckpointFormat {
            offset: 5,
            reason: "unexpected tensors for this architecture".into(),
        });
    }
    let echo = find(META_CONFIG)?;
    let config_echo =
        String::from_utf8(echo.data.iter().map(|&b| b as u8).collect()).map_err(|_| Error::CheckpointFormat {
            offset: echo.offset,
            reason: "config echo is not UTF-8".into(),
        })?;
    let ckpt = Checkpoint {
        arch,
        mode,
        iteration,
        params,
        adam_m,
        adam_v,
        adam_step,
        config_echo,
    };
    // shape check against the architecture
    ckpt.network().map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    Ok(ckpt)
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
