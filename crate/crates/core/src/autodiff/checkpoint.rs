//! Parameter checkpoint container.
//!
//! Layout (all text lines end with `\n`, numbers in decimal ASCII):
//!
//! ```text
//! NSPK-CHECKPOINT
//! version 1
//! dtype f64|f32
//! meta <byte length>
//! <meta bytes, UTF-8, usually a JSON model config>
//! params <count>
//! <name> <rank> <dim_0> ... <dim_rank-1>
//! <numel * dtype-size bytes, little-endian IEEE-754>
//! ...
//! ```
//!
//! Parameter names may not contain whitespace. Values are stored in the
//! precision they were trained in, so a 64-bit store round-trips bit-exactly.

use std::path::Path;

use super::tensor::{Dtype, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "NSPK-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: String,
    pub params: ParamStore<T>,
}

pub fn encode<T: Real>(params: &ParamStore<T>, meta: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(
            "{CHECKPOINT_MAGIC}\nversion {CHECKPOINT_VERSION}\ndtype {}\nmeta {}\n",
            T::DTYPE.as_str(),
            meta.len()
        )
        .as_bytes(),
    );
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(format!("\nparams {}\n", params.len()).as_bytes());
    for (name, t) in params.iter() {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!("parameter name `{name}` not storable")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.extend_from_slice(format!("{name} {} {}\n", dims.len(), dims.join(" ")).as_bytes());
        for &v in t.values() {
            v.write_le(&mut out);
        }
        out.push(b'\n');
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Option<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).ok()
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn keyed(&mut self, key: &str) -> Option<&'a str> {
        self.line()?.strip_prefix(key)?.strip_prefix(' ')
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> std::result::Result<Checkpoint<T>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.line() != Some(CHECKPOINT_MAGIC) {
        return Err("missing checkpoint header".into());
    }
    let version: u32 = c
        .keyed("version")
        .and_then(|v| v.parse().ok())
        .ok_or("bad version line")?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let dtype = match c.keyed("dtype") {
        Some("f64") => Dtype::F64,
        Some("f32") => Dtype::F32,
        other => return Err(format!("bad dtype {other:?}")),
    };
    let meta_len: usize = c
        .keyed("meta")
        .and_then(|v| v.parse().ok())
        .ok_or("bad meta line")?;
    let meta = c
        .take(meta_len)
        .and_then(|b| std::str::from_utf8(b).ok())
        .ok_or("truncated meta block")?
        .to_string();
    if c.take(1) != Some(b"\n") {
        return Err("meta block not terminated".into());
    }
    let count: usize = c
        .keyed("params")
        .and_then(|v| v.parse().ok())
        .ok_or("bad params line")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let header = c.line().ok_or("truncated parameter header")?;
        let mut fields = header.split(' ');
        let name = fields.next().ok_or("missing parameter name")?;
        let rank: usize = fields
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| format!("bad rank for `{name}`"))?;
        let shape: Vec<usize> = fields
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("bad shape for `{name}`"))?;
        if shape.len() != rank {
            return Err(format!("rank mismatch for `{name}`"));
        }
        let numel: usize = shape.iter().product();
        let raw = c
            .take(numel * dtype.size())
            .ok_or_else(|| format!("truncated values for `{name}`"))?;
        let values = raw.chunks_exact(dtype.size()).map(|b| T::read_le(dtype, b)).collect();
        if c.take(1) != Some(b"\n") {
            return Err(format!("values for `{name}` not terminated"));
        }
        let tensor = Tensor::new(shape, values).map_err(|e| e.to_string())?;
        params.insert(name, tensor).map_err(|e| e.to_string())?;
    }
    if c.pos != bytes.len() {
        return Err("trailing bytes after last parameter".into());
    }
    Ok(Checkpoint { meta, params })
}

pub fn save<T: Real>(path: &Path, params: &ParamStore<T>, meta: &str) -> Result<()> {
    let bytes = encode(params, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}
