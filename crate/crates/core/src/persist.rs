//! Binary weight files.
//!
//! Layout, all integers little-endian:
//! `"GMIM"`, `u32` version, `u16`-prefixed architecture tag, `u32`-prefixed JSON config,
//! `u32` tensor count, then per tensor a `u16`-prefixed name, `u8` rank, `u32` dims and
//! `f32` data; a CRC-32 of everything before it closes the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::policy::{GnnConfig, PolicyParams};

pub const MAGIC: &[u8; 4] = b"GMIM";
pub const VERSION: u32 = 1;

fn put_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("name too long: {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn to_bytes(params: &PolicyParams) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + params.num_weights() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str16(&mut out, params.architecture().name())?;
    let config = serde_json::to_vec(&params.config)?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.params.len() as u32).to_le_bytes());
    for (name, t) in params.params.iter() {
        put_str16(&mut out, name)?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Format(format!("tensor {name} has too many dimensions")))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("weight file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
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

    fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<PolicyParams> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a graphmimic weight file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("weight file version {version} is not supported (expected {VERSION})")));
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("weight file checksum mismatch".into()));
    }
    let tag = r.str16()?;
    let n = r.u32()? as usize;
    let config: GnnConfig = serde_json::from_slice(r.take(n)?)?;
    if config.architecture.name() != tag {
        return Err(Error::Format(format!("architecture tag {tag} disagrees with config {}", config.architecture.name())));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.str16()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product::<usize>();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last tensor", body.len() - r.pos)));
    }
    let p = PolicyParams { config, params };
    p.check_shapes()?;
    Ok(p)
}

pub fn save_weights(params: &PolicyParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<PolicyParams> {
    from_bytes(&std::fs::read(path)?)
}
