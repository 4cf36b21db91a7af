//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TAGF" | version: u32 | section_count: u32
//! repeated: tag: [u8; 4] | payload_len: u64 | payload
//! ```
//!
//! Encoder payloads are `vocab_size: u32 | width: u32 | pooling: u32` followed
//! by the parameter arrays as `f64` in declaration order (token embeddings,
//! query, key, value, output projection, output bias).

use std::fs;
use std::path::Path;

use crate::encoder::{EncoderDims, EncoderParams, Pooling};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TAGF";
pub const VERSION: u32 = 1;

pub const SECTION_VOCAB: [u8; 4] = *b"VOCB";
pub const SECTION_CONTEXT: [u8; 4] = *b"ENCC";
pub const SECTION_TAG: [u8; 4] = *b"ENCT";
pub const SECTION_ENCODER: [u8; 4] = *b"ENCD";
pub const SECTION_SCALE: [u8; 4] = *b"SCAL";
pub const SECTION_META: [u8; 4] = *b"META";
pub const SECTION_CLASSIFIER: [u8; 4] = *b"CLSH";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tag: [u8; 4], payload: Vec<u8>) {
        self.sections.push((tag, payload));
    }

    pub fn get(&self, tag: [u8; 4]) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, p)| p.as_slice())
    }

    pub fn require(&self, tag: [u8; 4]) -> Result<&[u8]> {
        self.get(tag).ok_or_else(|| {
            Error::Format(format!(
                "missing section {:?}",
                String::from_utf8_lossy(&tag)
            ))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected TAGF".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            sections.push((tag, r.take(len)?.to_vec()));
        }
        r.finish()?;
        Ok(Container { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<Vec<u8>> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

pub fn encode_params(params: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.param_count() * 8);
    out.extend_from_slice(&(params.dims.vocab_size as u32).to_le_bytes());
    out.extend_from_slice(&(params.dims.width as u32).to_le_bytes());
    out.extend_from_slice(&params.pooling.code().to_le_bytes());
    for tensor in params.tensors() {
        put_f64s(&mut out, tensor);
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes);
    let dims = EncoderDims {
        vocab_size: r.u32()? as usize,
        width: r.u32()? as usize,
    };
    dims.validate()?;
    let pooling = Pooling::from_code(r.u32()?)?;
    let d = dims.width;
    let params = EncoderParams {
        dims,
        pooling,
        token_embeddings: r.f64s(dims.vocab_size * d)?,
        query: r.f64s(d * d)?,
        key: r.f64s(d * d)?,
        value: r.f64s(d * d)?,
        out_proj: r.f64s(d * d)?,
        out_bias: r.f64s(d)?,
    };
    r.finish()?;
    Ok(params)
}

/// Standalone encoder checkpoint.
pub fn save_encoder(params: &EncoderParams, path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut c = Container::new();
    c.push(SECTION_ENCODER, encode_params(params));
    c.save(path)
}

pub fn load_encoder(path: impl AsRef<Path>) -> Result<EncoderParams> {
    decode_params(Container::load(path)?.require(SECTION_ENCODER)?)
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Bounds-checked little-endian reader.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("invalid utf-8 string".into()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
