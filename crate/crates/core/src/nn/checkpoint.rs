//! Parameter checkpoint encoding.
//!
//! Layout: `"XTRA"`, version `u32`, segment count `u32`, then per segment the
//! name (`u32` length + UTF-8 bytes), rank `u32` and each dimension `u32`;
//! finally every parameter as a little-endian `f64` in segment order.

use std::fs;
use std::path::Path;

use super::params::{Layout, ParamVector};
use crate::codec::{put_f64s, put_string, put_u32, Reader};
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"XTRA";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_params(params: &ParamVector) -> Vec<u8> {
    let layout = params.layout();
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, layout.segments().len() as u32);
    for seg in layout.segments() {
        put_string(&mut out, seg.name());
        put_u32(&mut out, seg.shape().len() as u32);
        for &d in seg.shape() {
            put_u32(&mut out, d as u32);
        }
    }
    put_f64s(&mut out, params.values());
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let count = r.u32()? as usize;
    let mut builder = Layout::builder();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        builder.push(name, &shape);
    }
    let layout = builder.build();
    let values = r.f64s(layout.len())?;
    if r.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(ParamVector::from_values(layout, values).expect("length checked by reader"))
}

pub fn save_params(params: &ParamVector, path: &Path) -> Result<()> {
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes).map_err(|e| Error::format(path, e))
}
