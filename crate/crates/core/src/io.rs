//! The `HSIB1` cube container.
//!
//! Layout: the six bytes `HSIB1\n`, one JSON header line
//! `{"rows":R,"cols":C,"bands":B,"dtype":"f32"|"u8","order":"bsq"}\n`, then
//! `R·C·B` little-endian values, band-sequential (band 0's row-major plane,
//! then band 1, …). Real cubes are stored as `f32`, masks as `u8`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{Dims, HsiCube, MaskCube};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 6] = b"HSIB1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub dtype: Dtype,
    pub order: String,
}

impl Header {
    fn new(dims: Dims, dtype: Dtype) -> Self {
        Self { rows: dims.rows, cols: dims.cols, bands: dims.bands, dtype, order: "bsq".into() }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.rows, self.cols, self.bands)
    }
}

/// Either payload kind, as found in a file.
#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Cube(HsiCube<f32>),
    Mask(MaskCube),
}

fn encode(header: &Header, payload: &[u8]) -> Vec<u8> {
    let json = serde_json::to_string(header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(payload);
    out
}

/// Serializes a real cube, rounding each value to the nearest `f32`.
pub fn encode_cube<T: Real>(cube: &HsiCube<T>) -> Vec<u8> {
    let mut payload = Vec::with_capacity(cube.len() * 4);
    for &v in cube.as_slice() {
        let f = v.to_f32().expect("finite value");
        payload.extend_from_slice(&f.to_le_bytes());
    }
    encode(&Header::new(cube.dims(), Dtype::F32), &payload)
}

pub fn encode_mask(mask: &MaskCube) -> Vec<u8> {
    encode(&Header::new(mask.dims(), Dtype::U8), mask.as_slice())
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or(Error::BadMagic)?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadHeader("header line is not terminated".into()))?;
    let text = std::str::from_utf8(&rest[..newline]).map_err(|_| Error::BadHeader("header is not UTF-8".into()))?;
    let header: Header = serde_json::from_str(text).map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.order != "bsq" {
        return Err(Error::BadHeader(format!("unsupported order {:?}", header.order)));
    }
    let payload = &rest[newline + 1..];
    let dims = header.dims();
    let expected = dims
        .len()
        .checked_mul(header.dtype.size())
        .ok_or_else(|| Error::BadHeader("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::PayloadLengthMismatch { expected, found: payload.len() });
    }
    match header.dtype {
        Dtype::F32 => {
            let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            Ok(Container::Cube(HsiCube::new(dims, values)?))
        }
        Dtype::U8 => Ok(Container::Mask(MaskCube::new(dims, payload.to_vec())?)),
    }
}

pub fn write_cube<T: Real>(path: impl AsRef<Path>, cube: &HsiCube<T>) -> Result<()> {
    fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskCube) -> Result<()> {
    fs::write(path, encode_mask(mask))?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    decode(&fs::read(path)?)
}

/// Reads an `f32` cube and widens it to `T`.
pub fn read_cube<T: Real>(path: impl AsRef<Path>) -> Result<HsiCube<T>> {
    match read_container(path)? {
        Container::Cube(c) => Ok(c.cast()),
        Container::Mask(_) => Err(Error::BadHeader("expected dtype f32, found u8".into())),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskCube> {
    match read_container(path)? {
        Container::Mask(m) => Ok(m),
        Container::Cube(_) => Err(Error::BadHeader("expected dtype u8, found f32".into())),
    }
}
