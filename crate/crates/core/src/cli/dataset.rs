//! `CSID` dataset files: 20-byte header then `(re, im)` f32 pairs.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::channel::CMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSID";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub count: usize,
    pub nc: usize,
    pub nt: usize,
}

impl DatasetHeader {
    pub fn file_len(&self) -> usize {
        HEADER_LEN + self.count * self.nc * self.nt * 8
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

/// Serializes channels of equal extents; an empty set needs explicit extents.
pub fn encode(samples: &[CMatrix], nc: usize, nt: usize) -> Result<Vec<u8>> {
    let header = DatasetHeader { count: samples.len(), nc, nt };
    let mut out = Vec::with_capacity(header.file_len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, u32_of(samples.len(), "count")?, u32_of(nc, "nc")?, u32_of(nt, "nt")?] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for h in samples {
        if (h.rows(), h.cols()) != (nc, nt) {
            return Err(Error::Format(format!("sample {}×{} in a {nc}×{nt} dataset", h.rows(), h.cols())));
        }
        for z in h.data() {
            out.extend_from_slice(&(z.re as f32).to_le_bytes());
            out.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_header(bytes: &[u8]) -> Result<DatasetHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("dataset of {} bytes has no header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad dataset magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != VERSION as usize {
        return Err(Error::Format(format!("unsupported dataset version {}", word(0))));
    }
    let header = DatasetHeader { count: word(1), nc: word(2), nt: word(3) };
    let expected = header
        .count
        .checked_mul(header.nc)
        .and_then(|x| x.checked_mul(header.nt))
        .and_then(|x| x.checked_mul(8))
        .and_then(|x| x.checked_add(HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "{} bytes contradict header ({} samples of {}×{})",
            bytes.len(),
            header.count,
            header.nc,
            header.nt
        )));
    }
    if header.count > 0 && (header.nc == 0 || header.nt == 0) {
        return Err(Error::Format("zero extents".into()));
    }
    Ok(header)
}

pub fn decode(bytes: &[u8]) -> Result<(DatasetHeader, Vec<CMatrix>)> {
    let header = decode_header(bytes)?;
    let per = header.nc * header.nt;
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
    let mut samples = Vec::with_capacity(header.count);
    for chunk in bytes[HEADER_LEN..].chunks_exact(per * 8).take(header.count) {
        let data: Vec<C64> = chunk.chunks_exact(8).map(|p| C64::new(f(&p[..4]), f(&p[4..]))).collect();
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Format("non-finite channel entry".into()));
        }
        samples.push(CMatrix::from_vec(header.nc, header.nt, data)?);
    }
    Ok((header, samples))
}

pub fn write(path: &Path, samples: &[CMatrix], nc: usize, nt: usize) -> Result<()> {
    let bytes = encode(samples, nc, nt)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(DatasetHeader, Vec<CMatrix>)> {
    decode(&std::fs::read(path)?)
}
