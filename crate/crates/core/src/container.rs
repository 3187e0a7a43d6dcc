//! Binary tensor records.
//!
//! Layout of one record, all integers little-endian:
//!
//! ```text
//! b"CFT1"
//! u32 rank, then rank x u32 dims
//! u8 dtype: 0 f32, 1 f64, 2 complex f32 (re, im), 3 complex f64 (re, im)
//! u32 metadata length, then that many bytes of UTF-8 "key=value" lines
//! payload, row-major
//! ```
//!
//! An archive is records written back to back.

use std::io::{Read, Write};

use rustfft::num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    C64 = 2,
    C128 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::C64 => 8,
            DType::C128 => 16,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::C64,
            3 => DType::C128,
            _ => return Err(Error::Container(format!("unknown dtype code {c}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex32>),
    C128(Vec<Complex64>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::C64(_) => DType::C64,
            Payload::C128(_) => DType::C128,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::C64(v) => v.len(),
            Payload::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub dims: Vec<usize>,
    /// Ordered `key=value` pairs.
    pub metadata: Vec<(String, String)>,
    pub payload: Payload,
}

impl TensorRecord {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(Error::Container(format!(
                "dims {dims:?} hold {n} values, payload has {}",
                payload.len()
            )));
        }
        Ok(Self {
            dims,
            metadata: Vec::new(),
            payload,
        })
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses a metadata value.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .ok_or_else(|| Error::Container(format!("metadata key {key:?} missing")))?
            .parse()
            .map_err(|_| Error::Container(format!("metadata key {key:?} is malformed")))
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Container(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_record<W: Write>(w: &mut W, rec: &TensorRecord) -> Result<()> {
    let n: usize = rec.dims.iter().product();
    if n != rec.payload.len() {
        return Err(Error::Container("payload length differs from dims".into()));
    }
    let mut meta = String::new();
    for (k, v) in &rec.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Container(format!("metadata entry {k:?} cannot be encoded")));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    w.write_all(MAGIC)?;
    put_u32(w, rec.dims.len())?;
    for &d in &rec.dims {
        put_u32(w, d)?;
    }
    w.write_all(&[rec.payload.dtype() as u8])?;
    put_u32(w, meta.len())?;
    w.write_all(meta.as_bytes())?;
    let mut buf = Vec::with_capacity(n * rec.payload.dtype().size());
    match &rec.payload {
        Payload::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Payload::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Payload::C64(v) => v.iter().for_each(|z| {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }),
        Payload::C128(v) => v.iter().for_each(|z| {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }),
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Container("unexpected end of data".into()))?;
    Ok(buf)
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let b = read_exact(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

/// Reads one record; `Ok(None)` at a clean end of input.
pub fn read_record<R: Read>(r: &mut R) -> Result<Option<TensorRecord>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let k = r.read(&mut magic[got..])?;
        if k == 0 {
            break;
        }
        got += k;
    }
    if got == 0 {
        return Ok(None);
    }
    if got < 4 || &magic != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let rank = get_u32(r)?;
    let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    let dtype = DType::from_code(read_exact(r, 1)?[0])?;
    let meta_len = get_u32(r)?;
    let meta =
        String::from_utf8(read_exact(r, meta_len)?).map_err(|_| Error::Container("metadata is not UTF-8".into()))?;
    let metadata = meta
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Container(format!("metadata line {l:?} has no '='")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Container("dims overflow".into()))?;
    let bytes = read_exact(
        r,
        n.checked_mul(dtype.size())
            .ok_or_else(|| Error::Container("size overflow".into()))?,
    )?;
    let f32_at = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let payload = match dtype {
        DType::F32 => Payload::F32((0..n).map(|i| f32_at(4 * i)).collect()),
        DType::F64 => Payload::F64((0..n).map(|i| f64_at(8 * i)).collect()),
        DType::C64 => Payload::C64(
            (0..n)
                .map(|i| Complex32::new(f32_at(8 * i), f32_at(8 * i + 4)))
                .collect(),
        ),
        DType::C128 => Payload::C128(
            (0..n)
                .map(|i| Complex64::new(f64_at(16 * i), f64_at(16 * i + 8)))
                .collect(),
        ),
    };
    Ok(Some(TensorRecord {
        dims,
        metadata,
        payload,
    }))
}

pub fn write_archive<W: Write>(w: &mut W, records: &[TensorRecord]) -> Result<()> {
    records.iter().try_for_each(|r| write_record(w, r))
}

pub fn read_archive<R: Read>(r: &mut R) -> Result<Vec<TensorRecord>> {
    let mut out = Vec::new();
    while let Some(rec) = read_record(r)? {
        out.push(rec);
    }
    Ok(out)
}

pub fn to_bytes(records: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_archive(&mut buf, records)?;
    Ok(buf)
}
