//! Reading and writing the NPY v1.0 format.
//!
//! Only little-endian `f4`/`f8` (tensors) and integer types (label maps) in
//! C order are handled. Writers emit the same header bytes numpy does, so
//! files diff cleanly against `np.save` output.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ARRAY_ALIGN: usize = 64;
const GROWTH_AXIS_MAX_DIGITS: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
    I4,
    I8,
    U1,
    U2,
    U4,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Dtype> {
        // '|u1' and '<u1' are both legal spellings for single bytes.
        Ok(match descr {
            "<f4" => Dtype::F4,
            "<f8" => Dtype::F8,
            "<i4" => Dtype::I4,
            "<i8" => Dtype::I8,
            "|u1" | "<u1" => Dtype::U1,
            "<u2" => Dtype::U2,
            "<u4" => Dtype::U4,
            other => return Err(Error::UnsupportedDtype(other.to_string())),
        })
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::I4 => "<i4",
            Dtype::I8 => "<i8",
            Dtype::U1 => "|u1",
            Dtype::U2 => "<u2",
            Dtype::U4 => "<u4",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::U1 => 1,
            Dtype::U2 => 2,
            Dtype::F4 | Dtype::I4 | Dtype::U4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut prefix = [0u8; 10];
    r.read_exact(&mut prefix)
        .map_err(|_| Error::MalformedHeader("file shorter than the npy preamble".into()))?;
    if &prefix[..6] != MAGIC {
        return Err(Error::MalformedHeader("bad magic string".into()));
    }
    if prefix[6..8] != [1, 0] {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {}.{}",
            prefix[6], prefix[7]
        )));
    }
    let len = u16::from_le_bytes([prefix[8], prefix[9]]) as usize;
    let mut dict = vec![0u8; len];
    r.read_exact(&mut dict)
        .map_err(|_| Error::MalformedHeader("truncated header dictionary".into()))?;
    let dict = std::str::from_utf8(&dict).map_err(|_| Error::MalformedHeader("header is not ascii".into()))?;
    parse_dict(dict)
}

fn parse_dict(dict: &str) -> Result<Header> {
    let body = dict.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| Error::MalformedHeader(format!("not a dict literal: {body:?}")))?;

    let descr = dict_value(body, "descr")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"').to_string();
    let fortran = match dict_value(body, "fortran_order")?.trim() {
        "False" => false,
        "True" => true,
        other => {
            return Err(Error::MalformedHeader(format!(
                "fortran_order must be a bool, got {other:?}"
            )))
        }
    };
    let shape_src = dict_value(body, "shape")?;
    let inner = shape_src
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::MalformedHeader(format!("shape is not a tuple: {shape_src:?}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    if fortran {
        return Err(Error::FortranOrder);
    }
    let dtype = Dtype::parse(&descr)?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::MalformedHeader(format!(
            "only non-empty arrays are supported, got shape {shape:?}"
        )));
    }
    Ok(Header { dtype, shape })
}

/// Raw text of the value stored under `key` in a python dict literal body.
fn dict_value<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    let missing = || Error::MalformedHeader(format!("missing key {key:?}"));
    let start = body
        .find(&format!("'{key}'"))
        .or_else(|| body.find(&format!("\"{key}\"")))
        .ok_or_else(missing)?;
    let rest = &body[start + key.len() + 2..];
    let rest = rest.trim_start().strip_prefix(':').ok_or_else(missing)?;
    let rest = rest.trim_start();
    // Values are a quoted string, a bare word, or a parenthesized tuple.
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
        rest[1..].find(q).map(|i| i + 2)
    } else {
        Some(rest.find(',').unwrap_or(rest.len()))
    };
    let end = end.ok_or_else(|| Error::MalformedHeader(format!("unterminated value for {key:?}")))?;
    Ok(&rest[..end])
}

fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_repr = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_repr
    );
    // numpy leaves room for the leading axis to grow in place.
    let growth = GROWTH_AXIS_MAX_DIGITS.saturating_sub(shape[0].to_string().len());
    dict.extend(std::iter::repeat_n(' ', growth));
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = ARRAY_ALIGN - unpadded % ARRAY_ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad % ARRAY_ALIGN));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

fn read_payload<R: Read>(r: &mut R, h: &Header) -> Result<Vec<u8>> {
    let n: usize = h.shape.iter().product();
    let mut buf = vec![0u8; n * h.dtype.size()];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::MalformedHeader(format!("payload shorter than shape {:?}", h.shape)),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

/// Reads an `f4` or `f8` array. Doubles are narrowed to `f32`.
pub fn read_npy_from<R: Read>(r: &mut R) -> Result<Tensor> {
    let h = read_header(r)?;
    let bytes = read_payload(r, &h)?;
    let data = match h.dtype {
        Dtype::F4 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Dtype::F8 => {
            log::warn!("narrowing float64 npy payload to float32");
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
                .collect()
        }
        other => return Err(Error::UnsupportedDtype(other.descr().to_string())),
    };
    Tensor::new(h.shape, data)
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_npy_from(&mut r)
}

pub fn write_npy_to<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&header_bytes(Dtype::F4, t.shape()))?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_npy(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |f| {
        let mut w = BufWriter::new(f);
        write_npy_to(&mut w, t)?;
        w.flush()?;
        Ok(())
    })
}

/// Reads an integer array (or a float array holding whole numbers) as
/// non-negative labels.
pub fn read_labels_npy_from<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<u32>)> {
    let h = read_header(r)?;
    let bytes = read_payload(r, &h)?;
    let values: Vec<f64> = match h.dtype {
        Dtype::U1 => bytes.iter().map(|&b| b as f64).collect(),
        Dtype::U2 => bytes
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as f64)
            .collect(),
        Dtype::U4 => bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I4 => bytes
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I8 => bytes
            .chunks_exact(8)
            .map(|b| i64::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F4 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F8 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    let labels = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(Error::InvalidConfig(format!(
                    "label at index {i} is not a non-negative integer: {v}"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((h.shape, labels))
}

pub fn read_labels_npy(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<u32>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_labels_npy_from(&mut r)
}

/// Writes labels as an `<i4` array.
pub fn write_labels_npy_to<W: Write>(w: &mut W, shape: &[usize], labels: &[u32]) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != labels.len() || shape.is_empty() {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    w.write_all(&header_bytes(Dtype::I4, shape))?;
    for &l in labels {
        let v = i32::try_from(l).map_err(|_| Error::InvalidConfig(format!("label {l} does not fit in int32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_labels_npy(shape: &[usize], labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |f| {
        let mut w = BufWriter::new(f);
        write_labels_npy_to(&mut w, shape, labels)?;
        w.flush()?;
        Ok(())
    })
}
