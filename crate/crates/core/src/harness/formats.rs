//! On-disk formats.
//!
//! * IDX: big-endian, magic `00 00 <type> <ndim>`, `ndim` u32 dimensions,
//!   then the payload. Only unsigned-byte payloads (type `0x08`) are read.
//! * Flat matrix: little-endian `u64 rows`, `u64 cols`, then `rows·cols` f64
//!   in row-major order.
//! * Named arrays (checkpoints): `"UFSL"`, `u32` version, `u32` count, then
//!   per array `u32` name length, UTF-8 name, `u32` rank, `rank × u64` dims,
//!   and the f64 payload, all little-endian.
//! * Point CSV: one sample per line, comma separated; a non-numeric first
//!   line is treated as a header.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IDX_UBYTE: u8 = 0x08;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UFSL";

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

/// Raw contents of an unsigned-byte IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(parse_err(
            bytes.len(),
            "file too short for an IDX magic number",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        let at = if bytes[0] != 0 { 0 } else { 1 };
        return Err(parse_err(
            at,
            format!(
                "IDX magic must start with two zero bytes, found {:#04x}",
                bytes[at]
            ),
        ));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(parse_err(
            2,
            format!("unsupported IDX element type {:#04x}", bytes[2]),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(parse_err(3, "IDX file declares zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(
            bytes.len(),
            format!("truncated IDX header: {ndim} dimensions need {header} bytes"),
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let have = bytes.len() - header;
    if have != count {
        return Err(parse_err(
            header + have.min(count),
            format!("IDX payload has {have} bytes, dimensions {dims:?} need {count}"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_idx(path: &Path, arr: &IdxArray) -> Result<()> {
    fs::write(path, encode_idx(arr)).map_err(|e| Error::io(path, e))
}

/// Loads `n×h×w` (or `n×c×h×w`) byte images as `n×c×h×w` in [−1, 1].
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let arr = read_idx(path)?;
    let shape = match arr.dims[..] {
        [n, h, w] => vec![n, 1, h, w],
        [n, c, h, w] => vec![n, c, h, w],
        _ => {
            return Err(Error::dim(format!(
                "{}: expected 3 or 4 IDX dimensions for images, got {:?}",
                path.display(),
                arr.dims
            )))
        }
    };
    Tensor::new(
        shape,
        arr.data.iter().map(|&b| b as f64 / 127.5 - 1.0).collect(),
    )
}

/// Inverse of [`load_idx_images`] up to rounding; values are clamped.
pub fn images_to_idx(images: &Tensor) -> Result<IdxArray> {
    if images.rank() != 4 {
        return Err(Error::dim(format!(
            "expected n×c×h×w images, got {:?}",
            images.shape()
        )));
    }
    let s = images.shape();
    let dims = if s[1] == 1 {
        vec![s[0], s[2], s[3]]
    } else {
        s.to_vec()
    };
    Ok(IdxArray {
        dims,
        data: images.data().iter().map(|&v| to_byte(v)).collect(),
    })
}

/// Maps [−1, 1] to 0..=255.
pub fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn encode_matrix(m: &Tensor) -> Result<Vec<u8>> {
    if m.rank() != 2 {
        return Err(Error::dim(format!(
            "flat matrix needs rank 2, got {:?}",
            m.shape()
        )));
    }
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.shape()[1] as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 {
        return Err(parse_err(bytes.len(), "flat matrix header needs 16 bytes"));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let want = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| parse_err(0, "matrix dimensions overflow"))?;
    if bytes.len() - 16 != want {
        return Err(parse_err(
            16,
            format!(
                "{rows}×{cols} matrix needs {want} payload bytes, found {}",
                bytes.len() - 16
            ),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(vec![rows, cols], data).map_err(|e| parse_err(16, e.to_string()))
}

pub fn write_matrix(path: &Path, m: &Tensor) -> Result<()> {
    fs::write(path, encode_matrix(m)?).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    decode_matrix(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn format_points_csv(points: &Tensor, header: Option<&[&str]>) -> Result<String> {
    if points.rank() != 2 {
        return Err(Error::dim(format!(
            "point CSV needs rank 2, got {:?}",
            points.shape()
        )));
    }
    let mut s = String::new();
    if let Some(h) = header {
        s.push_str(&h.join(","));
        s.push('\n');
    }
    for i in 0..points.rows() {
        let row: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_points_csv(text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = 0;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let t = line.trim();
        let start = offset;
        offset += line.len();
        if t.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            t.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => {
                if let Some(first) = rows.first() {
                    if first.len() != r.len() {
                        return Err(parse_err(
                            start,
                            format!("row has {} columns, expected {}", r.len(), first.len()),
                        ));
                    }
                }
                rows.push(r);
            }
            Err(_) if lineno == 0 => {}
            Err(_) => return Err(parse_err(start, format!("non-numeric row {t:?}"))),
        }
    }
    if rows.is_empty() {
        return Err(parse_err(text.len(), "no numeric rows"));
    }
    Tensor::from_rows(&rows)
}

/// An f64 array with a name and shape, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self::new(name, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn values(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self::new(name, vec![data.len()], data)
    }
}

pub fn encode_arrays(version: u32, arrays: &[NamedArray]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(parse_err(
                self.pos,
                format!("truncated while reading {what}"),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a named-array container, requiring `expected_version`.
pub fn decode_arrays(bytes: &[u8], expected_version: u32) -> Result<Vec<NamedArray>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(parse_err(0, "missing UFSL magic"));
    }
    let version = r.u32("version")?;
    if version != expected_version {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, this build reads version {expected_version}"
        )));
    }
    let count = r.u32("array count")? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| parse_err(at, "array name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| parse_err(r.pos, format!("array {name} is too large")))?;
        let raw = r.take(
            n.checked_mul(8).unwrap_or(usize::MAX),
            &format!("payload of {name}"),
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedArray { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(parse_err(r.pos, "trailing bytes after last array"));
    }
    Ok(out)
}

/// Writes via a temporary file and rename so a crash never leaves a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Tiles `n×1×h×w` images in [−1, 1] into a square-ish grid of bytes.
/// Returns `(width, height, pixels)`.
pub fn tile_images(images: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    if images.rank() != 4 || images.shape()[1] != 1 {
        return Err(Error::dim(format!(
            "tiling needs n×1×h×w images, got {:?}",
            images.shape()
        )));
    }
    let (n, h, w) = (images.shape()[0], images.shape()[2], images.shape()[3]);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (tw, th) = (cols * w, rows * h);
    let mut px = vec![0u8; tw * th];
    for k in 0..n {
        let (gy, gx) = (k / cols, k % cols);
        let img = images.row(k);
        for y in 0..h {
            for x in 0..w {
                px[(gy * h + y) * tw + gx * w + x] = to_byte(img[y * w + x]);
            }
        }
    }
    Ok((tw, th, px))
}
