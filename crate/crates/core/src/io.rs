//! On-disk formats.
//!
//! GTT tensor (little-endian):
//!
//! ```text
//! magic "GTT1" | dtype u8 (0 = f64) | rank u8 | rank x u64 dims | prod(dims) x f64
//! ```
//!
//! GTT container: magic "GTTC", section count u32, then per section a u16 name length,
//! the UTF-8 name and one embedded GTT tensor. Containers carry a JSON sidecar at
//! `<path>.json`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{GttaError, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"GTT1";
pub const CONTAINER_MAGIC: &[u8; 4] = b"GTTC";
pub const DTYPE_F64: u8 = 0;

/// Upper bound on elements accepted from a header, so corrupt dims fail before allocating.
const MAX_ELEMENTS: usize = 1 << 32;

pub fn write_tensor<W: Write>(t: &Tensor, w: &mut W) -> Result<()> {
    if t.shape().contains(&0) {
        return Err(GttaError::Format(format!("cannot serialize zero-sized dimension in {:?}", t.shape())));
    }
    if t.rank() > u8::MAX as usize {
        return Err(GttaError::Format("rank exceeds 255".into()));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[DTYPE_F64, t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_fmt<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => GttaError::Format(format!("truncated {what}")),
        _ => GttaError::Io(e),
    })
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact_fmt(r, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(GttaError::Format(format!("bad tensor magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    read_exact_fmt(r, &mut head, "header")?;
    if head[0] != DTYPE_F64 {
        return Err(GttaError::Format(format!("unsupported dtype code {}", head[0])));
    }
    let rank = head[1] as usize;
    if rank == 0 {
        return Err(GttaError::Format("rank 0 tensor".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for _ in 0..rank {
        let mut b = [0u8; 8];
        read_exact_fmt(r, &mut b, "dims")?;
        let d = u64::from_le_bytes(b);
        if d == 0 {
            return Err(GttaError::Format("zero-sized dimension".into()));
        }
        let d = usize::try_from(d).map_err(|_| GttaError::Format("dimension too large".into()))?;
        count = count
            .checked_mul(d)
            .filter(|&c| c <= MAX_ELEMENTS)
            .ok_or_else(|| GttaError::Format("declared size too large".into()))?;
        shape.push(d);
    }
    let mut bytes = vec![0u8; count * 8];
    read_exact_fmt(r, &mut bytes, "payload")?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(6 + 8 * (t.rank() + t.len()));
    write_tensor(t, &mut buf)?;
    Ok(buf)
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(GttaError::Format(format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let bytes = tensor_to_bytes(t)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads a GTT file, or a headerless CSV when the extension is `.csv`.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = fs::read_to_string(path)?;
        return parse_csv(&text, false);
    }
    let bytes = fs::read(path)?;
    tensor_from_bytes(&bytes)
}

/// Parses comma-separated decimal rows into an `[rows, cols]` tensor.
pub fn parse_csv(text: &str, skip_header: bool) -> Result<Tensor> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(usize::from(skip_header)) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| GttaError::Format(format!("line {}: cannot parse {f:?}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(GttaError::Data(format!("line {}: non-finite value {bad}", lineno + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GttaError::Format("CSV has no data rows".into()));
    }
    Tensor::from_rows(&rows).map_err(|e| match e {
        GttaError::Shape(m) => GttaError::Format(format!("ragged CSV: {m}")),
        other => other,
    })
}

/// Splits the last CSV column off as a target vector.
pub fn split_last_column(t: &Tensor) -> Result<(Tensor, Tensor)> {
    if t.rank() != 2 || t.shape()[1] < 2 {
        return Err(GttaError::Shape("need at least two columns to split off a target".into()));
    }
    let cols = t.shape()[1];
    let mut x = Vec::with_capacity(t.nrows() * (cols - 1));
    let mut y = Vec::with_capacity(t.nrows());
    for r in t.rows() {
        x.extend_from_slice(&r[..cols - 1]);
        y.push(r[cols - 1]);
    }
    Ok((Tensor::new(vec![t.nrows(), cols - 1], x)?, Tensor::vector(y)?))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_container<W: Write>(sections: &[(&str, &Tensor)], w: &mut W) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for (name, t) in sections {
        let name = name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| GttaError::Format("section name too long".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        write_tensor(t, w)?;
    }
    Ok(())
}

pub fn read_container<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    read_exact_fmt(r, &mut magic, "container magic")?;
    if &magic != CONTAINER_MAGIC {
        return Err(GttaError::Format(format!("bad container magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    read_exact_fmt(r, &mut b4, "section count")?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact_fmt(r, &mut b2, "section name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact_fmt(r, &mut name, "section name")?;
        let name = String::from_utf8(name).map_err(|_| GttaError::Format("section name not UTF-8".into()))?;
        out.push((name, read_tensor(r)?));
    }
    Ok(out)
}

/// Writes a container plus its JSON sidecar.
pub fn save_container<M: serde::Serialize>(path: &Path, sections: &[(&str, &Tensor)], meta: &M) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_container(sections, &mut w)?;
    w.flush()?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| GttaError::Format(e.to_string()))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_container<M: serde::de::DeserializeOwned>(path: &Path) -> Result<(Vec<(String, Tensor)>, M)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let sections = read_container(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(GttaError::Format("trailing bytes after container".into()));
    }
    let json = fs::read_to_string(sidecar_path(path))?;
    let meta = serde_json::from_str(&json).map_err(|e| GttaError::Format(format!("sidecar: {e}")))?;
    Ok((sections, meta))
}

/// Removes the named section from a loaded container.
pub fn take_section(sections: &mut Vec<(String, Tensor)>, name: &str) -> Result<Tensor> {
    let pos = sections
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| GttaError::Format(format!("missing section {name:?}")))?;
    Ok(sections.remove(pos).1)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a file, or of a container and its sidecar together.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(path)?);
    let side = sidecar_path(path);
    if side.exists() {
        h.update(fs::read(side)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Fingerprint of a tensor's shape and exact bit pattern.
pub fn tensor_fingerprint(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in t.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
