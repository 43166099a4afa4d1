//! Tensor and model files, sidecar metadata and atomic writes.
//!
//! Text tensor: line 1 is the order `N`, line 2 the `N` dimensions, then
//! whitespace-separated values, first index fastest.
//! Binary tensor: magic `DTENSOR1`, `u64` order, `u64` dims, `f64` payload,
//! all little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CpdError, Result};
use crate::tensor::{DenseTensor, KruskalModel, Matrix};

pub const BINARY_MAGIC: &[u8; 8] = b"DTENSOR1";

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn tensor_to_text(t: &DenseTensor) -> String {
    let mut s = String::with_capacity(t.len() * 20 + 32);
    s.push_str(&t.order().to_string());
    s.push('\n');
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    s.push_str(&dims.join(" "));
    s.push('\n');
    for v in t.data() {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

pub fn tensor_from_text(text: &str) -> Result<DenseTensor> {
    let mut tokens = text.split_whitespace();
    let mut next_usize = |what: &str| -> Result<usize> {
        let tok = tokens.next().ok_or_else(|| CpdError::Parse(format!("missing {what}")))?;
        tok.parse().map_err(|_| CpdError::Parse(format!("bad {what} `{tok}`")))
    };
    let order = next_usize("order")?;
    if order == 0 {
        return Err(CpdError::Parse("order must be >= 1".into()));
    }
    let shape: Vec<usize> = (0..order).map(|_| next_usize("dimension")).collect::<Result<_>>()?;
    let data: Vec<f64> = tokens
        .map(|tok| tok.parse().map_err(|_| CpdError::Parse(format!("bad value `{tok}`"))))
        .collect::<Result<_>>()?;
    DenseTensor::new(shape, data).map_err(|e| CpdError::Parse(e.to_string()))
}

pub fn tensor_to_binary(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (t.order() + t.len()));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(t.order() as u64).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_binary(bytes: &[u8]) -> Result<DenseTensor> {
    let mut words = bytes
        .strip_prefix(BINARY_MAGIC.as_slice())
        .ok_or_else(|| CpdError::Parse("missing binary tensor magic".into()))?
        .chunks(8);
    let mut next = |what: &str| -> Result<[u8; 8]> {
        let w = words.next().filter(|w| w.len() == 8);
        w.map(|w| w.try_into().expect("8 bytes"))
            .ok_or_else(|| CpdError::Parse(format!("truncated {what}")))
    };
    let order = u64::from_le_bytes(next("order")?) as usize;
    if order == 0 {
        return Err(CpdError::Parse("order must be >= 1".into()));
    }
    let shape: Vec<usize> = (0..order)
        .map(|_| next("dimension").map(|w| u64::from_le_bytes(w) as usize))
        .collect::<Result<_>>()?;
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let len = len.ok_or_else(|| CpdError::Parse("dimensions overflow".into()))?;
    let data: Vec<f64> = (0..len)
        .map(|_| next("payload").map(f64::from_le_bytes))
        .collect::<Result<_>>()?;
    if next("trailer").is_ok() {
        return Err(CpdError::Parse("trailing bytes after payload".into()));
    }
    DenseTensor::new(shape, data).map_err(|e| CpdError::Parse(e.to_string()))
}

/// Reads either format, detected by the magic.
pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        tensor_from_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| CpdError::Parse("tensor file is not UTF-8".into()))?;
        tensor_from_text(&text)
    }
}

/// Binary when the extension is `bin`, text otherwise.
pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        write_atomic(path, &tensor_to_binary(t))
    } else {
        write_atomic(path, tensor_to_text(t).as_bytes())
    }
}

/// Model text: `order rank`, the dimensions, then each factor column-major.
pub fn model_to_text(m: &KruskalModel) -> String {
    let mut s = format!("{} {}\n", m.order(), m.rank());
    let dims: Vec<String> = m.shape().iter().map(usize::to_string).collect();
    s.push_str(&dims.join(" "));
    s.push('\n');
    for f in m.factors() {
        let row: Vec<String> = f.data().iter().map(f64::to_string).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn model_from_text(text: &str) -> Result<KruskalModel> {
    let mut tokens = text.split_whitespace();
    let mut next = || tokens.next().ok_or_else(|| CpdError::Parse("truncated model file".into()));
    let order: usize = next()?.parse().map_err(|_| CpdError::Parse("bad order".into()))?;
    let rank: usize = next()?.parse().map_err(|_| CpdError::Parse("bad rank".into()))?;
    let shape: Vec<usize> = (0..order)
        .map(|_| next()?.parse().map_err(|_| CpdError::Parse("bad dimension".into())))
        .collect::<Result<_>>()?;
    let mut factors = Vec::with_capacity(order);
    for &d in &shape {
        let data: Vec<f64> = (0..d * rank)
            .map(|_| next()?.parse().map_err(|_| CpdError::Parse("bad factor value".into())))
            .collect::<Result<_>>()?;
        factors.push(Matrix::new(d, rank, data)?);
    }
    KruskalModel::new(factors)
}

/// Plain `key=value` lines, keys sorted.
pub fn kv_to_text(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn kv_from_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CpdError::Parse(format!("line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Sidecar path `<path>.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}
