//! Parameter checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, `u32` header
//! length, a JSON header (`shape`, `dtype`, `n_params`, free-form `meta`),
//! then `n_params` little-endian floats of the stated width in
//! [`NetShape`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, NetShape, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TFXPARAM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: NetShape,
    dtype: String,
    n_params: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    meta: serde_json::Value,
    path: &Path,
) -> Result<()> {
    let header = Header {
        shape: *params.shape(),
        dtype: T::NAME.to_string(),
        n_params: params.len(),
        meta,
    };
    let header = serde_json::to_vec(&header).map_err(std::io::Error::from)?;
    // write next to the target and rename, so a crash never leaves half a file
    let tmp = path.with_extension("partial");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for &x in params.as_slice() {
            if T::NAME == "f32" {
                out.write_all(&(x.as_f64() as f32).to_le_bytes())?;
            } else {
                out.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint, converting to `T` if it was stored at another width.
/// Returns the parameters and the header's `meta` value.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, serde_json::Value)> {
    let corrupt = |msg: String| Error::DataCorruption(format!("{}: {msg}", path.display()));
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| corrupt("truncated".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("not a parameter checkpoint".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    input.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut header)?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.n_params != header.shape.n_params() {
        return Err(corrupt("parameter count does not match shape".into()));
    }
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(corrupt(format!("unknown dtype {other}"))),
    };
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != header.n_params * width {
        return Err(corrupt(format!(
            "expected {} bytes of parameters, found {}",
            header.n_params * width,
            raw.len()
        )));
    }
    let data: Vec<T> = raw
        .chunks_exact(width)
        .map(|b| {
            T::of(if width == 4 {
                f32::from_le_bytes(b.try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(b.try_into().unwrap())
            })
        })
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(corrupt("non-finite parameter".into()));
    }
    Ok((ModelParams::from_vec(header.shape, data)?, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_both_widths() {
        let dir = tempfile::tempdir().unwrap();
        let p: ModelParams<f32> =
            ModelParams::init(NetShape::paper(104), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let path = dir.path().join("a.bin");
        save_checkpoint(&p, serde_json::json!({"episodes": 5}), &path).unwrap();
        let (q, meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta["episodes"], 5);
        let (w, _) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(w.cast::<f32>(), p);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"hello world").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::DataCorruption(_))));

        let p: ModelParams<f64> =
            ModelParams::init(NetShape::paper(10), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        save_checkpoint(&p, serde_json::Value::Null, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::DataCorruption(_))));
    }
}
