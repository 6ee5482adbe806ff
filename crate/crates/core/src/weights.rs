//! Binary weights container.
//!
//! Layout: one line of JSON (`{format_version, entries: [...]}`) terminated
//! by `\n`, followed by the raw little-endian `f32` payloads back to back.
//! `byte_offset` is relative to the end of the header line. Round-trips are
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 4],
    dtype: String,
    byte_offset: u64,
    byte_length: u64,
}

/// Writes named tensors in declaration order.
pub fn save_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        let bytes = t.to_le_bytes();
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().as_array(),
            dtype: "f32".into(),
            byte_offset: payload.len() as u64,
            byte_length: bytes.len() as u64,
        });
        payload.extend_from_slice(&bytes);
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        entries,
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads every tensor in file order.
pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        Error::WeightsFormat {
            path: path.display().to_string(),
            msg: "missing header terminator".into(),
        }
    })?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::WeightsFormat {
            path: path.display().to_string(),
            msg: format!("bad JSON header: {e}"),
        })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::WeightsFormat {
            path: path.display().to_string(),
            msg: format!("unsupported format_version {}", header.format_version),
        });
    }
    let payload = &bytes[nl + 1..];
    let mut out = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        if e.dtype != "f32" {
            return Err(Error::WeightsFormat {
                path: path.display().to_string(),
                msg: format!("entry `{}`: unsupported dtype {}", e.name, e.dtype),
            });
        }
        let [n, c, h, w] = e.shape;
        let shape = Shape::new(n, c, h, w);
        if e.byte_length as usize != shape.len() * 4 {
            return Err(Error::WeightsFormat {
                path: path.display().to_string(),
                msg: format!(
                    "entry `{}`: byte_length {} does not match shape {}",
                    e.name, e.byte_length, shape
                ),
            });
        }
        let lo = e.byte_offset as usize;
        let hi = lo + e.byte_length as usize;
        if hi > payload.len() {
            return Err(Error::WeightsFormat {
                path: path.display().to_string(),
                msg: format!("entry `{}`: payload out of bounds", e.name),
            });
        }
        out.push((e.name, Tensor::from_le_bytes(shape, &payload[lo..hi])?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let a = Tensor::from_vec(
            Shape::new(2, 1, 1, 3),
            vec![0.1, -2.5, 3.75, f32::EPSILON, 1e-30, -0.0],
        )
        .unwrap();
        let b = Tensor::full(Shape::new(1, 4, 1, 1), 0.25);
        save_tensors(
            &path,
            &[("enc.w".to_string(), &a), ("enc.b".to_string(), &b)],
        )
        .unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "enc.w");
        for (x, y) in a.data().iter().zip(loaded[0].1.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.shape(), b.shape());

        // Second save of the loaded tensors produces identical bytes.
        let path2 = dir.path().join("w2.bin");
        let named: Vec<(String, &Tensor)> = loaded
            .iter()
            .map(|(n, t)| (n.clone(), t))
            .collect();
        save_tensors(&path2, &named).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupt_header_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"{not json\nxxxx").unwrap();
        let err = load_tensors(&path).unwrap_err();
        assert!(err.to_string().contains("bad JSON header"), "{err}");
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        let a = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        save_tensors(&path, &[("a".to_string(), &a)]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&path, bytes).unwrap();
        let err = load_tensors(&path).unwrap_err();
        assert!(err.to_string().contains("out of bounds"), "{err}");
    }
}
