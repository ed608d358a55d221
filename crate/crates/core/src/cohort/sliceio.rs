//! Raw slice/mask file format: 32-bit little-endian IEEE-754 floats,
//! row-major, with a JSON sidecar (`<file>.json`) declaring shape and dtype.

use super::CohortError;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: [usize; 2],
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

fn file_err(path: &Path, message: impl Into<String>) -> CohortError {
    CohortError::SliceFile {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Write a 2D float array as raw f32le plus its sidecar.
pub fn write_slice_file(path: &Path, data: &Array2<f32>) -> Result<(), CohortError> {
    let (h, w) = data.dim();
    let mut bytes = Vec::with_capacity(h * w * 4);
    for &v in data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    let sidecar = Sidecar {
        shape: [h, w],
        dtype: "f32le".to_string(),
    };
    let json = serde_json::to_string(&sidecar)
        .map_err(|e| file_err(path, format!("sidecar encode: {e}")))?;
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Read a raw f32le file, validating it against its sidecar.
pub fn read_slice_file(path: &Path) -> Result<Array2<f32>, CohortError> {
    let sc_path = sidecar_path(path);
    let sc_text = fs::read_to_string(&sc_path)
        .map_err(|e| file_err(path, format!("missing or unreadable sidecar {sc_path:?}: {e}")))?;
    let sidecar: Sidecar = serde_json::from_str(&sc_text)
        .map_err(|e| file_err(path, format!("invalid sidecar: {e}")))?;
    if sidecar.dtype != "f32le" {
        return Err(file_err(
            path,
            format!("unsupported dtype {:?}", sidecar.dtype),
        ));
    }
    let [h, w] = sidecar.shape;
    let expected = h * w * 4;
    let mut bytes = Vec::with_capacity(expected);
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(file_err(
            path,
            format!(
                "size mismatch: sidecar declares {h}x{w} ({expected} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(h * w);
    for chunk in bytes.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Array2::from_shape_vec((h, w), values).map_err(|e| file_err(path, e.to_string()))
}

/// Declared shape from a sidecar without reading the payload.
pub(crate) fn declared_shape(path: &Path) -> Result<(usize, usize), CohortError> {
    let sc_path = sidecar_path(path);
    let sc_text = fs::read_to_string(&sc_path)
        .map_err(|e| file_err(path, format!("missing or unreadable sidecar {sc_path:?}: {e}")))?;
    let sidecar: Sidecar = serde_json::from_str(&sc_text)
        .map_err(|e| file_err(path, format!("invalid sidecar: {e}")))?;
    Ok((sidecar.shape[0], sidecar.shape[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice_0.f32");
        let data = arr2(&[[0.0f32, 1.5, -3.25], [f32::MIN_POSITIVE, 1e30, 0.1]]);
        write_slice_file(&path, &data).unwrap();
        let back = read_slice_file(&path).unwrap();
        assert_eq!(back.dim(), (2, 3));
        for (a, b) in data.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice_0.f32");
        write_slice_file(&path, &arr2(&[[1.0f32, 2.0]])).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..4]).unwrap();
        assert!(read_slice_file(&path).is_err());
    }
}
