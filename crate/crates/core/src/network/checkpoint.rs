//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        b"SLCP"
//! version      u32          (currently 1)
//! arch_hash    u64          hash of the architecture descriptor
//! seed         u64
//! prov_len     u32          provenance string length
//! provenance   utf-8 bytes
//! n_tensors    u32
//! tensor*      name_len u16, name, ndim u8, dims u32*, payload f32-le
//! digest       32 bytes     SHA-256 of everything above
//! ```
//!
//! Loading verifies magic, version, architecture hash and digest before
//! constructing any state, so a truncated or corrupt file never yields a
//! partial model. Writing is byte-stable for identical state.

use super::{architecture_hash, init_model, ModelState, NetError};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"SLCP";
const VERSION: u32 = 1;

fn ck_err(path: &Path, message: impl Into<String>) -> NetError {
    NetError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn save_checkpoint(model: &ModelState<f32>, path: &Path) -> Result<(), NetError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&architecture_hash().to_le_bytes());
    buf.extend_from_slice(&model.seed.to_le_bytes());
    let prov = model.provenance.as_bytes();
    buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    buf.extend_from_slice(prov);

    let mut tensors: Vec<(&'static str, Vec<usize>, Vec<f32>)> = Vec::new();
    for (i, c) in model.convs.iter().enumerate() {
        let names = super::param_names();
        tensors.push((
            names[2 * i],
            c.weight.shape().to_vec(),
            c.weight.iter().copied().collect(),
        ));
        tensors.push((
            names[2 * i + 1],
            c.bias.shape().to_vec(),
            c.bias.iter().copied().collect(),
        ));
    }
    for (name_w, name_b, layer) in [
        ("shared.weight", "shared.bias", &model.shared),
        ("ssl.weight", "ssl.bias", &model.ssl),
        ("cls.weight", "cls.bias", &model.cls),
    ] {
        tensors.push((
            name_w,
            layer.weight.shape().to_vec(),
            layer.weight.iter().copied().collect(),
        ));
        tensors.push((
            name_b,
            layer.bias.shape().to_vec(),
            layer.bias.iter().copied().collect(),
        ));
    }

    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, dims, payload) in &tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for &d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Some(out)
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState<f32>, NetError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 32 {
        return Err(ck_err(path, "file shorter than its digest"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expected = Sha256::digest(body);
    if digest != expected.as_slice() {
        return Err(ck_err(path, "checksum mismatch (truncated or corrupt)"));
    }

    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let magic = r.take(4).ok_or_else(|| ck_err(path, "missing magic"))?;
    if magic != MAGIC {
        return Err(ck_err(path, "bad magic bytes"));
    }
    let version = r.u32().ok_or_else(|| ck_err(path, "missing version"))?;
    if version != VERSION {
        return Err(ck_err(path, format!("unsupported version {version}")));
    }
    let found_hash = r.u64().ok_or_else(|| ck_err(path, "missing arch hash"))?;
    let expected_hash = architecture_hash();
    if found_hash != expected_hash {
        return Err(NetError::ArchHashMismatch {
            expected: expected_hash,
            found: found_hash,
        });
    }
    let seed = r.u64().ok_or_else(|| ck_err(path, "missing seed"))?;
    let prov_len = r.u32().ok_or_else(|| ck_err(path, "missing provenance"))? as usize;
    let prov_bytes = r
        .take(prov_len)
        .ok_or_else(|| ck_err(path, "provenance out of bounds"))?;
    let provenance = String::from_utf8(prov_bytes.to_vec())
        .map_err(|_| ck_err(path, "provenance is not utf-8"))?;

    let n_tensors = r.u32().ok_or_else(|| ck_err(path, "missing tensor count"))? as usize;
    let mut model = init_model::<f32>(seed);
    model.provenance = provenance;
    let mut loaded = std::collections::HashMap::<String, Vec<f32>>::new();
    for _ in 0..n_tensors {
        let name_len = r.u16().ok_or_else(|| ck_err(path, "tensor header"))? as usize;
        let name = String::from_utf8(
            r.take(name_len)
                .ok_or_else(|| ck_err(path, "tensor name"))?
                .to_vec(),
        )
        .map_err(|_| ck_err(path, "tensor name utf-8"))?;
        let ndim = r.take(1).ok_or_else(|| ck_err(path, "tensor ndim"))?[0] as usize;
        let mut len = 1usize;
        for _ in 0..ndim {
            len *= r.u32().ok_or_else(|| ck_err(path, "tensor dims"))? as usize;
        }
        let payload = r
            .take(len * 4)
            .ok_or_else(|| ck_err(path, format!("tensor {name} payload out of bounds")))?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        loaded.insert(name, values);
    }

    let mut missing = Vec::new();
    model.visit_params_mut(|name, slice| match loaded.get(name) {
        Some(values) if values.len() == slice.len() => slice.copy_from_slice(values),
        Some(values) => missing.push(format!(
            "{name}: expected {} values, found {}",
            slice.len(),
            values.len()
        )),
        None => missing.push(format!("{name}: absent")),
    });
    if !missing.is_empty() {
        return Err(ck_err(path, format!("tensor mismatch: {}", missing.join("; "))));
    }
    Ok(model)
}
