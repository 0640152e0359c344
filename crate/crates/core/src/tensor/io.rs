//! Tensor disk format: a JSON sidecar `<name>.json` holding
//! `{"shape":[…],"dtype":"f64","order":"row-major"}` next to a raw
//! little-endian buffer `<name>.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: Vec<usize>,
    dtype: String,
    order: String,
}

/// Paths of the sidecar and buffer for a tensor stem. An existing `.json`
/// or `.bin` extension on `stem` is ignored.
pub fn tensor_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut bin = base.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

pub fn save_tensor(t: &Tensor, stem: &Path) -> Result<()> {
    let (json_path, bin_path) = tensor_paths(stem);
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let sidecar = Sidecar {
        shape: t.shape().to_vec(),
        dtype: "f64".into(),
        order: "row-major".into(),
    };
    let json = serde_json::to_string(&sidecar).expect("sidecar serializes");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    Ok(())
}

pub fn load_tensor(stem: &Path) -> Result<Tensor> {
    let (json_path, bin_path) = tensor_paths(stem);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    if sidecar.dtype != "f64" {
        return Err(Error::DtypeMismatch {
            path: json_path,
            found: sidecar.dtype,
        });
    }
    if sidecar.order != "row-major" {
        return Err(Error::Malformed {
            path: json_path,
            reason: format!("unsupported order `{}`", sidecar.order),
        });
    }
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let expected: usize = sidecar.shape.iter().product();
    if sidecar.shape.is_empty() || sidecar.shape.contains(&0) || bytes.len() != expected * 8 {
        return Err(Error::FileShapeMismatch {
            path: json_path,
            reason: format!(
                "sidecar shape {:?} needs {} bytes, buffer has {}",
                sidecar.shape,
                expected * 8,
                bytes.len()
            ),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&sidecar.shape, data)
}

/// Loads and checks the shape against `expected`.
pub fn load_tensor_shaped(stem: &Path, expected: &[usize]) -> Result<Tensor> {
    let t = load_tensor(stem)?;
    if t.shape() != expected {
        return Err(Error::FileShapeMismatch {
            path: tensor_paths(stem).0,
            reason: format!("expected shape {expected:?}, found {:?}", t.shape()),
        });
    }
    Ok(t)
}
