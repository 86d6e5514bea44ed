//! Versioned JSON checkpoints and magic-tagged binary matrix dumps.
//!
//! Floats are written with enough digits to round-trip bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, KernelError, Parameter};

pub const CHECKPOINT_FORMAT: &str = "vqprofile-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const DUMP_MAGIC: [u8; 8] = *b"VQPDUMP\0";
pub const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<Parameter>,
    pub optimizer: Option<Adam>,
    /// Free-form model description (architecture, codebook statistics, ...).
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new<'a>(
        params: impl IntoIterator<Item = &'a Parameter>,
        optimizer: Option<Adam>,
        metadata: serde_json::Value,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: params.into_iter().cloned().collect(),
            optimizer,
            metadata,
        }
    }

    pub fn to_json(&self) -> Result<String, KernelError> {
        serde_json::to_string(self).map_err(|e| KernelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, KernelError> {
        let mut ckpt: Self = serde_json::from_str(text).map_err(|e| KernelError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(KernelError::Checkpoint(format!("unexpected format tag {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(KernelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        for p in &mut ckpt.params {
            p.grad = vec![0.0; p.value.len()];
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), KernelError> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, KernelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Copies stored values and moments into `targets`, matched by name.
    ///
    /// Every target must be present with an identical shape.
    pub fn restore_into<'a>(&self, targets: impl IntoIterator<Item = &'a mut Parameter>) -> Result<(), KernelError> {
        for target in targets {
            let stored = self
                .params
                .iter()
                .find(|p| p.name == target.name)
                .ok_or_else(|| KernelError::Checkpoint(format!("missing parameter {}", target.name)))?;
            if stored.shape != target.shape {
                return Err(KernelError::ShapeMismatch {
                    layer: target.name.clone(),
                    expected: format!("{:?}", target.shape),
                    got: format!("{:?}", stored.shape),
                });
            }
            target.value.clone_from(&stored.value);
            target.first_moment.clone_from(&stored.first_moment);
            target.second_moment.clone_from(&stored.second_moment);
            target.zero_grad();
        }
        Ok(())
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), KernelError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Row-major `rows x cols` matrix of `f64` in little-endian, after an
/// 8-byte magic, a `u32` version and two `u64` extents.
pub fn write_dump(path: &Path, rows: usize, cols: usize, data: &[f64]) -> Result<(), KernelError> {
    if data.len() != rows * cols {
        return Err(KernelError::ShapeMismatch {
            layer: "dump".into(),
            expected: format!("{} values", rows * cols),
            got: format!("{} values", data.len()),
        });
    }
    let mut bytes = Vec::with_capacity(28 + 8 * data.len());
    bytes.extend_from_slice(&DUMP_MAGIC);
    bytes.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(rows as u64).to_le_bytes());
    bytes.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_dump(path: &Path) -> Result<(usize, usize, Vec<f64>), KernelError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 28 || bytes[..8] != DUMP_MAGIC {
        return Err(KernelError::Checkpoint("not a matrix dump (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != DUMP_VERSION {
        return Err(KernelError::Checkpoint(format!("unsupported dump version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let body = &bytes[28..];
    if body.len() != 8 * rows * cols {
        return Err(KernelError::Checkpoint("truncated matrix dump".into()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::AdamConfig;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let awkward = vec![0.1, 1.0 / 3.0, f64::MIN_POSITIVE, -2.2250738585072014e-308, 1e300, 5e-324];
        let mut p = Parameter::new("w", vec![2, 3], awkward.clone());
        p.first_moment[0] = 0.7;
        p.second_moment[5] = 1e-17;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step = 17;
        let ckpt = Checkpoint::new([&p], Some(adam), serde_json::json!({"variant": "implicit"}));
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        for (a, b) in back.params[0].value.iter().zip(&awkward) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.params[0].second_moment[5].to_bits(), 1e-17f64.to_bits());
        assert_eq!(back.optimizer.unwrap().step, 17);
    }

    #[test]
    fn restore_rejects_shape_change() {
        let p = Parameter::new("w", vec![2], vec![1.0, 2.0]);
        let ckpt = Checkpoint::new([&p], None, serde_json::Value::Null);
        let mut q = Parameter::new("w", vec![1, 2], vec![0.0, 0.0]);
        assert!(ckpt.restore_into([&mut q]).is_err());
        let mut r = Parameter::new("w", vec![2], vec![0.0, 0.0]);
        ckpt.restore_into([&mut r]).unwrap();
        assert_eq!(r.value, vec![1.0, 2.0]);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let ckpt = Checkpoint::new([], None, serde_json::Value::Null);
        let text = ckpt.to_json().unwrap().replace("\"version\":1", "\"version\":99");
        assert!(Checkpoint::from_json(&text).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        write_dump(&path, 2, 2, &[1.0, -0.5, f64::NEG_INFINITY, 3.25]).unwrap();
        let (r, c, d) = read_dump(&path).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(d[2], f64::NEG_INFINITY);
        fs::write(&path, b"garbage-garbage-garbage-garbage").unwrap();
        assert!(read_dump(&path).is_err());
    }
}
