//! Versioned checkpoint container: named flat arrays with shapes plus a
//! fingerprint of the configuration that produced them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetParams, NAMES};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "coala-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub iteration: u64,
    pub arrays: Vec<Array>,
}

/// FNV-1a over the text, as 16 hex digits.
pub fn fingerprint(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

impl Checkpoint {
    pub fn new(fingerprint: String, iteration: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            fingerprint,
            iteration,
            arrays: Vec::new(),
        }
    }

    /// Adds every tensor of `params` under `prefix/`.
    pub fn push_params(&mut self, prefix: &str, params: &NetParams<f32>) {
        for (t, name) in params.tensors.iter().zip(NAMES) {
            self.arrays.push(Array {
                name: format!("{prefix}/{name}"),
                shape: [t.rows, t.cols],
                data: t.data.clone(),
            });
        }
    }

    /// Reassembles the parameters stored under `prefix/`.
    pub fn params(&self, prefix: &str) -> Result<NetParams<f32>> {
        let mut tensors = Vec::with_capacity(NAMES.len());
        for name in NAMES {
            let key = format!("{prefix}/{name}");
            let a = self
                .arrays
                .iter()
                .find(|a| a.name == key)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {key}")))?;
            if a.data.len() != a.shape[0] * a.shape[1] {
                return Err(Error::Checkpoint(format!(
                    "array {key} length does not match its shape"
                )));
            }
            tensors.push(Tensor::from_vec(a.shape[0], a.shape[1], a.data.clone()));
        }
        let p = NetParams {
            obs_dim: tensors[0].rows,
            n_actions: tensors[13].cols,
            tensors,
        };
        p.check_shapes()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(p)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint, rejecting other formats, versions, or (when given) a
/// different configuration fingerprint.
pub fn load_checkpoint(path: &Path, expect_fingerprint: Option<&str>) -> Result<Checkpoint> {
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if ckpt.format != FORMAT || ckpt.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported container {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    if let Some(fp) = expect_fingerprint {
        if fp != ckpt.fingerprint {
            return Err(Error::Checkpoint(format!(
                "fingerprint {} does not match configuration {fp}",
                ckpt.fingerprint
            )));
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_fingerprint_check() {
        let p = NetParams::<f32>::init(5, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let mut c = Checkpoint::new(fingerprint("a=1"), 7);
        c.push_params("meta0", &p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path, Some(&fingerprint("a=1"))).unwrap();
        assert_eq!(back.params("meta0").unwrap(), p);
        assert!(back.params("meta1").is_err());
        assert!(load_checkpoint(&path, Some(&fingerprint("a=2"))).is_err());
    }
}
