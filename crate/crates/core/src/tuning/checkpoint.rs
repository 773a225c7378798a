use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptVector;
use crate::backend::{Backend, EmbeddingBlock};
use crate::error::{Error, Result};

/// On-disk form of a prompt vector. Values are stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub length: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub init_seed: u64,
    pub backend_fingerprint: String,
}

impl Checkpoint {
    pub fn new(vector: &PromptVector, backend_fingerprint: impl Into<String>) -> Self {
        Self {
            length: vector.length(),
            dim: vector.dim(),
            values: vector.values().as_slice().iter().map(|&x| x as f32).collect(),
            init_seed: vector.init_seed(),
            backend_fingerprint: backend_fingerprint.into(),
        }
    }

    pub fn to_vector(&self) -> Result<PromptVector> {
        if self.values.len() != self.length * self.dim {
            return Err(Error::shape(format!(
                "checkpoint has {} values for {}×{}",
                self.values.len(),
                self.length,
                self.dim
            )));
        }
        let block = EmbeddingBlock::new(self.dim, self.values.iter().map(|&x| f64::from(x)).collect())?;
        PromptVector::new(block, self.init_seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

pub fn save_vector(path: &Path, vector: &PromptVector, backend: &dyn Backend) -> Result<()> {
    Checkpoint::new(vector, backend.fingerprint()).save(path)
}

/// Loads a vector for `backend`. A fingerprint mismatch is an error unless
/// `force` is set, in which case it is only logged.
pub fn load_vector(path: &Path, backend: &dyn Backend, force: bool) -> Result<PromptVector> {
    let ckpt = Checkpoint::load(path)?;
    let fingerprint = backend.fingerprint();
    if ckpt.backend_fingerprint != fingerprint {
        if !force {
            return Err(Error::FingerprintMismatch {
                checkpoint: ckpt.backend_fingerprint,
                backend: fingerprint,
            });
        }
        log::warn!(
            "loading prompt vector trained on {} into {fingerprint}",
            ckpt.backend_fingerprint
        );
    }
    ckpt.to_vector()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{EmbeddingToyBackend, EmbeddingToyParams};

    fn backend(seed: u64) -> EmbeddingToyBackend {
        EmbeddingToyBackend::new(EmbeddingToyParams {
            vocab_size: 20,
            dim: 4,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_and_fingerprint_guard() {
        let b = backend(1);
        let v = PromptVector::init_from_backend(&b, 3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        save_vector(&path, &v, &b).unwrap();

        let back = load_vector(&path, &b, false).unwrap();
        assert_eq!(back.length(), 3);
        assert_eq!(back.init_seed(), 9);
        for (a, c) in v.values().as_slice().iter().zip(back.values().as_slice()) {
            assert!((a - c).abs() < 1e-6);
        }

        let other = backend(2);
        assert!(matches!(
            load_vector(&path, &other, false),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert!(load_vector(&path, &other, true).is_ok());
    }

    #[test]
    fn inconsistent_shape_is_rejected() {
        let c = Checkpoint {
            length: 2,
            dim: 3,
            values: vec![0.0; 5],
            init_seed: 0,
            backend_fingerprint: String::new(),
        };
        assert!(matches!(c.to_vector(), Err(Error::Shape(_))));
    }
}
