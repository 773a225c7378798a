//! Prompt vectors: continuous rows spliced around the prompt text and
//! trained against word labels while the backend stays frozen.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{load_vector, save_vector, Checkpoint};
pub use optim::AdamW;
pub use trainer::{
    example_gradient, sweep_lengths, train_prompt_vector, EpochRecord, TrainingOutcome, TuningConfig,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{
    Backend, DifferentiableBackend, EmbeddingBlock, EncoderInput, EncoderSegment, TokenId,
};
use crate::error::{Error, Result};

/// A `length × dim` block of trainable rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptVector {
    values: EmbeddingBlock,
    init_seed: u64,
}

impl PromptVector {
    pub const MAX_LENGTH: usize = 512;

    pub fn new(values: EmbeddingBlock, init_seed: u64) -> Result<Self> {
        let length = values.rows();
        if !(1..=Self::MAX_LENGTH).contains(&length) {
            return Err(Error::shape(format!(
                "prompt vector length must lie in 1..={}, got {length}",
                Self::MAX_LENGTH
            )));
        }
        if values.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::shape("prompt vector has non-finite values"));
        }
        Ok(Self { values, init_seed })
    }

    /// Copies `length` rows of the backend's token-embedding table at
    /// uniformly drawn ids, skipping the separator and the unknown token.
    pub fn init_from_backend(backend: &dyn DifferentiableBackend, length: usize, seed: u64) -> Result<Self> {
        let vocab = backend.capabilities().vocab_size;
        if vocab <= 2 {
            return Err(Error::config("vocabulary too small to initialise a prompt vector"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = backend.embedding_dim();
        let mut data = Vec::with_capacity(length * dim);
        for _ in 0..length {
            let id = rng.random_range(2..vocab) as TokenId;
            data.extend(backend.token_embedding(id)?);
        }
        Self::new(EmbeddingBlock::new(dim, data)?, seed)
    }

    pub fn length(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    pub fn values(&self) -> &EmbeddingBlock {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut EmbeddingBlock {
        &mut self.values
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Trainable parameters: `length × dim`.
    pub fn num_parameters(&self) -> usize {
        self.length() * self.dim()
    }
}

/// Which inference pass an encoder input is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    /// Document only.
    Document,
    /// Prompt text followed by the document.
    Prompted,
}

/// Where the vector copies sit relative to each other in the document pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorPlacement {
    /// `[V][V][doc]`.
    #[default]
    Adjacent,
    /// `[V][sep][V][doc]`, mirroring the separator that ends the prompt.
    Separated,
}

/// Builds the encoder inputs of both passes, with or without a vector.
#[derive(Debug, Clone)]
pub struct InputComposer {
    injection: bool,
    embedding_dim: Option<usize>,
    separator: TokenId,
    placement: VectorPlacement,
}

impl InputComposer {
    pub fn for_backend(backend: &dyn Backend, placement: VectorPlacement) -> Self {
        Self {
            injection: backend.capabilities().supports_embedding_injection,
            embedding_dim: backend.differentiable().map(|d| d.embedding_dim()),
            separator: backend.separator(),
            placement,
        }
    }

    pub fn check_vector(&self, vector: Option<&PromptVector>) -> Result<()> {
        let Some(v) = vector else { return Ok(()) };
        if !self.injection {
            return Err(Error::Capability(
                "backend does not accept injected embeddings".into(),
            ));
        }
        match self.embedding_dim {
            Some(dim) if dim != v.dim() => Err(Error::Dimension {
                expected: dim,
                got: v.dim(),
            }),
            _ => Ok(()),
        }
    }

    /// Encoder positions the vector adds to either pass.
    pub fn vector_overhead(&self, vector: Option<&PromptVector>) -> usize {
        match vector {
            None => 0,
            Some(v) => 2 * v.length() + usize::from(self.placement == VectorPlacement::Separated),
        }
    }

    /// Pass 1 is `[V][V][doc]`, pass 2 is `[V][prompt][V][doc]`. Without a
    /// vector they reduce to `[doc]` and `[prompt][doc]`.
    pub fn compose(
        &self,
        pass: Pass,
        vector: Option<&PromptVector>,
        prompt: &EncoderSegment,
        document: &EncoderSegment,
    ) -> Result<EncoderInput> {
        self.check_vector(vector)?;
        let sep = || EncoderSegment::Tokens(vec![self.separator]);
        let middle = match (pass, self.placement) {
            (Pass::Prompted, VectorPlacement::Separated) if prompt.is_empty() => sep(),
            (Pass::Prompted, _) => prompt.clone(),
            (Pass::Document, VectorPlacement::Separated) if vector.is_some() => sep(),
            (Pass::Document, _) => EncoderSegment::Tokens(Vec::new()),
        };
        let mut input = EncoderInput::new();
        match vector {
            Some(v) => {
                let block = EncoderSegment::Embeddings(v.values().clone());
                input.push(block.clone());
                input.push(middle);
                input.push(block);
            }
            None if pass == Pass::Prompted => input.push(prompt.clone()),
            None => {}
        }
        input.push(document.clone());
        Ok(input)
    }
}

/// `Σ P_diff · sign` with sign +1 for consistent and −1 for inconsistent
/// words.
pub fn tuning_loss(word_pdiff: &[f64], inconsistent: &[bool]) -> Result<f64> {
    if word_pdiff.len() != inconsistent.len() {
        return Err(Error::shape(format!(
            "{} word scores for {} labels",
            word_pdiff.len(),
            inconsistent.len()
        )));
    }
    Ok(word_pdiff
        .iter()
        .zip(inconsistent)
        .map(|(p, &bad)| if bad { -p } else { *p })
        .sum())
}
