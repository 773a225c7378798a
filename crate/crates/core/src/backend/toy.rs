use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::tokenize::{ToyTokenizer, Vocabulary};
use super::{check_request, Backend, BackendCapabilities, EncoderInput, TokenId, TokenizedText};
use crate::error::{Error, Result};

/// Parameters of the copy model: `copy_mass` is the probability mass spread
/// uniformly over the source set, the rest is uniform over the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModelParams {
    pub copy_mass: f64,
    pub vocab_size: usize,
}

impl ToyModelParams {
    pub fn new(copy_mass: f64, vocab_size: usize) -> Result<Self> {
        let p = Self {
            copy_mass,
            vocab_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.copy_mass > 0.0 && self.copy_mass < 1.0) {
            return Err(Error::config(format!(
                "copy_mass must lie in (0, 1), got {}",
                self.copy_mass
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::config(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// `log(copy_mass · [token ∈ source] / |source| + (1 − copy_mass) / vocab_size)`.
pub fn toy_logprob(params: &ToyModelParams, source: &BTreeSet<TokenId>, token: TokenId) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::DegenerateSource);
    }
    let copy = if source.contains(&token) {
        params.copy_mass / source.len() as f64
    } else {
        0.0
    };
    Ok((copy + (1.0 - params.copy_mass) / params.vocab_size as f64).ln())
}

/// Order-insensitive copy model. The decoder prefix is ignored and the
/// separator token never joins the source set.
#[derive(Debug)]
pub struct ToyBackend {
    params: ToyModelParams,
    tokenizer: ToyTokenizer,
    max_encoder_length: usize,
}

impl ToyBackend {
    pub const DEFAULT_MAX_ENCODER_LENGTH: usize = 1024;

    pub fn new(params: ToyModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            tokenizer: ToyTokenizer::new(Vocabulary::open(params.vocab_size)),
            max_encoder_length: Self::DEFAULT_MAX_ENCODER_LENGTH,
        })
    }

    pub fn with_max_encoder_length(mut self, max: usize) -> Result<Self> {
        if max == 0 {
            return Err(Error::config("max_encoder_length must be at least 1"));
        }
        self.max_encoder_length = max;
        Ok(self)
    }

    pub fn params(&self) -> &ToyModelParams {
        &self.params
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.tokenizer.vocabulary()
    }

    fn source_set(&self, input: &EncoderInput) -> BTreeSet<TokenId> {
        let sep = self.separator();
        input.tokens().filter(|&t| t != sep).collect()
    }
}

impl Backend for ToyBackend {
    fn name(&self) -> &str {
        "toy"
    }

    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            vocab_size: self.params.vocab_size,
            max_encoder_length: self.max_encoder_length,
            supports_embedding_injection: false,
            supports_gradients: false,
            thread_safe: true,
        }
    }

    fn tokenize(&self, text: &str) -> Result<TokenizedText> {
        self.tokenizer.tokenize(text)
    }

    fn separator(&self) -> TokenId {
        self.tokenizer.separator()
    }

    fn logprobs(&self, input: &EncoderInput, target: &[TokenId]) -> Result<Vec<f64>> {
        check_request(&self.capabilities(), input, target, None)?;
        let source = self.source_set(input);
        target
            .iter()
            .map(|&t| toy_logprob(&self.params, &source, t))
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!(
            "toy:copy_mass={:e}:vocab_size={}",
            self.params.copy_mass, self.params.vocab_size
        )
    }
}
