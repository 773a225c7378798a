//! Forced-decoding backends.
//!
//! A backend owns a tokenizer and a frozen sequence-to-sequence model and
//! answers exactly one question: given an encoder input and a fixed target
//! sequence, what log-probability does the decoder assign to each target
//! token? Nothing here samples or searches.
//!
//! Two analytic backends ship with the crate:
//!
//! * [`ToyBackend`], an order-insensitive copy model whose probabilities are
//!   a closed-form function of the source token set. It is the oracle the
//!   scoring pipeline is checked against.
//! * [`EmbeddingToyBackend`], a small attention/copy model over a frozen
//!   embedding table. It accepts injected continuous vectors and returns
//!   gradients with respect to them, which is what prompt-vector tuning needs.
//!
//! Pretrained models plug in through [`registry::BackendRegistry`].

mod embed;
pub mod registry;
mod tokenize;
mod toy;

pub use embed::{EmbeddingToyBackend, EmbeddingToyParams};
pub use tokenize::{ToyTokenizer, Vocabulary};
pub use toy::{toy_logprob, ToyBackend, ToyModelParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Subword tokenization of a text together with the subword→word alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    subword_ids: Vec<TokenId>,
    subword_strings: Vec<String>,
    word_map: Vec<usize>,
}

impl TokenizedText {
    pub fn new(
        subword_ids: Vec<TokenId>,
        subword_strings: Vec<String>,
        word_map: Vec<usize>,
    ) -> Result<Self> {
        if subword_ids.len() != subword_strings.len() || subword_ids.len() != word_map.len() {
            return Err(Error::shape(format!(
                "tokenized text lengths differ: ids={}, strings={}, word_map={}",
                subword_ids.len(),
                subword_strings.len(),
                word_map.len()
            )));
        }
        validate_word_map(&word_map)?;
        Ok(Self {
            subword_ids,
            subword_strings,
            word_map,
        })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.subword_ids
    }

    pub fn subword_strings(&self) -> &[String] {
        &self.subword_strings
    }

    pub fn word_map(&self) -> &[usize] {
        &self.word_map
    }

    pub fn len(&self) -> usize {
        self.subword_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subword_ids.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.word_map.last().map_or(0, |&w| w + 1)
    }

    /// Reassembles words by concatenating the subword surfaces of each group.
    pub fn words(&self) -> Vec<String> {
        let mut words = vec![String::new(); self.num_words()];
        for (s, &w) in self.subword_strings.iter().zip(&self.word_map) {
            words[w].push_str(s);
        }
        words
    }

    /// Keeps the first `n` subwords.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            subword_ids: self.subword_ids[..n].to_vec(),
            subword_strings: self.subword_strings[..n].to_vec(),
            word_map: self.word_map[..n].to_vec(),
        }
    }
}

/// Checks that a word map is non-decreasing, starts at 0 and has no gaps.
pub fn validate_word_map(word_map: &[usize]) -> Result<()> {
    let mut prev: Option<usize> = None;
    for (i, &w) in word_map.iter().enumerate() {
        let ok = match prev {
            None => w == 0,
            Some(p) => w == p || w == p + 1,
        };
        if !ok {
            return Err(Error::shape(format!(
                "word_map must start at 0 and grow by at most 1 (position {i} has {w})"
            )));
        }
        prev = Some(w);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub vocab_size: usize,
    pub max_encoder_length: usize,
    pub supports_embedding_injection: bool,
    pub supports_gradients: bool,
    /// False when the backend must not be called from several threads at once.
    pub thread_safe: bool,
}

/// Row-major block of continuous vectors, `rows × dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBlock {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingBlock {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("embedding dim must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// One contiguous piece of encoder input.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSegment {
    Tokens(Vec<TokenId>),
    Embeddings(EmbeddingBlock),
}

impl EncoderSegment {
    pub fn len(&self) -> usize {
        match self {
            EncoderSegment::Tokens(t) => t.len(),
            EncoderSegment::Embeddings(b) => b.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Encoder input as a concatenation of token and embedding segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncoderInput {
    segments: Vec<EncoderSegment>,
}

impl EncoderInput {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: Vec<TokenId>) -> Self {
        Self {
            segments: vec![EncoderSegment::Tokens(tokens)],
        }
    }

    /// Appends a segment; empty segments are dropped.
    pub fn push(&mut self, segment: EncoderSegment) {
        if !segment.is_empty() {
            self.segments.push(segment);
        }
    }

    pub fn with(mut self, segment: EncoderSegment) -> Self {
        self.push(segment);
        self
    }

    pub fn segments(&self) -> &[EncoderSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(EncoderSegment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_embeddings(&self) -> bool {
        self.segments
            .iter()
            .any(|s| matches!(s, EncoderSegment::Embeddings(_)))
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.segments.iter().flat_map(|s| match s {
            EncoderSegment::Tokens(t) => t.as_slice(),
            EncoderSegment::Embeddings(_) => &[],
        })
        .copied()
    }

    /// Merges adjacent token segments. Two inputs that normalize equal
    /// present the same sequence to the model.
    pub fn normalized(&self) -> Self {
        let mut out: Vec<EncoderSegment> = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            match (out.last_mut(), seg) {
                (Some(EncoderSegment::Tokens(prev)), EncoderSegment::Tokens(t)) => {
                    prev.extend_from_slice(t)
                }
                _ => out.push(seg.clone()),
            }
        }
        Self { segments: out }
    }
}

/// A frozen generation model used in forced-decoding mode.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> BackendCapabilities;

    /// Subword tokenization with word alignment.
    fn tokenize(&self, text: &str) -> Result<TokenizedText>;

    /// Reserved token placed between prompt and document.
    fn separator(&self) -> TokenId;

    /// `log P(target[i] | input, target[..i])` for every target position.
    fn logprobs(&self, input: &EncoderInput, target: &[TokenId]) -> Result<Vec<f64>>;

    /// Identifies the frozen weights; prompt-vector checkpoints are bound to it.
    fn fingerprint(&self) -> String;

    fn differentiable(&self) -> Option<&dyn DifferentiableBackend> {
        None
    }
}

/// A backend that exposes its token embeddings and gradients with respect
/// to injected embedding rows. Backbone parameters are never updated.
pub trait DifferentiableBackend: Backend {
    fn embedding_dim(&self) -> usize;

    fn token_embedding(&self, id: TokenId) -> Result<Vec<f64>>;

    /// Returns the log-probabilities together with the gradient of
    /// `Σ_t weights[t] · logprob[t]` with respect to every embedding segment
    /// of `input`, one block per segment in input order.
    fn logprobs_vjp(
        &self,
        input: &EncoderInput,
        target: &[TokenId],
        weights: &[f64],
    ) -> Result<(Vec<f64>, Vec<EmbeddingBlock>)>;

    /// Hex digest over every frozen parameter.
    fn backbone_checksum(&self) -> String;

    fn num_backbone_parameters(&self) -> usize;
}

/// Precondition checks shared by backend implementations.
pub(crate) fn check_request(
    caps: &BackendCapabilities,
    input: &EncoderInput,
    target: &[TokenId],
    embedding_dim: Option<usize>,
) -> Result<()> {
    if target.is_empty() {
        return Err(Error::shape("forced-decoding target is empty"));
    }
    let len = input.len();
    if len > caps.max_encoder_length {
        return Err(Error::LengthExceeded {
            len,
            max: caps.max_encoder_length,
        });
    }
    for seg in input.segments() {
        if let EncoderSegment::Embeddings(block) = seg {
            if !caps.supports_embedding_injection {
                return Err(Error::Capability(
                    "backend does not accept injected embeddings".into(),
                ));
            }
            if let Some(dim) = embedding_dim {
                if block.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: block.dim(),
                    });
                }
            }
        }
    }
    let vocab = caps.vocab_size;
    if let Some(bad) = input.tokens().chain(target.iter().copied()).find(|&t| t as usize >= vocab) {
        return Err(Error::shape(format!(
            "token id {bad} outside vocabulary of size {vocab}"
        )));
    }
    Ok(())
}

/// `tokenize_with_alignment` over any backend.
pub fn tokenize_with_alignment(backend: &dyn Backend, text: &str) -> Result<TokenizedText> {
    backend.tokenize(text)
}
