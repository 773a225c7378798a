//! Two-pass probability-differential scoring.
//!
//! Pass 1 force-decodes the summary from the document alone. Pass 2 does the
//! same with a prompt placed in front of the document. The per-token score is
//! `P_diff = log P2 − log P1`; higher means the token is more likely
//! unsupported by the document.

mod batch;
mod threshold;

pub use batch::{ScoreInput, ScoreOutput, ScoreRecord, ScoreErrorRecord};
pub use threshold::{label_corpus, predict_inconsistent, CorpusLabels, ThresholdPolicy};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EncoderInput, EncoderSegment, TokenId, TokenizedText};
use crate::error::{Error, Result};
use crate::prompts::{build_prompt, FactProviders, PromptSpec, PromptVariant};
use crate::tuning::{InputComposer, Pass, PromptVector, VectorPlacement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubwordReduction {
    #[default]
    Mean,
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryAggregation {
    #[default]
    Mean,
    Sum,
}

/// What to do when prompt + document exceed the backend's encoder length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Keep the head of the document, drop the tail. Both passes see the
    /// same truncated document.
    #[default]
    Head,
    /// Pass the input through and let the backend reject it.
    None,
}

/// Inconsistency categories scored at summary level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    EntE,
    CorefE,
    OutE,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::EntE, Category::CorefE, Category::OutE];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::EntE => "EntE",
            Category::CorefE => "CorefE",
            Category::OutE => "OutE",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown category `{s}` (EntE, CorefE, OutE)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub prompt_variant: PromptVariant,
    pub subword_reduction: SubwordReduction,
    pub category_weight_multiplier: f64,
    pub summary_aggregation: SummaryAggregation,
    pub truncation: Truncation,
    /// Prompt-vector checkpoint to splice into both passes.
    pub prompt_vector: Option<PathBuf>,
    pub vector_placement: VectorPlacement,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            prompt_variant: PromptVariant::Base,
            subword_reduction: SubwordReduction::Mean,
            category_weight_multiplier: 2.0,
            summary_aggregation: SummaryAggregation::Mean,
            truncation: Truncation::Head,
            prompt_vector: None,
            vector_placement: VectorPlacement::Adjacent,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.category_weight_multiplier;
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::config(format!(
                "scoring.category_weight_multiplier must be positive, got {m}"
            )));
        }
        Ok(())
    }
}

/// Per-token probability differentials for one summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreSeq {
    subword_pdiff: Vec<f64>,
    word_pdiff: Vec<f64>,
    word_map: Vec<usize>,
    weights: Vec<f64>,
    truncated: bool,
}

impl TokenScoreSeq {
    pub fn from_subwords(
        subword_pdiff: Vec<f64>,
        word_map: Vec<usize>,
        reduction: SubwordReduction,
    ) -> Result<Self> {
        let word_pdiff = reduce_subwords(&subword_pdiff, &word_map, reduction)?;
        if let Some(bad) = word_pdiff.iter().find(|x| !x.is_finite()) {
            return Err(Error::shape(format!("non-finite word score {bad}")));
        }
        let weights = vec![1.0; word_pdiff.len()];
        Ok(Self {
            subword_pdiff,
            word_pdiff,
            word_map,
            weights,
            truncated: false,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.word_pdiff.len() {
            return Err(Error::shape(format!(
                "{} weights for {} words",
                weights.len(),
                self.word_pdiff.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::shape("weights must be positive and finite"));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn subword_pdiff(&self) -> &[f64] {
        &self.subword_pdiff
    }

    pub fn word_pdiff(&self) -> &[f64] {
        &self.word_pdiff
    }

    pub fn word_map(&self) -> &[usize] {
        &self.word_map
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_words(&self) -> usize {
        self.word_pdiff.len()
    }

    /// Whether the document was cut to fit the encoder.
    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Groups subword scores by word.
pub fn reduce_subwords(
    subword_pdiff: &[f64],
    word_map: &[usize],
    reduction: SubwordReduction,
) -> Result<Vec<f64>> {
    if subword_pdiff.len() != word_map.len() {
        return Err(Error::shape(format!(
            "{} subword scores for a word map of {}",
            subword_pdiff.len(),
            word_map.len()
        )));
    }
    crate::backend::validate_word_map(word_map)?;
    let n_words = word_map.last().map_or(0, |w| w + 1);
    let mut acc = vec![
        match reduction {
            SubwordReduction::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        n_words
    ];
    let mut counts = vec![0usize; n_words];
    for (&s, &w) in subword_pdiff.iter().zip(word_map) {
        counts[w] += 1;
        match reduction {
            SubwordReduction::Max => acc[w] = acc[w].max(s),
            _ => acc[w] += s,
        }
    }
    if reduction == SubwordReduction::Mean {
        for (a, c) in acc.iter_mut().zip(&counts) {
            *a /= *c as f64;
        }
    }
    Ok(acc)
}

/// Summary-level factuality: the negated (weighted) aggregate of word
/// scores, so that higher means more consistent.
pub fn summary_score(scores: &TokenScoreSeq) -> Result<f64> {
    summary_score_with(scores, SummaryAggregation::Mean)
}

pub fn summary_score_with(scores: &TokenScoreSeq, aggregation: SummaryAggregation) -> Result<f64> {
    if scores.word_pdiff.is_empty() {
        return Err(Error::shape("no word scores"));
    }
    let weighted: f64 = scores
        .word_pdiff
        .iter()
        .zip(&scores.weights)
        .map(|(p, w)| p * w)
        .sum();
    Ok(match aggregation {
        SummaryAggregation::Mean => -(weighted / scores.weights.iter().sum::<f64>()),
        SummaryAggregation::Sum => -weighted,
    })
}

/// Tokenized pieces of one document/summary pair, ready to compose.
#[derive(Debug, Clone)]
pub struct PairEncoding {
    pub summary: TokenizedText,
    /// Prompt tokens followed by the separator; empty when there is no prompt.
    pub prompt: Vec<TokenId>,
    pub document: Vec<TokenId>,
    pub truncated: bool,
    pub prompt_fell_back: bool,
}

/// Runs both inference passes on one backend.
pub struct Scorer<'a> {
    backend: &'a dyn Backend,
    config: ScoringConfig,
    facts: FactProviders,
    vector: Option<PromptVector>,
}

impl<'a> Scorer<'a> {
    pub fn new(backend: &'a dyn Backend, config: ScoringConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            backend,
            config,
            facts: FactProviders::default(),
            vector: None,
        })
    }

    pub fn with_facts(mut self, facts: FactProviders) -> Self {
        self.facts = facts;
        self
    }

    /// Splices `vector` into both passes. The backend must accept injected
    /// embeddings of the vector's width.
    pub fn with_prompt_vector(mut self, vector: PromptVector) -> Result<Self> {
        self.composer().check_vector(Some(&vector))?;
        self.vector = Some(vector);
        Ok(self)
    }

    pub fn set_prompt_vector(&mut self, vector: Option<PromptVector>) -> Result<()> {
        self.composer().check_vector(vector.as_ref())?;
        self.vector = vector;
        Ok(())
    }

    pub fn prompt_vector(&self) -> Option<&PromptVector> {
        self.vector.as_ref()
    }

    pub fn backend(&self) -> &'a dyn Backend {
        self.backend
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    pub fn facts(&self) -> &FactProviders {
        &self.facts
    }

    fn composer(&self) -> InputComposer {
        InputComposer::for_backend(self.backend, self.config.vector_placement)
    }

    /// Prompt spec for the configured variant, filled from the fact providers.
    pub fn prompt_spec(&self, summary: &str, variant: PromptVariant) -> Result<PromptSpec> {
        Ok(match variant {
            PromptVariant::None | PromptVariant::Base => PromptSpec::of(variant),
            PromptVariant::Entity => PromptSpec::entity(self.facts.entities.entities(summary)?),
            PromptVariant::Coref => PromptSpec::coref(self.facts.coref.resolve(summary)?.1),
        })
    }

    /// Tokenizes the pair and fits the document into the encoder budget.
    pub fn encode_pair(&self, document: &str, summary: &str, spec: &PromptSpec) -> Result<PairEncoding> {
        let summary_tokens = self.backend.tokenize(summary)?;
        let n_words = summary.split_whitespace().count();
        if summary_tokens.num_words() != n_words {
            return Err(Error::Alignment {
                line: None,
                message: format!(
                    "tokenizer produced {} word groups for {n_words} whitespace words",
                    summary_tokens.num_words()
                ),
            });
        }
        let mut doc = self.backend.tokenize(document)?.ids().to_vec();
        let built = build_prompt(summary, spec)?;
        let mut prompt = Vec::new();
        if !built.text.is_empty() {
            prompt.extend_from_slice(self.backend.tokenize(&built.text)?.ids());
            prompt.push(self.backend.separator());
        }

        let max = self.backend.capabilities().max_encoder_length;
        let overhead = prompt.len() + self.composer().vector_overhead(self.vector.as_ref());
        let mut truncated = false;
        if overhead + doc.len() > max && self.config.truncation == Truncation::Head {
            let budget = max.saturating_sub(overhead);
            if budget == 0 {
                return Err(Error::LengthExceeded {
                    len: overhead + 1,
                    max,
                });
            }
            doc.truncate(budget);
            truncated = true;
            log::warn!("document truncated to {budget} tokens to fit the encoder");
        }
        Ok(PairEncoding {
            summary: summary_tokens,
            prompt,
            document: doc,
            truncated,
            prompt_fell_back: built.fell_back_to_base,
        })
    }

    /// Encoder inputs of pass 1 and pass 2 for an encoded pair.
    pub fn pass_inputs(
        &self,
        enc: &PairEncoding,
        vector: Option<&PromptVector>,
    ) -> Result<(EncoderInput, EncoderInput)> {
        let composer = self.composer();
        let prompt = EncoderSegment::Tokens(enc.prompt.clone());
        let doc = EncoderSegment::Tokens(enc.document.clone());
        let first = composer.compose(Pass::Document, vector, &prompt, &doc)?;
        let second = composer.compose(Pass::Prompted, vector, &prompt, &doc)?;
        Ok((first, second))
    }

    /// Scores the pair with the configured prompt variant.
    pub fn score_pair(&self, document: &str, summary: &str) -> Result<TokenScoreSeq> {
        let spec = self.prompt_spec(summary, self.config.prompt_variant)?;
        self.score_with_spec(document, summary, &spec)
    }

    pub fn score_with_spec(&self, document: &str, summary: &str, spec: &PromptSpec) -> Result<TokenScoreSeq> {
        let enc = self.encode_pair(document, summary, spec)?;
        self.score_encoded(&enc, self.vector.as_ref())
    }

    pub fn score_encoded(&self, enc: &PairEncoding, vector: Option<&PromptVector>) -> Result<TokenScoreSeq> {
        let (first, second) = self.pass_inputs(enc, vector)?;
        let target = enc.summary.ids();
        let p1 = self.backend.logprobs(&first, target)?;
        let p2 = if second.normalized() == first.normalized() {
            p1.clone()
        } else {
            self.backend.logprobs(&second, target)?
        };
        let diff: Vec<f64> = p2.iter().zip(&p1).map(|(b, a)| b - a).collect();
        let mut seq = TokenScoreSeq::from_subwords(
            diff,
            enc.summary.word_map().to_vec(),
            self.config.subword_reduction,
        )?;
        seq.truncated = enc.truncated;
        Ok(seq)
    }

    /// Summary score under the configured aggregation.
    pub fn aggregate(&self, scores: &TokenScoreSeq) -> Result<f64> {
        summary_score_with(scores, self.config.summary_aggregation)
    }

    /// Category-targeted summary score.
    ///
    /// EntE uses the entity prompt and up-weights entity words, CorefE the
    /// coreference prompt with up-weighted pronouns, OutE the base prompt
    /// with uniform weights. CorefE on a summary without pronouns returns
    /// [`Error::ExcludedPair`].
    pub fn category_score(&self, document: &str, summary: &str, category: Category) -> Result<f64> {
        let n_words = summary.split_whitespace().count();
        let m = self.config.category_weight_multiplier;
        let (spec, weights) = match category {
            Category::OutE => (PromptSpec::base(), vec![1.0; n_words]),
            Category::EntE => {
                let spans = self.facts.entities.entities(summary)?;
                let mut w = vec![1.0; n_words];
                for s in &spans {
                    for x in w.iter_mut().take(s.end.min(n_words)).skip(s.start) {
                        *x = m;
                    }
                }
                (PromptSpec::entity(spans), w)
            }
            Category::CorefE => {
                let (pronouns, links) = self.facts.coref.resolve(summary)?;
                if pronouns.is_empty() {
                    return Err(Error::ExcludedPair("summary has no pronouns".into()));
                }
                let mut w = vec![1.0; n_words];
                for &i in pronouns.iter().filter(|&&i| i < n_words) {
                    w[i] = m;
                }
                (PromptSpec::coref(links), w)
            }
        };
        let seq = self.score_with_spec(document, summary, &spec)?.with_weights(weights)?;
        self.aggregate(&seq)
    }

    /// Order-preserving batch scoring. Runs on `workers` threads when the
    /// backend allows concurrent calls.
    pub fn score_batch(&self, pairs: &[ScoreInput], workers: usize) -> Vec<Result<TokenScoreSeq>> {
        let one = |p: &ScoreInput| {
            self.score_pair(&p.document, &p.summary)
                .map_err(|e| e.for_pair(p.id.clone()))
        };
        if workers > 1 && self.backend.capabilities().thread_safe {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                Ok(pool) => return pool.install(|| pairs.par_iter().map(one).collect()),
                Err(e) => log::warn!("falling back to sequential scoring: {e}"),
            }
        }
        pairs.iter().map(one).collect()
    }
}
