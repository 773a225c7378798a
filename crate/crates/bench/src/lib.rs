//! Shared inputs for the benchmarks.

use pdiff::backend::EmbeddingToyParams;
use pdiff::scoring::ScoreInput;
use pdiff::synthetic::{generate, CorpusSpec};
use pdiff::AnnotatedExample;

pub fn embedding_params() -> EmbeddingToyParams {
    EmbeddingToyParams {
        vocab_size: 64,
        dim: 16,
        copy_mass: 0.3,
        attention_scale: 2.0,
        ..Default::default()
    }
}

/// Labelled pairs whose words all fit the embedding toy vocabulary.
pub fn corpus(size: usize, seed: u64) -> Vec<AnnotatedExample> {
    generate(&CorpusSpec::for_embedding_toy(size, &embedding_params()), seed)
        .expect("synthetic corpus")
}

pub fn inputs(size: usize, seed: u64) -> Vec<ScoreInput> {
    corpus(size, seed)
        .into_iter()
        .map(|e| ScoreInput {
            id: e.id,
            document: e.document,
            summary: e.summary,
        })
        .collect()
}
