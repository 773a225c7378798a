//! Seeded synthetic corpora whose inconsistent words are exactly the
//! summary words absent from the document.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::EmbeddingToyParams;
use crate::error::{Error, Result};
use crate::evaldata::AnnotatedExample;

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub size: usize,
    pub document_words: RangeInclusive<usize>,
    pub summary_words: RangeInclusive<usize>,
    /// Probability that a summary word is drawn from outside the document.
    pub inconsistent_rate: f64,
    pub vocabulary: Vec<String>,
    /// Source-system names, assigned round robin.
    pub splits: Vec<String>,
    pub id_prefix: String,
}

impl CorpusSpec {
    /// `w0 … w{n-1}` words, two splits.
    pub fn with_vocabulary_size(size: usize, n: usize) -> Self {
        Self {
            size,
            document_words: 8..=20,
            summary_words: 3..=8,
            inconsistent_rate: 0.3,
            vocabulary: (0..n).map(EmbeddingToyParams::synthetic_word).collect(),
            splits: vec!["sysA".into(), "sysB".into()],
            id_prefix: "ex".into(),
        }
    }

    /// Every non-special word of an embedding toy backend's vocabulary.
    pub fn for_embedding_toy(size: usize, params: &EmbeddingToyParams) -> Self {
        let mut spec = Self::with_vocabulary_size(size, 0);
        spec.vocabulary = match &params.words {
            Some(w) => w.clone(),
            None => (0..params.vocab_size.saturating_sub(2))
                .map(EmbeddingToyParams::synthetic_word)
                .collect(),
        };
        spec
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.inconsistent_rate) {
            return Err(Error::config("inconsistent_rate must lie in [0, 1]"));
        }
        if self.document_words.is_empty() || *self.document_words.start() == 0 {
            return Err(Error::config("documents need at least one word"));
        }
        if self.summary_words.is_empty() || *self.summary_words.start() == 0 {
            return Err(Error::config("summaries need at least one word"));
        }
        let unique: BTreeSet<&String> = self.vocabulary.iter().collect();
        if unique.len() < self.document_words.end() + 1 {
            return Err(Error::config(
                "vocabulary must be larger than the longest document",
            ));
        }
        if self.splits.is_empty() {
            return Err(Error::config("at least one split name is needed"));
        }
        Ok(())
    }
}

/// Generates `spec.size` labelled examples. Documents hold distinct words;
/// each summary word is, with probability `inconsistent_rate`, a word the
/// document lacks (label 1), otherwise a document word (label 0).
/// `summary_label` is the fraction of consistent words.
pub fn generate(spec: &CorpusSpec, seed: u64) -> Result<Vec<AnnotatedExample>> {
    spec.validate()?;
    let vocab: Vec<&String> = spec.vocabulary.iter().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.size);
    for i in 0..spec.size {
        let n_doc = rng.random_range(spec.document_words.clone());
        let doc: Vec<&String> = vocab.choose_multiple(&mut rng, n_doc).copied().collect();
        let in_doc: BTreeSet<&String> = doc.iter().copied().collect();
        let outside: Vec<&String> = vocab.iter().copied().filter(|w| !in_doc.contains(w)).collect();

        let n_sum = rng.random_range(spec.summary_words.clone());
        let mut words = Vec::with_capacity(n_sum);
        let mut labels = Vec::with_capacity(n_sum);
        for _ in 0..n_sum {
            if rng.random_bool(spec.inconsistent_rate) {
                words.push(outside.choose(&mut rng).expect("vocabulary exceeds document").as_str());
                labels.push(1u8);
            } else {
                words.push(doc.choose(&mut rng).expect("non-empty document").as_str());
                labels.push(0u8);
            }
        }
        let bad = labels.iter().filter(|&&l| l == 1).count();
        out.push(AnnotatedExample {
            id: format!("{}{i}", spec.id_prefix),
            document: doc.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "),
            summary: words.join(" "),
            source_system: Some(spec.splits[i % spec.splits.len()].clone()),
            word_labels: Some(labels),
            summary_label: Some(1.0 - bad as f64 / n_sum as f64),
            category_labels: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_mark_absent_words() {
        let spec = CorpusSpec::with_vocabulary_size(50, 40);
        let data = generate(&spec, 1).unwrap();
        assert_eq!(data.len(), 50);
        for ex in &data {
            ex.validate().unwrap();
            let doc: BTreeSet<&str> = ex.document.split_whitespace().collect();
            for (w, &l) in ex.summary.split_whitespace().zip(ex.word_labels.as_ref().unwrap()) {
                assert_eq!(l == 1, !doc.contains(w));
            }
        }
        assert_eq!(generate(&spec, 1).unwrap(), data);
        assert_ne!(generate(&spec, 2).unwrap(), data);
    }

    #[test]
    fn rejects_small_vocabulary() {
        let spec = CorpusSpec::with_vocabulary_size(5, 10);
        assert!(matches!(generate(&spec, 0), Err(Error::Config(_))));
    }
}
