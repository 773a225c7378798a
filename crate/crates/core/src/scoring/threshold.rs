use serde::{Deserialize, Serialize};

use super::TokenScoreSeq;
use crate::error::{Error, Result};

/// How word scores become inconsistent/consistent labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ThresholdPolicy {
    /// `label = score > fixed_value`.
    Fixed { fixed_value: f64 },
    /// Threshold at the `(1 − target_rate)` quantile of all word scores in
    /// the evaluation corpus.
    Proportion { target_rate: f64 },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fixed { fixed_value: 0.0 }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::Fixed { fixed_value } if !fixed_value.is_finite() => {
                Err(Error::config("threshold.fixed_value must be finite"))
            }
            ThresholdPolicy::Proportion { target_rate } if !(target_rate > 0.0 && target_rate < 1.0) => {
                Err(Error::config(format!(
                    "threshold.target_rate must lie in (0, 1), got {target_rate}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Resolves the numeric threshold over a corpus of word scores.
    ///
    /// In proportion mode at most `⌈target_rate · n⌉` scores lie strictly
    /// above the returned value; scores tied with it stay consistent.
    pub fn resolve(&self, corpus_scores: &[f64]) -> Result<f64> {
        self.validate()?;
        match *self {
            ThresholdPolicy::Fixed { fixed_value } => Ok(fixed_value),
            ThresholdPolicy::Proportion { target_rate } => {
                if corpus_scores.is_empty() {
                    return Err(Error::Degenerate("no word scores to threshold".into()));
                }
                let mut sorted = corpus_scores.to_vec();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len();
                // Guard against `rate · n` landing a hair above an integer.
                let k = ((target_rate * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
                Ok(if k == 0 {
                    sorted[n - 1]
                } else if k == n {
                    sorted[0]
                } else {
                    sorted[n - k - 1]
                })
            }
        }
    }
}

/// Labels of every word (true = inconsistent) for one summary.
///
/// Proportion mode needs the corpus the threshold is computed over; without
/// it the call is a configuration error.
pub fn predict_inconsistent(
    scores: &TokenScoreSeq,
    policy: &ThresholdPolicy,
    corpus: Option<&[TokenScoreSeq]>,
) -> Result<Vec<bool>> {
    if scores.word_pdiff().is_empty() {
        return Err(Error::shape("no word scores"));
    }
    let threshold = match (policy, corpus) {
        (ThresholdPolicy::Fixed { .. }, _) => policy.resolve(&[])?,
        (ThresholdPolicy::Proportion { .. }, Some(c)) => policy.resolve(&pooled(c))?,
        (ThresholdPolicy::Proportion { .. }, None) => {
            return Err(Error::config(
                "proportion thresholding needs the evaluation corpus",
            ))
        }
    };
    Ok(apply(scores.word_pdiff(), threshold))
}

/// Corpus-level labelling: one threshold for every summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLabels {
    pub threshold: f64,
    pub labels: Vec<Vec<bool>>,
}

impl CorpusLabels {
    pub fn predicted_positive_rate(&self) -> f64 {
        let (pos, total) = self
            .labels
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(p, t), &l| (p + l as usize, t + 1));
        if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        }
    }
}

pub fn label_corpus(corpus: &[TokenScoreSeq], policy: &ThresholdPolicy) -> Result<CorpusLabels> {
    let threshold = policy.resolve(&pooled(corpus))?;
    Ok(CorpusLabels {
        threshold,
        labels: corpus.iter().map(|s| apply(s.word_pdiff(), threshold)).collect(),
    })
}

fn pooled(corpus: &[TokenScoreSeq]) -> Vec<f64> {
    corpus.iter().flat_map(|s| s.word_pdiff().iter().copied()).collect()
}

pub(crate) fn apply(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}
