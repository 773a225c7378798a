use serde::{Deserialize, Serialize};

use super::{label_corpus, Scorer, ThresholdPolicy, TokenScoreSeq};
use crate::error::Result;

/// One input line of batch scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreInput {
    pub id: String,
    pub document: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub word_scores: Vec<f64>,
    pub word_labels: Vec<u8>,
    pub summary_score: f64,
    pub threshold: f64,
    pub variant: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreErrorRecord {
    pub id: String,
    pub error: String,
}

/// One output line: a score record or a per-record error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreOutput {
    Scored(ScoreRecord),
    Failed(ScoreErrorRecord),
}

impl ScoreOutput {
    pub fn id(&self) -> &str {
        match self {
            ScoreOutput::Scored(r) => &r.id,
            ScoreOutput::Failed(r) => &r.id,
        }
    }
}

impl Scorer<'_> {
    /// Scores, thresholds over the successfully scored pairs and renders one
    /// output record per input, in input order.
    pub fn run_batch(
        &self,
        inputs: &[ScoreInput],
        policy: &ThresholdPolicy,
        workers: usize,
    ) -> Result<Vec<ScoreOutput>> {
        policy.validate()?;
        let results = self.score_batch(inputs, workers);
        let scored: Vec<TokenScoreSeq> = results.iter().filter_map(|r| r.as_ref().ok()).cloned().collect();
        let labels = if scored.is_empty() {
            None
        } else {
            Some(label_corpus(&scored, policy)?)
        };
        let variant = self.config().prompt_variant.to_string();
        let mut next = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (input, result) in inputs.iter().zip(results) {
            match result {
                Ok(seq) => {
                    let corpus = labels.as_ref().expect("labels exist when something scored");
                    let word_labels = corpus.labels[next].iter().map(|&l| l as u8).collect();
                    next += 1;
                    let summary_score = match self.aggregate(&seq) {
                        Ok(s) => s,
                        Err(e) => {
                            out.push(ScoreOutput::Failed(ScoreErrorRecord {
                                id: input.id.clone(),
                                error: e.to_string(),
                            }));
                            continue;
                        }
                    };
                    out.push(ScoreOutput::Scored(ScoreRecord {
                        id: input.id.clone(),
                        word_scores: seq.word_pdiff().to_vec(),
                        word_labels,
                        summary_score,
                        threshold: corpus.threshold,
                        variant: variant.clone(),
                        truncated: seq.truncated(),
                    }))
                }
                Err(e) => out.push(ScoreOutput::Failed(ScoreErrorRecord {
                    id: input.id.clone(),
                    error: e.to_string(),
                })),
            }
        }
        Ok(out)
    }
}
