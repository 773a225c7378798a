use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tuning_loss, AdamW, PromptVector};
use crate::backend::{DifferentiableBackend, EmbeddingBlock};
use crate::error::{Error, Result};
use crate::evaldata::{token_f1, AnnotatedExample};
use crate::scoring::{
    label_corpus, reduce_subwords, PairEncoding, Scorer, SubwordReduction, ThresholdPolicy, TokenScoreSeq,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub prompt_length: usize,
    /// Falls back to the run seed when unset.
    pub seed: Option<u64>,
    /// Epochs without a validation-F1 improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    /// Divide each batch loss by its word count.
    pub normalize_loss: bool,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 8,
            prompt_length: 5,
            seed: None,
            patience: 5,
            weight_decay: 0.0,
            normalize_loss: false,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "tuning.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config(
                "tuning.epochs, tuning.batch_size and tuning.patience must be positive",
            ));
        }
        if !(1..=PromptVector::MAX_LENGTH).contains(&self.prompt_length) {
            return Err(Error::config(format!(
                "tuning.prompt_length must lie in 1..={}",
                PromptVector::MAX_LENGTH
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("tuning.weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// One row of the training trace. Epoch 0 is the initial vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub validation_f1: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Vector with the best validation F1.
    pub vector: PromptVector,
    pub best_epoch: usize,
    pub best_validation_f1: f64,
    pub trace: Vec<EpochRecord>,
    pub checksum_before: String,
    pub checksum_after: String,
    pub trainable_parameters: usize,
}

struct Prepared {
    encoding: PairEncoding,
    inconsistent: Vec<bool>,
}

fn prepare(scorer: &Scorer<'_>, examples: &[AnnotatedExample], what: &str) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            let inconsistent = ex.inconsistent_words().ok_or_else(|| {
                Error::config(format!("{what} example `{}` has no word labels", ex.id))
            })?;
            let spec = scorer.prompt_spec(&ex.summary, scorer.config().prompt_variant)?;
            let encoding = scorer.encode_pair(&ex.document, &ex.summary, &spec)?;
            if encoding.summary.num_words() != inconsistent.len() {
                return Err(Error::Alignment {
                    line: None,
                    message: format!(
                        "{} labels for {} words",
                        inconsistent.len(),
                        encoding.summary.num_words()
                    ),
                });
            }
            Ok(Prepared {
                encoding,
                inconsistent,
            })
        })
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.for_pair(examples[i].id.clone())))
        .collect()
}

/// Loss of one encoded example and its gradient with respect to the vector
/// values (row-major, `length × dim`).
pub fn example_gradient(
    scorer: &Scorer<'_>,
    encoding: &PairEncoding,
    inconsistent: &[bool],
    vector: &PromptVector,
) -> Result<(f64, Vec<f64>)> {
    let backend = scorer
        .backend()
        .differentiable()
        .ok_or_else(|| Error::Capability("backend does not provide gradients".into()))?;
    let (first, second) = scorer.pass_inputs(encoding, Some(vector))?;
    let target = encoding.summary.ids();
    let word_map = encoding.summary.word_map();
    let n_words = encoding.summary.num_words();
    if inconsistent.len() != n_words {
        return Err(Error::shape(format!(
            "{} labels for {n_words} words",
            inconsistent.len()
        )));
    }
    let reduction = scorer.config().subword_reduction;

    // d(word score)/d(subword score), then signed by the word label.
    let mut share = vec![0.0; target.len()];
    match reduction {
        SubwordReduction::Sum => share.fill(1.0),
        SubwordReduction::Mean => {
            let mut counts = vec![0usize; n_words];
            word_map.iter().for_each(|&w| counts[w] += 1);
            for (s, &w) in share.iter_mut().zip(word_map) {
                *s = 1.0 / counts[w] as f64;
            }
        }
        SubwordReduction::Max => {
            let a = backend.logprobs(&first, target)?;
            let b = backend.logprobs(&second, target)?;
            let mut best: Vec<Option<(usize, f64)>> = vec![None; n_words];
            for (t, &w) in word_map.iter().enumerate() {
                let d = b[t] - a[t];
                if best[w].is_none_or(|(_, v)| d > v) {
                    best[w] = Some((t, d));
                }
            }
            for (t, _) in best.into_iter().flatten() {
                share[t] = 1.0;
            }
        }
    }
    let weights: Vec<f64> = share
        .iter()
        .zip(word_map)
        .map(|(s, &w)| if inconsistent[w] { -s } else { *s })
        .collect();

    let (lp2, g2) = backend.logprobs_vjp(&second, target, &weights)?;
    let (lp1, g1) = backend.logprobs_vjp(&first, target, &weights)?;
    let diff: Vec<f64> = lp2.iter().zip(&lp1).map(|(b, a)| b - a).collect();
    let word_pdiff = reduce_subwords(&diff, word_map, reduction)?;
    let loss = tuning_loss(&word_pdiff, inconsistent)?;

    let mut grad = vec![0.0; vector.num_parameters()];
    let mut accumulate = |blocks: &[EmbeddingBlock], sign: f64| {
        for b in blocks {
            for (g, x) in grad.iter_mut().zip(b.as_slice()) {
                *g += sign * x;
            }
        }
    };
    accumulate(&g2, 1.0);
    accumulate(&g1, -1.0);
    Ok((loss, grad))
}

fn par_map<T: Sync, R: Send>(parallel: bool, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn validation_f1(
    scorer: &Scorer<'_>,
    data: &[Prepared],
    vector: &PromptVector,
    policy: &ThresholdPolicy,
    parallel: bool,
) -> Result<(f64, f64)> {
    let seqs: Vec<TokenScoreSeq> = par_map(parallel, data, |p| scorer.score_encoded(&p.encoding, Some(vector)))
        .into_iter()
        .collect::<Result<_>>()?;
    let labels = label_corpus(&seqs, policy)?;
    let golds: Vec<Vec<bool>> = data.iter().map(|p| p.inconsistent.clone()).collect();
    let splits = vec!["all"; data.len()];
    Ok((token_f1(&labels.labels, &golds, &splits)?.corpus, labels.threshold))
}

fn training_loss(scorer: &Scorer<'_>, data: &[Prepared], vector: &PromptVector, parallel: bool) -> Result<f64> {
    let losses = par_map(parallel, data, |p| {
        let seq = scorer.score_encoded(&p.encoding, Some(vector))?;
        tuning_loss(seq.word_pdiff(), &p.inconsistent)
    });
    losses.into_iter().sum()
}

/// Trains a prompt vector with the backbone frozen.
///
/// `scorer` supplies the backend, scoring configuration and fact providers;
/// any vector it carries is ignored. `init` resumes from an existing vector
/// (with a fresh optimizer state). The returned vector is the one with the
/// best validation corpus F1 under `policy`; epoch 0 of the trace is the
/// initial vector.
pub fn train_prompt_vector(
    scorer: &Scorer<'_>,
    policy: &ThresholdPolicy,
    config: &TuningConfig,
    train: &[AnnotatedExample],
    valid: &[AnnotatedExample],
    init: Option<PromptVector>,
) -> Result<TrainingOutcome> {
    let backend = scorer.backend();
    let caps = backend.capabilities();
    let diff: &dyn DifferentiableBackend = match backend.differentiable() {
        Some(d) if caps.supports_gradients && caps.supports_embedding_injection => d,
        _ => {
            return Err(Error::Capability(format!(
                "backend `{}` cannot provide gradients for injected embeddings",
                backend.name()
            )))
        }
    };
    config.validate()?;
    policy.validate()?;
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let valid = if valid.is_empty() {
        log::warn!("validation set is empty; selecting on the training set");
        train
    } else {
        valid
    };
    let seed = config.seed.unwrap_or(0);
    let mut vector = match init {
        Some(v) => {
            if v.length() != config.prompt_length {
                log::warn!(
                    "resuming a length-{} vector; tuning.prompt_length {} ignored",
                    v.length(),
                    config.prompt_length
                );
            }
            v
        }
        None => PromptVector::init_from_backend(diff, config.prompt_length, seed)?,
    };

    let scorer = Scorer::new(backend, scorer.config().clone())?
        .with_facts(scorer.facts().clone())
        .with_prompt_vector(vector.clone())?;
    let train_data = prepare(&scorer, train, "training")?;
    let valid_data = prepare(&scorer, valid, "validation")?;
    let parallel = caps.thread_safe;

    let checksum_before = diff.backbone_checksum();
    let mut optimizer = AdamW::new(vector.num_parameters(), config.learning_rate, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let (f1, threshold) = validation_f1(&scorer, &valid_data, &vector, policy, parallel)?;
    let mut trace = vec![EpochRecord {
        epoch: 0,
        loss: training_loss(&scorer, &train_data, &vector, parallel)?,
        validation_f1: f1,
        threshold,
    }];
    log::info!("epoch 0: validation F1 {f1:.4}");
    let mut best = (f1, vector.clone(), 0);
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let items: Vec<&Prepared> = batch.iter().map(|&i| &train_data[i]).collect();
            let results = par_map(parallel, &items, |p| {
                example_gradient(&scorer, &p.encoding, &p.inconsistent, &vector)
            });
            let mut grad = vec![0.0; vector.num_parameters()];
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if config.normalize_loss {
                let words: usize = items.iter().map(|p| p.inconsistent.len()).sum();
                let scale = 1.0 / words.max(1) as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
            }
            epoch_loss += loss;
            optimizer.step(vector.values_mut().as_mut_slice(), &grad);
        }
        if vector.values().as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate(format!("prompt vector diverged in epoch {epoch}")));
        }
        let (f1, threshold) = validation_f1(&scorer, &valid_data, &vector, policy, parallel)?;
        log::info!("epoch {epoch}: loss {epoch_loss:.4}, validation F1 {f1:.4}");
        trace.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            validation_f1: f1,
            threshold,
        });
        if f1 > best.0 {
            best = (f1, vector.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no improvement for {stale} epochs; stopping");
                break;
            }
        }
    }

    let checksum_after = diff.backbone_checksum();
    if checksum_after != checksum_before {
        return Err(Error::Degenerate("backbone parameters changed during tuning".into()));
    }
    let (best_validation_f1, vector, best_epoch) = best;
    Ok(TrainingOutcome {
        trainable_parameters: vector.num_parameters(),
        vector,
        best_epoch,
        best_validation_f1,
        trace,
        checksum_before,
        checksum_after,
    })
}

/// Trains one vector per length with otherwise identical settings.
pub fn sweep_lengths(
    scorer: &Scorer<'_>,
    policy: &ThresholdPolicy,
    config: &TuningConfig,
    lengths: &[usize],
    train: &[AnnotatedExample],
    valid: &[AnnotatedExample],
) -> Result<Vec<TrainingOutcome>> {
    lengths
        .iter()
        .map(|&prompt_length| {
            let cfg = TuningConfig {
                prompt_length,
                ..config.clone()
            };
            train_prompt_vector(scorer, policy, &cfg, train, valid, None)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{EmbeddingToyBackend, EmbeddingToyParams, ToyBackend, ToyModelParams};
    use crate::scoring::ScoringConfig;

    fn backend() -> EmbeddingToyBackend {
        EmbeddingToyBackend::new(EmbeddingToyParams {
            vocab_size: 40,
            dim: 6,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn example(id: &str, doc: &str, summary: &str, labels: Vec<u8>) -> AnnotatedExample {
        AnnotatedExample {
            id: id.into(),
            document: doc.into(),
            summary: summary.into(),
            source_system: None,
            word_labels: Some(labels),
            summary_label: None,
            category_labels: None,
        }
    }

    fn data() -> Vec<AnnotatedExample> {
        vec![
            example("a", "w1 w2 w3 w4", "w1 w9 w3", vec![0, 1, 0]),
            example("b", "w5 w6 w7", "w6 w20 w30", vec![0, 1, 1]),
            example("c", "w10 w11 w12 w13", "w12 w11", vec![0, 0]),
            example("d", "w2 w4 w6", "w4 w15", vec![0, 1]),
        ]
    }

    fn loss_at(scorer: &Scorer<'_>, enc: &PairEncoding, labels: &[bool], v: &PromptVector) -> f64 {
        let seq = scorer.score_encoded(enc, Some(v)).unwrap();
        tuning_loss(seq.word_pdiff(), labels).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = backend();
        for reduction in [SubwordReduction::Mean, SubwordReduction::Sum] {
            let cfg = ScoringConfig {
                subword_reduction: reduction,
                ..Default::default()
            };
            let scorer = Scorer::new(&b, cfg).unwrap();
            let v = PromptVector::init_from_backend(&b, 3, 4).unwrap();
            let enc = scorer
                .encode_pair("w1 w2 w3", "w1 w7, w3", &crate::prompts::PromptSpec::base())
                .unwrap();
            let labels = [false, true, false];
            let (_, grad) = example_gradient(&scorer, &enc, &labels, &v).unwrap();
            let h = 1e-5;
            for i in 0..v.num_parameters() {
                let mut plus = v.clone();
                plus.values_mut().as_mut_slice()[i] += h;
                let mut minus = v.clone();
                minus.values_mut().as_mut_slice()[i] -= h;
                let fd = (loss_at(&scorer, &enc, &labels, &plus) - loss_at(&scorer, &enc, &labels, &minus)) / (2.0 * h);
                assert!(
                    (fd - grad[i]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                    "{reduction:?} param {i}: fd {fd} analytic {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn small_step_decreases_loss() {
        let b = backend();
        let scorer = Scorer::new(&b, ScoringConfig::default()).unwrap();
        let v = PromptVector::init_from_backend(&b, 2, 8).unwrap();
        let ex = &data()[1];
        let enc = scorer
            .encode_pair(&ex.document, &ex.summary, &crate::prompts::PromptSpec::base())
            .unwrap();
        let labels = ex.inconsistent_words().unwrap();
        let (loss, grad) = example_gradient(&scorer, &enc, &labels, &v).unwrap();
        let mut stepped = v.clone();
        for (x, g) in stepped.values_mut().as_mut_slice().iter_mut().zip(&grad) {
            *x -= 1e-4 * g;
        }
        assert!(loss_at(&scorer, &enc, &labels, &stepped) < loss);
    }

    #[test]
    fn training_is_reproducible_and_frozen() {
        let b = backend();
        let scorer = Scorer::new(&b, ScoringConfig::default()).unwrap();
        let cfg = TuningConfig {
            epochs: 3,
            batch_size: 2,
            prompt_length: 2,
            learning_rate: 1e-2,
            seed: Some(5),
            ..Default::default()
        };
        let policy = ThresholdPolicy::Fixed { fixed_value: 0.0 };
        let d = data();
        let a = train_prompt_vector(&scorer, &policy, &cfg, &d, &d, None).unwrap();
        let c = train_prompt_vector(&scorer, &policy, &cfg, &d, &d, None).unwrap();
        assert_eq!(a.vector, c.vector);
        assert_eq!(a.trace, c.trace);
        assert_eq!(a.checksum_before, a.checksum_after);
        assert_eq!(a.trainable_parameters, 2 * 6);
        assert_eq!(a.trace[0].epoch, 0);
        assert!(a.trace.len() >= 2);
    }

    #[test]
    fn precondition_errors() {
        let toy = ToyBackend::new(ToyModelParams::new(0.5, 100).unwrap()).unwrap();
        let scorer = Scorer::new(&toy, ScoringConfig::default()).unwrap();
        let policy = ThresholdPolicy::default();
        let d = data();
        assert!(matches!(
            train_prompt_vector(&scorer, &policy, &TuningConfig::default(), &d, &d, None),
            Err(Error::Capability(_))
        ));
        let b = backend();
        let scorer = Scorer::new(&b, ScoringConfig::default()).unwrap();
        assert!(matches!(
            train_prompt_vector(&scorer, &policy, &TuningConfig::default(), &[], &d, None),
            Err(Error::Config(_))
        ));
        let bad = TuningConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            train_prompt_vector(&scorer, &policy, &bad, &d, &d, None),
            Err(Error::Config(_))
        ));
    }
}
