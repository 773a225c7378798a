use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};

/// Word-level confusion counts; the positive class is "inconsistent".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Zero when precision and recall are both zero.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.precision() + self.recall() == 0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_split: BTreeMap<String, f64>,
    pub corpus: f64,
    pub confusion: BTreeMap<String, Confusion>,
    pub corpus_confusion: Confusion,
    /// Splits whose F1 is zero because precision and recall both are.
    pub degenerate_splits: Vec<String>,
}

impl F1Report {
    /// Unweighted mean of the per-split F1 values.
    pub fn average(&self) -> f64 {
        if self.per_split.is_empty() {
            0.0
        } else {
            self.per_split.values().sum::<f64>() / self.per_split.len() as f64
        }
    }
}

/// Word-level F1 of the inconsistent class, per split and pooled over the
/// whole corpus.
pub fn token_f1(predictions: &[Vec<bool>], golds: &[Vec<bool>], splits: &[&str]) -> Result<F1Report> {
    if predictions.len() != golds.len() || predictions.len() != splits.len() {
        return Err(Error::shape(format!(
            "{} predictions, {} gold sequences, {} split names",
            predictions.len(),
            golds.len(),
            splits.len()
        )));
    }
    let mut confusion: BTreeMap<String, Confusion> = BTreeMap::new();
    let mut corpus = Confusion::default();
    for (i, ((p, g), split)) in predictions.iter().zip(golds).zip(splits).enumerate() {
        if p.len() != g.len() {
            return Err(Error::shape(format!(
                "summary {i}: {} predicted labels for {} gold labels",
                p.len(),
                g.len()
            )));
        }
        let c = confusion.entry(split.to_string()).or_default();
        for (&pl, &gl) in p.iter().zip(g) {
            c.add(pl, gl);
            corpus.add(pl, gl);
        }
    }
    let degenerate_splits = confusion
        .iter()
        .filter(|(_, c)| c.is_degenerate())
        .map(|(s, _)| s.clone())
        .collect();
    Ok(F1Report {
        per_split: confusion.iter().map(|(s, c)| (s.clone(), c.f1())).collect(),
        corpus: corpus.f1(),
        confusion,
        corpus_confusion: corpus,
        degenerate_splits,
    })
}

/// Pearson correlation. Needs at least three pairs and non-constant inputs.
pub fn pearson(scores: &[f64], human: &[f64]) -> Result<f64> {
    if scores.len() != human.len() {
        return Err(Error::shape(format!(
            "{} scores for {} human ratings",
            scores.len(),
            human.len()
        )));
    }
    let n = scores.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("Pearson needs at least 3 pairs, got {n}")));
    }
    if scores.iter().chain(human).any(|v| !v.is_finite()) {
        return Err(Error::shape("non-finite value in Pearson input"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(scores), mean(human));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in scores.iter().zip(human) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(Side::Scores));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(Side::Human));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
