use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{pearson, token_f1};
use super::AnnotatedExample;
use crate::error::{Error, Result};
use crate::scoring::{label_corpus, Category, ScoreInput, ScoreRecord, Scorer, ThresholdPolicy, TokenScoreSeq};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub factual: usize,
    pub unfactual: usize,
}

/// Word-score histogram over min-max normalized scores, split by gold class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Raw score mapped to 0.
    pub min: f64,
    /// Raw score mapped to 1.
    pub max: f64,
    pub bins: Vec<HistogramBin>,
    pub factual_mean: f64,
    pub unfactual_mean: f64,
}

/// Pools `scores` (min-max normalized) into [`HISTOGRAM_BINS`] bins per class.
/// Both classes must be present.
pub fn emit_histogram(scores: &[f64], inconsistent: &[bool]) -> Result<Histogram> {
    if scores.len() != inconsistent.len() {
        return Err(Error::shape(format!(
            "{} scores for {} labels",
            scores.len(),
            inconsistent.len()
        )));
    }
    let n_bad = inconsistent.iter().filter(|&&b| b).count();
    if n_bad == 0 || n_bad == scores.len() {
        return Err(Error::Degenerate("histogram needs both word classes".into()));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::shape("non-finite word score"));
    }
    let span = max - min;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            low: i as f64 / HISTOGRAM_BINS as f64,
            high: (i + 1) as f64 / HISTOGRAM_BINS as f64,
            factual: 0,
            unfactual: 0,
        })
        .collect();
    let (mut sum_good, mut sum_bad) = (0.0, 0.0);
    for (&s, &bad) in scores.iter().zip(inconsistent) {
        let x = if span > 0.0 { (s - min) / span } else { 0.0 };
        let i = ((x * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        if bad {
            bins[i].unfactual += 1;
            sum_bad += x;
        } else {
            bins[i].factual += 1;
            sum_good += x;
        }
    }
    Ok(Histogram {
        min,
        max,
        bins,
        factual_mean: sum_good / (scores.len() - n_bad) as f64,
        unfactual_mean: sum_bad / n_bad as f64,
    })
}

impl Histogram {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["bin_low", "bin_high", "count_factual", "count_unfactual"])
            .map_err(csv_err)?;
        for b in &self.bins {
            w.write_record([
                b.low.to_string(),
                b.high.to_string(),
                b.factual.to_string(),
                b.unfactual.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Correlations of one scoring configuration against the human labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub model: String,
    pub overall: Option<f64>,
    pub category: Option<f64>,
    pub oute: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEvaluation {
    pub category: Category,
    pub retained: usize,
    pub excluded: usize,
    /// Category-targeted scores against the per-summary indicator
    /// "category absent".
    pub pearson: f64,
    /// Base prompt first, then the category-targeted configuration.
    pub rows: Vec<CategoryRow>,
}

/// Correlates category-targeted summary scores with human category labels.
///
/// Examples without category labels are skipped; for CorefE so are
/// summaries without pronouns (counted as excluded). The human side is 1
/// when the category is absent from the summary's labels, so a positive
/// correlation means higher scores go with fewer errors of that kind.
pub fn category_evaluate(
    examples: &[AnnotatedExample],
    category: Category,
    scorer: &Scorer<'_>,
) -> Result<CategoryEvaluation> {
    let mut base = Vec::new();
    let mut variant = Vec::new();
    let mut kept: Vec<&AnnotatedExample> = Vec::new();
    let mut excluded = 0;
    for ex in examples.iter().filter(|e| e.category_labels.is_some()) {
        let v = match scorer.category_score(&ex.document, &ex.summary, category) {
            Ok(v) => v,
            Err(Error::ExcludedPair(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e.for_pair(ex.id.clone())),
        };
        let b = if category == Category::OutE {
            v
        } else {
            scorer
                .category_score(&ex.document, &ex.summary, Category::OutE)
                .map_err(|e| e.for_pair(ex.id.clone()))?
        };
        base.push(b);
        variant.push(v);
        kept.push(ex);
    }
    if kept.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} retained pairs for {category}; need at least 3",
            kept.len()
        )));
    }
    let absent = |name: &str| -> Vec<f64> {
        kept.iter()
            .map(|e| if e.has_category(name) { 0.0 } else { 1.0 })
            .collect()
    };
    let human_cat = absent(category.as_str());
    let human_out = absent(Category::OutE.as_str());
    let human_overall: Option<Vec<f64>> = kept.iter().map(|e| e.summary_label).collect();

    let corr = pearson(&variant, &human_cat)?;
    let row = |model: &str, s: &[f64]| CategoryRow {
        model: model.to_string(),
        overall: human_overall.as_ref().and_then(|h| pearson(s, h).ok()),
        category: pearson(s, &human_cat).ok(),
        oute: pearson(s, &human_out).ok(),
    };
    Ok(CategoryEvaluation {
        category,
        retained: kept.len(),
        excluded,
        pearson: corr,
        rows: vec![row("base", &base), row(category.as_str(), &variant)],
    })
}

/// Everything one evaluation run measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub model: String,
    pub per_split_f1: BTreeMap<String, f64>,
    pub average_f1: Option<f64>,
    pub corpus_f1: Option<f64>,
    pub degenerate_splits: Vec<String>,
    /// Summary-level correlation, keyed by dataset.
    pub pearson: BTreeMap<String, f64>,
    pub category_pearson: BTreeMap<String, f64>,
    pub categories: Vec<CategoryEvaluation>,
    pub threshold_used: Option<f64>,
    pub predicted_positive_rate: Option<f64>,
    pub histogram: Option<Histogram>,
    pub truncated_pairs: usize,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    fn empty(dataset: &str, model: &str) -> Self {
        Self {
            dataset: dataset.to_string(),
            model: model.to_string(),
            per_split_f1: BTreeMap::new(),
            average_f1: None,
            corpus_f1: None,
            degenerate_splits: Vec::new(),
            pearson: BTreeMap::new(),
            category_pearson: BTreeMap::new(),
            categories: Vec::new(),
            threshold_used: None,
            predicted_positive_rate: None,
            histogram: None,
            truncated_pairs: 0,
            notes: Vec::new(),
        }
    }

    /// Token metrics and histogram from word scores and predicted labels.
    fn add_token_metrics(
        &mut self,
        examples: &[AnnotatedExample],
        scores: &[Vec<f64>],
        predicted: &[Vec<bool>],
    ) -> Result<()> {
        let golds: Option<Vec<Vec<bool>>> = examples.iter().map(|e| e.inconsistent_words()).collect();
        let Some(golds) = golds else {
            if examples.iter().any(|e| e.word_labels.is_some()) {
                self.notes
                    .push("word labels missing on some examples; token metrics skipped".into());
            }
            return Ok(());
        };
        let splits: Vec<&str> = examples.iter().map(|e| e.split()).collect();
        let f1 = token_f1(predicted, &golds, &splits)?;
        self.average_f1 = Some(f1.average());
        self.corpus_f1 = Some(f1.corpus);
        self.per_split_f1 = f1.per_split;
        self.degenerate_splits = f1.degenerate_splits;
        let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
        let flat_gold: Vec<bool> = golds.into_iter().flatten().collect();
        match emit_histogram(&flat_scores, &flat_gold) {
            Ok(h) => self.histogram = Some(h),
            Err(Error::Degenerate(m)) => self.notes.push(format!("histogram skipped: {m}")),
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn add_summary_pearson(&mut self, examples: &[AnnotatedExample], summary_scores: &[f64]) {
        let human: Option<Vec<f64>> = examples.iter().map(|e| e.summary_label).collect();
        let Some(human) = human else { return };
        match pearson(summary_scores, &human) {
            Ok(r) => {
                self.pearson.insert(self.dataset.clone(), r);
            }
            Err(e) => self.notes.push(format!("summary Pearson skipped: {e}")),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Writes the CSV tables for `reports` (one row per report) into `dir`.
    ///
    /// - `token_f1.csv`: model, one column per split, average_f1
    /// - `corpus_f1.csv`: model, corpus_f1
    /// - `summary_pearson.csv`: model, one column per dataset
    /// - `category_<name>.csv`: model, overall, category, OutE, retained, excluded
    /// - `histogram.csv`: first report's histogram, when present
    pub fn write_tables(reports: &[EvaluationReport], dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();

        let split_names: BTreeSet<&String> = reports.iter().flat_map(|r| r.per_split_f1.keys()).collect();
        if reports.iter().any(|r| r.corpus_f1.is_some()) {
            let mut w = csv_writer(&dir.join("token_f1.csv"))?;
            let mut header = vec!["model".to_string()];
            header.extend(split_names.iter().map(|s| s.to_string()));
            header.push("average_f1".into());
            w.write_record(&header).map_err(csv_err)?;
            for r in reports {
                let mut row = vec![r.model.clone()];
                row.extend(split_names.iter().map(|s| fmt(r.per_split_f1.get(*s).copied())));
                row.push(fmt(r.average_f1));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;

            let mut w = csv_writer(&dir.join("corpus_f1.csv"))?;
            w.write_record(["model", "corpus_f1"]).map_err(csv_err)?;
            for r in reports {
                w.write_record([r.model.clone(), fmt(r.corpus_f1)]).map_err(csv_err)?;
            }
            w.flush()?;
        }

        let datasets: BTreeSet<&String> = reports.iter().flat_map(|r| r.pearson.keys()).collect();
        if !datasets.is_empty() {
            let mut w = csv_writer(&dir.join("summary_pearson.csv"))?;
            let mut header = vec!["model".to_string()];
            header.extend(datasets.iter().map(|s| s.to_string()));
            w.write_record(&header).map_err(csv_err)?;
            for r in reports {
                let mut row = vec![r.model.clone()];
                row.extend(datasets.iter().map(|d| fmt(r.pearson.get(*d).copied())));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush()?;
        }

        let mut by_category: BTreeMap<&str, Vec<(&EvaluationReport, &CategoryEvaluation)>> = BTreeMap::new();
        for r in reports {
            for c in &r.categories {
                by_category.entry(c.category.as_str()).or_default().push((r, c));
            }
        }
        for (name, evals) in by_category {
            let mut w = csv_writer(&dir.join(format!("category_{name}.csv")))?;
            w.write_record(["model", "overall", name, "OutE", "retained", "excluded"])
                .map_err(csv_err)?;
            for (r, c) in evals {
                for row in &c.rows {
                    let model = if reports.len() > 1 {
                        format!("{}/{}", r.model, row.model)
                    } else {
                        row.model.clone()
                    };
                    w.write_record([
                        model,
                        fmt(row.overall),
                        fmt(row.category),
                        fmt(row.oute),
                        c.retained.to_string(),
                        c.excluded.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush()?;
        }

        if let Some(h) = reports.iter().find_map(|r| r.histogram.as_ref()) {
            h.write_csv(&dir.join("histogram.csv"))?;
        }
        Ok(())
    }
}

/// Scores `examples` and computes every metric their labels support.
pub fn evaluate_dataset(
    examples: &[AnnotatedExample],
    scorer: &Scorer<'_>,
    policy: &ThresholdPolicy,
    categories: &[Category],
    dataset: &str,
    model: &str,
    workers: usize,
) -> Result<EvaluationReport> {
    let mut report = EvaluationReport::empty(dataset, model);
    if examples.is_empty() {
        report.notes.push("empty dataset".into());
        return Ok(report);
    }
    let inputs: Vec<ScoreInput> = examples
        .iter()
        .map(|e| ScoreInput {
            id: e.id.clone(),
            document: e.document.clone(),
            summary: e.summary.clone(),
        })
        .collect();
    let seqs: Vec<TokenScoreSeq> = scorer
        .score_batch(&inputs, workers)
        .into_iter()
        .collect::<Result<_>>()?;
    report.truncated_pairs = seqs.iter().filter(|s| s.truncated()).count();

    let corpus = label_corpus(&seqs, policy)?;
    report.threshold_used = Some(corpus.threshold);
    report.predicted_positive_rate = Some(corpus.predicted_positive_rate());
    let scores: Vec<Vec<f64>> = seqs.iter().map(|s| s.word_pdiff().to_vec()).collect();
    report.add_token_metrics(examples, &scores, &corpus.labels)?;

    let summary_scores: Vec<f64> = seqs.iter().map(|s| scorer.aggregate(s)).collect::<Result<_>>()?;
    report.add_summary_pearson(examples, &summary_scores);

    for &c in categories {
        let eval = category_evaluate(examples, c, scorer)?;
        report.category_pearson.insert(c.as_str().to_string(), eval.pearson);
        report.categories.push(eval);
    }
    Ok(report)
}

/// Builds a report from previously written score records, matched to the
/// dataset by id.
pub fn report_from_scores(
    examples: &[AnnotatedExample],
    records: &[ScoreRecord],
    dataset: &str,
    model: &str,
) -> Result<EvaluationReport> {
    let by_id: HashMap<&str, &ScoreRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut report = EvaluationReport::empty(dataset, model);
    let mut matched = Vec::new();
    let mut recs = Vec::new();
    for ex in examples {
        match by_id.get(ex.id.as_str()) {
            Some(r) if r.word_scores.len() == ex.num_words() => {
                matched.push(ex.clone());
                recs.push(*r);
            }
            Some(r) => {
                return Err(Error::Alignment {
                    line: None,
                    message: format!(
                        "`{}`: {} word scores for {} summary words",
                        r.id,
                        r.word_scores.len(),
                        ex.num_words()
                    ),
                })
            }
            None => report.notes.push(format!("`{}` has no score record", ex.id)),
        }
    }
    if recs.is_empty() {
        report.notes.push("no scored examples".into());
        return Ok(report);
    }
    let thresholds: BTreeSet<u64> = recs.iter().map(|r| r.threshold.to_bits()).collect();
    if thresholds.len() > 1 {
        report.notes.push("score records carry different thresholds".into());
    }
    report.threshold_used = Some(recs[0].threshold);
    report.truncated_pairs = recs.iter().filter(|r| r.truncated).count();
    let predicted: Vec<Vec<bool>> = recs
        .iter()
        .map(|r| r.word_labels.iter().map(|&l| l == 1).collect())
        .collect();
    let total: usize = predicted.iter().map(Vec::len).sum();
    let positive: usize = predicted.iter().flatten().filter(|&&b| b).count();
    report.predicted_positive_rate = Some(positive as f64 / total.max(1) as f64);
    let scores: Vec<Vec<f64>> = recs.iter().map(|r| r.word_scores.clone()).collect();
    report.add_token_metrics(&matched, &scores, &predicted)?;
    let summary_scores: Vec<f64> = recs.iter().map(|r| r.summary_score).collect();
    report.add_summary_pearson(&matched, &summary_scores);
    Ok(report)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
