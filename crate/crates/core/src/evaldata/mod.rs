//! Annotated datasets, metrics and evaluation reports.
//!
//! Every dataset is read from one canonical JSONL schema:
//!
//! ```json
//! {"id": "...", "document": "...", "summary": "...",
//!  "source_system": "BERTS2S", "word_labels": [0, 1, 0],
//!  "summary_label": 0.66, "category_labels": ["EntE", "OutE"]}
//! ```
//!
//! `summary_label` may also be a list of annotator ratings (averaged on
//! load) and `category_labels` a list of per-annotator lists (majority vote
//! on load).

mod metrics;
mod report;

pub use metrics::{pearson, token_f1, Confusion, F1Report};
pub use report::{
    category_evaluate, emit_histogram, evaluate_dataset, report_from_scores, CategoryEvaluation,
    CategoryRow, EvaluationReport, Histogram, HistogramBin, HISTOGRAM_BINS,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split name used when a record has no `source_system`.
pub const DEFAULT_SPLIT: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExample")]
pub struct AnnotatedExample {
    pub id: String,
    pub document: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_system: Option<String>,
    /// Per summary word; 1 = inconsistent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_label: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_labels: Option<BTreeSet<String>>,
}

impl AnnotatedExample {
    pub fn split(&self) -> &str {
        self.source_system.as_deref().unwrap_or(DEFAULT_SPLIT)
    }

    pub fn num_words(&self) -> usize {
        self.summary.split_whitespace().count()
    }

    /// Word labels as booleans (true = inconsistent).
    pub fn inconsistent_words(&self) -> Option<Vec<bool>> {
        self.word_labels
            .as_ref()
            .map(|l| l.iter().map(|&x| x == 1).collect())
    }

    pub fn has_category(&self, name: &str) -> bool {
        self.category_labels
            .as_ref()
            .is_some_and(|c| c.contains(name))
    }

    pub fn validate(&self) -> Result<()> {
        let align = |message: String| Error::Alignment {
            line: None,
            message,
        };
        if self.document.trim().is_empty() || self.summary.trim().is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(labels) = &self.word_labels {
            let n = self.num_words();
            if labels.len() != n {
                return Err(align(format!(
                    "`{}` has {} word labels for {n} summary words",
                    self.id,
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(align(format!("`{}` has word label {bad}; expected 0 or 1", self.id)));
            }
        }
        if let Some(s) = self.summary_label {
            if !s.is_finite() {
                return Err(Error::shape(format!("`{}` has a non-finite summary label", self.id)));
            }
        }
        if self.word_labels.is_none() && self.summary_label.is_none() && self.category_labels.is_none() {
            return Err(Error::shape(format!("`{}` carries no labels", self.id)));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSummaryLabel {
    Score(f64),
    Flag(bool),
    Annotators(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCategories {
    Labels(Vec<String>),
    Annotators(Vec<Vec<String>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: String,
    document: String,
    summary: String,
    #[serde(default)]
    source_system: Option<String>,
    #[serde(default)]
    word_labels: Option<Vec<u8>>,
    #[serde(default)]
    summary_label: Option<RawSummaryLabel>,
    #[serde(default)]
    category_labels: Option<RawCategories>,
}

impl TryFrom<RawExample> for AnnotatedExample {
    type Error = String;

    fn try_from(raw: RawExample) -> std::result::Result<Self, String> {
        let summary_label = match raw.summary_label {
            None => None,
            Some(RawSummaryLabel::Score(s)) => Some(s),
            Some(RawSummaryLabel::Flag(b)) => Some(if b { 1.0 } else { 0.0 }),
            Some(RawSummaryLabel::Annotators(v)) if v.is_empty() => {
                return Err("summary_label has no annotator ratings".into())
            }
            Some(RawSummaryLabel::Annotators(v)) => Some(v.iter().sum::<f64>() / v.len() as f64),
        };
        let category_labels = match raw.category_labels {
            None => None,
            Some(RawCategories::Labels(v)) => Some(v.into_iter().collect()),
            Some(RawCategories::Annotators(per)) => Some(majority_vote(&per)),
        };
        Ok(Self {
            id: raw.id,
            document: raw.document,
            summary: raw.summary,
            source_system: raw.source_system,
            word_labels: raw.word_labels,
            summary_label,
            category_labels,
        })
    }
}

/// Categories named by strictly more than half of the annotators.
fn majority_vote(per_annotator: &[Vec<String>]) -> BTreeSet<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for labels in per_annotator {
        let unique: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
        for l in unique {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|&(_, c)| 2 * c > per_annotator.len())
        .map(|(l, _)| l.to_string())
        .collect()
}

/// Reads canonical JSONL. Blank lines are skipped; errors carry 1-based
/// line numbers.
pub fn load_dataset(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: AnnotatedExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|e| match e {
            Error::Alignment { message, .. } => Error::Alignment {
                line: Some(n + 1),
                message,
            },
            other => Error::Parse {
                line: n + 1,
                message: other.to_string(),
            },
        })?;
        out.push(ex);
    }
    if out.is_empty() {
        log::warn!("{} contains no records", path.display());
    }
    Ok(out)
}

/// Like [`load_dataset`], but every record must carry word labels.
pub fn load_token_dataset(path: &Path) -> Result<Vec<AnnotatedExample>> {
    let examples = load_dataset(path)?;
    if let Some((i, ex)) = examples.iter().enumerate().find(|(_, e)| e.word_labels.is_none()) {
        return Err(Error::Alignment {
            line: None,
            message: format!("record {} (`{}`) has no word_labels", i + 1, ex.id),
        });
    }
    Ok(examples)
}

pub fn write_dataset(path: &Path, examples: &[AnnotatedExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Example indices grouped by split.
pub fn splits(examples: &[AnnotatedExample]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        out.entry(ex.split().to_string()).or_default().push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_token_records_and_splits() {
        let f = write_lines(&[
            r#"{"id":"1","document":"d","summary":"a b","source_system":"PtGen","word_labels":[0,1]}"#,
            "",
            r#"{"id":"2","document":"d","summary":"c","source_system":"TranS2S","word_labels":[1]}"#,
            r#"{"id":"3","document":"d","summary":"e f g","source_system":"PtGen","word_labels":[0,0,0]}"#,
        ]);
        let ex = load_token_dataset(f.path()).unwrap();
        assert_eq!(ex.len(), 3);
        let s = splits(&ex);
        assert_eq!(s["PtGen"], vec![0, 2]);
        assert_eq!(s["TranS2S"], vec![1]);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let f = write_lines(&[]);
        assert!(load_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn short_labels_are_alignment_errors_with_line() {
        let f = write_lines(&[
            r#"{"id":"1","document":"d","summary":"a b","word_labels":[0,1]}"#,
            r#"{"id":"2","document":"d","summary":"a b c","word_labels":[0,1]}"#,
        ]);
        match load_dataset(f.path()) {
            Err(Error::Alignment { line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let f = write_lines(&[
            r#"{"id":"1","document":"d","summary":"a","summary_label":1}"#,
            r#"{"id":"2","document":"d""#,
        ]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 2, .. })));
        let f = write_lines(&[r#"{"id":"1","document":"d","summary":"a","extra":1,"summary_label":1}"#]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write_lines(&[r#"{"id":"1","document":"d","summary":"a"}"#]);
        assert!(matches!(load_dataset(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn token_loader_requires_word_labels() {
        let f = write_lines(&[r#"{"id":"1","document":"d","summary":"a","summary_label":0.5}"#]);
        assert!(load_dataset(f.path()).is_ok());
        assert!(matches!(load_token_dataset(f.path()), Err(Error::Alignment { .. })));
    }

    #[test]
    fn annotator_aggregation() {
        let f = write_lines(&[
            r#"{"id":"1","document":"d","summary":"a","summary_label":[1,0,0,1],"category_labels":[["EntE","OutE"],["EntE"],["CorefE"]]}"#,
            r#"{"id":"2","document":"d","summary":"a","summary_label":true,"category_labels":["OutE"]}"#,
        ]);
        let ex = load_dataset(f.path()).unwrap();
        assert_eq!(ex[0].summary_label, Some(0.5));
        assert_eq!(ex[0].category_labels, Some(BTreeSet::from(["EntE".to_string()])));
        assert_eq!(ex[1].summary_label, Some(1.0));
        assert!(ex[1].has_category("OutE"));
    }

    fn arb_example() -> impl Strategy<Value = AnnotatedExample> {
        (
            "[a-z0-9]{1,6}",
            prop::collection::vec("[a-zA-Z]{1,5}", 1..8),
            prop::option::of("[A-Za-z]{2,8}"),
            any::<bool>(),
            prop::option::of(-2.0f64..2.0),
            prop::option::of(prop::collection::btree_set("(EntE|CorefE|OutE)", 0..3)),
        )
            .prop_map(|(id, words, source, with_labels, summary_label, cats)| {
                let n = words.len();
                AnnotatedExample {
                    id,
                    document: "doc text here".into(),
                    summary: words.join(" "),
                    source_system: source,
                    word_labels: (with_labels || (summary_label.is_none() && cats.is_none()))
                        .then(|| (0..n).map(|i| (i % 2) as u8).collect()),
                    summary_label,
                    category_labels: cats,
                }
            })
    }

    proptest! {
        #[test]
        fn load_write_load_is_identity(examples in prop::collection::vec(arb_example(), 0..8)) {
            let dir = tempfile::tempdir().unwrap();
            let a = dir.path().join("a.jsonl");
            let b = dir.path().join("b.jsonl");
            write_dataset(&a, &examples).unwrap();
            let first = load_dataset(&a).unwrap();
            prop_assert_eq!(&first, &examples);
            write_dataset(&b, &first).unwrap();
            prop_assert_eq!(load_dataset(&b).unwrap(), first);
        }
    }
}
