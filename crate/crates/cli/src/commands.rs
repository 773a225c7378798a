use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, ValueEnum};
use pdiff::backend::registry::{BackendRegistry, BuildContext};
use pdiff::evaldata::{self, load_dataset, load_token_dataset, EvaluationReport};
use pdiff::prompts::FactProviders;
use pdiff::scoring::{ScoreErrorRecord, ScoreInput, ScoreOutput, ScoreRecord};
use pdiff::tuning::{self, load_vector, save_vector, TrainingOutcome};
use pdiff::{Backend, Category, Scorer, TuningConfig};

use crate::config::{invalid, RunConfig};

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Input JSONL of {id, document, summary}; `-` for stdin.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output JSONL; `-` or omitted for stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Load a prompt vector even if its backend fingerprint differs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Annotated dataset (canonical JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Category evaluations to run: EntE, CorefE, OutE or `all`.
    #[arg(long, value_delimiter = ',')]
    category: Vec<String>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Row label in the tables.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Length-40 vector on the full training set.
    FullShot,
    /// Length-5 vector on the first 300 training examples.
    FewShot,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Where to write the best vector.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-epoch trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train one vector per length.
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Score JSONL written by `score`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
}

const FEW_SHOT_EXAMPLES: usize = 300;

fn build_backend(cfg: &RunConfig) -> anyhow::Result<Arc<dyn Backend>> {
    let backend = BackendRegistry::default().build(&cfg.backend, &BuildContext::new(cfg.seed))?;
    log::info!("backend {} ({})", backend.name(), backend.fingerprint());
    Ok(backend)
}

fn build_scorer<'a>(cfg: &RunConfig, backend: &'a dyn Backend, force: bool) -> anyhow::Result<Scorer<'a>> {
    let facts = FactProviders::from_config(&cfg.facts)?;
    let mut scorer = Scorer::new(backend, cfg.scoring.clone())?.with_facts(facts);
    if let Some(path) = &cfg.scoring.prompt_vector {
        let v = load_vector(path, backend, force)
            .with_context(|| format!("loading prompt vector {}", path.display()))?;
        scorer.set_prompt_vector(Some(v))?;
    }
    Ok(scorer)
}

fn require(path: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    path.clone()
        .ok_or_else(|| invalid(format!("{what} is required (flag or io section)")))
}

fn writer_for(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) if p.as_os_str() == "-" => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
    })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn default_model(scorer: &Scorer<'_>) -> String {
    if scorer.prompt_vector().is_some() {
        "prompt-vector".into()
    } else {
        "zero-shot".into()
    }
}

fn parse_categories(raw: &[String]) -> anyhow::Result<Vec<Category>> {
    let mut out = Vec::new();
    for r in raw {
        if r.eq_ignore_ascii_case("all") {
            out.extend(Category::ALL);
        } else {
            out.push(r.parse::<Category>()?);
        }
    }
    out.dedup();
    Ok(out)
}

enum Line {
    Pair(ScoreInput),
    Broken(ScoreErrorRecord),
}

pub fn score(mut cfg: RunConfig, args: ScoreArgs) -> anyhow::Result<()> {
    if args.input.is_some() {
        cfg.io.input = args.input;
    }
    if args.output.is_some() {
        cfg.io.output = args.output;
    }
    cfg.validate()?;
    if args.workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    let backend = build_backend(&cfg)?;
    let scorer = build_scorer(&cfg, backend.as_ref(), args.force)?;

    let reader: Box<dyn BufRead> = match cfg.io.input.as_deref() {
        None => Box::new(BufReader::new(io::stdin().lock())),
        Some(p) if p.as_os_str() == "-" => Box::new(BufReader::new(io::stdin().lock())),
        Some(p) => Box::new(BufReader::new(File::open(p)?)),
    };
    let mut lines = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(match serde_json::from_str::<ScoreInput>(&line) {
            Ok(pair) => Line::Pair(pair),
            Err(e) => Line::Broken(ScoreErrorRecord {
                id: format!("line {}", n + 1),
                error: format!("malformed input: {e}"),
            }),
        });
    }
    let pairs: Vec<ScoreInput> = lines
        .iter()
        .filter_map(|l| match l {
            Line::Pair(p) => Some(p.clone()),
            Line::Broken(_) => None,
        })
        .collect();
    let mut scored = scorer.run_batch(&pairs, &cfg.threshold, args.workers)?.into_iter();

    let mut out = writer_for(cfg.io.output.as_deref())?;
    let mut failures = 0;
    for line in lines {
        let record = match line {
            Line::Pair(_) => scored.next().expect("one output per pair"),
            Line::Broken(e) => ScoreOutput::Failed(e),
        };
        if let ScoreOutput::Failed(f) = &record {
            failures += 1;
            log::warn!("{}: {}", f.id, f.error);
        }
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    if failures > 0 {
        log::warn!("{failures} record(s) failed");
    }
    Ok(())
}

fn print_summary(report: &EvaluationReport) {
    let mut parts = Vec::new();
    if let Some(f1) = report.corpus_f1 {
        parts.push(format!("corpus F1 {:.2}", 100.0 * f1));
    }
    if let Some(f1) = report.average_f1 {
        parts.push(format!("average split F1 {:.2}", 100.0 * f1));
    }
    for (name, r) in &report.pearson {
        parts.push(format!("Pearson[{name}] {:.2}", 100.0 * r));
    }
    for (name, r) in &report.category_pearson {
        parts.push(format!("Pearson[{name}] {:.2}", 100.0 * r));
    }
    if let Some(t) = report.threshold_used {
        parts.push(format!("threshold {t:.4}"));
    }
    if parts.is_empty() {
        parts.push("no metrics".into());
    }
    println!("{}: {}", report.model, parts.join(" | "));
}

pub fn evaluate(mut cfg: RunConfig, args: EvaluateArgs) -> anyhow::Result<()> {
    if args.dataset.is_some() {
        cfg.io.dataset = args.dataset;
    }
    if args.report_dir.is_some() {
        cfg.io.report_dir = args.report_dir;
    }
    cfg.validate()?;
    let categories = parse_categories(&args.category)?;
    let dataset_path = require(&cfg.io.dataset, "--dataset")?;
    let examples = load_dataset(&dataset_path)?;
    let backend = build_backend(&cfg)?;
    let scorer = build_scorer(&cfg, backend.as_ref(), args.force)?;
    let model = args.model.unwrap_or_else(|| default_model(&scorer));

    let report = evaldata::evaluate_dataset(
        &examples,
        &scorer,
        &cfg.threshold,
        &categories,
        &dataset_name(&dataset_path),
        &model,
        args.workers.max(1),
    )?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    write_report(&report, cfg.io.report_dir.as_deref())?;
    print_summary(&report);
    Ok(())
}

fn write_report(report: &EvaluationReport, dir: Option<&Path>) -> anyhow::Result<()> {
    let dir = dir.unwrap_or(Path::new("report"));
    std::fs::create_dir_all(dir)?;
    report.write_json(&dir.join("report.json"))?;
    EvaluationReport::write_tables(std::slice::from_ref(report), dir)?;
    log::info!("report written to {}", dir.display());
    Ok(())
}

fn suffixed(path: &Path, length: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-len{length}.{}", ext.to_string_lossy()),
        None => format!("{stem}-len{length}"),
    };
    path.with_file_name(name)
}

fn write_trace(path: &Path, outcome: &TrainingOutcome) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in &outcome.trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn tune(mut cfg: RunConfig, args: TuneArgs) -> anyhow::Result<()> {
    if args.train.is_some() {
        cfg.io.train = args.train;
    }
    if args.valid.is_some() {
        cfg.io.valid = args.valid;
    }
    if args.checkpoint.is_some() {
        cfg.io.checkpoint = args.checkpoint;
    }
    if args.trace.is_some() {
        cfg.io.trace = args.trace;
    }
    let mut tuning = match (cfg.tuning.take(), args.preset) {
        (Some(t), _) => t,
        (None, Some(_)) => TuningConfig::default(),
        (None, None) => return Err(invalid("[tuning] section is required (or pass --preset)")),
    };
    match args.preset {
        Some(Preset::FullShot) => tuning.prompt_length = 40,
        Some(Preset::FewShot) => tuning.prompt_length = 5,
        None => {}
    }
    tuning.seed = tuning.seed.or(Some(cfg.seed));
    cfg.tuning = Some(tuning.clone());
    cfg.validate()?;

    // Capabilities first, so nothing is loaded for a backend that cannot train.
    let backend = build_backend(&cfg)?;
    let caps = backend.capabilities();
    if backend.differentiable().is_none() || !caps.supports_gradients || !caps.supports_embedding_injection {
        return Err(pdiff::Error::Capability(format!(
            "backend `{}` cannot train prompt vectors (needs embedding injection and gradients)",
            backend.name()
        ))
        .into());
    }
    let scorer = build_scorer(&cfg, backend.as_ref(), args.force)?;

    let mut train = load_token_dataset(&require(&cfg.io.train, "--train")?)?;
    let valid = match &cfg.io.valid {
        Some(p) => load_token_dataset(p)?,
        None => Vec::new(),
    };
    if matches!(args.preset, Some(Preset::FewShot)) && train.len() > FEW_SHOT_EXAMPLES {
        train.truncate(FEW_SHOT_EXAMPLES);
    }
    let init = match &args.resume {
        Some(p) => Some(load_vector(p, backend.as_ref(), args.force)?),
        None => None,
    };
    let checkpoint = cfg.io.checkpoint.clone().unwrap_or_else(|| "prompt_vector.json".into());
    let trace = cfg.io.trace.clone().unwrap_or_else(|| "trace.csv".into());

    let outcomes: Vec<(usize, TrainingOutcome)> = if args.lengths.is_empty() {
        let o = tuning::train_prompt_vector(&scorer, &cfg.threshold, &tuning, &train, &valid, init)?;
        vec![(o.vector.length(), o)]
    } else {
        if init.is_some() {
            return Err(invalid("--resume cannot be combined with --lengths"));
        }
        tuning::sweep_lengths(&scorer, &cfg.threshold, &tuning, &args.lengths, &train, &valid)?
            .into_iter()
            .map(|o| (o.vector.length(), o))
            .collect()
    };
    let sweep = !args.lengths.is_empty();
    for (length, outcome) in &outcomes {
        let (ckpt, tr) = if sweep {
            (suffixed(&checkpoint, *length), suffixed(&trace, *length))
        } else {
            (checkpoint.clone(), trace.clone())
        };
        save_vector(&ckpt, &outcome.vector, backend.as_ref())?;
        write_trace(&tr, outcome)?;
        println!(
            "length {length}: best validation F1 {:.2} at epoch {} ({} trainable parameters) -> {}",
            100.0 * outcome.best_validation_f1,
            outcome.best_epoch,
            outcome.trainable_parameters,
            ckpt.display()
        );
    }
    Ok(())
}

pub fn report(mut cfg: RunConfig, args: ReportArgs) -> anyhow::Result<()> {
    if args.scores.is_some() {
        cfg.io.scores = args.scores;
    }
    if args.dataset.is_some() {
        cfg.io.dataset = args.dataset;
    }
    if args.report_dir.is_some() {
        cfg.io.report_dir = args.report_dir;
    }
    cfg.validate()?;
    let dataset_path = require(&cfg.io.dataset, "--dataset")?;
    let scores_path = require(&cfg.io.scores, "--scores")?;
    let examples = load_dataset(&dataset_path)?;

    let mut text = String::new();
    File::open(&scores_path)?.read_to_string(&mut text)?;
    let mut records: Vec<ScoreRecord> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScoreOutput = serde_json::from_str(line).map_err(|e| pdiff::Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        match parsed {
            ScoreOutput::Scored(r) => records.push(r),
            ScoreOutput::Failed(f) => log::warn!("skipping failed record {}", f.id),
        }
    }
    let model = args.model.unwrap_or_else(|| "scores".into());
    let report = evaldata::report_from_scores(&examples, &records, &dataset_name(&dataset_path), &model)?;
    for note in &report.notes {
        log::warn!("{note}");
    }
    write_report(&report, cfg.io.report_dir.as_deref())?;
    print_summary(&report);
    Ok(())
}
