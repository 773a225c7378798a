use std::fmt;
use std::path::{Path, PathBuf};

use pdiff::backend::registry::BackendConfig;
use pdiff::prompts::FactsConfig;
use pdiff::{ScoringConfig, ThresholdPolicy, TuningConfig};
use serde::{Deserialize, Serialize};

/// Configuration or validation problem; the process exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendConfig,
    pub scoring: ScoringConfig,
    pub threshold: ThresholdPolicy,
    pub tuning: Option<TuningConfig>,
    pub facts: FactsConfig,
    pub io: IoConfig,
}

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides and
    /// deserializes. Unknown keys are rejected.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // Round-trip through text so errors point at the offending key.
        let text = toml::to_string(&table).map_err(|e| invalid(e.to_string()))?;
        toml::from_str(&text).map_err(|e| invalid(format!("invalid configuration: {e}")))
    }

    /// Checks value ranges and that every input path exists.
    pub fn validate(&self) -> anyhow::Result<()> {
        let to_invalid = |e: pdiff::Error| invalid(e.to_string());
        self.scoring.validate().map_err(to_invalid)?;
        self.threshold.validate().map_err(to_invalid)?;
        if let Some(t) = &self.tuning {
            t.validate().map_err(to_invalid)?;
        }
        let inputs = [
            ("io.input", &self.io.input),
            ("io.dataset", &self.io.dataset),
            ("io.train", &self.io.train),
            ("io.valid", &self.io.valid),
            ("io.scores", &self.io.scores),
            ("scoring.prompt_vector", &self.scoring.prompt_vector),
            ("facts.cache", &self.facts.cache),
        ];
        for (key, path) in inputs {
            if let Some(p) = path {
                if p.as_os_str() != "-" && !p.exists() {
                    return Err(invalid(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("--set expects section.key=value, got `{spec}`")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("--set: malformed key `{key}`")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("--set {key}: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pdiff::PromptVariant;

    #[test]
    fn defaults_without_file() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.backend.name, "toy");
    }

    #[test]
    fn overrides_are_typed() {
        let c = RunConfig::load(
            None,
            &[
                "scoring.prompt_variant=entity".into(),
                "threshold.mode=proportion".into(),
                "threshold.target_rate=0.25".into(),
                "backend.name=toy".into(),
                "backend.params.copy_mass=0.3".into(),
                "seed=7".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.scoring.prompt_variant, PromptVariant::Entity);
        assert_eq!(c.threshold, ThresholdPolicy::Proportion { target_rate: 0.25 });
        assert_eq!(c.backend.params["copy_mass"].as_float(), Some(0.3));
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::load(None, &["scoring.promt_variant=base".into()]).unwrap_err();
        assert!(err.downcast_ref::<Invalid>().is_some());
        assert!(err.to_string().contains("promt_variant"), "{err}");
    }

    #[test]
    fn missing_input_path_fails_validation() {
        let c = RunConfig::load(None, &["io.dataset=/definitely/not/here.jsonl".into()]).unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("io.dataset"));
    }

    #[test]
    fn file_and_overrides_combine() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "seed = 3\n[backend]\nname = \"toy-embedding\"\n[backend.params]\nvocab_size = 32\n[tuning]\nprompt_length = 40\n",
        )
        .unwrap();
        let c = RunConfig::load(Some(&p), &["tuning.learning_rate=0.01".into()]).unwrap();
        assert_eq!(c.seed, 3);
        let t = c.tuning.unwrap();
        assert_eq!(t.prompt_length, 40);
        assert_eq!(t.learning_rate, 0.01);
    }
}
