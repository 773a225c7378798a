//! Backend construction by name.
//!
//! Configuration names a backend with `backend.name` and passes
//! `backend.params` through untouched. Adapters for pretrained checkpoints
//! register a factory under their own name; nothing in this crate refers to
//! a specific checkpoint.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Backend, EmbeddingToyBackend, EmbeddingToyParams, ToyBackend, ToyModelParams};
use crate::error::{Error, Result};

/// Environment variable pointing adapters at their model cache.
pub const CACHE_DIR_ENV: &str = "PDIFF_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    #[serde(default)]
    pub params: toml::Table,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let mut params = toml::Table::new();
        params.insert("copy_mass".into(), toml::Value::Float(0.5));
        params.insert("vocab_size".into(), toml::Value::Integer(50_000));
        Self {
            name: "toy".into(),
            params,
        }
    }
}

/// Context handed to every factory.
#[derive(Debug, Clone)]
pub struct BuildContext {
    /// Global seed; seeded backends use it unless their params override it.
    pub seed: u64,
    pub cache_dir: Option<PathBuf>,
}

impl BuildContext {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            cache_dir: std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from),
        }
    }
}

pub type BackendFactory = fn(&toml::Table, &BuildContext) -> Result<Arc<dyn Backend>>;

pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("toy", build_toy);
        r.register("toy-embedding", build_toy_embedding);
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &str, factory: BackendFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, config: &BackendConfig, ctx: &BuildContext) -> Result<Arc<dyn Backend>> {
        let factory = self.factories.get(&config.name).ok_or_else(|| {
            Error::config(format!(
                "backend.name: unknown backend `{}` (available: {})",
                config.name,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        factory(&config.params, ctx)
    }
}

fn params_as<T: serde::de::DeserializeOwned>(params: &toml::Table, backend: &str) -> Result<T> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e| Error::config(format!("backend.params for `{backend}`: {e}")))
}

fn build_toy(params: &toml::Table, _ctx: &BuildContext) -> Result<Arc<dyn Backend>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        copy_mass: f64,
        vocab_size: usize,
        #[serde(default)]
        max_encoder_length: Option<usize>,
    }
    let raw: Raw = params_as(params, "toy")?;
    let mut backend = ToyBackend::new(ToyModelParams::new(raw.copy_mass, raw.vocab_size)?)?;
    if let Some(max) = raw.max_encoder_length {
        backend = backend.with_max_encoder_length(max)?;
    }
    Ok(Arc::new(backend))
}

fn build_toy_embedding(params: &toml::Table, ctx: &BuildContext) -> Result<Arc<dyn Backend>> {
    let mut table = params.clone();
    if !table.contains_key("seed") {
        table.insert("seed".into(), toml::Value::Integer(ctx.seed as i64));
    }
    let p: EmbeddingToyParams = params_as(&table, "toy-embedding")?;
    Ok(Arc::new(EmbeddingToyBackend::new(p)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_builtin_backends() {
        let reg = BackendRegistry::default();
        let ctx = BuildContext::new(3);
        let toy = reg.build(&BackendConfig::default(), &ctx).unwrap();
        assert_eq!(toy.name(), "toy");
        assert!(toy.differentiable().is_none());

        let emb = reg
            .build(
                &BackendConfig {
                    name: "toy-embedding".into(),
                    params: toml::from_str("vocab_size = 20\ndim = 4").unwrap(),
                },
                &ctx,
            )
            .unwrap();
        assert!(emb.differentiable().is_some());
        assert_eq!(emb.capabilities().vocab_size, 20);
    }

    #[test]
    fn global_seed_reaches_seeded_backends() {
        let reg = BackendRegistry::default();
        let cfg = BackendConfig {
            name: "toy-embedding".into(),
            params: toml::from_str("vocab_size = 20\ndim = 4").unwrap(),
        };
        let a = reg.build(&cfg, &BuildContext::new(1)).unwrap();
        let b = reg.build(&cfg, &BuildContext::new(1)).unwrap();
        let c = reg.build(&cfg, &BuildContext::new(2)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn unknown_names_and_params_are_config_errors() {
        let reg = BackendRegistry::default();
        let ctx = BuildContext::new(0);
        let err = reg
            .build(
                &BackendConfig {
                    name: "bart-large".into(),
                    params: Default::default(),
                },
                &ctx,
            )
            .err()
            .unwrap();
        assert!(err.to_string().contains("bart-large"));
        let err = reg
            .build(
                &BackendConfig {
                    name: "toy".into(),
                    params: toml::from_str("copy_mass = 0.5\nvocab_size = 9\nbogus = 1").unwrap(),
                },
                &ctx,
            )
            .err()
            .unwrap();
        assert!(err.to_string().contains("bogus"));
    }
}
