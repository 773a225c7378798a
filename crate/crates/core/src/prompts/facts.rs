//! Fact providers: entity extraction and pronoun resolution.
//!
//! Real NER / coreference systems plug in behind [`EntityProvider`] and
//! [`CorefProvider`], or hand their output over through a [`FactCache`]
//! file. The rule-based fallbacks are deterministic.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorefLink, EntitySpan, FactAnnotation};
use crate::error::{Error, Result};

/// Closed pronoun list used for pronoun detection.
pub const PRONOUNS: [&str; 11] = [
    "he", "she", "it", "they", "him", "her", "them", "his", "hers", "its", "their",
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "he", "she", "it", "they", "we", "i",
    "you", "his", "her", "its", "their", "our", "my", "your", "in", "on", "at", "of", "for", "to",
    "from", "by", "with", "as", "and", "but", "or", "if", "when", "while", "after", "before",
    "there", "here", "some", "many", "more", "most", "all", "no", "not", "one", "two", "three",
];

pub trait EntityProvider: Send + Sync {
    fn name(&self) -> &str;
    fn entities(&self, summary: &str) -> Result<Vec<EntitySpan>>;
}

pub trait CorefProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Pronoun word indices and whatever links the provider can resolve.
    fn resolve(&self, summary: &str) -> Result<(Vec<usize>, Vec<CorefLink>)>;
}

fn core(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn ends_sentence(word: &str) -> bool {
    let w = word.trim_end_matches(['"', '\'', ')', ']']);
    w.ends_with(['.', '!', '?'])
}

fn ends_run(word: &str) -> bool {
    word.ends_with(|c: char| !c.is_alphanumeric())
}

/// Runs of capitalized words. A lone stopword at the start of a sentence
/// ("The", "He", "A") is not an entity.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleBasedEntities;

impl EntityProvider for RuleBasedEntities {
    fn name(&self) -> &str {
        "rule"
    }

    fn entities(&self, summary: &str) -> Result<Vec<EntitySpan>> {
        let words: Vec<&str> = summary.split_whitespace().collect();
        let capitalized = |w: &str| core(w).chars().next().is_some_and(char::is_uppercase);
        let mut spans = Vec::new();
        let mut i = 0;
        while i < words.len() {
            if !capitalized(words[i]) {
                i += 1;
                continue;
            }
            let start = i;
            let mut end = i + 1;
            while end < words.len() && !ends_run(words[end - 1]) && capitalized(words[end]) {
                end += 1;
            }
            let sentence_initial = start == 0 || ends_sentence(words[start - 1]);
            let lone_stopword = end - start == 1
                && STOPWORDS.contains(&core(words[start]).to_lowercase().as_str());
            if !(sentence_initial && lone_stopword) {
                let surface = words[start..end]
                    .iter()
                    .map(|w| core(w))
                    .collect::<Vec<_>>()
                    .join(" ");
                spans.push(EntitySpan {
                    start,
                    end,
                    surface,
                });
            }
            i = end;
        }
        Ok(spans)
    }
}

/// Finds pronouns from [`PRONOUNS`]; resolves nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct PronounListCoref;

impl CorefProvider for PronounListCoref {
    fn name(&self) -> &str {
        "pronoun-list"
    }

    fn resolve(&self, summary: &str) -> Result<(Vec<usize>, Vec<CorefLink>)> {
        let idx = summary
            .split_whitespace()
            .enumerate()
            .filter(|(_, w)| PRONOUNS.contains(&core(w).to_lowercase().as_str()))
            .map(|(i, _)| i)
            .collect();
        Ok((idx, Vec::new()))
    }
}

/// Entity part of a [`FactAnnotation`] using the rule-based fallback.
pub fn extract_entities(summary: &str) -> Result<FactAnnotation> {
    if summary.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(FactAnnotation {
        entity_spans: RuleBasedEntities.entities(summary)?,
        ..Default::default()
    })
}

/// Coreference part of a [`FactAnnotation`] using the pronoun-list fallback.
pub fn resolve_pronouns(summary: &str) -> Result<FactAnnotation> {
    if summary.trim().is_empty() {
        return Err(Error::EmptyInput);
    }
    let (pronoun_indices, coref_links) = PronounListCoref.resolve(summary)?;
    Ok(FactAnnotation {
        pronoun_indices,
        coref_links,
        ..Default::default()
    })
}

/// Hex SHA-256 of the summary bytes; the fact-cache key.
pub fn summary_hash(summary: &str) -> String {
    hex::encode(Sha256::digest(summary.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheLine {
    summary_hash: String,
    #[serde(flatten)]
    facts: FactAnnotation,
}

/// Fact annotations keyed by [`summary_hash`], stored as JSONL.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactCache {
    entries: HashMap<String, FactAnnotation>,
}

impl FactCache {
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            entries.insert(parsed.summary_hash, parsed.facts);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            let line = CacheLine {
                summary_hash: k.clone(),
                facts: self.entries[k].clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn insert(&mut self, summary: &str, facts: FactAnnotation) {
        self.entries.insert(summary_hash(summary), facts);
    }

    pub fn get(&self, summary: &str) -> Option<&FactAnnotation> {
        self.entries.get(&summary_hash(summary))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Serves cached annotations and falls back to the rule-based providers.
pub struct CachedFacts {
    cache: FactCache,
}

impl CachedFacts {
    pub fn new(cache: FactCache) -> Self {
        Self { cache }
    }
}

impl EntityProvider for CachedFacts {
    fn name(&self) -> &str {
        "cache"
    }

    fn entities(&self, summary: &str) -> Result<Vec<EntitySpan>> {
        match self.cache.get(summary) {
            Some(f) => Ok(f.entity_spans.clone()),
            None => RuleBasedEntities.entities(summary),
        }
    }
}

impl CorefProvider for CachedFacts {
    fn name(&self) -> &str {
        "cache"
    }

    fn resolve(&self, summary: &str) -> Result<(Vec<usize>, Vec<CorefLink>)> {
        match self.cache.get(summary) {
            Some(f) => Ok((f.pronoun_indices.clone(), f.coref_links.clone())),
            None => PronounListCoref.resolve(summary),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactsConfig {
    pub ner_provider: String,
    pub coref_provider: String,
    /// JSONL fact cache, required by the `cache` providers.
    pub cache: Option<PathBuf>,
}

impl Default for FactsConfig {
    fn default() -> Self {
        Self {
            ner_provider: "rule".into(),
            coref_provider: "pronoun-list".into(),
            cache: None,
        }
    }
}

#[derive(Clone)]
pub struct FactProviders {
    pub entities: Arc<dyn EntityProvider>,
    pub coref: Arc<dyn CorefProvider>,
}

impl Default for FactProviders {
    fn default() -> Self {
        Self {
            entities: Arc::new(RuleBasedEntities),
            coref: Arc::new(PronounListCoref),
        }
    }
}

impl std::fmt::Debug for FactProviders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactProviders")
            .field("entities", &self.entities.name())
            .field("coref", &self.coref.name())
            .finish()
    }
}

impl FactProviders {
    pub fn from_config(cfg: &FactsConfig) -> Result<Self> {
        let cached = match (&cfg.cache, cfg.ner_provider == "cache" || cfg.coref_provider == "cache") {
            (Some(path), true) => Some(Arc::new(CachedFacts::new(FactCache::load(path)?))),
            (None, true) => {
                return Err(Error::config("facts.cache: required by the `cache` provider"))
            }
            _ => None,
        };
        let entities: Arc<dyn EntityProvider> = match cfg.ner_provider.as_str() {
            "rule" => Arc::new(RuleBasedEntities),
            "cache" => cached.clone().expect("cache loaded"),
            other => {
                return Err(Error::config(format!(
                    "facts.ner_provider: unknown provider `{other}` (available: rule, cache)"
                )))
            }
        };
        let coref: Arc<dyn CorefProvider> = match cfg.coref_provider.as_str() {
            "pronoun-list" => Arc::new(PronounListCoref),
            "cache" => cached.expect("cache loaded"),
            other => {
                return Err(Error::config(format!(
                    "facts.coref_provider: unknown provider `{other}` (available: pronoun-list, cache)"
                )))
            }
        };
        Ok(Self { entities, coref })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(text: &str) -> Vec<String> {
        extract_entities(text)
            .unwrap()
            .entity_spans
            .into_iter()
            .map(|s| s.surface)
            .collect()
    }

    #[test]
    fn republic_of_ireland() {
        let spans = extract_entities("the republic of Ireland").unwrap().entity_spans;
        assert_eq!(
            spans,
            vec![EntitySpan {
                start: 3,
                end: 4,
                surface: "Ireland".into()
            }]
        );
    }

    #[test]
    fn lowercase_text_has_no_entities() {
        assert!(surfaces("a search is under way for a missing man.").is_empty());
    }

    #[test]
    fn multiword_entity() {
        assert!(surfaces("the San Francisco court filing").contains(&"San Francisco".to_string()));
        assert!(surfaces("San Francisco court").contains(&"San Francisco".to_string()));
    }

    #[test]
    fn sentence_initial_stopwords_are_skipped() {
        assert_eq!(
            surfaces("The former chief executive of the San Francisco court, Charney, has been cleared."),
            vec!["San Francisco", "Charney"]
        );
        assert_eq!(surfaces("He was ousted. She left."), Vec::<String>::new());
        assert_eq!(
            surfaces("Uganda was knocked out by Uganda."),
            vec!["Uganda", "Uganda"]
        );
    }

    #[test]
    fn punctuation_breaks_runs() {
        assert_eq!(surfaces("in Dublin, Ireland today"), vec!["Dublin", "Ireland"]);
    }

    #[test]
    fn pronouns_from_closed_list() {
        assert_eq!(resolve_pronouns("He was ousted.").unwrap().pronoun_indices, vec![0]);
        assert_eq!(resolve_pronouns("They said he left.").unwrap().pronoun_indices, vec![0, 2]);
        assert!(resolve_pronouns("The board said.").unwrap().pronoun_indices.is_empty());
        assert!(resolve_pronouns("He left.").unwrap().coref_links.is_empty());
        assert!(matches!(resolve_pronouns(" "), Err(Error::EmptyInput)));
    }

    #[test]
    fn cache_round_trip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("facts.jsonl");
        let mut cache = FactCache::default();
        let facts = FactAnnotation {
            entity_spans: vec![],
            pronoun_indices: vec![0],
            coref_links: vec![CorefLink {
                pronoun: 0,
                referent: "Mr Charney".into(),
            }],
        };
        cache.insert("He was ousted.", facts.clone());
        cache.save(&path).unwrap();
        let loaded = FactCache::load(&path).unwrap();
        assert_eq!(loaded, cache);

        let providers = FactProviders::from_config(&FactsConfig {
            ner_provider: "rule".into(),
            coref_provider: "cache".into(),
            cache: Some(path),
        })
        .unwrap();
        let (idx, links) = providers.coref.resolve("He was ousted.").unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(links, facts.coref_links);
        let (idx, links) = providers.coref.resolve("They left.").unwrap();
        assert_eq!(idx, vec![0]);
        assert!(links.is_empty());
    }

    #[test]
    fn provider_config_errors() {
        let bad = FactsConfig {
            ner_provider: "spacy".into(),
            ..Default::default()
        };
        assert!(FactProviders::from_config(&bad).unwrap_err().to_string().contains("ner_provider"));
        let missing = FactsConfig {
            coref_provider: "cache".into(),
            ..Default::default()
        };
        assert!(FactProviders::from_config(&missing).is_err());
    }
}
