//! Prompt text for the second inference pass.
//!
//! The base prompt is the candidate summary itself. Category variants add
//! fact information: the entity variant appends the summary's entity list,
//! the coreference variant inserts each resolved referent right after its
//! pronoun.

mod facts;

pub use facts::{
    extract_entities, resolve_pronouns, summary_hash, CachedFacts, CorefProvider, EntityProvider,
    FactCache, FactProviders, FactsConfig, PronounListCoref, RuleBasedEntities, PRONOUNS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between the summary and the appended entity list.
pub const ENTITY_LIST_SEPARATOR: &str = " | ";
/// Separator between entities in the appended list.
pub const ENTITY_JOINER: &str = "; ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    None,
    #[default]
    Base,
    Entity,
    Coref,
}

impl PromptVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptVariant::None => "none",
            PromptVariant::Base => "base",
            PromptVariant::Entity => "entity",
            PromptVariant::Coref => "coref",
        }
    }
}

impl std::fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PromptVariant::None),
            "base" => Ok(PromptVariant::Base),
            "entity" => Ok(PromptVariant::Entity),
            "coref" => Ok(PromptVariant::Coref),
            other => Err(Error::config(format!("unknown prompt variant `{other}`"))),
        }
    }
}

/// Entity mention over summary words `start..end` (end exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// Resolved referent for the pronoun at word index `pronoun`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefLink {
    pub pronoun: usize,
    pub referent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptSpec {
    pub variant: PromptVariant,
    #[serde(default)]
    pub entity_spans: Vec<EntitySpan>,
    #[serde(default)]
    pub coref_links: Vec<CorefLink>,
}

impl PromptSpec {
    pub fn base() -> Self {
        Self::of(PromptVariant::Base)
    }

    pub fn of(variant: PromptVariant) -> Self {
        Self {
            variant,
            ..Default::default()
        }
    }

    pub fn entity(spans: Vec<EntitySpan>) -> Self {
        Self {
            variant: PromptVariant::Entity,
            entity_spans: spans,
            coref_links: Vec::new(),
        }
    }

    pub fn coref(links: Vec<CorefLink>) -> Self {
        Self {
            variant: PromptVariant::Coref,
            entity_spans: Vec::new(),
            coref_links: links,
        }
    }

    /// Checks the spec against a summary of `num_words` words.
    pub fn validate(&self, num_words: usize) -> Result<()> {
        if self.variant == PromptVariant::None
            && (!self.entity_spans.is_empty() || !self.coref_links.is_empty())
        {
            return Err(Error::config("variant `none` carries no facts"));
        }
        validate_spans(&self.entity_spans, num_words)?;
        let mut seen = std::collections::BTreeSet::new();
        for link in &self.coref_links {
            if link.pronoun >= num_words {
                return Err(Error::config(format!(
                    "pronoun index {} outside summary of {num_words} words",
                    link.pronoun
                )));
            }
            if !seen.insert(link.pronoun) {
                return Err(Error::config(format!(
                    "pronoun index {} linked twice",
                    link.pronoun
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_spans(spans: &[EntitySpan], num_words: usize) -> Result<()> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut prev_end = 0;
    for s in sorted {
        if s.start >= s.end || s.end > num_words {
            return Err(Error::config(format!(
                "entity span {}..{} invalid for summary of {num_words} words",
                s.start, s.end
            )));
        }
        if s.start < prev_end {
            return Err(Error::config(format!(
                "entity span {}..{} overlaps a previous span",
                s.start, s.end
            )));
        }
        prev_end = s.end;
    }
    Ok(())
}

/// Fact information attached to a summary.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FactAnnotation {
    #[serde(default)]
    pub entity_spans: Vec<EntitySpan>,
    #[serde(default)]
    pub pronoun_indices: Vec<usize>,
    #[serde(default)]
    pub coref_links: Vec<CorefLink>,
}

impl FactAnnotation {
    pub fn validate(&self, num_words: usize) -> Result<()> {
        validate_spans(&self.entity_spans, num_words)?;
        if let Some(&i) = self.pronoun_indices.iter().find(|&&i| i >= num_words) {
            return Err(Error::config(format!("pronoun index {i} out of range")));
        }
        if let Some(l) = self
            .coref_links
            .iter()
            .find(|l| !self.pronoun_indices.contains(&l.pronoun))
        {
            return Err(Error::config(format!(
                "coref link at word {} is not a listed pronoun",
                l.pronoun
            )));
        }
        Ok(())
    }
}

/// Prompt text plus whether the requested variant had to fall back to base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub text: String,
    pub fell_back_to_base: bool,
}

pub fn build_prompt(summary: &str, spec: &PromptSpec) -> Result<BuiltPrompt> {
    let words: Vec<&str> = summary.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    spec.validate(words.len())?;
    let built = |text: String, fell_back_to_base| BuiltPrompt {
        text,
        fell_back_to_base,
    };
    Ok(match spec.variant {
        PromptVariant::None => built(String::new(), false),
        PromptVariant::Base => built(summary.to_string(), false),
        PromptVariant::Entity if spec.entity_spans.is_empty() => {
            log::warn!("entity prompt requested without entities; using the base prompt");
            built(summary.to_string(), true)
        }
        PromptVariant::Entity => {
            let mut ordered: Vec<&EntitySpan> = spec.entity_spans.iter().collect();
            ordered.sort_by_key(|s| s.start);
            let mut surfaces: Vec<&str> = Vec::new();
            for s in ordered {
                if !surfaces.contains(&s.surface.as_str()) {
                    surfaces.push(&s.surface);
                }
            }
            built(
                format!(
                    "{summary}{ENTITY_LIST_SEPARATOR}{}",
                    surfaces.join(ENTITY_JOINER)
                ),
                false,
            )
        }
        PromptVariant::Coref => {
            let mut out: Vec<String> = Vec::with_capacity(words.len());
            for (i, w) in words.iter().enumerate() {
                match spec.coref_links.iter().find(|l| l.pronoun == i) {
                    Some(link) => {
                        // Insert before trailing punctuation: "him." -> "him (X)."
                        let cut = w
                            .char_indices()
                            .rev()
                            .take_while(|(_, c)| !c.is_alphanumeric())
                            .last()
                            .map_or(w.len(), |(idx, _)| idx);
                        out.push(format!("{} ({}){}", &w[..cut], link.referent, &w[cut..]));
                    }
                    None => out.push((*w).to_string()),
                }
            }
            built(out.join(" "), false)
        }
    })
}
