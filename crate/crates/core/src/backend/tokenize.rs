use std::collections::HashMap;
use std::sync::RwLock;

use super::{TokenId, TokenizedText};
use crate::error::{Error, Result};

pub(crate) const SEPARATOR: &str = "<sep>";
pub(crate) const UNKNOWN: &str = "<unk>";

/// Token-id assignment for the toy tokenizer.
#[derive(Debug)]
pub enum Vocabulary {
    /// Ids are handed out on first sight, up to `capacity`.
    Open {
        capacity: usize,
        table: RwLock<(HashMap<String, TokenId>, Vec<String>)>,
    },
    /// Fixed word list; anything else maps to `<unk>`.
    Closed {
        index: HashMap<String, TokenId>,
        words: Vec<String>,
    },
}

impl Vocabulary {
    /// Open vocabulary with `<sep>` pre-assigned to id 0.
    pub fn open(capacity: usize) -> Self {
        let words = vec![SEPARATOR.to_string()];
        let index = HashMap::from([(SEPARATOR.to_string(), 0)]);
        Vocabulary::Open {
            capacity,
            table: RwLock::new((index, words)),
        }
    }

    /// Closed vocabulary: ids 0 and 1 are `<sep>` and `<unk>`, then `words`
    /// in order (duplicates ignored).
    pub fn closed<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = vec![SEPARATOR.to_string(), UNKNOWN.to_string()];
        let mut index: HashMap<String, TokenId> =
            list.iter().enumerate().map(|(i, w)| (w.clone(), i as TokenId)).collect();
        for w in words {
            let w = w.into();
            if !index.contains_key(&w) {
                index.insert(w.clone(), list.len() as TokenId);
                list.push(w);
            }
        }
        Vocabulary::Closed { index, words: list }
    }

    pub fn len(&self) -> usize {
        match self {
            Vocabulary::Open { table, .. } => table.read().expect("vocabulary lock").1.len(),
            Vocabulary::Closed { words, .. } => words.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, piece: &str) -> Result<TokenId> {
        match self {
            Vocabulary::Closed { index, .. } => Ok(index.get(piece).copied().unwrap_or(1)),
            Vocabulary::Open { capacity, table } => {
                if let Some(&id) = table.read().expect("vocabulary lock").0.get(piece) {
                    return Ok(id);
                }
                let mut guard = table.write().expect("vocabulary lock");
                let (index, words) = &mut *guard;
                if let Some(&id) = index.get(piece) {
                    return Ok(id);
                }
                if words.len() >= *capacity {
                    return Err(Error::VocabularyExhausted(*capacity));
                }
                let id = words.len() as TokenId;
                index.insert(piece.to_string(), id);
                words.push(piece.to_string());
                Ok(id)
            }
        }
    }

    pub fn word(&self, id: TokenId) -> Option<String> {
        match self {
            Vocabulary::Open { table, .. } => {
                table.read().expect("vocabulary lock").1.get(id as usize).cloned()
            }
            Vocabulary::Closed { words, .. } => words.get(id as usize).cloned(),
        }
    }
}

/// Splits on whitespace, then splits each word into runs of word characters
/// (alphanumerics, `'`, `-`) and single punctuation characters.
#[derive(Debug)]
pub struct ToyTokenizer {
    vocab: Vocabulary,
}

impl ToyTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn separator(&self) -> TokenId {
        0
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedText> {
        let mut ids = Vec::new();
        let mut strings = Vec::new();
        let mut word_map = Vec::new();
        for (w, word) in text.split_whitespace().enumerate() {
            for piece in split_word(word) {
                ids.push(self.vocab.id(piece)?);
                strings.push(piece.to_string());
                word_map.push(w);
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        TokenizedText::new(ids, strings, word_map)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-' || c == '_'
}

pub(crate) fn split_word(word: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in word.char_indices() {
        if is_word_char(c) {
            start.get_or_insert(i);
        } else {
            if let Some(s) = start.take() {
                pieces.push(&word[s..i]);
            }
            pieces.push(&word[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        pieces.push(&word[s..]);
    }
    pieces
}
