//! Term vocabulary and the deterministic text tokenizer.
//!
//! The vocabulary file is plain text with one term per line; the 0-based
//! line number is the term id. Tokenization lowercases the input, splits on
//! whitespace, and emits every punctuation character as its own token so
//! that punctuation can be listed in the vocabulary (and in stoplists) like
//! any other term. Surface tokens missing from the vocabulary are dropped.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TermId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    lookup: HashMap<String, TermId>,
}

impl Vocabulary {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        let mut lookup = HashMap::with_capacity(terms.len());
        for (i, term) in terms.iter().enumerate() {
            if term.is_empty() {
                return Err(Error::Data(format!("empty vocabulary term at id {i}")));
            }
            if lookup.insert(term.clone(), i as TermId).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary term {term:?}")));
            }
        }
        Ok(Self { terms, lookup })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut terms = Vec::new();
        let mut seen = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let term = line.trim_end_matches('\r');
            if term.is_empty() {
                return Err(Error::parse(path, lineno + 1, "empty vocabulary term"));
            }
            if let Some(first) = seen.insert(term.to_string(), lineno + 1) {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("duplicate term {term:?} (first on line {first})"),
                ));
            }
            terms.push(term.to_string());
        }
        Self::new(terms)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for term in &self.terms {
            out.push_str(term);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<TermId> {
        self.lookup.get(term).copied()
    }

    pub fn term(&self, id: TermId) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Vocabulary ids of an input text, in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<TermId>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[TermId] {
        &self.0
    }
}

/// Splits text into lowercase surface tokens: alphanumeric runs, with each
/// punctuation character standing alone.
pub fn surface_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() && !ch.is_control() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> TokenSequence {
    TokenSequence(
        surface_tokens(text)
            .iter()
            .filter_map(|t| vocab.id(t))
            .collect(),
    )
}
