//! Fixed word-level vocabulary. Token id 0 is the blank symbol; words get
//! ids 1..=N in file order.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// The blank output symbol.
pub const BLANK: u32 = 0;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for w in words {
            let w: String = w.into();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary word {:?}", w)));
            }
            if index.contains_key(&w) {
                return Err(Error::invalid(format!("duplicate vocabulary word {:?}", w)));
            }
            index.insert(w.clone(), (list.len() + 1) as u32);
            list.push(w);
        }
        if list.is_empty() {
            return Err(Error::invalid("vocabulary must contain at least one word"));
        }
        Ok(Vocabulary { words: list, index })
    }

    /// Reads one word per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let words: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self::from_words(words.into_iter().map(String::from))
    }

    /// Number of output symbols including blank.
    pub fn size(&self) -> usize {
        self.words.len() + 1
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        if id == BLANK {
            return None;
        }
        self.words.get(id as usize - 1).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn contains_id(&self, id: u32) -> bool {
        id != BLANK && (id as usize) <= self.words.len()
    }

    /// Whitespace tokenization against the vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::UnknownWord(w.to_string())))
            .collect()
    }

    /// Inverse of `tokenize`; unknown ids are an error.
    pub fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = tokens
            .iter()
            .map(|&t| self.word(t).ok_or(Error::UnknownToken(t)))
            .collect();
        Ok(words?.join(" "))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_roundtrip() {
        let v = Vocabulary::from_words(["play", "music", "stop"]).unwrap();
        assert_eq!(v.size(), 4);
        let toks = v.tokenize("stop play").unwrap();
        assert_eq!(toks, vec![3, 1]);
        assert_eq!(v.detokenize(&toks).unwrap(), "stop play");
    }

    #[test]
    fn unknown_word_is_error() {
        let v = Vocabulary::from_words(["play"]).unwrap();
        assert!(matches!(v.tokenize("nope"), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn duplicate_word_rejected() {
        assert!(Vocabulary::from_words(["a", "a"]).is_err());
    }

    #[test]
    fn blank_is_not_a_word() {
        let v = Vocabulary::from_words(["play"]).unwrap();
        assert_eq!(v.word(BLANK), None);
        assert!(!v.contains_id(BLANK));
        assert!(v.contains_id(1));
        assert!(!v.contains_id(2));
    }
}
