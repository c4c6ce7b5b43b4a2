//! Fixed word-level vocabulary for the toy model.
//!
//! Text is lower-cased and split on whitespace; leading and trailing
//! punctuation is peeled off into separate tokens. Words absent from the
//! vocabulary map to `<unk>`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";

/// Digits reserved as single-token answer options.
pub const OPTION_WORDS: [&str; 4] = ["0", "1", "2", "3"];

const PUNCT: &[char] = &['.', ',', '?', '!', ':', ';', '(', ')', '"', '\'', '[', ']', '{', '}'];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary with `<unk>`, `<bos>` and the option digits at
    /// ids 0..6, followed by every distinct word of `words` in first-seen
    /// order.
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [UNK, BOS].into_iter().chain(OPTION_WORDS) {
            vocab.insert(w);
        }
        for w in words {
            vocab.insert(w.as_ref());
        }
        vocab
    }

    /// Builds a vocabulary covering every token produced by `split_words` on
    /// each text.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut words = Vec::new();
        for t in texts {
            words.extend(split_words(t));
        }
        Self::build(words)
    }

    fn insert(&mut self, word: &str) {
        let word = word.to_lowercase();
        if !self.index.contains_key(&word) {
            self.index.insert(word.clone(), self.words.len() as u32);
            self.words.push(word);
        }
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(&word.to_lowercase()).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn unk(&self) -> u32 {
        self.index[UNK]
    }

    pub fn bos(&self) -> u32 {
        self.index[BOS]
    }

    /// Token id of the answer digit `score` (0..=3).
    pub fn option_token(&self, score: usize) -> u32 {
        self.index[OPTION_WORDS[score]]
    }

    pub fn option_tokens(&self) -> [u32; 4] {
        [0, 1, 2, 3].map(|s| self.option_token(s))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Tokenizes `text` without a leading `<bos>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let unk = self.unk();
        split_words(text)
            .into_iter()
            .map(|w| self.index.get(&w).copied().unwrap_or(unk))
            .collect()
    }
}

/// Splits text into lower-case word and punctuation tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let raw = raw.to_lowercase();
        let mut start = 0;
        let chars: Vec<char> = raw.chars().collect();
        let mut end = chars.len();
        let mut leading = Vec::new();
        while start < end && PUNCT.contains(&chars[start]) {
            leading.push(chars[start].to_string());
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && PUNCT.contains(&chars[end - 1]) {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        out.extend(leading);
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            split_words("Reddit Post: I've been sad. Answer:"),
            vec!["reddit", "post", ":", "i've", "been", "sad", ".", "answer", ":"]
        );
        assert_eq!(split_words("(i.e., it"), vec!["(", "i.e", ".", ",", "it"]);
    }

    #[test]
    fn reserved_ids_are_stable() {
        let v = Vocabulary::build(["hello", "world", "hello"]);
        assert_eq!(v.unk(), 0);
        assert_eq!(v.bos(), 1);
        assert_eq!(v.option_tokens(), [2, 3, 4, 5]);
        assert_eq!(v.len(), 8);
        assert_eq!(v.encode("Hello there world"), vec![6, 0, 7]);
    }

    #[test]
    fn reindex_after_serde() {
        let v = Vocabulary::build(["a", "b"]);
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocabulary = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back, v);
    }
}
