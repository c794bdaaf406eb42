//! Canonical tokenizer shared by every metric: lowercase, detach punctuation
//! into separate tokens, collapse whitespace.

use serde::{Deserialize, Serialize};

/// Token sequence produced by [`tokenize`]. Identical raw text always yields
/// identical tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// All n-grams as joined strings, in order. Empty when the text has
    /// fewer than `n` tokens.
    pub fn ngrams(&self, n: usize) -> Vec<String> {
        if n == 0 || self.tokens.len() < n {
            return Vec::new();
        }
        self.tokens.windows(n).map(|w| w.join(" ")).collect()
    }
}

impl From<&str> for TokenizedText {
    fn from(raw: &str) -> Self {
        tokenize(raw)
    }
}

/// Lowercases, splits runs of alphanumeric characters into word tokens, and
/// emits every other non-whitespace character as its own token.
pub fn tokenize(raw: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            for low in ch.to_lowercase() {
                word.push(low);
            }
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenizedText { tokens }
}
