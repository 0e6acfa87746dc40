//! Lowercasing whitespace-plus-punctuation tokenizer with a corpus-built
//! vocabulary and an `<unk>` fallback.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::RtaError;

pub const UNK_TOKEN: &str = "<unk>";

pub type TokenId = usize;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

/// Splits lowercased text into word and single-punctuation pieces.
pub fn split_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl Tokenizer {
    /// Builds a vocabulary from an iterator of corpus texts. Word ids are
    /// assigned in first-seen order after the reserved `<unk>` slot.
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>) -> Self {
        let mut tok = Tokenizer { words: vec![UNK_TOKEN.to_string()], index: HashMap::new() };
        tok.index.insert(UNK_TOKEN.to_string(), 0);
        for text in texts {
            for piece in split_pieces(text) {
                if !tok.index.contains_key(&piece) {
                    tok.index.insert(piece.clone(), tok.words.len());
                    tok.words.push(piece);
                }
            }
        }
        tok
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn unk_id(&self) -> TokenId {
        0
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split_pieces(text)
            .into_iter()
            .map(|p| self.index.get(&p).copied().unwrap_or(0))
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.words.get(t).map(String::as_str).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn token_str(&self, id: TokenId) -> &str {
        &self.words[id]
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RtaError> {
        let mut f = std::fs::File::create(path)?;
        for w in &self.words {
            writeln!(f, "{w}")?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RtaError> {
        let f = std::fs::File::open(path)?;
        let mut words = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            words.push(line?);
        }
        if words.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(RtaError::Format(format!(
                "vocab file {} missing <unk> header",
                path.display()
            )));
        }
        let index = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        Ok(Tokenizer { words, index })
    }
}
