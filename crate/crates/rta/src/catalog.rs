//! Item universe: titles, tokenized title spans, descriptions, popularity
//! counts, a token trie for span location and constrained decoding, and fuzzy
//! title matching for the generative baseline.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tokenizer::{TokenId, Tokenizer};
use crate::RtaError;

pub type ItemId = usize;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    pub title_tokens: Vec<TokenId>,
    pub description: Option<String>,
    pub corpus_count: u64,
    pub platform_count: u64,
}

/// A located item mention inside a token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub length: usize,
    pub item_id: ItemId,
}

/// Prefix trie over title token sequences. `terminal` is set on the node that
/// ends exactly one item's title.
#[derive(Clone, Debug, Default)]
pub struct TokenTrie {
    children: HashMap<TokenId, TokenTrie>,
    terminal: Option<ItemId>,
}

impl TokenTrie {
    pub fn insert(&mut self, tokens: &[TokenId], id: ItemId) {
        let mut node = self;
        for &t in tokens {
            node = node.children.entry(t).or_default();
        }
        node.terminal = Some(id);
    }

    pub fn child(&self, token: TokenId) -> Option<&TokenTrie> {
        self.children.get(&token)
    }

    pub fn terminal(&self) -> Option<ItemId> {
        self.terminal
    }

    /// Tokens that extend the current prefix, sorted for determinism.
    pub fn next_tokens(&self) -> Vec<TokenId> {
        let mut v: Vec<TokenId> = self.children.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Longest title match starting at the beginning of `tokens`.
    pub fn longest_match(&self, tokens: &[TokenId]) -> Option<(usize, ItemId)> {
        let mut node = self;
        let mut best = None;
        for (i, &t) in tokens.iter().enumerate() {
            match node.child(t) {
                Some(child) => node = child,
                None => break,
            }
            if let Some(id) = node.terminal {
                best = Some((i + 1, id));
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct ItemCatalog {
    pub items: Vec<Item>,
    title_index: HashMap<String, ItemId>,
    trie: TokenTrie,
}

/// Lowercase, strip punctuation and a trailing parenthesized year.
pub fn normalize_title(title: &str) -> String {
    let mut s = title.to_lowercase();
    // drop a "(1999)"-style suffix before stripping the rest
    if let Some(open) = s.rfind('(') {
        let inner: String = s[open..].chars().filter(|c| c.is_ascii_digit()).collect();
        if inner.len() == 4 && s[open..].trim_end().ends_with(')') {
            s.truncate(open);
        }
    }
    s.chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Deserialize)]
struct ItemLine {
    #[allow(dead_code)]
    id: Option<usize>,
    title: String,
    description: Option<String>,
    corpus_count: Option<u64>,
}

impl ItemCatalog {
    pub fn new(items: Vec<Item>) -> Result<Self, RtaError> {
        let mut title_index = HashMap::new();
        let mut trie = TokenTrie::default();
        let mut collisions = Vec::new();
        for (i, item) in items.iter().enumerate() {
            assert_eq!(item.id, i, "item ids must be contiguous in order");
            if item.title_tokens.is_empty() {
                return Err(RtaError::Catalog(format!("item {i} has empty title tokens")));
            }
            let norm = normalize_title(&item.title);
            if norm.is_empty() {
                return Err(RtaError::Catalog(format!("item {i} has empty title")));
            }
            if title_index.insert(norm.clone(), item.id).is_some() {
                collisions.push(norm);
            }
            trie.insert(&item.title_tokens, item.id);
        }
        if !collisions.is_empty() {
            return Err(RtaError::Catalog(format!(
                "duplicate normalized titles: {}",
                collisions.join(", ")
            )));
        }
        Ok(ItemCatalog { items, title_index, trie })
    }

    /// Reads a JSONL item file; ids follow file order.
    pub fn build_catalog(items_file: &Path, tokenizer: &Tokenizer) -> Result<Self, RtaError> {
        let f = std::fs::File::open(items_file)?;
        let mut items = Vec::new();
        for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ItemLine = serde_json::from_str(&line).map_err(|e| {
                RtaError::Format(format!("{}:{}: {e}", items_file.display(), lineno + 1))
            })?;
            items.push(Item {
                id: items.len(),
                title_tokens: tokenizer.encode(&parsed.title),
                title: parsed.title,
                description: parsed.description,
                corpus_count: parsed.corpus_count.unwrap_or(0),
                platform_count: 0,
            });
        }
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn trie(&self) -> &TokenTrie {
        &self.trie
    }

    pub fn by_title(&self, title: &str) -> Option<ItemId> {
        self.title_index.get(&normalize_title(title)).copied()
    }

    /// Greedy left-to-right longest-match span location.
    pub fn locate_item_spans(&self, tokens: &[TokenId]) -> Vec<Span> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            if let Some((len, id)) = self.trie.longest_match(&tokens[i..]) {
                spans.push(Span { start: i, length: len, item_id: id });
                i += len;
            } else {
                i += 1;
            }
        }
        spans
    }

    /// Highest normalized-similarity item at or above `threshold`; ties break
    /// toward the smaller id.
    pub fn fuzzy_match(&self, title_text: &str, threshold: f64) -> Option<ItemId> {
        let query = normalize_title(title_text);
        let mut best: Option<(f64, ItemId)> = None;
        for item in &self.items {
            let cand = normalize_title(&item.title);
            let max_len = query.chars().count().max(cand.chars().count());
            let sim = if max_len == 0 {
                0.0
            } else {
                1.0 - edit_distance(&query, &cand) as f64 / max_len as f64
            };
            let better = match best {
                None => true,
                Some((s, _)) => sim > s,
            };
            if better {
                best = Some((sim, item.id));
            }
        }
        best.filter(|&(s, _)| s >= threshold).map(|(_, id)| id)
    }
}
