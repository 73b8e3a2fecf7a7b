//! Tokenized dialogue pairs and the id vocabulary.
//!
//! Corpus files are UTF-8, one "post<TAB>response" pair per line with
//! whitespace-separated tokens. The vocabulary always reserves five special
//! tokens at fixed ids 0-4.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SEP: u32 = 4;

pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";
pub const BOS_TOKEN: &str = "<BOS>";
pub const EOS_TOKEN: &str = "<EOS>";
pub const SEP_TOKEN: &str = "<SEP>";

pub const SPECIAL_TOKENS: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN];

pub fn is_special(id: u32) -> bool {
    id <= SEP
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialoguePair {
    pub post: Vec<String>,
    pub response: Vec<String>,
}

/// Token <-> id mapping; immutable after construction.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// Map tokens to ids; out-of-vocabulary tokens become UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.id_to_token.join("\n") + "\n";
        fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let id_to_token: Vec<String> = body.lines().map(|l| l.to_string()).collect();
        if id_to_token.len() < SPECIAL_TOKENS.len()
            || id_to_token[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: "vocabulary must start with the five special tokens".into(),
            });
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if token_to_id.len() != id_to_token.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: "duplicate token in vocabulary".into(),
            });
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }
}

#[derive(Debug)]
pub struct LoadedCorpus {
    pub pairs: Vec<DialoguePair>,
    pub skipped: usize,
}

/// Read pairs from a TSV file, truncating each side to `max_len` tokens.
/// Lines without both sides are skipped and counted.
pub fn load_corpus(path: &Path, max_len: usize) -> Result<LoadedCorpus> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for line in body.lines() {
        let mut sides = line.splitn(2, '\t');
        let post: Vec<String> = sides
            .next()
            .unwrap_or("")
            .split_whitespace()
            .take(max_len)
            .map(|t| t.to_string())
            .collect();
        let response: Vec<String> = sides
            .next()
            .unwrap_or("")
            .split_whitespace()
            .take(max_len)
            .map(|t| t.to_string())
            .collect();
        if post.is_empty() || response.is_empty() {
            skipped += 1;
            continue;
        }
        pairs.push(DialoguePair { post, response });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(LoadedCorpus { pairs, skipped })
}

/// Keep the `max_size - 5` most frequent tokens after the specials.
/// Frequency ties break by lexicographic token order.
pub fn build_vocabulary(corpus: &[DialoguePair], max_size: usize) -> Result<Vocabulary> {
    if max_size < 6 {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} leaves no room beyond the 5 special tokens"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for pair in corpus {
        for tok in pair.post.iter().chain(pair.response.iter()) {
            if SPECIAL_TOKENS.contains(&tok.as_str()) {
                continue;
            }
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIAL_TOKENS.len());

    let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(Vocabulary {
        token_to_id,
        id_to_token,
    })
}

pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_string()).collect()
}
