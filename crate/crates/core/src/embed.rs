//! Sentence embeddings: exact-hash lookup in precomputed stores, and a
//! deterministic hash-bucket tokenizer for the trainable-table path.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::fnv1a64;
use crate::text::SystemDescription;
use crate::{Error, Result};

/// Default vocabulary size of the tokenizer path.
pub const TOKEN_VOCAB: usize = 4096;
/// Width of the trainable token table.
pub const TOKEN_DIM: usize = 384;
pub const SENTENCE_DIM: usize = 384;
pub const WORD_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provider {
    /// Sentence-level frozen encoder, 384 wide.
    SentenceStore,
    /// Word-level frozen encoder averaged over the sentence, 4096 wide.
    WordStore,
    /// Hash-bucket tokens averaged through a trainable table.
    Tokenizer,
}

impl Provider {
    pub fn name(self) -> &'static str {
        match self {
            Provider::SentenceStore => "sentence",
            Provider::WordStore => "word",
            Provider::Tokenizer => "tokenizer",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sentence" => Some(Provider::SentenceStore),
            "word" => Some(Provider::WordStore),
            "tokenizer" => Some(Provider::Tokenizer),
            _ => None,
        }
    }

    /// Width of the vector handed to the model.
    pub fn dim(self) -> usize {
        match self {
            Provider::SentenceStore => SENTENCE_DIM,
            Provider::WordStore => WORD_DIM,
            Provider::Tokenizer => TOKEN_DIM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub provider: Provider,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub type SentenceHash = [u8; 32];

/// SHA-256 of the sentence's UTF-8 bytes.
pub fn sentence_hash(text: &str) -> SentenceHash {
    Sha256::digest(text.as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_hex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Precomputed vectors keyed by sentence hash; every vector has width `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    entries: BTreeMap<SentenceHash, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces; rejects wrong width and non-finite values.
    pub fn insert(&mut self, hash: SentenceHash, values: Vec<f32>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::Config(format!(
                "vector for {} has width {}, store width is {}",
                hex(&hash),
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "vector for {} has non-finite values",
                hex(&hash)
            )));
        }
        self.entries.insert(hash, values);
        Ok(())
    }

    pub fn insert_sentence(&mut self, text: &str, values: Vec<f32>) -> Result<()> {
        self.insert(sentence_hash(text), values)
    }

    pub fn get(&self, hash: &SentenceHash) -> Option<&[f32]> {
        self.entries.get(hash).map(Vec::as_slice)
    }

    /// Entries in ascending hash order.
    pub fn iter(&self) -> impl Iterator<Item = (&SentenceHash, &[f32])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Exact lookup of the description's text; a miss names the absent hash.
    pub fn lookup(&self, description: &SystemDescription, provider: Provider) -> Result<EmbeddingVector> {
        self.lookup_text(&description.text, provider)
    }

    pub fn lookup_text(&self, text: &str, provider: Provider) -> Result<EmbeddingVector> {
        let h = sentence_hash(text);
        match self.entries.get(&h) {
            Some(v) => Ok(EmbeddingVector {
                values: v.clone(),
                provider,
            }),
            None => Err(Error::EmbeddingMiss { hash: hex(&h) }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub vocab: usize,
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2010}'
                ..='\u{2027}'
                    | '\u{00a1}'
                    | '\u{00ab}'
                    | '\u{00b7}'
                    | '\u{00bb}'
                    | '\u{00bf}'
                    | '\u{3001}'
                    | '\u{3002}'
        )
}

/// Lowercased word and punctuation pieces, in order.
pub fn token_strings(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() || is_punctuation(c) {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.extend(core::iter::once(c.to_lowercase().collect::<String>()));
            }
        } else {
            cur.extend(c.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Each piece maps to `fnv1a64(bytes) mod vocab`.
pub fn tokenize_with_vocab(text: &str, vocab: usize) -> TokenSequence {
    let ids = token_strings(text)
        .iter()
        .map(|t| (fnv1a64(t.as_bytes()) % vocab as u64) as u32)
        .collect();
    TokenSequence { ids, vocab }
}

pub fn tokenize(text: &str) -> TokenSequence {
    tokenize_with_vocab(text, TOKEN_VOCAB)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            token_strings("Hello, World. A=0.5"),
            ["hello", ",", "world", ".", "a", "=", "0", ".", "5"]
        );
        assert!(tokenize("").ids.is_empty());
        assert!(tokenize(" \t\n").ids.is_empty());
    }

    #[test]
    fn repeated_words_share_ids() {
        let t = tokenize("a a A");
        assert_eq!(t.ids.len(), 3);
        assert!(t.ids.iter().all(|&i| i == t.ids[0]));
        assert!(t.ids[0] < TOKEN_VOCAB as u32);
    }

    #[test]
    fn lookup_hit_and_miss() {
        let mut s = EmbeddingStore::new(3);
        s.insert_sentence("x", vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(
            s.lookup_text("x", Provider::SentenceStore).unwrap().values,
            [1.0, -2.0, 0.5]
        );
        let miss = s.lookup_text("y", Provider::SentenceStore).unwrap_err();
        assert_eq!(
            miss,
            Error::EmbeddingMiss {
                hash: hex(&sentence_hash("y"))
            }
        );
        assert!(s.insert_sentence("z", vec![1.0]).is_err());
        assert!(s.insert_sentence("z", vec![f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn hex_roundtrip() {
        let h = sentence_hash("abc");
        assert_eq!(
            hex(&h),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(parse_hex32(&hex(&h)), Some(h));
        assert_eq!(parse_hex32("zz"), None);
    }
}
