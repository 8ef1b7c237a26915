//! Toy tokenizer for desk-scale fixtures.
//!
//! A vocab file lists one token per line; the line number is the id. Text is
//! split on whitespace and each word maps to its id, or, when absent, to the
//! byte tokens `<0xNN>` of its UTF-8 encoding. Decoding joins words with a
//! single space and reassembles runs of byte tokens, so two byte-encoded
//! words in a row come back as one.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn parse_byte_token(tok: &str) -> Option<u8> {
    let hex = tok.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "vocab entry {i} is empty or contains whitespace"
                )));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocab entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::new(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if let Some(id) = self.id(word) {
                out.push(id);
                continue;
            }
            for b in word.bytes() {
                let tok = byte_token(b);
                let id = self
                    .id(&tok)
                    .ok_or_else(|| Error::Config(format!("cannot encode {word:?}: no token {tok}")))?;
                out.push(id);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words: Vec<String> = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::TokenOutOfRange {
                token: id,
                vocab: self.len(),
            })?;
            match parse_byte_token(tok) {
                Some(b) => bytes.push(b),
                None => {
                    if !bytes.is_empty() {
                        words.push(String::from_utf8_lossy(&bytes).into_owned());
                        bytes.clear();
                    }
                    words.push(tok.to_string());
                }
            }
        }
        if !bytes.is_empty() {
            words.push(String::from_utf8_lossy(&bytes).into_owned());
        }
        Ok(words.join(" "))
    }
}
