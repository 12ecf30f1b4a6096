use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::{create, Sentence};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

/// Closed vocabulary with an unknown-word entry at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Ranks tokens by descending frequency, then lexicographically, keeping
    /// at most `size_cap - 1` of them alongside UNK.
    pub fn build(sentences: &[Sentence], size_cap: usize, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in &s.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && t != UNK)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep = size_cap.max(1) - 1;
        Self::from_tokens(ranked.into_iter().take(keep).map(|(t, _)| t.to_owned()))
    }

    /// Builds a vocab from tokens in index order; UNK is prepended.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut list = vec![UNK.to_owned()];
        list.extend(tokens.into_iter().filter(|t| t != UNK));
        let index = list.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { index, tokens: list }
    }

    pub fn unk_index(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }

    /// Hex digest of the serialized vocab.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One token per line, index order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = create(path)?;
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            tokens.push(line.map_err(|e| Error::io(path, e))?);
        }
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::parse(path, 1, format!("vocab must start with {UNK}")));
        }
        Ok(Self::from_tokens(tokens.into_iter().skip(1)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(words: &[&str]) -> Vec<Sentence> {
        vec![Sentence::new(0, words.iter().map(|s| s.to_string()).collect())]
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocab::build(&corpus(&["a", "a", "b"]), 10, 1);
        assert_eq!(v.tokens(), [UNK, "a", "b"]);
        let v = Vocab::build(&corpus(&["b", "a", "c", "c"]), 10, 1);
        assert_eq!(v.tokens(), [UNK, "c", "a", "b"]);
    }

    #[test]
    fn cap_and_min_count() {
        let v = Vocab::build(&corpus(&["a", "b"]), 2, 1);
        assert_eq!(v.tokens(), [UNK, "a"]);
        assert_eq!(v.lookup("b"), v.unk_index());
        let v = Vocab::build(&corpus(&["a", "a", "b"]), 10, 2);
        assert_eq!(v.tokens(), [UNK, "a"]);
    }

    #[test]
    fn save_load_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build(&corpus(&["x", "y", "y", "z", "z", "z"]), 10, 1);
        let p1 = dir.path().join("v1");
        let p2 = dir.path().join("v2");
        v.save(&p1).unwrap();
        Vocab::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(Vocab::load(&p1).unwrap(), v);
    }
}
