use super::EncodeError;
use crate::rng::fnv1a64;

pub const DEFAULT_VOCAB: usize = 4096;

/// Whitespace tokenizer hashing each lowercased word into `[0, vocab)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_VOCAB)
    }
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > 0, "vocabulary must be non-empty");
        Self { vocab_size }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, EncodeError> {
        let tokens: Vec<usize> = text
            .split_whitespace()
            .map(|w| (fnv1a64(w.to_lowercase().as_bytes()) % self.vocab_size as u64) as usize)
            .collect();
        if tokens.is_empty() {
            return Err(EncodeError::EmptyText);
        }
        Ok(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_case_folded() {
        let t = Tokenizer::default();
        let a = t.tokenize("dog bark").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, t.tokenize("dog   bark").unwrap());
        assert_eq!(t.tokenize("Dog").unwrap(), t.tokenize("dog").unwrap());
        assert!(a.iter().all(|&x| x < DEFAULT_VOCAB));
        // pinned so that a change of hashing scheme is noticed
        assert_eq!(a[0] as u64, fnv1a64(b"dog") % 4096);
    }

    #[test]
    fn empty_text() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize(""), Err(EncodeError::EmptyText));
        assert_eq!(t.tokenize("   \t"), Err(EncodeError::EmptyText));
    }
}
