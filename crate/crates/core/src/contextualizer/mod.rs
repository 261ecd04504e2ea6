//! From raw metadata text to the joiner's contextual inputs: metadata
//! cleaning, context-word sets, attention over their embeddings, and the
//! prefix-trie bias vector.

mod attention;
mod metadata;
mod trie;

pub use attention::{context_vector, initial_alpha, AttentionConfig, AttentionParams};
pub use metadata::normalize_metadata;
pub use trie::{bias_vector, BiasCursor, BiasTrie, BiasWeights, CursorPos};

use crate::tokenizer::{TokenSeq, Vocabulary, CTX_END_ID};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextWord {
    pub surface: String,
    /// Pieces followed by the context terminator.
    pub tokens: TokenSeq,
}

impl ContextWord {
    /// Pieces without the terminator; the path of this word in the trie.
    pub fn pieces(&self) -> &[usize] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

/// Context words of one utterance with their shared bias trie.
#[derive(Clone, Debug)]
pub struct ContextSet {
    words: Vec<ContextWord>,
    trie: BiasTrie,
}

impl ContextSet {
    /// Encodes each distinct surface in order. Empty surfaces and words the
    /// vocabulary cannot represent are left out.
    pub fn new<S: AsRef<str>>(surfaces: &[S], vocab: &Vocabulary) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut words = Vec::new();
        for s in surfaces {
            let s = s.as_ref();
            if s.is_empty() || s.chars().any(char::is_whitespace) || !seen.insert(s.to_string()) {
                continue;
            }
            if let Ok(tokens) = vocab.encode_context_word(s) {
                debug_assert_eq!(tokens.last(), Some(&CTX_END_ID));
                words.push(ContextWord {
                    surface: s.to_string(),
                    tokens,
                });
            }
        }
        let paths: Vec<&[usize]> = words.iter().map(ContextWord::pieces).collect();
        let trie = BiasTrie::build(&paths);
        Self { words, trie }
    }

    pub fn empty() -> Self {
        Self {
            words: Vec::new(),
            trie: BiasTrie::build(&[]),
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[ContextWord] {
        &self.words
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.surface.as_str()).collect()
    }

    pub fn trie(&self) -> &BiasTrie {
        &self.trie
    }

    /// Token sequences (with terminator) fed to the embedding extractor.
    pub fn token_seqs(&self) -> Vec<Vec<usize>> {
        self.words.iter().map(|w| w.tokens.clone()).collect()
    }

    /// Surfaces of the words active at `cursor`.
    pub fn active_words(&self, cursor: &BiasCursor) -> Vec<&str> {
        let mut idx: Vec<usize> = self.trie.entries(cursor, false).into_iter().map(|(i, _)| i).collect();
        idx.dedup();
        idx.into_iter().map(|i| self.words[i].surface.as_str()).collect()
    }
}
