//! Prefix trie over context-word token sequences, and the per-hypothesis
//! cursor that tracks the partial word being emitted.

use std::collections::BTreeMap;

use crate::tokenizer::Vocabulary;

#[derive(Clone, Debug, Default)]
struct TrieNode {
    children: BTreeMap<usize, usize>,
    /// `(word index, next token)` for every word passing through this node
    /// that has tokens left.
    continuations: Vec<(usize, usize)>,
}

/// Trie keyed by token id. The context terminator is not part of any path.
#[derive(Clone, Debug)]
pub struct BiasTrie {
    nodes: Vec<TrieNode>,
}

const ROOT: usize = 0;

impl BiasTrie {
    /// `words[i]` is the token sequence of word `i`, without the terminator.
    pub fn build(words: &[&[usize]]) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (i, toks) in words.iter().enumerate() {
            let mut cur = ROOT;
            for &t in toks.iter() {
                nodes[cur].continuations.push((i, t));
                let next = match nodes[cur].children.get(&t) {
                    Some(&n) => n,
                    None => {
                        nodes.push(TrieNode::default());
                        let n = nodes.len() - 1;
                        nodes[cur].children.insert(t, n);
                        n
                    }
                };
                cur = next;
            }
        }
        Self { nodes }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn child(&self, node: usize, token: usize) -> Option<usize> {
        self.nodes[node].children.get(&token).copied()
    }

    /// Words active at `cursor`, each with the token that would extend the
    /// matched prefix. With `at_word_start`, every word's first token is
    /// included as well, since a new word may begin at any step.
    pub fn entries(&self, cursor: &BiasCursor, at_word_start: bool) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if let CursorPos::Node(n) = cursor.pos {
            if n != ROOT {
                out.extend_from_slice(&self.nodes[n].continuations);
            }
        }
        if at_word_start {
            out.extend_from_slice(&self.nodes[ROOT].continuations);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CursorPos {
    Node(usize),
    Dead,
}

/// Position of the current partial word in the trie.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BiasCursor {
    pub pos: CursorPos,
    /// True until the first token of the hypothesis is emitted.
    pub at_word_boundary: bool,
}

impl BiasCursor {
    pub fn start() -> Self {
        Self {
            pos: CursorPos::Node(ROOT),
            at_word_boundary: true,
        }
    }

    pub fn is_dead(&self) -> bool {
        self.pos == CursorPos::Dead
    }

    /// Cursor after emitting the non-blank token `emitted`: a word-initial
    /// token restarts matching from the root, any other token descends from the
    /// current node. A missing edge leads to the absorbing dead state.
    pub fn advance(self, emitted: usize, vocab: &Vocabulary, trie: &BiasTrie) -> Self {
        let from = if vocab.is_word_initial(emitted) {
            Some(ROOT)
        } else {
            match self.pos {
                CursorPos::Node(n) => Some(n),
                CursorPos::Dead => None,
            }
        };
        let pos = match from.and_then(|n| trie.child(n, emitted)) {
            Some(n) => CursorPos::Node(n),
            None => CursorPos::Dead,
        };
        Self {
            pos,
            at_word_boundary: false,
        }
    }
}

/// Per-word weights applied to active words.
#[derive(Clone, Copy, Debug)]
pub enum BiasWeights<'a> {
    /// Attention weights of the current step.
    Attention(&'a [f64]),
    /// Every word weighted by 1, for biasing without attention.
    Ones,
}

/// Bias over the vocabulary: the summed weight of active words whose next
/// token is `k`.
pub fn bias_vector(
    cursor: &BiasCursor,
    weights: BiasWeights<'_>,
    trie: &BiasTrie,
    vocab_size: usize,
    at_word_start: bool,
) -> Vec<f64> {
    let mut b = vec![0.0; vocab_size];
    for (i, k) in trie.entries(cursor, at_word_start) {
        b[k] += match weights {
            BiasWeights::Attention(a) => a[i],
            BiasWeights::Ones => 1.0,
        };
    }
    b
}
