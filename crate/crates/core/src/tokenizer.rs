//! Subword vocabulary with word-initial marking.
//!
//! Pieces are learned by greedy pair-merge BPE over whitespace-split words. A
//! piece that starts a word is distinct from the same text inside a word, the
//! way sentence pieces carry a word-boundary marker. Ids 0 and 1 are reserved
//! for the blank symbol and for the unit appended to every context word.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const BLANK_ID: usize = 0;
pub const CTX_END_ID: usize = 1;

const BLANK_TEXT: &str = "<blank>";
const CTX_END_TEXT: &str = "<ctx_end>";

/// Sequence of token ids.
pub type TokenSeq = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Piece {
    pub text: String,
    pub word_initial: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<Piece>,
    index: HashMap<(String, bool), usize>,
    longest: usize,
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

type Symbol = (String, bool);

impl Vocabulary {
    /// Builds a vocabulary from explicit pieces; the reserved ids are prepended.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        let mut all = vec![
            Piece {
                text: BLANK_TEXT.into(),
                word_initial: false,
            },
            Piece {
                text: CTX_END_TEXT.into(),
                word_initial: false,
            },
        ];
        all.extend(pieces.into_iter().map(|(t, w)| Piece {
            text: t.into(),
            word_initial: w,
        }));
        Self::from_all(all, 0)
    }

    fn from_all(pieces: Vec<Piece>, line_offset: usize) -> Result<Self> {
        let mut index = HashMap::new();
        let mut longest = 0;
        for (id, p) in pieces.iter().enumerate() {
            if id >= 2 {
                if p.text.is_empty() || p.text.chars().any(char::is_whitespace) {
                    return Err(Error::VocabularyFormat {
                        line: id + line_offset,
                        detail: format!("piece {:?} is empty or contains whitespace", p.text),
                    });
                }
                longest = longest.max(p.text.chars().count());
            }
            if index.insert((p.text.clone(), p.word_initial), id).is_some() {
                return Err(Error::VocabularyFormat {
                    line: id + line_offset,
                    detail: format!("duplicate piece {:?}", p.text),
                });
            }
        }
        Ok(Self {
            pieces,
            index,
            longest,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: usize) -> &Piece {
        &self.pieces[id]
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_word_initial(&self, id: usize) -> bool {
        self.pieces[id].word_initial
    }

    pub fn id_of(&self, text: &str, word_initial: bool) -> Option<usize> {
        self.index.get(&(text.to_string(), word_initial)).copied()
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.pieces.len() {
            return Err(Error::TokenOutOfRange {
                id,
                size: self.pieces.len(),
            });
        }
        Ok(())
    }

    /// Greedy longest-match segmentation of one word.
    pub fn encode_word(&self, word: &str) -> Result<TokenSeq> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let initial = pos == 0;
            let max = self.longest.min(chars.len() - pos);
            let mut found = None;
            for len in (1..=max).rev() {
                let s: String = chars[pos..pos + len].iter().collect();
                if let Some(&id) = self.index.get(&(s, initial)) {
                    if id > CTX_END_ID {
                        found = Some((id, len));
                        break;
                    }
                }
            }
            let Some((id, len)) = found else {
                return Err(Error::UnknownCharacter {
                    ch: chars[pos],
                    text: word.to_string(),
                });
            };
            out.push(id);
            pos += len;
        }
        Ok(out)
    }

    pub fn encode(&self, s: &str) -> Result<TokenSeq> {
        let mut out = Vec::new();
        for w in s.split_whitespace() {
            out.extend(self.encode_word(w)?);
        }
        Ok(out)
    }

    /// Tokens of a metadata word followed by the context terminator.
    pub fn encode_context_word(&self, w: &str) -> Result<TokenSeq> {
        let mut t = self.encode(w)?;
        t.push(CTX_END_ID);
        Ok(t)
    }

    /// Joins pieces, starting a new word at every word-initial piece. Reserved
    /// ids are skipped.
    pub fn decode(&self, tokens: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in tokens {
            self.check_id(id)?;
            if id <= CTX_END_ID {
                continue;
            }
            let p = &self.pieces[id];
            if p.word_initial && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&p.text);
        }
        Ok(out)
    }

    /// Words of the decoded text.
    pub fn decode_words(&self, tokens: &[usize]) -> Result<Vec<String>> {
        Ok(self.decode(tokens)?.split_whitespace().map(String::from).collect())
    }

    /// `<id>\t<piece>\t<word_initial>` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, p) in self.pieces.iter().enumerate() {
            writeln!(s, "{id}\t{}\t{}", p.text, u8::from(p.word_initial)).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |detail: String| Error::VocabularyFormat {
                line: line_no,
                detail,
            };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let id: usize = fields[0].parse().map_err(|_| bad(format!("bad id {:?}", fields[0])))?;
            if id != pieces.len() {
                return Err(bad(format!("id {id} out of sequence")));
            }
            let word_initial = match fields[2] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("word_initial must be 0 or 1, got {other:?}"))),
            };
            let expected = match id {
                BLANK_ID => Some(BLANK_TEXT),
                CTX_END_ID => Some(CTX_END_TEXT),
                _ => None,
            };
            if let Some(e) = expected {
                if fields[1] != e {
                    return Err(bad(format!("reserved id {id} must be {e}")));
                }
            }
            pieces.push(Piece {
                text: fields[1].to_string(),
                word_initial,
            });
        }
        if pieces.len() < 2 {
            return Err(Error::VocabularyFormat {
                line: pieces.len(),
                detail: "missing reserved entries".into(),
            });
        }
        Self::from_all(pieces, 0)
    }
}

/// Trains a BPE vocabulary of exactly `target_size` pieces, or fewer when the
/// corpus runs out of pairs to merge.
///
/// Word frequencies drive pair counts; ties go to the lexicographically
/// smallest pair, so the result depends only on the corpus contents.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *freq.entry(w).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::Empty("train_bpe"));
    }
    let mut words: Vec<(Vec<Symbol>, usize)> = freq
        .iter()
        .map(|(w, &n)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| (c.to_string(), i == 0))
                .collect();
            (syms, n)
        })
        .collect();

    let mut base: Vec<Symbol> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    base.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    base.dedup();
    if target_size < base.len() + 2 {
        return Err(Error::InvalidArgument {
            op: "train_bpe",
            detail: format!(
                "target size {target_size} cannot hold {} base symbols plus 2 reserved ids",
                base.len()
            ),
        });
    }

    let mut vocab: Vec<Symbol> = base;
    let mut known: std::collections::HashSet<Symbol> = vocab.iter().cloned().collect();
    while vocab.len() + 2 < target_size {
        let mut counts: BTreeMap<(&Symbol, &Symbol), usize> = BTreeMap::new();
        for (syms, n) in &words {
            for pair in syms.windows(2) {
                *counts.entry((&pair[0], &pair[1])).or_default() += n;
            }
        }
        // Highest count wins; BTreeMap order makes the first maximum the
        // lexicographically smallest pair.
        let Some(((a, b), _)) = counts
            .iter()
            .fold(None::<(&(&Symbol, &Symbol), usize)>, |best, (k, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((k, c)),
            })
            .map(|(k, c)| ((k.0.clone(), k.1.clone()), c))
        else {
            break;
        };
        let merged: Symbol = (format!("{}{}", a.0, b.0), a.1);
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        if known.insert(merged.clone()) {
            vocab.push(merged);
        }
    }
    Vocabulary::from_pieces(vocab)
}
