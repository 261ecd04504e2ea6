//! Word error rate, entity word error rate, context-word precision/recall, and
//! the split by whether a reference shares any word with its metadata.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub utterance_id: String,
    pub video_id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    /// One flag per reference word.
    pub entity_flags: Vec<bool>,
    pub metadata_words: Vec<String>,
}

/// One step of a word alignment. Indices point into the reference (`i`) and
/// hypothesis (`j`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignOp {
    Match(usize, usize),
    Sub(usize, usize),
    Del(usize),
    Ins(usize),
}

/// Minimum-edit-distance alignment with unit costs. Among optimal alignments
/// the traceback prefers match, then substitution, deletion, insertion at each
/// position from left to right.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Vec<AlignOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    // cost[i][j]: distance between reference[i..] and hypothesis[j..]
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            cost[i * w + j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let diag = cost[(i + 1) * w + j + 1] + usize::from(reference[i].as_ref() != hypothesis[j].as_ref());
                diag.min(cost[(i + 1) * w + j] + 1).min(cost[i * w + j + 1] + 1)
            };
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        let here = cost[i * w + j];
        if i < n && j < m {
            let same = reference[i].as_ref() == hypothesis[j].as_ref();
            if same && here == cost[(i + 1) * w + j + 1] {
                ops.push(AlignOp::Match(i, j));
                i += 1;
                j += 1;
                continue;
            }
            if !same && here == cost[(i + 1) * w + j + 1] + 1 {
                ops.push(AlignOp::Sub(i, j));
                i += 1;
                j += 1;
                continue;
            }
        }
        if i < n && here == cost[(i + 1) * w + j] + 1 {
            ops.push(AlignOp::Del(i));
            i += 1;
        } else {
            ops.push(AlignOp::Ins(j));
            j += 1;
        }
    }
    ops
}

/// Number of non-match operations in an alignment.
pub fn edit_distance(ops: &[AlignOp]) -> usize {
    ops.iter().filter(|o| !matches!(o, AlignOp::Match(..))).count()
}

/// Raw counts behind every reported rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_words: usize,
    pub entity_substitutions: usize,
    pub entity_deletions: usize,
    pub entity_words: usize,
    pub context_tp: usize,
    pub context_fp: usize,
    pub context_fn: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.substitutions += o.substitutions;
        self.deletions += o.deletions;
        self.insertions += o.insertions;
        self.reference_words += o.reference_words;
        self.entity_substitutions += o.entity_substitutions;
        self.entity_deletions += o.entity_deletions;
        self.entity_words += o.entity_words;
        self.context_tp += o.context_tp;
        self.context_fp += o.context_fp;
        self.context_fn += o.context_fn;
    }

    pub fn wer(&self) -> Option<f64> {
        ratio(self.substitutions + self.deletions + self.insertions, self.reference_words)
    }

    pub fn wer_ne(&self) -> Option<f64> {
        ratio(self.entity_substitutions + self.entity_deletions, self.entity_words)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.context_tp, self.context_tp + self.context_fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.context_tp, self.context_tp + self.context_fn)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Counts for a single sample.
pub fn sample_counts(s: &EvalSample) -> Counts {
    let ops = align(&s.reference, &s.hypothesis);
    let meta: HashSet<&str> = s.metadata_words.iter().map(String::as_str).collect();
    let is_entity = |i: usize| s.entity_flags.get(i).copied().unwrap_or(false);
    let mut c = Counts {
        reference_words: s.reference.len(),
        entity_words: s.entity_flags.iter().filter(|&&f| f).count(),
        ..Counts::default()
    };
    for op in ops {
        match op {
            AlignOp::Match(i, _) => {
                if meta.contains(s.reference[i].as_str()) {
                    c.context_tp += 1;
                }
            }
            AlignOp::Sub(i, j) => {
                c.substitutions += 1;
                if is_entity(i) {
                    c.entity_substitutions += 1;
                }
                if meta.contains(s.reference[i].as_str()) {
                    c.context_fn += 1;
                }
                if meta.contains(s.hypothesis[j].as_str()) {
                    c.context_fp += 1;
                }
            }
            AlignOp::Del(i) => {
                c.deletions += 1;
                if is_entity(i) {
                    c.entity_deletions += 1;
                }
                if meta.contains(s.reference[i].as_str()) {
                    c.context_fn += 1;
                }
            }
            AlignOp::Ins(j) => {
                c.insertions += 1;
                if meta.contains(s.hypothesis[j].as_str()) {
                    c.context_fp += 1;
                }
            }
        }
    }
    c
}

/// Corpus-pooled counts over `samples`.
pub fn pooled_counts(samples: &[EvalSample]) -> Counts {
    let mut total = Counts::default();
    for s in samples {
        total.add(&sample_counts(s));
    }
    total
}

/// `(S + D + I) / N` pooled over the corpus; absent without reference words.
pub fn wer(samples: &[EvalSample]) -> Option<f64> {
    pooled_counts(samples).wer()
}

/// Fraction of entity reference words aligned to a substitution or deletion;
/// absent without entity words.
pub fn wer_ne(samples: &[EvalSample]) -> Option<f64> {
    pooled_counts(samples).wer_ne()
}

/// Context-word precision and recall, counted per aligned occurrence.
pub fn context_pr(samples: &[EvalSample]) -> (Option<f64>, Option<f64>) {
    let c = pooled_counts(samples);
    (c.precision(), c.recall())
}

/// True when the reference shares at least one word with the metadata.
pub fn shares_metadata(s: &EvalSample) -> bool {
    let meta: HashSet<&str> = s.metadata_words.iter().map(String::as_str).collect();
    s.reference.iter().any(|w| meta.contains(w.as_str()))
}

/// `(CommonNonZero, CommonZero)`.
pub fn split_common(samples: &[EvalSample]) -> (Vec<EvalSample>, Vec<EvalSample>) {
    samples.iter().cloned().partition(shares_metadata)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub utterances: usize,
    pub wer: Option<f64>,
    pub wer_ne: Option<f64>,
    pub context_precision: Option<f64>,
    pub context_recall: Option<f64>,
    pub counts: Counts,
}

impl MetricsReport {
    pub fn compute(split: &str, samples: &[EvalSample]) -> Self {
        let counts = pooled_counts(samples);
        Self {
            split: split.to_string(),
            utterances: samples.len(),
            wer: counts.wer(),
            wer_ne: counts.wer_ne(),
            context_precision: counts.precision(),
            context_recall: counts.recall(),
            counts,
        }
    }
}

/// Metrics over the whole set and over both splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: MetricsReport,
    pub common_non_zero: MetricsReport,
    pub common_zero: MetricsReport,
}

pub fn evaluate(samples: &[EvalSample]) -> EvalReport {
    let (nonzero, zero) = split_common(samples);
    EvalReport {
        all: MetricsReport::compute("all", samples),
        common_non_zero: MetricsReport::compute("common_non_zero", &nonzero),
        common_zero: MetricsReport::compute("common_zero", &zero),
    }
}
