//! JSON-lines dataset manifests and decode results.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crnt_core::eval::EvalSample;

use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub video_id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub features_path: PathBuf,
    pub transcript: String,
    /// Word positions in `transcript` tagged as named entities.
    pub entity_word_indices: Vec<usize>,
    pub metadata_words: Vec<String>,
}

impl ManifestRecord {
    pub fn words(&self) -> Vec<&str> {
        self.transcript.split_whitespace().collect()
    }

    pub fn entity_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.words().len()];
        for &i in &self.entity_word_indices {
            if let Some(f) = flags.get_mut(i) {
                *f = true;
            }
        }
        flags
    }
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub path: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn features_path(&self, r: &ManifestRecord) -> PathBuf {
        if r.features_path.is_absolute() {
            r.features_path.clone()
        } else {
            self.base_dir().join(&r.features_path)
        }
    }

    /// Reads and validates every record: unique ids, entity indices inside the
    /// transcript, and readable feature files.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: n + 1,
                detail: e.to_string(),
            })?;
            records.push((n + 1, r));
        }
        let m = Manifest {
            path: path.to_path_buf(),
            records: Vec::new(),
        };
        let mut seen = std::collections::HashSet::new();
        for (line, r) in &records {
            let bad = |detail: String| Error::Manifest { line: *line, detail };
            if !seen.insert(r.utterance_id.clone()) {
                return Err(bad(format!("duplicate utterance id {}", r.utterance_id)));
            }
            let n_words = r.words().len();
            if n_words == 0 {
                return Err(bad("empty transcript".into()));
            }
            if let Some(i) = r.entity_word_indices.iter().find(|&&i| i >= n_words) {
                return Err(bad(format!("entity index {i} outside a transcript of {n_words} words")));
            }
            let fp = m.features_path(r);
            if !fp.is_file() {
                return Err(bad(format!("missing feature file {}", fp.display())));
            }
        }
        if records.is_empty() {
            return Err(Error::Manifest {
                line: 0,
                detail: format!("{} has no records", path.display()),
            });
        }
        Ok(Manifest {
            records: records.into_iter().map(|(_, r)| r).collect(),
            ..m
        })
    }

    pub fn write(path: &Path, records: &[ManifestRecord]) -> Result<()> {
        write_jsonl(path, records)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub utterance_id: String,
    pub hypothesis: String,
    pub log_score: f64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("records serialize");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

pub fn read_results(path: &Path) -> Result<Vec<DecodeResult>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}

/// Pairs references with hypotheses by utterance id. Utterances without a
/// hypothesis are scored as empty output.
pub fn eval_samples(refs: &Manifest, hyps: &[DecodeResult]) -> Vec<EvalSample> {
    let by_id: std::collections::HashMap<&str, &DecodeResult> =
        hyps.iter().map(|h| (h.utterance_id.as_str(), h)).collect();
    refs.records
        .iter()
        .map(|r| {
            let hyp = by_id
                .get(r.utterance_id.as_str())
                .map(|h| h.hypothesis.split_whitespace().map(String::from).collect())
                .unwrap_or_default();
            EvalSample {
                utterance_id: r.utterance_id.clone(),
                video_id: r.video_id.clone(),
                reference: r.words().into_iter().map(String::from).collect(),
                hypothesis: hyp,
                entity_flags: r.entity_flags(),
                metadata_words: crnt_core::contextualizer::normalize_metadata(&r.metadata_words),
            }
        })
        .collect()
}
