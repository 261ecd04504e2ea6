#![allow(dead_code)]

use std::path::{Path, PathBuf};

use crnt::config::TrainConfig;
use crnt::manifest::Manifest;
use crnt::synth::{generate_corpus, load_vocabulary, SyntheticSpec, TEST_MANIFEST, TRAIN_MANIFEST, VOCAB_FILE};
use crnt::train::{prepare_examples, Example};
use crnt_core::tokenizer::Vocabulary;

pub fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn smoke_train_config() -> TrainConfig {
    let text = std::fs::read_to_string(workspace_file("configs/train-smoke.toml")).unwrap();
    toml::from_str(&text).unwrap()
}

/// A generated smoke corpus that lives as long as the value.
pub struct SmokeCorpus {
    pub dir: tempfile::TempDir,
    pub vocab: Vocabulary,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl SmokeCorpus {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::load(&workspace_file("configs/synth-smoke.toml")).unwrap();
        generate_corpus(&spec, dir.path()).unwrap();
        let vocab = load_vocabulary(&dir.path().join(VOCAB_FILE)).unwrap();
        let load = |name: &str| {
            let m = Manifest::load(&dir.path().join(name)).unwrap();
            prepare_examples(&m, &vocab).unwrap()
        };
        let (train, test) = (load(TRAIN_MANIFEST), load(TEST_MANIFEST));
        Self { dir, vocab, train, test }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn feature_dim(&self) -> usize {
        self.train[0].features.cols()
    }
}
