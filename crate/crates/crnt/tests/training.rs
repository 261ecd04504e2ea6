mod common;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{smoke_train_config, SmokeCorpus};
use crnt::config::TrainConfig;
use crnt::train::{train_to_dir, Trainer, LATEST_CHECKPOINT, LOSS_LOG};
use crnt::Error;
use crnt_core::rnnt::ModelMode;

#[test]
fn one_utterance_overfits() {
    let corpus = SmokeCorpus::new();
    let data = vec![corpus.train.iter().find(|e| !e.context.is_empty()).unwrap().clone()];
    let config = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::desk()
    };
    let mut t = Trainer::new(config, ModelMode::AttBias, corpus.vocab.clone(), corpus.feature_dim()).unwrap();
    let first = t.eval_nll(&data[0]).unwrap();
    for step in 0..200 {
        t.train_step(&data, &[0], 0, step).unwrap();
    }
    let last = t.eval_nll(&data[0]).unwrap();
    assert!(last <= 0.2 * first, "nll {first} -> {last}");
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let corpus = SmokeCorpus::new();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("e1.ckpt");
    let mut straight = Trainer::new(smoke_train_config(), ModelMode::AttBias, corpus.vocab.clone(), corpus.feature_dim()).unwrap();
    straight.run_epoch(&corpus.train).unwrap();
    straight.save(&ckpt).unwrap();
    let a = straight.run_epoch(&corpus.train).unwrap();

    let mut resumed = Trainer::from_checkpoint(&ckpt, corpus.vocab.clone()).unwrap();
    assert_eq!(resumed.state.epoch, 1);
    let b = resumed.run_epoch(&corpus.train).unwrap();
    assert_eq!(a.epoch, b.epoch);
    assert!((a.mean_nll - b.mean_nll).abs() <= 1e-9, "{} vs {}", a.mean_nll, b.mean_nll);
    for (x, y) in straight.state.params.iter().zip(resumed.state.params.iter()) {
        assert_eq!(x.2, y.2, "{}", x.1);
    }
}

fn loss_sequence(mode: ModelMode, corpus: &SmokeCorpus, data: &[crnt::train::Example]) -> Vec<f64> {
    let mut t = Trainer::new(smoke_train_config(), mode, corpus.vocab.clone(), corpus.feature_dim()).unwrap();
    let mut out = Vec::new();
    for _ in 0..2 {
        for (b, batch) in t.epoch_batches(data.len(), t.state.epoch).iter().enumerate() {
            let epoch = t.state.epoch;
            out.push(t.train_step(data, batch, epoch, b).unwrap());
        }
        t.state.epoch += 1;
    }
    out
}

#[test]
fn baseline_ignores_metadata() {
    let corpus = SmokeCorpus::new();
    let mut contexts: Vec<_> = corpus.train.iter().map(|e| e.context.clone()).collect();
    contexts.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let shuffled: Vec<_> = corpus
        .train
        .iter()
        .zip(contexts)
        .map(|(e, c)| crnt::train::Example { context: c, ..e.clone() })
        .collect();
    assert!(corpus.train.iter().zip(&shuffled).any(|(a, b)| a.context.surfaces() != b.context.surfaces()));

    let a = loss_sequence(ModelMode::Baseline, &corpus, &corpus.train);
    let b = loss_sequence(ModelMode::Baseline, &corpus, &shuffled);
    assert_eq!(a, b);
    // The contextual model does read the metadata.
    let c = loss_sequence(ModelMode::AttBias, &corpus, &corpus.train);
    let d = loss_sequence(ModelMode::AttBias, &corpus, &shuffled);
    assert_ne!(c, d);
}

#[test]
fn training_is_reproducible_and_writes_artifacts() {
    let corpus = SmokeCorpus::new();
    let run = |dir: &std::path::Path| {
        let mut t = Trainer::new(smoke_train_config(), ModelMode::Att, corpus.vocab.clone(), corpus.feature_dim()).unwrap();
        train_to_dir(&mut t, &corpus.train, dir, |_| {}).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let la = run(a.path());
    let lb = run(b.path());
    assert_eq!(la, lb);
    assert_eq!(la.len(), smoke_train_config().epochs);
    for name in [LATEST_CHECKPOINT, LOSS_LOG, "epoch-001.ckpt", "epoch-002.ckpt", "vocab.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let log = std::fs::read_to_string(a.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log.lines().count(), la.len());
}

#[test]
fn empty_training_set_is_rejected() {
    let corpus = SmokeCorpus::new();
    let mut t = Trainer::new(smoke_train_config(), ModelMode::Baseline, corpus.vocab.clone(), corpus.feature_dim()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(train_to_dir(&mut t, &[], dir.path(), |_| {}), Err(Error::Config(_))));
}

#[test]
fn non_finite_loss_names_the_parameter() {
    let corpus = SmokeCorpus::new();
    let mut t = Trainer::new(smoke_train_config(), ModelMode::Bias, corpus.vocab.clone(), corpus.feature_dim()).unwrap();
    let id = t.state.params.ids().nth(3).unwrap();
    let name = t.state.params.name(id).to_string();
    t.state.params.get_mut(id).data_mut()[0] = f64::NAN;
    match t.train_step(&corpus.train, &[0, 1], 0, 0) {
        Err(Error::Diverged { detail, .. }) => assert!(detail.contains(&name), "{detail}"),
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn learning_rate_decays_per_epoch() {
    let c = TrainConfig {
        learning_rate: 0.01,
        lr_decay: 0.5,
        ..TrainConfig::desk()
    };
    assert_eq!(c.epoch_learning_rate(0), 0.01);
    assert_eq!(c.epoch_learning_rate(3), 0.00125);
    assert!(TrainConfig { lr_decay: 0.0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { lr_decay: 1.5, ..c }.validate().is_err());
}

#[test]
fn config_text_round_trips_and_rejects_unknown_keys() {
    let c = smoke_train_config();
    let text = c.to_toml();
    let back: TrainConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, c);
    assert!(toml::from_str::<TrainConfig>(&format!("{text}\nmystery = 1\n")).is_err());
    let desk_text = std::fs::read_to_string(common::workspace_file("configs/train-desk.toml")).unwrap();
    toml::from_str::<TrainConfig>(&desk_text).unwrap().validate().unwrap();
}
