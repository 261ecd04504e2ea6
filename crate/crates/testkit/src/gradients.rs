//! Finite-difference checks for every differentiable operation, the
//! recurrent and contextual modules built from them, and the full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnt_core::contextualizer::{AttentionConfig, AttentionParams, ContextSet};
use crnt_core::model::{Model, ModelConfig};
use crnt_core::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crnt_core::recurrent::{
    lstm_step, BlstmStack, EmbeddingExtractor, ExtractorConfig, LstmParams, LstmState, Predictor, PredictorConfig,
};
use crnt_core::rnnt::{rnnt_loss, JoinerConfig, JoinerParams, ModelMode};
use crnt_core::numerics::Activation;
use crnt_core::Result;

use crate::fd::{check, check_entries, FdReport};
use crate::{letter_vocabulary, uniform};

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    pub report: FdReport,
}

fn all_params(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

/// Uniform entries in `[-2, 2]` kept at least `gap` away from zero, for
/// functions with a kink there.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], gap: f64) -> Tensor {
    let mut t = uniform(rng, shape, 2.0);
    for x in t.data_mut() {
        if x.abs() < gap {
            *x = if *x < 0.0 { -gap } else { gap };
        }
    }
    t
}

/// Checks each primitive operation with random inputs in `[-2, 2]`.
pub fn primitive_ops(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>| -> Result<()> {
        let report = check(&mut store, &[], &inputs, f)?;
        out.push(GradCheck {
            name: name.to_string(),
            report,
        });
        Ok(())
    };
    let mut u = |shape: &[usize]| uniform(&mut rng, shape, 2.0);

    run("affine", vec![u(&[5]), u(&[3, 5]), u(&[3])], &|g, v| g.linear(v[0], v[1], Some(v[2])))?;
    run("affine over rows", vec![u(&[4, 5]), u(&[3, 5]), u(&[3])], &|g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    })?;
    run("add", vec![u(&[3, 4]), u(&[3, 4])], &|g, v| g.add(v[0], v[1]))?;
    run("sub", vec![u(&[3, 4]), u(&[3, 4])], &|g, v| g.sub(v[0], v[1]))?;
    run("mul", vec![u(&[3, 4]), u(&[3, 4])], &|g, v| g.mul(v[0], v[1]))?;
    run("scale", vec![u(&[6])], &|g, v| Ok(g.scale(v[0], -1.7)))?;
    run("tanh", vec![u(&[7])], &|g, v| Ok(g.tanh(v[0])))?;
    run("sigmoid", vec![u(&[7])], &|g, v| Ok(g.sigmoid(v[0])))?;
    run("softmax", vec![u(&[6])], &|g, v| g.softmax(v[0]))?;
    run("softmax over rows", vec![u(&[3, 4])], &|g, v| g.softmax(v[0]))?;
    run("log_softmax", vec![u(&[6])], &|g, v| g.log_softmax(v[0]))?;
    run("log_softmax over rows", vec![u(&[3, 4])], &|g, v| g.log_softmax(v[0]))?;
    run("sum", vec![u(&[2, 3])], &|g, v| Ok(g.sum(v[0])))?;
    run("concat", vec![u(&[2, 3]), u(&[2, 2])], &|g, v| g.concat(&[v[0], v[1]]))?;
    run("slice", vec![u(&[3, 5])], &|g, v| g.slice(v[0], 1, 3))?;
    run("row", vec![u(&[3, 4])], &|g, v| g.row(v[0], 2))?;
    run("select_rows", vec![u(&[4, 3])], &|g, v| g.select_rows(v[0], vec![2, 0, 2, 3]))?;
    run("stack_rows", vec![u(&[3]), u(&[3])], &|g, v| g.stack_rows(&[v[0], v[1], v[0]]))?;
    run("reshape", vec![u(&[2, 3])], &|g, v| g.reshape(v[0], vec![3, 2]))?;
    run("outer_sum", vec![u(&[2, 3]), u(&[4, 3])], &|g, v| g.outer_sum(v[0], v[1]))?;
    run("weighted_sum", vec![u(&[4]), u(&[4, 3])], &|g, v| g.weighted_sum(v[0], v[1]))?;
    run("conv1d kernel 1", vec![u(&[5]), u(&[2, 1]), u(&[2])], &|g, v| g.conv1d(v[0], v[1], v[2]))?;
    run("conv1d kernel 3", vec![u(&[5]), u(&[2, 3]), u(&[2])], &|g, v| g.conv1d(v[0], v[1], v[2]))?;
    run("lstm_cell", vec![u(&[8]), u(&[2])], &|g, v| g.lstm_cell(v[0], v[1]))?;
    run("scatter", vec![u(&[4])], &|g, v| g.scatter(v[0], vec![(0, 1), (1, 4), (2, 1), (3, 0), (3, 4)], 6))?;
    run("dropout", vec![u(&[20])], &|g, v| {
        // Same generator state at every evaluation, hence the same mask.
        g.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(11))
    })?;
    let relu_in = away_from_zero(&mut rng, &[7], 0.01);
    run("relu", vec![relu_in], &|g, v| Ok(g.relu(v[0])))?;

    let (frames, labels, vocab) = (3, 2, 4);
    let logits = uniform(&mut rng, &[frames * (labels + 1), vocab], 2.0);
    let targets = [2, 3];
    run("lattice loss", vec![logits], &|g, v| {
        let o = rnnt_loss(g.value(v[0]).data(), frames, vocab, &targets)?;
        g.external_loss(v[0], o.nll, o.grad_logits)
    })?;
    Ok(out)
}

/// Checks the recurrent, attention and joiner modules with respect to their
/// parameters and inputs.
pub fn modules(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "cell", 3, 2, &mut rng);
        let xs = vec![uniform(&mut rng, &[3], 2.0), uniform(&mut rng, &[3], 2.0), uniform(&mut rng, &[3], 2.0)];
        let params = all_params(&store);
        let report = check(&mut store, &params, &xs, &|g, v| {
            let mut s = LstmState::zeros(g, 2);
            for &x in v {
                s = lstm_step(g, &p, x, &s)?;
            }
            g.concat(&[s.h, s.c])
        })?;
        out.push(GradCheck {
            name: "lstm, three chained steps".into(),
            report,
        });
    }

    {
        let mut store = ParamStore::new();
        let stack = BlstmStack::register(&mut store, "enc", 3, 2, 2, vec![1], Some(3), &mut rng);
        let x = uniform(&mut rng, &[5, 3], 2.0);
        let params = all_params(&store);
        let report = check(&mut store, &params, &[x], &|g, v| Ok(stack.run(g, v[0])?.frames))?;
        out.push(GradCheck {
            name: "blstm stack with subsampling".into(),
            report,
        });
    }

    {
        let mut store = ParamStore::new();
        let cfg = PredictorConfig {
            vocab_size: 6,
            embed_dim: 3,
            num_layers: 2,
            hidden: 2,
            output_dim: 3,
        };
        let p = Predictor::register(&mut store, "pred", &cfg, &mut rng);
        let params = all_params(&store);
        let report = check(&mut store, &params, &[], &|g, _| p.teacher_forced(g, &[2, 5, 3]))?;
        out.push(GradCheck {
            name: "predictor".into(),
            report,
        });
    }

    {
        let mut store = ParamStore::new();
        let cfg = ExtractorConfig {
            vocab_size: 6,
            embed_dim: 3,
            num_layers: 2,
            hidden: 2,
        };
        let e = EmbeddingExtractor::register(&mut store, "ee", &cfg, &mut rng);
        let params = all_params(&store);
        let report = check(&mut store, &params, &[], &|g, _| e.embed_all(g, &[vec![2, 4, 1], vec![3, 1]]))?;
        out.push(GradCheck {
            name: "embedding extractor".into(),
            report,
        });
    }

    {
        let mut store = ParamStore::new();
        let cfg = AttentionConfig {
            pred_dim: 3,
            embed_dim: 4,
            att_dim: 3,
            conv_channels: 2,
            conv_kernel: 3,
        };
        let att = AttentionParams::register(&mut store, "att", &cfg, &mut rng)?;
        // Nonzero biases so their gradients are exercised away from the init.
        for id in [att.bias, att.q_bias] {
            *store.get_mut(id) = uniform(&mut rng, store.get(id).shape(), 1.0);
        }
        let inputs = vec![
            uniform(&mut rng, &[3], 2.0),
            uniform(&mut rng, &[3], 2.0),
            uniform(&mut rng, &[4, 4], 2.0),
        ];
        let params = all_params(&store);
        let report = check(&mut store, &params, &inputs, &|g, v| {
            // Two steps, so the second sees weights that depend on everything.
            let projected = att.project_embeddings(g, v[2])?;
            let a0 = g.constant(Tensor::filled(&[4], 0.25));
            let a1 = att.step(g, v[0], projected, a0)?;
            let a2 = att.step(g, v[1], projected, a1)?;
            let c = g.weighted_sum(a2, v[2])?;
            g.concat(&[a2, c])
        })?;
        out.push(GradCheck {
            name: "location-aware attention".into(),
            report,
        });
    }

    for mode in ModelMode::ALL {
        let mut store = ParamStore::new();
        let cfg = JoinerConfig {
            enc_dim: 3,
            pred_dim: 2,
            context_dim: 2,
            joint_dim: 4,
            vocab_size: 5,
            activation: Activation::Tanh,
            bias_dropout: 0.25,
        };
        let p = JoinerParams::register(&mut store, "joiner", mode, &cfg, &mut rng)?;
        for id in [p.b, p.out_b] {
            *store.get_mut(id) = uniform(&mut rng, store.get(id).shape(), 1.0);
        }
        let inputs = vec![
            uniform(&mut rng, &[3, 3], 2.0),
            uniform(&mut rng, &[2, 2], 2.0),
            uniform(&mut rng, &[2, 2], 2.0),
            uniform(&mut rng, &[2, 5], 1.0),
        ];
        let params = all_params(&store);
        let report = check(&mut store, &params, &inputs, &|g, v| {
            let c = mode.uses_attention().then_some(v[2]);
            let b = mode.uses_bias().then_some(v[3]);
            let enc = p.encoder_part(g, v[0])?;
            let pred = p.prediction_part(g, v[1], c, b, true, &mut ChaCha8Rng::seed_from_u64(5))?;
            p.lattice_logits(g, enc, pred)
        })?;
        out.push(GradCheck {
            name: format!("joiner ({mode})"),
            report,
        });
    }
    Ok(out)
}

/// Number of parameter entries sampled by [`end_to_end`].
pub const END_TO_END_SAMPLES: usize = 32;

/// Gradient of the full attention-and-biasing model's loss against central
/// differences on randomly sampled parameter entries.
pub fn end_to_end(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = letter_vocabulary();
    let feature_dim = 3;
    let mut config = ModelConfig::tiny(ModelMode::AttBias, vocab.len(), feature_dim);
    config.subsample_after = vec![1];
    config.conv_kernel = 3;
    let mut store = ParamStore::new();
    let model = Model::new(config, &mut store, &mut rng)?;
    // Perturb every parameter, biases included, away from the initializer.
    let ids: Vec<ParamId> = store.ids().collect();
    for &id in &ids {
        let noise = uniform(&mut rng, store.get(id).shape(), 0.3);
        for (x, n) in store.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *x += n;
        }
    }
    let features = uniform(&mut rng, &[7, feature_dim], 1.0);
    let targets = vocab.encode("bad cab")?;
    let ctx = ContextSet::new(&["bade", "cab", "ed", "dace"], &vocab);

    let mut picks = Vec::with_capacity(END_TO_END_SAMPLES);
    while picks.len() < END_TO_END_SAMPLES {
        let id = ids[rng.random_range(0..ids.len())];
        let j = rng.random_range(0..store.get(id).len());
        if !picks.contains(&(id, j)) {
            picks.push((id, j));
        }
    }
    let report = check_entries(&mut store, &picks, &[], &|g, _| {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(model
            .utterance_loss(g, &features, &targets, &ctx, &vocab, false, &mut unused)?
            .loss)
    })?;
    Ok(GradCheck {
        name: "end-to-end attention and biasing model".into(),
        report,
    })
}
