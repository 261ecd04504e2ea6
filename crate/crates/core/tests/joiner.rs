use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crnt_core::numerics::{Activation, Graph, ParamStore, Tensor};
use crnt_core::rnnt::{joiner, output_distribution, JoinerConfig, JoinerParams, ModelMode};
use crnt_testkit::uniform;

fn config(activation: Activation) -> JoinerConfig {
    JoinerConfig {
        enc_dim: 3,
        pred_dim: 4,
        context_dim: 2,
        joint_dim: 5,
        vocab_size: 6,
        activation,
        bias_dropout: 0.0,
    }
}

fn params(mode: ModelMode, cfg: &JoinerConfig, seed: u64) -> (ParamStore, JoinerParams) {
    let mut store = ParamStore::new();
    let p = JoinerParams::register(&mut store, "j", mode, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, p)
}

fn z(store: &ParamStore, p: &JoinerParams, enc: &Tensor, pred: &Tensor, c: Option<&Tensor>, b: Option<&Tensor>) -> Tensor {
    let mut g = Graph::new(store);
    let (e, h) = (g.constant(enc.clone()), g.constant(pred.clone()));
    let c = c.map(|t| g.constant(t.clone()));
    let b = b.map(|t| g.constant(t.clone()));
    let out = joiner(&mut g, p, e, h, c, b, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    g.value(out).clone()
}

#[test]
fn zero_context_reduces_to_baseline() {
    let cfg = config(Activation::Relu);
    let (att_store, att) = params(ModelMode::Att, &cfg, 1);
    let (mut base_store, base) = params(ModelMode::Baseline, &cfg, 2);
    // Baseline V is the predictor block of the attention V, whose first
    // columns multiply the context vector.
    let v = att_store.get(att.v);
    let block: Vec<f64> = (0..5).flat_map(|r| v.row(r)[2..].to_vec()).collect();
    *base_store.get_mut(base.v) = Tensor::matrix(5, 4, block).unwrap();
    *base_store.get_mut(base.u) = att_store.get(att.u).clone();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (enc, pred) = (uniform(&mut rng, &[3], 2.0), uniform(&mut rng, &[4], 2.0));
    let a = z(&att_store, &att, &enc, &pred, Some(&Tensor::zeros(&[2])), None);
    let b = z(&base_store, &base, &enc, &pred, None, None);
    assert_eq!(a, b);
}

#[test]
fn zero_bias_vector_reduces_to_baseline() {
    let cfg = config(Activation::Tanh);
    let (store, bias) = params(ModelMode::Bias, &cfg, 4);
    let mut base_store = ParamStore::new();
    let base = JoinerParams::register(
        &mut base_store,
        "j",
        ModelMode::Baseline,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(99),
    )
    .unwrap();
    for (dst, src) in [(base.u, bias.u), (base.v, bias.v), (base.b, bias.b)] {
        *base_store.get_mut(dst) = store.get(src).clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (enc, pred) = (uniform(&mut rng, &[3], 2.0), uniform(&mut rng, &[4], 2.0));
    let a = z(&store, &bias, &enc, &pred, None, Some(&Tensor::zeros(&[6])));
    let b = z(&base_store, &base, &enc, &pred, None, None);
    assert_eq!(a, b);
}

#[test]
fn attention_and_bias_joiner_matches_scalar_evaluation() {
    let cfg = config(Activation::Tanh);
    let (mut store, p) = params(ModelMode::AttBias, &cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    *store.get_mut(p.b) = uniform(&mut rng, &[5], 1.0);
    let (enc, pred, c, b) = (
        uniform(&mut rng, &[3], 2.0),
        uniform(&mut rng, &[4], 2.0),
        uniform(&mut rng, &[2], 2.0),
        uniform(&mut rng, &[6], 1.0),
    );
    let got = z(&store, &p, &enc, &pred, Some(&c), Some(&b));
    let (u, v, jb, proj) = (
        store.get(p.u).data(),
        store.get(p.v).data(),
        store.get(p.b).data(),
        store.get(p.bias_proj.unwrap()).data(),
    );
    let cat: Vec<f64> = c.data().iter().chain(pred.data()).copied().collect();
    for r in 0..5 {
        let mut s = jb[r];
        for j in 0..3 {
            s += u[r * 3 + j] * enc.data()[j];
        }
        for j in 0..6 {
            s += v[r * 6 + j] * cat[j];
        }
        for k in 0..6 {
            s += proj[r * 6 + k] * b.data()[k];
        }
        assert!((got.data()[r] - s.tanh()).abs() < 1e-10);
    }
}

#[test]
fn missing_contextual_inputs_are_rejected() {
    let cfg = config(Activation::Relu);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (enc, pred) = (uniform(&mut rng, &[3], 1.0), uniform(&mut rng, &[4], 1.0));
    for mode in [ModelMode::Att, ModelMode::Bias, ModelMode::AttBias] {
        let (store, p) = params(mode, &cfg, 9);
        let mut g = Graph::new(&store);
        let (e, h) = (g.constant(enc.clone()), g.constant(pred.clone()));
        let c = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[6]));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        if mode.uses_attention() {
            assert!(joiner(&mut g, &p, e, h, None, Some(b), false, &mut r).is_err());
        }
        if mode.uses_bias() {
            assert!(joiner(&mut g, &p, e, h, Some(c), None, false, &mut r).is_err());
        }
    }
}

#[test]
fn output_distribution_is_normalized() {
    let cfg = config(Activation::Relu);
    let (mut store, p) = params(ModelMode::Baseline, &cfg, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    *store.get_mut(p.out_b) = uniform(&mut rng, &[6], 1.0);
    let zt = uniform(&mut rng, &[5], 2.0);
    let (lp, logits) = {
        let mut g = Graph::new(&store);
        let zv = g.constant(zt.clone());
        let lp = output_distribution(&mut g, &p, zv).unwrap();
        let logits = p.output_logits(&mut g, zv).unwrap();
        (g.value(lp).clone(), g.value(logits).clone())
    };
    assert!((lp.data().iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    let z: f64 = logits.data().iter().map(|x| x.exp()).sum();
    for (l, x) in lp.data().iter().zip(logits.data()) {
        assert!((l - (x.exp() / z).ln()).abs() < 1e-12);
    }

    *store.get_mut(p.w_y) = Tensor::zeros(&[6, 5]);
    *store.get_mut(p.out_b) = Tensor::zeros(&[6]);
    let mut g = Graph::new(&store);
    let zv = g.constant(zt);
    let lp = output_distribution(&mut g, &p, zv).unwrap();
    for l in g.value(lp).data() {
        assert!((l - (1.0f64 / 6.0).ln()).abs() < 1e-15);
    }
}
