//! Central finite differences against the graph's reverse sweep.
//!
//! The function under test may return a tensor of any shape; it is reduced to
//! a scalar by a fixed random projection so that every output entry carries a
//! distinct weight into the gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crnt_core::numerics::{Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crnt_core::Result;

use crate::uniform;

pub const STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error over the entries checked.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl FdReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(self, other: FdReport) -> FdReport {
        FdReport {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
        }
    }
}

fn projected(g: &mut Graph, out: Var) -> Result<Var> {
    if g.value(out).is_scalar() {
        return Ok(out);
    }
    let shape = g.value(out).shape().to_vec();
    let r = uniform(&mut ChaCha8Rng::seed_from_u64(0xfd), &shape, 1.0);
    let r = g.constant(r);
    let m = g.mul(out, r)?;
    Ok(g.sum(m))
}

type LeafFn<'f> = dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'f;

fn leaf_loss(store: &ParamStore, inputs: &[Tensor], f: &LeafFn) -> Result<f64> {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = projected(&mut g, out)?;
    Ok(g.value(loss).item())
}

/// Checks the gradient of `f` with respect to every entry of every input,
/// and with respect to the parameters listed in `params` (all entries).
pub fn check(
    store: &mut ParamStore,
    params: &[ParamId],
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<FdReport> {
    let picks: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |j| (id, j)))
        .collect();
    check_entries(store, &picks, inputs, f)
}

/// As [`check`], restricted to the listed parameter entries.
pub fn check_entries(
    store: &mut ParamStore,
    picks: &[(ParamId, usize)],
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<FdReport> {
    let (input_grads, param_grads) = {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let loss = projected(&mut g, out)?;
        let back = g.backward(loss)?;
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| back.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        let mut pg = Gradients::zeros_like(store);
        g.accumulate_param_grads(&back, &mut pg);
        (ig, pg)
    };

    let mut report = FdReport::default();
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + STEP;
            let plus = leaf_loss(store, &work, f)?;
            work[i].data_mut()[j] = x0 - STEP;
            let minus = leaf_loss(store, &work, f)?;
            work[i].data_mut()[j] = x0;
            report.record(input_grads[i][j], (plus - minus) / (2.0 * STEP));
        }
    }
    for &(id, j) in picks {
        let x0 = store.get(id).data()[j];
        store.get_mut(id).data_mut()[j] = x0 + STEP;
        let plus = leaf_loss(store, inputs, f)?;
        store.get_mut(id).data_mut()[j] = x0 - STEP;
        let minus = leaf_loss(store, inputs, f)?;
        store.get_mut(id).data_mut()[j] = x0;
        report.record(param_grads.get(id)[j], (plus - minus) / (2.0 * STEP));
    }
    Ok(report)
}
