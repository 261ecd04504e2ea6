use super::{Gradients, ParamStore};
use crate::error::{shape_err, Result};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self::with_hyperparams(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        let congruent = |m: &Vec<Vec<f64>>| {
            m.len() == self.first.len() && m.iter().zip(&self.first).all(|(a, b)| a.len() == b.len())
        };
        if !congruent(&first) || !congruent(&second) {
            return shape_err("adam restore", "moment buffers are not congruent with parameters");
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    pub fn quantize_f32(&mut self) {
        for m in self.first.iter_mut().chain(self.second.iter_mut()) {
            for v in m.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || params.len() != self.first.len() {
            return shape_err(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            );
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let p = params.get_mut(id).data_mut();
            if g.len() != p.len() {
                return shape_err("adam_step", format!("gradient length {} for {}", g.len(), p.len()));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
