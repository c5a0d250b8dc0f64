use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `p <- p - lr * g`
    #[default]
    Gd,
    /// Bias-corrected Adam.
    Adam,
}

/// Per-episode optimizer state. Moments are aligned to the trainable
/// parameter list and are zeroed by [`OptimizerState::reset`].
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            kind,
            beta1,
            beta2,
            eps,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn gd() -> Self {
        Self::new(OptimizerKind::Gd, 0.9, 0.999, 1e-8)
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::Adam, 0.9, 0.999, 1e-8)
    }

    pub fn reset(&mut self) {
        for m in self.first.iter_mut().chain(self.second.iter_mut()) {
            m.fill(0.0);
        }
        self.step = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers (empty before the first Adam step).
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Applies one update in place. `params[i]` and `grads[i]` must be
    /// aligned; the same alignment must hold for every call between resets.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::Contract("parameters and gradients are not aligned".into()));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Gd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.len() != params.len() || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
                    self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * gi;
                        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        if params.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite { op: "optimizer_step" });
        }
        Ok(())
    }
}
