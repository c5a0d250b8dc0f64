//! Linear toy model of cyclic training.
//!
//! Each task `i` is one data point `x_i`. A slow projection `P` maps it into an
//! embedding space and a fast vector `w` is mapped to the task target through
//! an invertible `f_i`. A visit to task `i` takes one gradient step on `P` for
//! `l_i = 1/2 |P x_i - f_i(w)|^2`, then sets `w` to the exact minimizer
//! `f_i^{-1}(P x_i)` under the updated `P`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeded_rng;
use crate::trainer::EvalGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyFamily {
    /// `f_i(w) = w`
    Identity,
    /// `f_i(w) = y_i - w`
    Reflect,
}

fn one() -> usize {
    1
}

/// Scaling of the `P` step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepNormalization {
    /// `P <- P - alpha (P x_i - f_i(w)) x_i^T`, the gradient of `l_i` as written.
    #[default]
    None,
    /// Step divided by `D_emb`: the gradient of the loss averaged over
    /// embedding coordinates. Keeps `N = 1000` identity runs bounded, since the
    /// plain step is expansive whenever `alpha |x_i|^2 > 2`.
    EmbeddingMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    /// Data dimension.
    pub n: usize,
    /// Embedding dimension.
    pub d_emb: usize,
    pub tasks: usize,
    pub alpha: f64,
    pub family: ToyFamily,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// `P`-step / best-response pairs per visit.
    #[serde(default = "one")]
    pub inner_steps: usize,
    #[serde(default)]
    pub normalization: StepNormalization,
}

impl ToyConfig {
    /// `N = D_emb = 1000`, `T = 25`, `alpha = 0.01`, 30 epochs.
    pub fn identity_default() -> Self {
        Self {
            n: 1000,
            d_emb: 1000,
            tasks: 25,
            alpha: 0.01,
            family: ToyFamily::Identity,
            epochs: 30,
            seed: 0,
            inner_steps: 1,
            normalization: StepNormalization::None,
        }
    }

    /// `N = D_emb = 100`, `T = 25`, `alpha = 0.01`, 30 epochs.
    pub fn reflect_default() -> Self {
        Self {
            n: 100,
            d_emb: 100,
            family: ToyFamily::Reflect,
            ..Self::identity_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_emb == 0 || self.tasks == 0 || self.epochs == 0 || self.inner_steps == 0 {
            return Err(Error::Config(
                "toy dimensions, task count, epochs and inner steps must all be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("toy step size must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Step size actually applied to `P`.
    pub fn effective_alpha(&self) -> f64 {
        match self.normalization {
            StepNormalization::None => self.alpha,
            StepNormalization::EmbeddingMean => self.alpha / self.d_emb as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyState {
    pub family: ToyFamily,
    /// Effective `P` step size.
    pub alpha: f64,
    /// Row-major `d_emb x n`.
    pub p: Vec<f64>,
    pub w: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    /// Task targets; empty for the identity family.
    pub ys: Vec<Vec<f64>>,
}

impl ToyState {
    /// Seeded initialization: `P` entries from `N(0, 1/N^2)`; entries of
    /// `x_i`, `w` and `y_i` from `Unif(-1, 1)`.
    pub fn init(config: &ToyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed);
        let normal = Normal::new(0.0, 1.0 / config.n as f64).expect("positive std");
        let p = (0..config.d_emb * config.n).map(|_| normal.sample(&mut rng)).collect();
        let mut unif = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let xs = (0..config.tasks).map(|_| unif(config.n)).collect();
        let w = unif(config.d_emb);
        let ys = match config.family {
            ToyFamily::Identity => Vec::new(),
            ToyFamily::Reflect => (0..config.tasks).map(|_| unif(config.d_emb)).collect(),
        };
        Ok(Self {
            family: config.family,
            alpha: config.effective_alpha(),
            p,
            w,
            xs,
            ys,
        })
    }

    pub fn tasks(&self) -> usize {
        self.xs.len()
    }

    fn n(&self) -> usize {
        self.xs[0].len()
    }

    fn d_emb(&self) -> usize {
        self.w.len()
    }

    fn check_task(&self, i: usize) -> Result<()> {
        if i >= self.tasks() {
            return Err(Error::Input(format!("task {i} out of range for {} tasks", self.tasks())));
        }
        Ok(())
    }

    /// `P x_i`.
    pub fn project(&self, i: usize) -> Vec<f64> {
        let n = self.n();
        let x = &self.xs[i];
        self.p.chunks_exact(n).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `f_i(w)`.
    fn target(&self, i: usize) -> Vec<f64> {
        match self.family {
            ToyFamily::Identity => self.w.clone(),
            ToyFamily::Reflect => self.ys[i].iter().zip(&self.w).map(|(y, w)| y - w).collect(),
        }
    }

    /// `f_i^{-1}(z)`.
    fn inverse(&self, i: usize, z: Vec<f64>) -> Vec<f64> {
        match self.family {
            ToyFamily::Identity => z,
            ToyFamily::Reflect => self.ys[i].iter().zip(&z).map(|(y, z)| y - z).collect(),
        }
    }

    /// Task loss `1/2 |P x_i - f_i(w)|^2` (0-based task index).
    pub fn loss(&self, i: usize) -> Result<f64> {
        self.check_task(i)?;
        let z = self.project(i);
        let t = self.target(i);
        Ok(0.5 * z.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    /// `f_i^{-1}(P x_i)`: the projected data point in `w`-space.
    pub fn inverse_target(&self, i: usize) -> Result<Vec<f64>> {
        self.check_task(i)?;
        Ok(self.inverse(i, self.project(i)))
    }

    /// One visit step: gradient step on `P`, then best response for `w` under
    /// the new `P`.
    pub fn step(&mut self, i: usize) -> Result<()> {
        self.check_task(i)?;
        let n = self.n();
        let residual: Vec<f64> = self.project(i).iter().zip(self.target(i)).map(|(z, t)| z - t).collect();
        let x = &self.xs[i];
        for (row, r) in self.p.chunks_exact_mut(n).zip(&residual) {
            let s = self.alpha * r;
            for (pij, xj) in row.iter_mut().zip(x) {
                *pij -= s * xj;
            }
        }
        self.w = self.inverse(i, self.project(i));
        if self.p.iter().chain(&self.w).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "toy_step" });
        }
        debug_assert_eq!(self.w.len(), self.d_emb());
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        (0..self.tasks()).map(|i| self.loss(i).expect("valid task")).collect()
    }
}

/// Output of [`toy_run`].
#[derive(Clone, Debug)]
pub struct ToyRun {
    pub grid: EvalGrid,
    /// `snapshots[e][i]` is `f_i^{-1}(P x_i)` after epoch `e` (epoch 0 is the
    /// initial state).
    pub snapshots: Vec<Vec<Vec<f64>>>,
    pub state: ToyState,
}

/// Visits tasks `0..T` in fixed order for every epoch, evaluating all task
/// losses after each visit.
pub fn toy_run(config: &ToyConfig) -> Result<ToyRun> {
    match toy_run_partial(config)? {
        (run, None) => Ok(run),
        (_, Some(e)) => Err(e),
    }
}

/// Like [`toy_run`], but a visit that overflows ends the run early and the
/// rows recorded so far are returned with the divergence error.
pub fn toy_run_partial(config: &ToyConfig) -> Result<(ToyRun, Option<Error>)> {
    let mut state = ToyState::init(config)?;
    let t = config.tasks;
    let mut grid = EvalGrid::new(t, state.losses())?;
    let inverse_targets = |s: &ToyState| -> Vec<Vec<f64>> { (0..t).map(|i| s.inverse_target(i).expect("valid task")).collect() };
    let mut snapshots = vec![inverse_targets(&state)];
    let mut episode = 0;
    for _ in 0..config.epochs {
        let order: Vec<usize> = (0..t).collect();
        grid.log_permutation(order.clone());
        for &i in &order {
            episode += 1;
            let visited = (0..config.inner_steps).try_for_each(|_| state.step(i)).and_then(|_| grid.push_row(state.losses()));
            if let Err(e) = visited {
                let e = match e {
                    Error::NonFinite { op } => Error::Divergence {
                        episode,
                        detail: format!("non-finite value in {op}"),
                    },
                    other => other,
                };
                return Ok((ToyRun { grid, snapshots, state }, Some(e)));
            }
        }
        snapshots.push(inverse_targets(&state));
    }
    Ok((ToyRun { grid, snapshots, state }, None))
}
