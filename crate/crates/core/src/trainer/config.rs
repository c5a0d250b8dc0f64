use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use crate::error::{Error, Result};
use crate::models::Selector;

/// Order in which the T tasks are visited within each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Identity permutation every epoch.
    #[default]
    Fixed,
    /// Documents `2..=n` (1-based) re-permuted every epoch; the rest stay put.
    PartialShuffle(usize),
    /// Full re-permutation every epoch.
    FullShuffle,
}

fn d_tasks() -> usize {
    25
}
fn d_context() -> usize {
    256
}
fn d_steps() -> usize {
    10
}
fn d_epochs() -> usize {
    5
}
fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_selector() -> Option<Selector> {
    Some(Selector::OutputEmbedding)
}
fn d_pairwise() -> usize {
    4
}
fn d_probe() -> Option<usize> {
    Some(0)
}
fn d_true() -> bool {
    true
}

/// Cyclic fine-tuning protocol. Defaults: T = 25, C = 256, M = 10, E = 5,
/// plain gradient descent at learning rate 0.001.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_tasks")]
    pub tasks: usize,
    #[serde(default = "d_context")]
    pub context: usize,
    /// Gradient steps per episode (M).
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub mask_prob: f64,
    #[serde(default)]
    pub window_shift_max: usize,
    /// Parameters snapshotted after every episode; `None` disables snapshots.
    #[serde(default = "d_selector")]
    pub checkpoint_selector: Option<Selector>,
    /// Epoch after which a full-model checkpoint is kept for pairwise and
    /// gradient analyses.
    #[serde(default = "d_pairwise")]
    pub pairwise_epoch: usize,
    /// Document whose final hidden states are recorded after every episode.
    #[serde(default = "d_probe")]
    pub activation_probe: Option<usize>,
    /// Record the L2 norm of each episode's trainable-parameter update.
    #[serde(default = "d_true")]
    pub track_update_norms: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks == 0 || self.epochs == 0 {
            return fail("tasks and epochs must be at least 1".into());
        }
        if self.context < 2 {
            return fail(format!("context must be at least 2, got {}", self.context));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return fail(format!("mask_prob must lie in [0, 1], got {}", self.mask_prob));
        }
        if self.window_shift_max > self.context / 2 {
            return fail(format!(
                "window_shift_max {} exceeds C/2 = {}",
                self.window_shift_max,
                self.context / 2
            ));
        }
        if let Ordering::PartialShuffle(n) = self.ordering {
            if n == 0 || n > self.tasks {
                return fail(format!("partial_shuffle({n}) needs 1 <= n <= {}", self.tasks));
            }
        }
        if let Some(p) = self.activation_probe {
            if p >= self.tasks {
                return fail(format!("activation_probe {p} out of range for {} tasks", self.tasks));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}
