//! Browser bindings for the linear toy model: simulate a cyclic run, then
//! read back its aligned loss curve, recovery scores and the PCA layout of
//! the inverse targets after any epoch.

use cyclab_core::analytics::{aligned_curves, recovery_scores, toy_trajectory_pca};
use cyclab_core::toymodel::{toy_run_partial, StepNormalization, ToyConfig, ToyRun};
use cyclab_core::Result;
use wasm_bindgen::prelude::*;

/// One finished (or diverged) toy run held in wasm memory.
#[wasm_bindgen]
pub struct ToySimulation {
    run: ToyRun,
    tasks: usize,
    diverged_at: Option<usize>,
}

fn config(family: &str, n: usize, tasks: usize, epochs: usize, seed: u32, normalized: bool) -> Result<ToyConfig> {
    let base = match family {
        "identity" => ToyConfig::identity_default(),
        "reflect" => ToyConfig::reflect_default(),
        other => return Err(cyclab_core::Error::Config(format!("unknown toy family `{other}`"))),
    };
    Ok(ToyConfig {
        n,
        d_emb: n,
        tasks,
        epochs,
        seed: u64::from(seed),
        normalization: if normalized { StepNormalization::EmbeddingMean } else { StepNormalization::None },
        ..base
    })
}

impl ToySimulation {
    pub fn simulate(family: &str, n: usize, tasks: usize, epochs: usize, seed: u32, normalized: bool) -> Result<Self> {
        let cfg = config(family, n, tasks, epochs, seed, normalized)?;
        let (run, err) = toy_run_partial(&cfg)?;
        let diverged_at = match err {
            None => None,
            Some(cyclab_core::Error::Divergence { episode, .. }) => Some(episode),
            Some(e) => return Err(e),
        };
        Ok(Self { run, tasks, diverged_at })
    }

    fn completed_epochs(&self) -> usize {
        (self.run.grid.rows().len() - 1) / self.tasks
    }

    fn aligned(&self) -> Result<Vec<f64>> {
        Ok(aligned_curves(&self.grid_prefix()?, self.tasks, self.completed_epochs())?.mean)
    }

    fn recovery(&self) -> Result<Vec<f64>> {
        let r = recovery_scores(&self.grid_prefix()?, self.tasks, self.completed_epochs())?;
        Ok(r.epochs.iter().map(|e| e.rs.unwrap_or(f64::NAN)).collect())
    }

    fn pca_layout(&self, epoch: usize) -> Result<(Vec<f64>, Option<f64>)> {
        let snap = self
            .run
            .snapshots
            .get(epoch)
            .ok_or_else(|| cyclab_core::Error::Input(format!("no snapshot for epoch {epoch}")))?;
        let r = toy_trajectory_pca(snap, 2)?;
        Ok((r.coords.into_iter().flatten().collect(), r.circular_correlation))
    }

    /// Grid truncated to whole epochs, so diverged runs still analyze.
    fn grid_prefix(&self) -> Result<cyclab_core::trainer::EvalGrid> {
        let e = self.completed_epochs();
        let rows = self.run.grid.rows()[..self.tasks * e + 1].to_vec();
        cyclab_core::trainer::EvalGrid::fixed(self.tasks, rows)
    }
}

fn js(e: cyclab_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl ToySimulation {
    /// `family` is `"identity"` or `"reflect"`; the embedding dimension equals `n`.
    #[wasm_bindgen(constructor)]
    pub fn new(family: &str, n: usize, tasks: usize, epochs: usize, seed: u32, normalized: bool) -> std::result::Result<ToySimulation, JsError> {
        Self::simulate(family, n, tasks, epochs, seed, normalized).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> usize {
        self.completed_epochs()
    }

    /// Episode at which the run overflowed, if it did.
    #[wasm_bindgen(getter, js_name = divergedAt)]
    pub fn diverged_at(&self) -> Option<usize> {
        self.diverged_at
    }

    /// Mean loss against episodes since each task's first visit.
    #[wasm_bindgen(js_name = alignedCurve)]
    pub fn aligned_curve(&self) -> std::result::Result<Vec<f64>, JsError> {
        self.aligned().map_err(js)
    }

    /// Recovery score per revisit epoch; `NaN` where undefined.
    #[wasm_bindgen(js_name = recoveryScores)]
    pub fn recovery_scores(&self) -> std::result::Result<Vec<f64>, JsError> {
        self.recovery().map_err(js)
    }

    /// Interleaved `x, y` PCA coordinates of the inverse targets after `epoch`.
    pub fn layout(&self, epoch: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.pca_layout(epoch).map(|(c, _)| c).map_err(js)
    }

    /// How well the 2-D layout after `epoch` follows task order around a circle.
    #[wasm_bindgen(js_name = circularOrder)]
    pub fn circular_order(&self, epoch: usize) -> Option<f64> {
        self.pca_layout(epoch).ok().and_then(|(_, c)| c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_run_orders_tasks_on_a_circle() {
        let sim = ToySimulation::simulate("reflect", 40, 12, 15, 0, false).unwrap();
        assert_eq!(sim.completed_epochs(), 15);
        let (coords, corr) = sim.pca_layout(15).unwrap();
        assert_eq!(coords.len(), 2 * 12);
        assert!(corr.unwrap() > 0.8, "{corr:?}");
        assert_eq!(sim.aligned().unwrap().len(), 12 * 14 + 1);
        assert_eq!(sim.recovery().unwrap().len(), 14);
    }

    #[test]
    fn diverged_run_keeps_whole_epochs() {
        let sim = ToySimulation::simulate("identity", 1000, 10, 80, 1, false).unwrap();
        let at = sim.diverged_at.expect("plain identity step expands at this size");
        assert_eq!(sim.completed_epochs(), (at - 1) / 10);
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(ToySimulation::simulate("spiral", 10, 3, 2, 0, false).is_err());
    }
}
