use std::fs;
use std::path::{Path, PathBuf};

use cyclab_core::models::{InitScheme, TransformerConfig, BYTE_VOCAB};
use cyclab_core::toymodel::{StepNormalization, ToyConfig, ToyFamily};
use cyclab_core::trainer::{CorpusSource, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Failure};

fn d_vocab() -> usize {
    BYTE_VOCAB
}
fn d_width() -> usize {
    128
}
fn d_depth() -> usize {
    2
}
fn d_mlp() -> usize {
    4
}

/// Model section; the context length comes from the training section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_vocab")]
    pub vocab_size: usize,
    #[serde(default = "d_width")]
    pub width: usize,
    #[serde(default = "d_depth")]
    pub depth: usize,
    /// Defaults to one head per 64 channels.
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default = "d_mlp")]
    pub mlp_ratio: usize,
    #[serde(default)]
    pub init_scheme: InitScheme,
    #[serde(default)]
    pub frozen_blocks: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ModelSection {
    pub fn transformer(&self, context: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size: self.vocab_size,
            width: self.width,
            depth: self.depth,
            heads: self.heads.unwrap_or((self.width / 64).max(1)),
            context,
            mlp_ratio: self.mlp_ratio,
            init_scheme: self.init_scheme,
            frozen_blocks: self.frozen_blocks,
        }
    }
}

pub const REPORTS: [&str; 8] = [
    "recovery",
    "aligned",
    "pairwise",
    "gradient",
    "residual",
    "activation",
    "updates",
    "trajectory",
];

fn d_reports() -> Vec<String> {
    REPORTS.iter().map(|s| s.to_string()).collect()
}

fn d_toy_reports() -> Vec<String> {
    ["recovery", "aligned", "trajectory"].iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsSection {
    #[serde(default = "d_reports")]
    pub reports: Vec<String>,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        Self { reports: d_reports() }
    }
}

fn d_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_out")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: d_out() }
    }
}

fn d_seeds() -> Vec<u64> {
    vec![0]
}

/// Configuration of a transformer experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_corpus")]
    pub corpus: CorpusSource,
    #[serde(default)]
    pub analytics: AnalyticsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

fn d_corpus() -> CorpusSource {
    CorpusSource::Synthetic
}

/// Toy-model section; unset fields take the family's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    #[serde(default)]
    pub family: Option<ToyFamily>,
    pub n: Option<usize>,
    pub d_emb: Option<usize>,
    pub tasks: Option<usize>,
    pub alpha: Option<f64>,
    pub epochs: Option<usize>,
    pub inner_steps: Option<usize>,
    pub normalization: Option<StepNormalization>,
}

impl ToySection {
    /// Every unset field replaced by its family default.
    pub fn filled(&self) -> ToySection {
        let c = self.resolve(0);
        ToySection {
            family: Some(c.family),
            n: Some(c.n),
            d_emb: Some(c.d_emb),
            tasks: Some(c.tasks),
            alpha: Some(c.alpha),
            epochs: Some(c.epochs),
            inner_steps: Some(c.inner_steps),
            normalization: Some(c.normalization),
        }
    }

    pub fn resolve(&self, seed: u64) -> ToyConfig {
        let base = match self.family.unwrap_or(ToyFamily::Identity) {
            ToyFamily::Identity => ToyConfig::identity_default(),
            ToyFamily::Reflect => ToyConfig::reflect_default(),
        };
        ToyConfig {
            n: self.n.unwrap_or(base.n),
            d_emb: self.d_emb.unwrap_or(base.d_emb),
            tasks: self.tasks.unwrap_or(base.tasks),
            alpha: self.alpha.unwrap_or(base.alpha),
            epochs: self.epochs.unwrap_or(base.epochs),
            inner_steps: self.inner_steps.unwrap_or(base.inner_steps),
            normalization: self.normalization.unwrap_or(base.normalization),
            seed,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyExperimentConfig {
    #[serde(default)]
    pub toy: ToySection,
    #[serde(default = "d_toy_analytics")]
    pub analytics: AnalyticsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

fn d_toy_analytics() -> AnalyticsSection {
    AnalyticsSection {
        reports: d_toy_reports(),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn check_reports(reports: &[String]) -> CliResult<()> {
    match reports.iter().find(|r| !REPORTS.contains(&r.as_str())) {
        Some(r) => Err(Failure::config(format!("unknown report `{r}`; expected one of {}", REPORTS.join(", ")))),
        None => Ok(()),
    }
}

fn check_seeds(seeds: &[u64]) -> CliResult<()> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if seeds.is_empty() || sorted.len() != seeds.len() {
        return Err(Failure::config("seeds must be a non-empty list without repeats"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.model.transformer(self.train.context).validate()?;
        check_reports(&self.analytics.reports)?;
        check_seeds(&self.seeds)
    }
}

impl ToyExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.toy.resolve(0).validate()?;
        check_reports(&self.analytics.reports)?;
        check_seeds(&self.seeds)
    }
}
