use std::fs;
use std::path::{Path, PathBuf};

use cyclab_core::analytics::{
    activation_similarity, aligned_curves, default_gradient_selector, gradient_similarity, pairwise_recovery,
    recovery_scores, toy_trajectory_pca, trajectory_pca, trend_slope, weight_residual_similarity, within_epoch_means,
    SimilarityMatrix, TrajectoryReport,
};
use cyclab_core::models::TransformerLM;
use cyclab_core::numcore::FlatVector;
use cyclab_core::trainer::{
    build_corpus, corpus_hash, derive_seed, read_snapshot_file, streams, CheckpointStore, Document, EvalGrid, TrainConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ToyExperimentConfig, REPORTS};
use crate::error::{CliResult, Failure};
use crate::manifest::{RunKind, RunManifest, SeedEntry};
use crate::run::{ACTIVATIONS, CHECKPOINTS, GRID, PAIRWISE_CHECKPOINT, PERMUTATIONS, SNAPSHOTS, UPDATE_NORMS};

pub const REPORTS_DIR: &str = "reports";

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::missing(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::io(path.display(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write(path, text)
}

fn load_grid(dir: &Path) -> CliResult<EvalGrid> {
    let perms_text = read(&dir.join(PERMUTATIONS))?;
    let perms: Vec<Vec<usize>> =
        serde_json::from_str(&perms_text).map_err(|e| Failure::malformed(format!("{}: {e}", dir.join(PERMUTATIONS).display())))?;
    let text = read(&dir.join(GRID))?;
    EvalGrid::from_csv(&text, perms).map_err(|e| Failure::malformed(format!("{}: {e}", dir.join(GRID).display())))
}

fn load_store(dir: &Path, selector: &str) -> CliResult<CheckpointStore> {
    if !dir.exists() {
        return Err(Failure::missing(format!(
            "no checkpoint store for selector `{selector}` at {}",
            dir.display()
        )));
    }
    let (store, _) = CheckpointStore::load(dir).map_err(|e| Failure::missing(format!("selector `{selector}`: {e}")))?;
    Ok(store)
}

/// Everything the model-based reports need for one seed.
struct Rebuilt {
    model: TransformerLM,
    corpus: Vec<Document>,
    train: TrainConfig,
}

fn rebuild(cfg: &ExperimentConfig, entry: &SeedEntry, dir: &Path) -> CliResult<Rebuilt> {
    let train = TrainConfig {
        seed: entry.seed,
        ..cfg.train.clone()
    };
    let path = dir.join(PAIRWISE_CHECKPOINT);
    if !path.exists() {
        return Err(Failure::missing(format!(
            "no checkpoint for selector `all` after epoch {} at {}",
            train.pairwise_epoch,
            path.display()
        )));
    }
    let (_, values) = read_snapshot_file(&path).map_err(|e| Failure::missing(e.to_string()))?;
    let flat = FlatVector::new(values.into_iter().map(f64::from).collect(), "all");
    let model = TransformerLM::from_flat(cfg.model.transformer(train.context), &flat)?;
    let corpus = build_corpus(&cfg.corpus, train.tasks, train.context, derive_seed(entry.seed, streams::CORPUS))
        .map_err(|e| Failure::missing(format!("corpus unavailable: {e}")))?;
    let hash = corpus_hash(&corpus);
    if entry.corpus_hash.as_deref() != Some(hash.as_str()) {
        return Err(Failure::missing(format!(
            "corpus for seed {} no longer matches the run (hash {hash})",
            entry.seed
        )));
    }
    Ok(Rebuilt { model, corpus, train })
}

fn matrix_summary(m: &SimilarityMatrix) -> serde_json::Value {
    let diag = m.diagonal();
    let positive = diag.iter().filter(|d| matches!(d, Some(v) if *v > 0.0)).count();
    json!({
        "kind": m.kind,
        "size": m.n(),
        "asymmetry": m.asymmetry(),
        "diagonal": diag,
        "diagonal_positive_fraction": positive as f64 / m.n().max(1) as f64,
        "row_off_diagonal_means": m.row_off_diagonal_means(),
        "lag_profile": m.lag_profile(),
    })
}

fn parse_snapshots(text: &str) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let bad = |m: String| Failure::malformed(format!("snapshot CSV: {m}"));
    let mut epochs: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let epoch: usize = f[0].parse().map_err(|_| bad(format!("line {}", i + 1)))?;
        let values = f[2..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("value `{v}` on line {}", i + 1))))
            .collect::<CliResult<Vec<_>>>()?;
        if epoch == epochs.len() {
            epochs.push(Vec::new());
        }
        epochs.last_mut().ok_or_else(|| bad("epochs out of order".into()))?.push(values);
    }
    Ok(epochs)
}

fn analyze_seed(kind: RunKind, config: &serde_json::Value, entry: &SeedEntry, run_dir: &Path, reports: &[String]) -> CliResult<()> {
    let dir = run_dir.join(&entry.dir);
    let out = dir.join(REPORTS_DIR);
    fs::create_dir_all(&out).map_err(|e| Failure::io(out.display(), e))?;
    let grid = load_grid(&dir)?;
    let (t, e) = (grid.tasks(), grid.epochs());
    let exp = match kind {
        RunKind::Transformer => Some(
            serde_json::from_value::<ExperimentConfig>(config.clone())
                .map_err(|e| Failure::malformed(format!("manifest config: {e}")))?,
        ),
        RunKind::Toy => {
            serde_json::from_value::<ToyExperimentConfig>(config.clone())
                .map_err(|e| Failure::malformed(format!("manifest config: {e}")))?;
            None
        }
    };
    let need_exp = |report: &str| {
        exp.as_ref()
            .ok_or_else(|| Failure::missing(format!("report `{report}` needs a transformer run with a corpus and checkpoints")))
    };
    let selector_name = exp
        .as_ref()
        .and_then(|c| c.train.checkpoint_selector)
        .map_or_else(|| "none".to_string(), |s| s.to_string());
    let mut rebuilt: Option<Rebuilt> = None;

    for report in reports {
        match report.as_str() {
            "recovery" => write_json(&out.join("recovery.json"), &recovery_scores(&grid, t, e)?)?,
            "aligned" => write(&out.join("aligned.csv"), aligned_curves(&grid, t, e)?.to_csv())?,
            "residual" => {
                let cfg = need_exp(report)?;
                let store = load_store(&dir.join(CHECKPOINTS), &selector_name)?;
                let (_, m) = weight_residual_similarity(&store, cfg.train.tasks)?;
                write(&out.join("residual_similarity.csv"), m.to_csv())?;
                write_json(&out.join("residual_similarity.json"), &matrix_summary(&m))?;
            }
            "activation" => {
                let cfg = need_exp(report)?;
                let name = cfg.train.activation_probe.map_or("none".into(), |k| format!("activation(doc {})", k + 1));
                let store = load_store(&dir.join(ACTIVATIONS), &name)?;
                let r = activation_similarity(&store)?;
                write(&out.join("activation_similarity.csv"), r.matrix.to_csv())?;
                let summary = json!({
                    "selector": store.selector(),
                    "consecutive_distances": r.consecutive,
                    "within_epoch_means": within_epoch_means(&r.matrix, store.episodes(), cfg.train.tasks),
                });
                write_json(&out.join("activation.json"), &summary)?;
            }
            "updates" => {
                need_exp(report)?;
                let path = dir.join(UPDATE_NORMS);
                let text = read(&path)?;
                let norms = text
                    .lines()
                    .skip(1)
                    .filter(|l| !l.is_empty())
                    .map(|l| {
                        l.split(',')
                            .nth(1)
                            .and_then(|v| v.parse::<f64>().ok())
                            .ok_or_else(|| Failure::malformed(format!("{}: bad line `{l}`", path.display())))
                    })
                    .collect::<CliResult<Vec<f64>>>()?;
                let summary = json!({ "update_norms": norms, "trend_slope": trend_slope(&norms) });
                write_json(&out.join("updates.json"), &summary)?;
            }
            "trajectory" => match kind {
                RunKind::Transformer => {
                    let store = load_store(&dir.join(CHECKPOINTS), &selector_name)?;
                    write_json(&out.join("trajectory.json"), &trajectory_pca(&store, 3, Some(&grid))?)?;
                }
                RunKind::Toy => {
                    let epochs = parse_snapshots(&read(&dir.join(SNAPSHOTS))?)?;
                    let last = epochs.last().ok_or_else(|| Failure::malformed("snapshot CSV has no rows"))?;
                    let mut r: TrajectoryReport = toy_trajectory_pca(last, 2)?;
                    r.peak_offsets = aligned_curves(&grid, t, e)?.peak_offsets();
                    write_json(&out.join("trajectory.json"), &r)?;
                    let per_epoch: Vec<Option<f64>> = epochs
                        .iter()
                        .map(|s| toy_trajectory_pca(s, 2).ok().and_then(|r| r.circular_correlation))
                        .collect();
                    write_json(&out.join("circular_order.json"), &json!({ "per_epoch": per_epoch }))?;
                }
            },
            "pairwise" | "gradient" => {
                let cfg = need_exp(report)?;
                if rebuilt.is_none() {
                    rebuilt = Some(rebuild(cfg, entry, &dir)?);
                }
                let rb = rebuilt.as_ref().expect("rebuilt above");
                let (name, m) = if report == "pairwise" {
                    ("pairwise_recovery", pairwise_recovery(&rb.model, &rb.corpus, &rb.train)?)
                } else {
                    let sel = default_gradient_selector(rb.model.config().depth);
                    ("gradient_similarity", gradient_similarity(&rb.model, &rb.corpus, sel)?)
                };
                write(&out.join(format!("{name}.csv")), m.to_csv())?;
                write_json(&out.join(format!("{name}.json")), &matrix_summary(&m))?;
            }
            other => {
                return Err(Failure::config(format!(
                    "unknown report `{other}`; expected one of {}",
                    REPORTS.join(", ")
                )))
            }
        }
    }
    Ok(())
}

pub fn cmd_analyze(run_dir: &Path, reports: Option<Vec<String>>) -> CliResult<Vec<PathBuf>> {
    let manifest = RunManifest::load(run_dir)?;
    let reports = match reports {
        Some(r) => r,
        None => manifest
            .config
            .get("analytics")
            .and_then(|a| a.get("reports"))
            .and_then(|r| serde_json::from_value::<Vec<String>>(r.clone()).ok())
            .ok_or_else(|| Failure::malformed("manifest config has no analytics.reports"))?,
    };
    let mut dirs = Vec::new();
    for entry in &manifest.seeds {
        analyze_seed(manifest.kind, &manifest.config, entry, run_dir, &reports)?;
        dirs.push(run_dir.join(&entry.dir).join(REPORTS_DIR));
    }
    Ok(dirs)
}
