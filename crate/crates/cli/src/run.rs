use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cyclab_core::models::Selector;
use cyclab_core::toymodel::toy_run_partial;
use cyclab_core::trainer::{
    corpus_hash, prepare_run, run_cyclic_partial, write_snapshot_file, CheckpointStore, CyclicOutput, StoreMeta,
    TrainConfig,
};

use crate::config::{ExperimentConfig, ToyExperimentConfig};
use crate::error::{CliResult, Failure};
use crate::manifest::{config_hash, RunKind, RunManifest, SeedEntry};

pub const GRID: &str = "grid.csv";
pub const PERMUTATIONS: &str = "permutations.json";
pub const EPISODES: &str = "episodes.csv";
pub const UPDATE_NORMS: &str = "update_norms.csv";
pub const CHECKPOINTS: &str = "checkpoints";
pub const ACTIVATIONS: &str = "activations";
pub const PAIRWISE_CHECKPOINT: &str = "pairwise_checkpoint.cycd";
pub const SNAPSHOTS: &str = "snapshots.csv";

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed_{seed}")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::io(path.display(), e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::io(path.display(), e))
}

/// Worker count from `CYCLAB_THREADS`; defaults to 1.
fn threads() -> usize {
    std::env::var("CYCLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Runs `job` for every seed on up to `CYCLAB_THREADS` workers, keeping
/// results in seed order.
fn fan_out<T: Send>(seeds: &[u64], job: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let workers = threads().min(seeds.len()).max(1);
    let mut results: Vec<Option<T>> = seeds.iter().map(|_| None).collect();
    for (chunk_seeds, chunk_out) in seeds.chunks(workers).zip(results.chunks_mut(workers)) {
        std::thread::scope(|s| {
            let job = &job;
            let handles: Vec<_> = chunk_seeds.iter().map(|&seed| s.spawn(move || job(seed))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("seed worker panicked"));
            }
        });
    }
    results.into_iter().map(|r| r.expect("every seed ran")).collect()
}

fn episodes_csv(out: &CyclicOutput, steps: usize) -> String {
    let mut s = String::from("episode,epoch,task");
    for k in 1..=steps {
        write!(s, ",loss_step_{k}").unwrap();
    }
    s.push('\n');
    for log in &out.logs {
        write!(s, "{},{},{}", log.episode, log.epoch, log.task + 1).unwrap();
        for l in &log.step_losses {
            write!(s, ",{l}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn norms_csv(norms: &[f64]) -> String {
    let mut s = String::from("episode,update_norm\n");
    for (i, n) in norms.iter().enumerate() {
        writeln!(s, "{},{n}", i + 1).unwrap();
    }
    s
}

struct SeedResult {
    entry: SeedEntry,
    failure: Option<Failure>,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path, hash: &str, echo: &serde_json::Value) -> CliResult<SeedResult> {
    let start = Instant::now();
    let train = TrainConfig { seed, ..cfg.train.clone() };
    let (mut model, corpus) = prepare_run(cfg.model.transformer(train.context), &cfg.corpus, &train)?;
    let chash = corpus_hash(&corpus);
    let (out, err) = run_cyclic_partial(&mut model, &corpus, &train);

    create_dir(dir)?;
    write(&dir.join(GRID), out.grid.to_csv())?;
    let perms = serde_json::to_string(out.grid.permutations()).expect("permutations serialize");
    write(&dir.join(PERMUTATIONS), perms)?;
    write(&dir.join(EPISODES), episodes_csv(&out, train.steps))?;
    if train.track_update_norms {
        write(&dir.join(UPDATE_NORMS), norms_csv(&out.update_norms))?;
    }
    let meta = StoreMeta {
        config_hash: hash.to_string(),
        corpus_hash: chash.clone(),
        permutations: out.grid.permutations().to_vec(),
        config: echo.clone(),
        ..StoreMeta::default()
    };
    let save = |store: &Option<CheckpointStore>, name: &str| -> CliResult<()> {
        match store {
            Some(s) if !s.is_empty() => Ok(s.save(&dir.join(name), meta.clone())?),
            _ => Ok(()),
        }
    };
    save(&out.checkpoints, CHECKPOINTS)?;
    save(&out.activations, ACTIVATIONS)?;
    if let Some(ckpt) = &out.pairwise_checkpoint {
        let flat = ckpt.select_params(Selector::All)?;
        let values: Vec<f32> = flat.values.iter().map(|&v| v as f32).collect();
        write_snapshot_file(&dir.join(PAIRWISE_CHECKPOINT), &Selector::All.to_string(), &values)?;
    }
    let failure = err.map(|e| {
        let f = Failure::from(e);
        Failure::new(f.code, format!("seed {seed}: {f} (partial results in {})", dir.display()))
    });
    Ok(SeedResult {
        entry: SeedEntry {
            seed,
            dir: seed_dir_name(seed),
            corpus_hash: Some(chash),
            seconds: start.elapsed().as_secs_f64(),
            status: failure.as_ref().map_or_else(|| "ok".to_string(), |f| f.message.clone()),
        },
        failure,
    })
}

fn finish(out_dir: &Path, kind: RunKind, echo: serde_json::Value, results: Vec<CliResult<SeedResult>>) -> CliResult<()> {
    let mut seeds = Vec::new();
    let mut first_failure = None;
    for r in results {
        match r {
            Ok(sr) => {
                seeds.push(sr.entry);
                if first_failure.is_none() {
                    first_failure = sr.failure;
                }
            }
            Err(f) => {
                if first_failure.is_none() {
                    first_failure = Some(f);
                }
            }
        }
    }
    let manifest = RunManifest {
        kind,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&echo),
        config: echo,
        seeds,
    };
    manifest.save(out_dir)?;
    first_failure.map_or(Ok(()), Err)
}

fn resolve_out(configured: &Path, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| configured.to_path_buf())
}

pub fn cmd_run(config: &Path, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> CliResult<PathBuf> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.output.dir = resolve_out(&cfg.output.dir, out);
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    cfg.validate()?;
    let out_dir = cfg.output.dir.clone();
    create_dir(&out_dir)?;
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    let hash = config_hash(&echo);
    let results = fan_out(&cfg.seeds, |seed| {
        let dir = out_dir.join(seed_dir_name(seed));
        run_seed(&cfg, seed, &dir, &hash, &echo)
    });
    finish(&out_dir, RunKind::Transformer, echo, results)?;
    Ok(out_dir)
}

/// `epoch,task,v_1..v_D`, one row per task at each epoch boundary.
pub fn snapshots_csv(snapshots: &[Vec<Vec<f64>>]) -> String {
    let dim = snapshots.first().and_then(|e| e.first()).map_or(0, Vec::len);
    let mut s = String::from("epoch,task");
    for k in 1..=dim {
        write!(s, ",v{k}").unwrap();
    }
    s.push('\n');
    for (epoch, points) in snapshots.iter().enumerate() {
        for (task, p) in points.iter().enumerate() {
            write!(s, "{epoch},{}", task + 1).unwrap();
            for v in p {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

pub fn cmd_toy(config: &Path, out: Option<PathBuf>, seeds: Option<Vec<u64>>) -> CliResult<PathBuf> {
    let mut cfg = ToyExperimentConfig::load(config)?;
    cfg.toy = cfg.toy.filled();
    cfg.output.dir = resolve_out(&cfg.output.dir, out);
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    cfg.validate()?;
    let out_dir = cfg.output.dir.clone();
    create_dir(&out_dir)?;
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    let results = fan_out(&cfg.seeds, |seed| -> CliResult<SeedResult> {
        let start = Instant::now();
        let dir = out_dir.join(seed_dir_name(seed));
        let (run, err) = toy_run_partial(&cfg.toy.resolve(seed))?;
        create_dir(&dir)?;
        write(&dir.join(GRID), run.grid.to_csv())?;
        let perms = serde_json::to_string(run.grid.permutations()).expect("permutations serialize");
        write(&dir.join(PERMUTATIONS), perms)?;
        write(&dir.join(SNAPSHOTS), snapshots_csv(&run.snapshots))?;
        let failure = err.map(|e| {
            let f = Failure::from(e);
            Failure::new(f.code, format!("seed {seed}: {f} (partial results in {})", dir.display()))
        });
        Ok(SeedResult {
            entry: SeedEntry {
                seed,
                dir: seed_dir_name(seed),
                corpus_hash: None,
                seconds: start.elapsed().as_secs_f64(),
                status: failure.as_ref().map_or_else(|| "ok".to_string(), |f| f.message.clone()),
            },
            failure,
        })
    });
    finish(&out_dir, RunKind::Toy, echo, results)?;
    Ok(out_dir)
}
