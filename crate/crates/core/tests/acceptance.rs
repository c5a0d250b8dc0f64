//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line per criterion. Criteria listed in [`NOT_REPRODUCED`] still print FAIL
//! but do not fail the suite; any other failure does, and so does one of
//! those starting to pass.
//!
//! Criteria 6, 7 and 9 share three seeds of a d=512, L=8 transformer run and
//! take several minutes each on one core.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use cyclab_core::analytics::{
    aligned_curves, pairwise_recovery, peak_offsets, recovery_scores, residual_similarity, toy_trajectory_pca,
    weight_residual_similarity,
};
use cyclab_core::models::{GradMode, InitScheme, LmExample, Selector, TransformerConfig, TransformerLM};
use cyclab_core::numcore::{grad_check, grad_check_coords, FlatVector, Graph, GraphFunction, ScalarFunction, Tensor, Var};
use cyclab_core::toymodel::{toy_run, StepNormalization, ToyConfig, ToyRun};
use cyclab_core::trainer::{prepare_run, run_cyclic, CorpusSource, CyclicOutput, EvalGrid, OptimizerKind, TrainConfig};
use cyclab_core::{seeded_rng, Result, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- toy model

fn toy_identity(seed: u64, epochs: usize) -> ToyRun {
    let cfg = ToyConfig {
        epochs,
        seed,
        ..ToyConfig::identity_default()
    };
    toy_run(&cfg).expect("toy run")
}

fn toy_reflect(seed: u64, epochs: usize) -> ToyRun {
    let cfg = ToyConfig {
        epochs,
        seed,
        ..ToyConfig::reflect_default()
    };
    toy_run(&cfg).expect("toy run")
}

/// Mean RS(2..4) and the task-1 peak offsets of epochs 2..4, seed-averaged.
fn recovery_summary(runs: &[ToyRun]) -> (Vec<f64>, Vec<Option<usize>>) {
    let (t, e) = (25, 5);
    let reports: Vec<_> = runs.iter().map(|r| recovery_scores(&r.grid, t, e).unwrap()).collect();
    let rs = (2..=4)
        .map(|n| mean(&reports.iter().map(|r| r.rs(n).unwrap_or(f64::NAN)).collect::<Vec<_>>()))
        .collect();
    let curves: Vec<Vec<f64>> = runs.iter().map(|r| aligned_curves(&r.grid, t, e).unwrap().per_task[0].clone()).collect();
    let task1: Vec<f64> = (0..curves[0].len()).map(|k| mean(&curves.iter().map(|c| c[k]).collect::<Vec<_>>())).collect();
    // offsets for epochs n = 1..4; the criterion looks at n >= 2
    (rs, peak_offsets(&task1, t)[1..].to_vec())
}

fn criterion_1(runs: &[ToyRun]) -> Outcome {
    let (rs, late) = recovery_summary(runs);
    let pass = rs.iter().all(|&v| v > 0.0) && late.iter().all(|o| matches!(o, Some(b) if *b >= 2));
    let growth: Vec<f64> = runs
        .iter()
        .map(|r| r.grid.rows().last().unwrap()[0] / r.grid.rows()[0][0])
        .collect();
    // diagnostic only: the same runs with the P step averaged over embedding
    // coordinates, which keeps N = 1000 bounded
    let normalized: Vec<ToyRun> = SEEDS
        .iter()
        .map(|&seed| {
            toy_run(&ToyConfig {
                epochs: 5,
                seed,
                normalization: StepNormalization::EmbeddingMean,
                ..ToyConfig::identity_default()
            })
            .unwrap()
        })
        .collect();
    let (nrs, nlate) = recovery_summary(&normalized);
    outcome(
        pass,
        format!(
            "mean RS(2..4) = {rs:.4?}; task-1 peak offsets (epochs 2..4) = {late:?}; task-1 loss growth over 5 epochs = [{}] \
             [diagnostic, step / D_emb: RS = {nrs:.4?}, offsets = {nlate:?}]",
            growth.iter().map(|g| format!("{g:.1e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_2(runs: &[ToyRun]) -> Outcome {
    let scores: Vec<f64> = runs
        .iter()
        .map(|r| {
            let last = r.snapshots.last().unwrap();
            toy_trajectory_pca(last, 2).unwrap().circular_correlation.unwrap_or(f64::NAN)
        })
        .collect();
    let pass = scores.iter().all(|&s| s >= 0.9);
    outcome(pass, format!("circular rank correlation per seed = {scores:.4?}"))
}

fn criterion_3(runs: &[&ToyRun]) -> Outcome {
    let mut worst = 0.0f64;
    let mut visits = 0;
    for r in runs {
        let t = r.grid.tasks();
        for (j, row) in r.grid.rows().iter().enumerate().skip(1) {
            worst = worst.max(row[(j - 1) % t]);
            visits += 1;
        }
    }
    outcome(worst < 1e-18, format!("max post-visit loss over {visits} visits = {worst:e}"))
}

// ------------------------------------------------------- gradient checking

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces `out` to a scalar through a fixed random weighting.
fn weighted_sum(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

type Build = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// Every primitive, differentiated in one input with the others held fixed.
fn primitive_cases(rng: &mut Rng) -> Vec<(&'static str, Vec<usize>, Build)> {
    let (m, k, n) = (3 + rng.random_range(0..3), 2 + rng.random_range(0..4), 2 + rng.random_range(0..3));
    let a = random_tensor(rng, &[m, k]);
    let b = random_tensor(rng, &[k, n]);
    let same = random_tensor(rng, &[m, k]);
    let bias = random_tensor(rng, &[k]);
    let gain = random_tensor(rng, &[k]);
    let wmn = random_tensor(rng, &[m, n]);
    let wmk = random_tensor(rng, &[m, k]);
    let wkm = random_tensor(rng, &[k, m]);
    let wsq = random_tensor(rng, &[m, m]);
    let ids: Vec<usize> = (0..m + 1).map(|_| rng.random_range(0..m)).collect();
    let wids = random_tensor(rng, &[m + 1, k]);
    let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let mut mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.7)).collect();
    mask[0] = true;
    let cut = 1 + rng.random_range(0..k - 1);
    let wslice = random_tensor(rng, &[m, k - cut]);
    let other = random_tensor(rng, &[m, 2]);
    let wcat = random_tensor(rng, &[m, k + 2]);
    let s = rng.random_range(-2.0..2.0);

    let mut cases: Vec<(&'static str, Vec<usize>, Build)> = Vec::new();
    macro_rules! case {
        ($name:expr, $shape:expr, [$($c:ident),*], |$g:ident, $x:ident| $body:expr) => {{
            $(let $c = $c.clone();)*
            let f: Build = Box::new(move |$g: &mut Graph, $x: Var| -> Result<Var> { $body });
            cases.push(($name, $shape, f));
        }};
    }
    case!("matmul (left)", vec![m, k], [b, wmn], |g, x| {
        let c = g.constant(b.clone());
        let o = g.matmul(x, c)?;
        weighted_sum(g, o, &wmn)
    });
    case!("matmul (right)", vec![k, n], [a, wmn], |g, x| {
        let c = g.constant(a.clone());
        let o = g.matmul(c, x)?;
        weighted_sum(g, o, &wmn)
    });
    case!("add", vec![m, k], [same, wmk], |g, x| {
        let c = g.constant(same.clone());
        let o = g.add(x, c)?;
        weighted_sum(g, o, &wmk)
    });
    case!("add (row bias)", vec![k], [a, wmk], |g, x| {
        let c = g.constant(a.clone());
        let o = g.add(c, x)?;
        weighted_sum(g, o, &wmk)
    });
    case!("mul", vec![m, k], [same, wmk], |g, x| {
        let c = g.constant(same.clone());
        let o = g.mul(x, c)?;
        weighted_sum(g, o, &wmk)
    });
    case!("scale", vec![m, k], [wmk], |g, x| {
        let o = g.scale(x, s)?;
        weighted_sum(g, o, &wmk)
    });
    case!("gelu", vec![m, k], [wmk], |g, x| {
        let o = g.gelu(x)?;
        weighted_sum(g, o, &wmk)
    });
    case!("softmax", vec![m, m], [wsq], |g, x| {
        let o = g.softmax(x, false)?;
        weighted_sum(g, o, &wsq)
    });
    case!("softmax (causal)", vec![m, m], [wsq], |g, x| {
        let o = g.softmax(x, true)?;
        weighted_sum(g, o, &wsq)
    });
    case!("layer_norm (input)", vec![m, k], [gain, bias, wmk], |g, x| {
        let (ga, bi) = (g.constant(gain.clone()), g.constant(bias.clone()));
        let o = g.layer_norm(x, ga, bi, 1e-5)?;
        weighted_sum(g, o, &wmk)
    });
    case!("layer_norm (gain)", vec![k], [a, bias, wmk], |g, x| {
        let (inp, bi) = (g.constant(a.clone()), g.constant(bias.clone()));
        let o = g.layer_norm(inp, x, bi, 1e-5)?;
        weighted_sum(g, o, &wmk)
    });
    case!("layer_norm (bias)", vec![k], [a, gain, wmk], |g, x| {
        let (inp, ga) = (g.constant(a.clone()), g.constant(gain.clone()));
        let o = g.layer_norm(inp, ga, x, 1e-5)?;
        weighted_sum(g, o, &wmk)
    });
    case!("gather", vec![m, k], [ids, wids], |g, x| {
        let o = g.gather(x, ids.clone())?;
        weighted_sum(g, o, &wids)
    });
    case!("cross_entropy", vec![m, k], [targets, mask], |g, x| g.cross_entropy(x, targets.clone(), mask.clone()));
    case!("transpose", vec![m, k], [wkm], |g, x| {
        let o = g.transpose(x)?;
        weighted_sum(g, o, &wkm)
    });
    case!("slice", vec![m, k], [wslice], |g, x| {
        let o = g.slice(x, cut, k)?;
        weighted_sum(g, o, &wslice)
    });
    case!("concat", vec![m, k], [other, wcat], |g, x| {
        let c = g.constant(other.clone());
        let o = g.concat(&[x, c])?;
        weighted_sum(g, o, &wcat)
    });
    case!("sum", vec![m, k], [], |g, x| {
        let sq = g.mul(x, x)?;
        g.sum(sq)
    });
    cases
}

struct LmFunction {
    config: TransformerConfig,
    example: LmExample,
}

impl ScalarFunction for LmFunction {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let m = TransformerLM::from_flat(self.config.clone(), &FlatVector::new(x.to_vec(), "all"))?;
        m.loss_value(&self.example)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = TransformerLM::from_flat(self.config.clone(), &FlatVector::new(x.to_vec(), "all"))?;
        let grads = m.lm_loss(&self.example, GradMode::All)?.gradients()?;
        Ok(m.select_from(Selector::All, &grads)?.values)
    }
}

fn criterion_4() -> Outcome {
    let instances = 5;
    let mut worst_prim = 0.0f64;
    let mut worst_name = "";
    let mut checked = 0;
    for i in 0..instances {
        let mut rng = seeded_rng(100 + i);
        for (name, shape, build) in primitive_cases(&mut rng) {
            let n: usize = shape.iter().product();
            let point = FlatVector::new(random_tensor(&mut rng, &shape).into_data(), name);
            assert_eq!(point.len(), n);
            let f = GraphFunction::new(shape, build);
            let err = grad_check(&f, &point, 1e-5).unwrap();
            checked += 1;
            if err > worst_prim {
                worst_prim = err;
                worst_name = name;
            }
        }
    }

    let mut worst_lm = 0.0f64;
    for i in 0..instances {
        let config = TransformerConfig::new(16, 2, 2, 16);
        let model = TransformerLM::init(config.clone(), 200 + i).unwrap();
        let mut rng = seeded_rng(300 + i);
        let tokens: Vec<usize> = (0..16).map(|_| rng.random_range(0..256)).collect();
        let f = LmFunction {
            config,
            example: LmExample::next_token(&tokens),
        };
        let point = model.select_params(Selector::All).unwrap();
        // every coordinate that is not an untouched embedding row
        let grad = f.gradient(&point.values).unwrap();
        let mut coords: Vec<usize> = (0..point.len()).filter(|&c| grad[c] != 0.0).collect();
        coords.extend((0..50).map(|_| rng.random_range(0..point.len())));
        let err = grad_check_coords(&f, &point, 1e-5, &coords).unwrap();
        worst_lm = worst_lm.max(err);
    }
    let pass = worst_prim < 1e-6 && worst_lm < 1e-4;
    outcome(
        pass,
        format!(
            "primitives: {checked} checks, max rel err {worst_prim:.2e} ({worst_name}); lm_loss: {instances} instances, max rel err {worst_lm:.2e}"
        ),
    )
}

// ------------------------------------------------------------ metric oracles

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();

    // T = 4, E = 3: each task is 0 after its visit, then t, 2t, t.
    let shape = |s: usize, t: usize| [0, t, 2 * t, t][s] as f64;
    let rows: Vec<Vec<f64>> = (0..=12)
        .map(|j: usize| (1..=4usize).map(|t| if j < t { 10.0 } else { shape((j - t) % 4, t) }).collect())
        .collect();
    let grid = EvalGrid::fixed(4, rows).unwrap();
    let rep = recovery_scores(&grid, 4, 3).unwrap();
    for e in &rep.epochs {
        if (e.l_max, e.l_before, e.l_after, e.rs) != (5.0, 2.5, 0.0, Some(0.5)) {
            failures.push(format!("recovery epoch {}: {e:?}", e.epoch));
        }
    }
    let al = aligned_curves(&grid, 4, 3).unwrap();
    let expect = vec![10.0, 0.0, 2.5, 5.0, 2.5, 0.0, 2.5, 5.0, 2.5];
    if al.mean != expect || al.markers != vec![0, 4, 8] {
        failures.push(format!("aligned mean {:?}", al.mean));
    }

    // period-T sinusoid in 3-D
    let t = 10;
    let snaps: Vec<FlatVector> = (0..6 * t)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / t as f64;
            FlatVector::new(vec![a.cos(), a.sin(), a.cos() - 0.5 * a.sin()], "w")
        })
        .collect();
    let eps: Vec<usize> = (0..snaps.len()).collect();
    let (_, m) = residual_similarity(&snaps, &eps, t).unwrap();
    let lag = m.lag_profile();
    let (at_t, at_half) = (lag[t].unwrap(), lag[t / 2].unwrap());
    if (at_t - 1.0).abs() > 1e-6 || (at_half + 1.0).abs() > 1e-6 {
        failures.push(format!("sinusoid lag-T {at_t}, lag-T/2 {at_half}"));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("RS = 0.5 on every epoch, aligned curve exact, sinusoid lag-T cos = {at_t:.9}, lag-T/2 cos = {at_half:.9}")
    } else {
        failures.join("; ")
    };
    outcome(pass, detail)
}

// ------------------------------------------------------- transformer runs

fn emergence_config(seed: u64) -> TrainConfig {
    TrainConfig {
        tasks: 10,
        context: 64,
        steps: 10,
        epochs: 5,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn emergence_model(width: usize, depth: usize) -> TransformerConfig {
    let mut m = TransformerConfig::new(width, depth, width / 64, 64);
    m.init_scheme = InitScheme::Simple;
    m
}

struct SeedRun {
    output: CyclicOutput,
    corpus: Vec<cyclab_core::trainer::Document>,
    config: TrainConfig,
}

fn emergence_run(width: usize, depth: usize, seed: u64) -> SeedRun {
    let config = emergence_config(seed);
    let (mut model, corpus) = prepare_run(emergence_model(width, depth), &CorpusSource::Synthetic, &config).unwrap();
    let start = Instant::now();
    let output = run_cyclic(&mut model, &corpus, &config).unwrap();
    eprintln!("  d={width} L={depth} seed {seed}: {:.1}s", start.elapsed().as_secs_f64());
    SeedRun { output, corpus, config }
}

fn rs4(run: &SeedRun) -> f64 {
    recovery_scores(&run.output.grid, 10, 5).unwrap().rs(4).unwrap_or(f64::NAN)
}

fn criterion_6(small: &[SeedRun], large: &[SeedRun]) -> Outcome {
    let s: Vec<f64> = small.iter().map(rs4).collect();
    let l: Vec<f64> = large.iter().map(rs4).collect();
    let (ms, ml) = (mean(&s), mean(&l));
    outcome(
        ml > ms,
        format!("mean RS(4): d=512 L=8 {ml:.4} {l:.4?} vs d=128 L=2 {ms:.4} {s:.4?}"),
    )
}

fn criterion_7(large: &[SeedRun]) -> Outcome {
    let t = 10;
    let mut at_t = Vec::new();
    let mut mid = Vec::new();
    for run in large {
        let store = run.output.checkpoints.as_ref().expect("checkpoint store");
        let (_, m) = weight_residual_similarity(store, t).unwrap();
        let lag = m.lag_profile();
        at_t.push(lag[t].unwrap_or(f64::NAN));
        let window: Vec<f64> = (t / 2 - 2..=t / 2 + 2).filter_map(|l| lag[l]).collect();
        mid.push(mean(&window));
    }
    let (a, b) = (mean(&at_t), mean(&mid));
    outcome(
        a > b,
        format!("mean residual cosine at lag T = {a:.4} {at_t:.4?}; lags T/2-2..T/2+2 = {b:.4} {mid:.4?}"),
    )
}

fn criterion_9(large: &[SeedRun]) -> Outcome {
    let mut positive = 0;
    let mut total = 0;
    let mut zero_ok = true;
    for run in large {
        let ckpt = run.output.pairwise_checkpoint.as_ref().expect("pairwise checkpoint");
        let m = pairwise_recovery(ckpt, &run.corpus, &run.config).unwrap();
        for d in m.diagonal() {
            total += 1;
            if matches!(d, Some(v) if v > 0.0) {
                positive += 1;
            }
        }
        let idle = TrainConfig {
            steps: 0,
            ..run.config.clone()
        };
        let z = pairwise_recovery(ckpt, &run.corpus, &idle).unwrap();
        zero_ok &= z.values().iter().all(|v| *v == Some(0.0));
    }
    let frac = positive as f64 / total as f64;
    outcome(
        frac >= 0.9 && zero_ok,
        format!("positive diagonal {positive}/{total} ({:.0}%); M=0 matrix all zero: {zero_ok}", 100.0 * frac),
    )
}

fn criterion_8() -> Outcome {
    let config = TrainConfig {
        tasks: 3,
        context: 16,
        steps: 2,
        epochs: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let once = || {
        let (mut m, c) = prepare_run(TransformerConfig::new(16, 2, 2, 16), &CorpusSource::Synthetic, &config).unwrap();
        run_cyclic(&mut m, &c, &config).unwrap().grid.to_csv()
    };
    let (a, b) = (once(), once());
    outcome(
        a == b && a.lines().count() == 8,
        format!("two smoke runs, {} bytes each, identical: {}", a.len(), a == b),
    )
}

/// Criteria that fail as implemented; the README explains why.
const NOT_REPRODUCED: [usize; 2] = [1, 6];

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &'static str, o: Outcome| {
        println!("criterion {id} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };

    let identity: Vec<ToyRun> = SEEDS.iter().map(|&s| toy_identity(s, 5)).collect();
    let reflect: Vec<ToyRun> = SEEDS.iter().map(|&s| toy_reflect(s, 30)).collect();
    record(1, "toy anticipatory recovery", criterion_1(&identity));
    record(2, "toy cyclic self-organization", criterion_2(&reflect));
    let all: Vec<&ToyRun> = identity.iter().chain(&reflect).collect();
    record(3, "post-visit zero loss", criterion_3(&all));
    record(4, "gradient correctness", criterion_4());
    record(5, "metric oracles", criterion_5());
    record(8, "determinism", criterion_8());

    eprintln!("training emergence runs (T=10, C=64, M=10, E=5, Adam 1e-3, simple init)");
    let small: Vec<SeedRun> = SEEDS.iter().map(|&s| emergence_run(128, 2, s)).collect();
    let large: Vec<SeedRun> = SEEDS.iter().map(|&s| emergence_run(512, 8, s)).collect();
    record(6, "emergence with width and depth", criterion_6(&small, &large));
    record(7, "cyclic weight-residual structure", criterion_7(&large));
    record(9, "pairwise recovery sanity", criterion_9(&large));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    let unexpected: Vec<usize> = results
        .iter()
        .filter(|r| r.2.pass == NOT_REPRODUCED.contains(&r.0))
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {}/{} criteria passed; failed: {failed:?}; known not reproduced: {NOT_REPRODUCED:?}; unexpected: {unexpected:?}",
        results.len() - failed.len(),
        results.len(),
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
