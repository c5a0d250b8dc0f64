use rand::seq::SliceRandom;

use super::checkpoint::CheckpointStore;
use super::config::{Ordering, TrainConfig};
use super::corpus::{build_corpus, CorpusSource, Document};
use super::grid::EvalGrid;
use super::optim::OptimizerState;
use super::randomize::apply_randomization;
use super::{derive_seed, streams};
use crate::error::{Error, Result};
use crate::models::{GradMode, TransformerConfig, TransformerLM};
use crate::numcore::FlatVector;
use crate::{seeded_rng, Rng};

/// Per-episode training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    /// 1-based global episode index.
    pub episode: usize,
    /// 1-based epoch.
    pub epoch: usize,
    /// 0-based task index.
    pub task: usize,
    pub step_losses: Vec<f64>,
}

/// Everything one cyclic run produces.
#[derive(Clone, Debug)]
pub struct CyclicOutput {
    pub grid: EvalGrid,
    /// Selector snapshots; index 0 is the pre-training state.
    pub checkpoints: Option<CheckpointStore>,
    /// Final hidden states of the probe document; index 0 is pre-training.
    pub activations: Option<CheckpointStore>,
    pub logs: Vec<EpisodeLog>,
    /// L2 norm of each episode's trainable-parameter update.
    pub update_norms: Vec<f64>,
    /// Full model after epoch `pairwise_epoch`.
    pub pairwise_checkpoint: Option<TransformerLM>,
}

/// Visiting order of one epoch as 0-based task indices.
pub fn schedule_epoch(ordering: Ordering, tasks: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tasks).collect();
    match ordering {
        Ordering::Fixed => {}
        Ordering::FullShuffle => order.shuffle(rng),
        Ordering::PartialShuffle(n) => {
            let n = n.min(tasks);
            if n > 1 {
                order[1..n].shuffle(rng);
            }
        }
    }
    order
}

/// Loss of every document on its canonical window.
pub fn evaluate_all(model: &TransformerLM, corpus: &[Document]) -> Result<Vec<f64>> {
    corpus.iter().map(|d| model.loss_value(&d.canonical_example())).collect()
}

/// Runs `M` gradient steps on one document with a freshly reset optimizer.
/// Returns the loss observed before each step.
pub fn run_episode(
    model: &mut TransformerLM,
    doc: &Document,
    config: &TrainConfig,
    opt: &mut OptimizerState,
    rng: &mut Rng,
    episode: usize,
) -> Result<Vec<f64>> {
    let diverged = |e: Error| match e {
        Error::NonFinite { op } => Error::Divergence {
            episode,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    };
    opt.reset();
    let trainable = model.trainable_indices();
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let view = apply_randomization(doc, config.context, config.mask_prob, config.window_shift_max, rng)?;
        let rec = model.lm_loss(&view.example, GradMode::Trainable).map_err(diverged)?;
        if !rec.value.is_finite() {
            return Err(Error::Divergence {
                episode,
                detail: format!("loss {}", rec.value),
            });
        }
        losses.push(rec.value);
        let grads = rec.gradients()?;
        let grad_refs: Vec<&[f64]> = trainable
            .iter()
            .map(|&i| grads[i].as_ref().map(|t| t.data()).ok_or(Error::Contract("missing trainable gradient".into())))
            .collect::<Result<_>>()?;
        let mut params = model.trainable_params_mut();
        opt.step(&mut params, &grad_refs, config.lr).map_err(diverged)?;
    }
    Ok(losses)
}

fn check_setup(model: &TransformerLM, corpus: &[Document], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let mc = model.config();
    if corpus.len() != config.tasks {
        return Err(Error::Config(format!("corpus has {} documents, expected {}", corpus.len(), config.tasks)));
    }
    if mc.context < config.context {
        return Err(Error::Config(format!(
            "model context {} is shorter than training context {}",
            mc.context, config.context
        )));
    }
    if let Some(d) = corpus.iter().find(|d| d.window.len() != config.context) {
        return Err(Error::Config(format!("document {} window is not {} tokens", d.id, config.context)));
    }
    if let Some(d) = corpus.iter().find(|d| d.tokens.iter().any(|&t| t >= mc.vocab_size)) {
        return Err(Error::Config(format!("document {} has tokens outside the vocabulary", d.id)));
    }
    Ok(())
}

fn hidden_vector(model: &TransformerLM, doc: &Document, name: &str) -> Result<FlatVector> {
    let (_, hidden) = model.forward(&doc.window)?;
    Ok(FlatVector::new(hidden.into_data(), name))
}

fn update_norm(before: &FlatVector, after: &FlatVector) -> f64 {
    before
        .values
        .iter()
        .zip(&after.values)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}

/// Cyclic fine-tuning that keeps everything recorded so far when an episode
/// diverges. The error, if any, is returned alongside the partial output.
pub fn run_cyclic_partial(
    model: &mut TransformerLM,
    corpus: &[Document],
    config: &TrainConfig,
) -> (CyclicOutput, Option<Error>) {
    let empty = |tasks: usize| CyclicOutput {
        grid: EvalGrid::fixed(tasks.max(1), vec![vec![0.0; tasks.max(1)]]).expect("valid placeholder grid"),
        checkpoints: None,
        activations: None,
        logs: Vec::new(),
        update_norms: Vec::new(),
        pairwise_checkpoint: None,
    };
    if let Err(e) = check_setup(model, corpus, config) {
        return (empty(config.tasks), Some(e));
    }
    let initial = match evaluate_all(model, corpus) {
        Ok(r) => r,
        Err(e) => return (empty(config.tasks), Some(e)),
    };
    let mut out = CyclicOutput {
        grid: EvalGrid::new(config.tasks, initial).expect("tasks > 0"),
        checkpoints: config.checkpoint_selector.map(|s| CheckpointStore::new(s.to_string())),
        activations: config
            .activation_probe
            .map(|k| CheckpointStore::new(format!("activation(doc {})", k + 1))),
        logs: Vec::new(),
        update_norms: Vec::new(),
        pairwise_checkpoint: None,
    };
    let err = train_epochs(model, corpus, config, &mut out).err();
    (out, err)
}

fn record_snapshots(model: &TransformerLM, corpus: &[Document], config: &TrainConfig, out: &mut CyclicOutput, episode: usize) -> Result<()> {
    if let (Some(store), Some(sel)) = (out.checkpoints.as_mut(), config.checkpoint_selector) {
        store.push(episode, &model.select_params(sel)?)?;
    }
    if let (Some(store), Some(k)) = (out.activations.as_mut(), config.activation_probe) {
        let name = store.selector().to_string();
        store.push(episode, &hidden_vector(model, &corpus[k], &name)?)?;
    }
    Ok(())
}

fn train_epochs(model: &mut TransformerLM, corpus: &[Document], config: &TrainConfig, out: &mut CyclicOutput) -> Result<()> {
    let mut schedule_rng = seeded_rng(derive_seed(config.seed, streams::SCHEDULE));
    let mut data_rng = seeded_rng(derive_seed(config.seed, streams::DATA));
    let mut opt = OptimizerState::new(config.optimizer, config.beta1, config.beta2, config.adam_eps);
    record_snapshots(model, corpus, config, out, 0)?;
    let mut episode = 0;
    for epoch in 1..=config.epochs {
        let order = schedule_epoch(config.ordering, config.tasks, &mut schedule_rng);
        out.grid.log_permutation(order.clone());
        for task in order {
            episode += 1;
            let before = if config.track_update_norms {
                Some(model.select_params(crate::models::Selector::TrainableOnly)?)
            } else {
                None
            };
            let step_losses = run_episode(model, &corpus[task], config, &mut opt, &mut data_rng, episode)?;
            if let Some(before) = before {
                let after = model.select_params(crate::models::Selector::TrainableOnly)?;
                out.update_norms.push(update_norm(&before, &after));
            }
            let row = evaluate_all(model, corpus).map_err(|e| match e {
                Error::NonFinite { op } => Error::Divergence {
                    episode,
                    detail: format!("non-finite evaluation in {op}"),
                },
                other => other,
            })?;
            out.grid.push_row(row)?;
            record_snapshots(model, corpus, config, out, episode)?;
            out.logs.push(EpisodeLog {
                episode,
                epoch,
                task,
                step_losses,
            });
        }
        if epoch == config.pairwise_epoch {
            out.pairwise_checkpoint = Some(model.clone());
        }
    }
    Ok(())
}

/// Initializes the model and builds the corpus for `config.seed`, each from
/// its own random stream.
pub fn prepare_run(
    model: TransformerConfig,
    source: &CorpusSource,
    config: &TrainConfig,
) -> Result<(TransformerLM, Vec<Document>)> {
    config.validate()?;
    let lm = TransformerLM::init(model, derive_seed(config.seed, streams::MODEL))?;
    let corpus = build_corpus(source, config.tasks, config.context, derive_seed(config.seed, streams::CORPUS))?;
    Ok((lm, corpus))
}

/// Full cyclic fine-tuning run: `E` epochs over `T` documents.
pub fn run_cyclic(model: &mut TransformerLM, corpus: &[Document], config: &TrainConfig) -> Result<CyclicOutput> {
    match run_cyclic_partial(model, corpus, config) {
        (out, None) => Ok(out),
        (_, Some(e)) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(tasks: usize, epochs: usize) -> (TransformerLM, Vec<Document>, TrainConfig) {
        let mc = TransformerConfig::new(16, 1, 2, 8);
        let model = TransformerLM::init(mc, 3).unwrap();
        let corpus = build_corpus(&CorpusSource::Synthetic, tasks, 8, 5).unwrap();
        let config = TrainConfig {
            tasks,
            context: 8,
            steps: 2,
            epochs,
            lr: 0.01,
            pairwise_epoch: 1,
            ..TrainConfig::default()
        };
        (model, corpus, config)
    }

    #[test]
    fn schedule_shapes() {
        let mut rng = seeded_rng(1);
        assert_eq!(schedule_epoch(Ordering::Fixed, 4, &mut rng), vec![0, 1, 2, 3]);
        for _ in 0..20 {
            let p = schedule_epoch(Ordering::PartialShuffle(3), 6, &mut rng);
            assert_eq!(p[0], 0);
            assert_eq!(&p[3..], &[3, 4, 5]);
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn grid_has_te_plus_one_rows() {
        let (mut m, c, cfg) = setup(3, 2);
        let out = run_cyclic(&mut m, &c, &cfg).unwrap();
        assert_eq!(out.grid.rows().len(), 3 * 2 + 1);
        assert_eq!(out.logs.len(), 6);
        assert_eq!(out.update_norms.len(), 6);
        assert_eq!(out.checkpoints.as_ref().unwrap().len(), 7);
        assert_eq!(out.activations.as_ref().unwrap().len(), 7);
        assert!(out.pairwise_checkpoint.is_some());
        assert!(out.logs.iter().all(|l| l.step_losses.len() == 2));
    }

    #[test]
    fn zero_steps_leave_model_unchanged() {
        let (mut m, c, mut cfg) = setup(2, 1);
        cfg.steps = 0;
        let before = m.select_params(crate::models::Selector::All).unwrap();
        let out = run_cyclic(&mut m, &c, &cfg).unwrap();
        assert_eq!(before, m.select_params(crate::models::Selector::All).unwrap());
        assert!(out.grid.rows().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn mismatched_corpus_is_rejected() {
        let (mut m, c, mut cfg) = setup(2, 1);
        cfg.tasks = 3;
        assert!(matches!(run_cyclic(&mut m, &c, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let (mut m, c, mut cfg) = setup(2, 2);
        cfg.lr = 1e300;
        cfg.steps = 3;
        let (out, err) = run_cyclic_partial(&mut m, &c, &cfg);
        assert!(matches!(err, Some(Error::Divergence { .. })), "{err:?}");
        assert!(!out.grid.rows().is_empty());
    }
}
