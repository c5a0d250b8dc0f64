use cyclab_core::analytics::{activation_similarity, trajectory_pca, weight_residual_similarity};
use cyclab_core::models::{BlockPart, InitScheme, ParamKind, TransformerConfig, TransformerLM};
use cyclab_core::numcore::{grad_check, FlatVector, Graph, GraphFunction, Tensor, Var};
use cyclab_core::trainer::{prepare_run, run_cyclic, run_episode, CorpusSource, OptimizerState, TrainConfig};
use cyclab_core::{seeded_rng, Result};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn random(rng: &mut cyclab_core::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// `sum(w3 * (gelu(layer_norm(gelu(x W1) W2)) W3))` differentiated in `x`.
#[test]
fn three_layer_composition_matches_finite_differences() {
    let mut rng = seeded_rng(11);
    for _ in 0..5 {
        let (rows, a, b, c) = (3, 4, 5, 3);
        let w1 = random(&mut rng, &[a, b]);
        let w2 = random(&mut rng, &[b, b]);
        let w3 = random(&mut rng, &[b, c]);
        let out_w = random(&mut rng, &[rows, c]);
        let gain = random(&mut rng, &[b]);
        let bias = random(&mut rng, &[b]);
        let f = GraphFunction::new(vec![rows, a], |g: &mut Graph, x: Var| -> Result<Var> {
            let (w1, w2, w3) = (g.constant(w1.clone()), g.constant(w2.clone()), g.constant(w3.clone()));
            let (gain, bias) = (g.constant(gain.clone()), g.constant(bias.clone()));
            let h = g.matmul(x, w1)?;
            let h = g.gelu(h)?;
            let h = g.matmul(h, w2)?;
            let h = g.layer_norm(h, gain, bias, 1e-5)?;
            let h = g.gelu(h)?;
            let h = g.matmul(h, w3)?;
            let w = g.constant(out_w.clone());
            let h = g.mul(h, w)?;
            g.sum(h)
        });
        let x = random(&mut rng, &[rows, a]);
        let err = grad_check(&f, &FlatVector::new(x.data().to_vec(), "x"), 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }
}

#[test]
fn initial_loss_is_near_uniform_for_both_schemes() {
    let bound = (257f64).ln() + 10.0;
    for scheme in [InitScheme::Scaled, InitScheme::Simple] {
        for seed in 0..8 {
            let mut cfg = TransformerConfig::new(64, 2, 1, 32);
            cfg.init_scheme = scheme;
            let model = TransformerLM::init(cfg, seed).unwrap();
            let mut rng = seeded_rng(100 + seed);
            let tokens: Vec<usize> = (0..32).map(|_| rng.random_range(0..256)).collect();
            let loss = model.loss_value(&cyclab_core::models::LmExample::next_token(&tokens)).unwrap();
            assert!(loss.is_finite() && loss <= bound, "{scheme:?} seed {seed}: {loss}");
        }
    }
}

fn small_run_config() -> TrainConfig {
    TrainConfig {
        tasks: 3,
        context: 16,
        steps: 3,
        epochs: 2,
        lr: 0.05,
        pairwise_epoch: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn frozen_blocks_stay_bit_identical() {
    let config = small_run_config();
    let mut mcfg = TransformerConfig::new(16, 4, 1, 16);
    mcfg.frozen_blocks = 2;
    let (mut model, corpus) = prepare_run(mcfg, &CorpusSource::Synthetic, &config).unwrap();
    let before = model.clone();
    run_cyclic(&mut model, &corpus, &config).unwrap();
    for (p, q) in before.params().iter().zip(model.params()) {
        let same = p.tensor.data() == q.tensor.data();
        match p.kind {
            ParamKind::Block { index, .. } if index < 2 => assert!(same, "{} changed", p.kind.name()),
            ParamKind::TokenEmbedding | ParamKind::PositionEmbedding | ParamKind::OutputEmbedding => {
                assert!(!same, "{} did not train", p.kind.name())
            }
            ParamKind::Block { part: BlockPart::Wq, .. } => assert!(!same, "{} did not train", p.kind.name()),
            _ => {}
        }
    }
}

#[test]
fn all_blocks_frozen_trains_only_final_norm_and_head() {
    let config = small_run_config();
    let mut mcfg = TransformerConfig::new(16, 2, 1, 16);
    mcfg.frozen_blocks = 2;
    let (mut model, corpus) = prepare_run(mcfg, &CorpusSource::Synthetic, &config).unwrap();
    let before = model.clone();
    let mut opt = OptimizerState::gd();
    run_episode(&mut model, &corpus[0], &config, &mut opt, &mut seeded_rng(0), 1).unwrap();
    for (p, q) in before.params().iter().zip(model.params()) {
        let changed = p.tensor.data() != q.tensor.data();
        let may_change = matches!(
            p.kind,
            ParamKind::FinalNormGain
                | ParamKind::FinalNormBias
                | ParamKind::OutputEmbedding
                | ParamKind::TokenEmbedding
                | ParamKind::PositionEmbedding
        );
        assert!(may_change || !changed, "{} changed", p.kind.name());
    }
}

#[test]
fn analytics_leave_stores_untouched() {
    let config = TrainConfig {
        epochs: 3,
        ..small_run_config()
    };
    let (mut model, corpus) = prepare_run(TransformerConfig::new(16, 2, 1, 16), &CorpusSource::Synthetic, &config).unwrap();
    let out = run_cyclic(&mut model, &corpus, &config).unwrap();
    let store = out.checkpoints.expect("checkpoints");
    let acts = out.activations.expect("activations");
    let (h, ha) = (store.content_hash(), acts.content_hash());
    weight_residual_similarity(&store, 3).unwrap();
    trajectory_pca(&store, 2, Some(&out.grid)).unwrap();
    activation_similarity(&acts).unwrap();
    assert_eq!(store.content_hash(), h);
    assert_eq!(acts.content_hash(), ha);

    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path(), Default::default()).unwrap();
    let (back, _) = cyclab_core::trainer::CheckpointStore::load(dir.path()).unwrap();
    weight_residual_similarity(&back, 3).unwrap();
    let (again, _) = cyclab_core::trainer::CheckpointStore::load(dir.path()).unwrap();
    assert_eq!(again.content_hash(), back.content_hash());
}
