use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{GradMode, Selector, TransformerLM};
use crate::numcore::{cosine, FlatVector};
use crate::seeded_rng;
use crate::trainer::{derive_seed, evaluate_all, run_episode, streams, CheckpointStore, Document, OptimizerState, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Cosine,
    Recovery,
}

/// Square matrix with labelled axes. `None` marks an undefined cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub kind: MatrixKind,
    pub labels: Vec<String>,
    values: Vec<Option<f64>>,
}

impl SimilarityMatrix {
    pub fn new(kind: MatrixKind, labels: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != labels.len() * labels.len() {
            return Err(Error::Contract(format!(
                "{} values for {} labels",
                values.len(),
                labels.len()
            )));
        }
        Ok(Self { kind, labels, values })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n() + j]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn diagonal(&self) -> Vec<Option<f64>> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    /// `||A - A^T||_F / ||A||_F` over cells defined in both positions.
    pub fn asymmetry(&self) -> Option<f64> {
        let n = self.n();
        let (mut diff, mut total) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (self.get(i, j), self.get(j, i)) {
                    diff += (a - b) * (a - b);
                    total += a * a;
                }
            }
        }
        (total > 0.0).then(|| (diff / total).sqrt())
    }

    /// Mean of the defined cells at each lag `|i - j|`.
    pub fn lag_profile(&self) -> Vec<Option<f64>> {
        let n = self.n();
        (0..n)
            .map(|lag| {
                let cells: Vec<f64> = (0..n - lag).filter_map(|i| self.get(i, i + lag)).collect();
                (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
            })
            .collect()
    }

    /// Mean of the defined off-diagonal entries in each row.
    pub fn row_off_diagonal_means(&self) -> Vec<Option<f64>> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let cells: Vec<f64> = (0..n).filter(|&j| j != i).filter_map(|j| self.get(i, j)).collect();
                (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
            })
            .collect()
    }

    /// Header `label,<labels>`, then one row per label. Undefined cells are
    /// empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for l in &self.labels {
            write!(s, ",{l}").unwrap();
        }
        s.push('\n');
        for i in 0..self.n() {
            s.push_str(&self.labels[i]);
            for j in 0..self.n() {
                match self.get(i, j) {
                    Some(v) => write!(s, ",{v}").unwrap(),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, kind: MatrixKind) -> Result<Self> {
        let bad = |m: String| Error::Input(format!("malformed matrix CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "label" {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let labels: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut values = Vec::with_capacity(labels.len() * labels.len());
        let mut count = 0;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() || count >= labels.len() || f[0] != labels[count] {
                return Err(bad(format!("row {}", count + 1)));
            }
            for v in &f[1..] {
                values.push(if v.is_empty() {
                    None
                } else {
                    Some(v.parse::<f64>().map_err(|_| bad(format!("value `{v}`")))?)
                });
            }
            count += 1;
        }
        if count != labels.len() {
            return Err(bad(format!("{count} rows for {} columns", labels.len())));
        }
        Self::new(kind, labels, values)
    }
}

/// Pairwise cosines, computed once per unordered pair and mirrored so the
/// matrix is exactly symmetric. Zero-norm vectors give undefined cells.
pub fn cosine_matrix(vectors: &[FlatVector], labels: Vec<String>) -> Result<SimilarityMatrix> {
    let n = vectors.len();
    let mut values = vec![None; n * n];
    for i in 0..n {
        let defined = vectors[i].norm() > 0.0;
        values[i * n + i] = defined.then_some(1.0);
        for j in i + 1..n {
            let c = match cosine(&vectors[i].values, &vectors[j].values) {
                Ok(c) => Some(c),
                Err(Error::UndefinedSimilarity(_)) => None,
                Err(e) => return Err(e),
            };
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    SimilarityMatrix::new(MatrixKind::Cosine, labels, values)
}

fn task_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("task_{i}")).collect()
}

/// Entry `(i, j)` is the loss drop on document `j` after one episode on
/// document `i`, starting each row from `checkpoint` with a fresh optimizer.
pub fn pairwise_recovery(checkpoint: &TransformerLM, corpus: &[Document], config: &TrainConfig) -> Result<SimilarityMatrix> {
    let n = corpus.len();
    let before = evaluate_all(checkpoint, corpus)?;
    let mut values = vec![None; n * n];
    let mut opt = OptimizerState::new(config.optimizer, config.beta1, config.beta2, config.adam_eps);
    let data_seed = derive_seed(config.seed, streams::DATA);
    for (i, doc) in corpus.iter().enumerate() {
        let mut model = checkpoint.clone();
        let mut rng = seeded_rng(derive_seed(data_seed, i as u64 + 1));
        run_episode(&mut model, doc, config, &mut opt, &mut rng, i + 1)?;
        let after = evaluate_all(&model, corpus)?;
        for j in 0..n {
            values[i * n + j] = Some(before[j] - after[j]);
        }
    }
    SimilarityMatrix::new(MatrixKind::Recovery, task_labels(n), values)
}

/// Attention parameters of block `floor(3L/4)`.
pub fn default_gradient_selector(depth: usize) -> Selector {
    Selector::BlockAttention(3 * depth / 4)
}

/// Cosines between clean-window loss gradients of each document, restricted
/// to `selector`.
pub fn gradient_similarity(checkpoint: &TransformerLM, corpus: &[Document], selector: Selector) -> Result<SimilarityMatrix> {
    let grads = corpus
        .iter()
        .map(|doc| {
            let rec = checkpoint.lm_loss(&doc.canonical_example(), GradMode::Selected(selector))?;
            let per_param = rec.gradients()?;
            checkpoint.select_from(selector, &per_param)
        })
        .collect::<Result<Vec<_>>>()?;
    cosine_matrix(&grads, task_labels(corpus.len()))
}

/// Snapshots minus their centered moving average.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSet {
    pub episodes: Vec<usize>,
    pub residuals: Vec<FlatVector>,
}

/// Residuals over an inclusive centered window of `2 * floor(T/2) + 1`
/// snapshots, only where the whole window fits, and their cosine matrix.
pub fn residual_similarity(snapshots: &[FlatVector], episodes: &[usize], tasks: usize) -> Result<(ResidualSet, SimilarityMatrix)> {
    let n = snapshots.len();
    if tasks == 0 || n < 2 * tasks + 1 {
        return Err(Error::Contract(format!(
            "weight residuals need at least {} snapshots, got {n}",
            2 * tasks + 1
        )));
    }
    if episodes.len() != n {
        return Err(Error::Contract("episode labels do not match snapshots".into()));
    }
    let dim = snapshots[0].len();
    if snapshots.iter().any(|s| s.len() != dim) {
        return Err(Error::Contract("snapshots differ in length".into()));
    }
    let h = tasks / 2;
    let width = (2 * h + 1) as f64;
    let mut set = ResidualSet {
        episodes: Vec::new(),
        residuals: Vec::new(),
    };
    for t in h..n - h {
        let mut mean = vec![0.0; dim];
        for s in &snapshots[t - h..=t + h] {
            for (m, v) in mean.iter_mut().zip(&s.values) {
                *m += v;
            }
        }
        let values = snapshots[t].values.iter().zip(&mean).map(|(v, m)| v - m / width).collect();
        set.episodes.push(episodes[t]);
        set.residuals.push(FlatVector::new(values, format!("residual({})", snapshots[t].origin)));
    }
    let labels = set.episodes.iter().map(|e| format!("episode_{e}")).collect();
    let matrix = cosine_matrix(&set.residuals, labels)?;
    Ok((set, matrix))
}

pub fn weight_residual_similarity(store: &CheckpointStore, tasks: usize) -> Result<(ResidualSet, SimilarityMatrix)> {
    residual_similarity(&store.to_vectors(), store.episodes(), tasks)
}

/// `||v(t+1) - v(t)||_2` for consecutive vectors.
pub fn consecutive_distances(vectors: &[FlatVector]) -> Vec<f64> {
    vectors
        .windows(2)
        .map(|w| {
            w[0].values
                .iter()
                .zip(&w[1].values)
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationReport {
    pub matrix: SimilarityMatrix,
    pub consecutive: Vec<f64>,
}

/// Cosine matrix and step sizes of a probe document's final hidden states.
pub fn activation_similarity(store: &CheckpointStore) -> Result<ActivationReport> {
    if !store.selector().starts_with("activation(") {
        return Err(Error::Store(format!(
            "store holds `{}`, not activation snapshots",
            store.selector()
        )));
    }
    let vectors = store.to_vectors();
    let labels = store.episodes().iter().map(|e| format!("episode_{e}")).collect();
    Ok(ActivationReport {
        matrix: cosine_matrix(&vectors, labels)?,
        consecutive: consecutive_distances(&vectors),
    })
}

/// Mean similarity over pairs of distinct episodes within each epoch.
/// `episodes` labels the matrix axes; episode 0 belongs to no epoch.
pub fn within_epoch_means(matrix: &SimilarityMatrix, episodes: &[usize], tasks: usize) -> Vec<Option<f64>> {
    let epoch_of = |e: usize| (e > 0).then(|| (e - 1) / tasks + 1);
    let epochs = episodes.iter().filter_map(|&e| epoch_of(e)).max().unwrap_or(0);
    (1..=epochs)
        .map(|n| {
            let idx: Vec<usize> = (0..episodes.len()).filter(|&i| epoch_of(episodes[i]) == Some(n)).collect();
            let cells: Vec<f64> = idx
                .iter()
                .flat_map(|&i| idx.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
                .filter_map(|(i, j)| matrix.get(i, j))
                .collect();
            (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TransformerConfig;
    use crate::trainer::{build_corpus, CorpusSource};
    use std::f64::consts::PI;

    fn sinusoid(n: usize, period: usize) -> Vec<FlatVector> {
        (0..n)
            .map(|t| {
                let a = 2.0 * PI * t as f64 / period as f64;
                FlatVector::new(vec![a.cos(), a.sin(), 0.5 * a.cos() - 2.0 * a.sin()], "w")
            })
            .collect()
    }

    #[test]
    fn sinusoid_residuals_repeat_each_period() {
        let t = 8;
        let snaps = sinusoid(5 * t, t);
        let eps: Vec<usize> = (0..snaps.len()).collect();
        let (set, m) = residual_similarity(&snaps, &eps, t).unwrap();
        assert_eq!(set.episodes.first(), Some(&(t / 2)));
        let lag = m.lag_profile();
        assert!((lag[t].unwrap() - 1.0).abs() < 1e-6, "{:?}", lag[t]);
        assert!((lag[t / 2].unwrap() + 1.0).abs() < 1e-6, "{:?}", lag[t / 2]);
    }

    #[test]
    fn constant_trajectory_is_undefined() {
        let snaps = vec![FlatVector::new(vec![1.0, 2.0], "w"); 9];
        let eps: Vec<usize> = (0..9).collect();
        let (set, m) = residual_similarity(&snaps, &eps, 3).unwrap();
        assert!(set.residuals.iter().all(|r| r.norm() == 0.0));
        assert!(m.values().iter().all(|v| v.is_none()));
    }

    #[test]
    fn too_few_snapshots() {
        let snaps = vec![FlatVector::new(vec![1.0], "w"); 6];
        let eps: Vec<usize> = (0..6).collect();
        assert!(matches!(residual_similarity(&snaps, &eps, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn odd_window_has_exactly_t_points() {
        // linear trajectory: the centered mean equals the center point
        let snaps: Vec<FlatVector> = (0..7).map(|t| FlatVector::new(vec![t as f64, 1.0], "w")).collect();
        let eps: Vec<usize> = (0..7).collect();
        let (set, _) = residual_similarity(&snaps, &eps, 3).unwrap();
        assert_eq!(set.episodes, vec![1, 2, 3, 4, 5]);
        assert!(set.residuals.iter().all(|r| r.norm() < 1e-12));
    }

    #[test]
    fn csv_round_trip_keeps_undefined_cells() {
        let m = SimilarityMatrix::new(
            MatrixKind::Cosine,
            vec!["a".into(), "b".into()],
            vec![Some(1.0), None, None, Some(0.25)],
        )
        .unwrap();
        assert_eq!(SimilarityMatrix::from_csv(&m.to_csv(), MatrixKind::Cosine).unwrap(), m);
        assert!(SimilarityMatrix::from_csv("label,a\n", MatrixKind::Cosine).is_err());
    }

    #[test]
    fn identical_activations() {
        let mut store = CheckpointStore::new("activation(doc 1)");
        for e in 0..4 {
            store.push(e, &FlatVector::new(vec![0.5, -1.0, 2.0], "a")).unwrap();
        }
        let r = activation_similarity(&store).unwrap();
        assert!(r.matrix.values().iter().all(|v| *v == Some(1.0)));
        assert!(r.consecutive.iter().all(|d| *d == 0.0));
        let wrong = CheckpointStore::new("all");
        assert!(matches!(activation_similarity(&wrong), Err(Error::Store(_))));
    }

    #[test]
    fn asymmetry_of_symmetric_matrix_is_zero() {
        let m = SimilarityMatrix::new(
            MatrixKind::Recovery,
            vec!["a".into(), "b".into()],
            vec![Some(2.0), Some(1.0), Some(1.0), Some(3.0)],
        )
        .unwrap();
        assert_eq!(m.asymmetry(), Some(0.0));
    }

    #[test]
    fn gradient_matrix_is_symmetric_with_unit_diagonal() {
        let model = TransformerLM::init(TransformerConfig::new(16, 2, 2, 8), 1).unwrap();
        let corpus = build_corpus(&CorpusSource::Synthetic, 4, 8, 2).unwrap();
        let m = gradient_similarity(&model, &corpus, default_gradient_selector(2)).unwrap();
        for i in 0..4 {
            assert_eq!(m.get(i, i), Some(1.0));
            for j in 0..4 {
                assert_eq!(m.get(i, j), m.get(j, i));
                let v = m.get(i, j).unwrap();
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn zero_step_pairwise_matrix_is_zero() {
        let model = TransformerLM::init(TransformerConfig::new(16, 1, 2, 8), 1).unwrap();
        let corpus = build_corpus(&CorpusSource::Synthetic, 3, 8, 2).unwrap();
        let cfg = TrainConfig {
            tasks: 3,
            context: 8,
            steps: 0,
            ..TrainConfig::default()
        };
        let m = pairwise_recovery(&model, &corpus, &cfg).unwrap();
        assert!(m.values().iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn within_epoch_means_group_by_epoch() {
        let labels: Vec<String> = (0..5).map(|e| e.to_string()).collect();
        let mut vals = vec![Some(0.0); 25];
        vals[5 + 2] = Some(0.5);
        vals[3 * 5 + 4] = Some(0.75);
        let m = SimilarityMatrix::new(MatrixKind::Cosine, labels, vals).unwrap();
        assert_eq!(within_epoch_means(&m, &[0, 1, 2, 3, 4], 2), vec![Some(0.5), Some(0.75)]);
    }
}
