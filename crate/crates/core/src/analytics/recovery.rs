use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::EvalGrid;

/// Denominators below this mark the recovery score as undefined.
pub const RS_UNDEFINED_BELOW: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecovery {
    /// Epoch `n`, 1-based; compares epoch `n` with the revisit in `n + 1`.
    pub epoch: usize,
    pub l_max: f64,
    pub l_before: f64,
    /// Mean loss just after the epoch-`n` visit (`l_after(n - 1)`).
    pub l_after: f64,
    pub rs: Option<f64>,
    pub undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub tasks: usize,
    pub epochs: Vec<EpochRecovery>,
}

impl RecoveryReport {
    /// Recovery score of epoch `n` (1-based), if defined.
    pub fn rs(&self, n: usize) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == n).and_then(|e| e.rs)
    }
}

fn require_fixed(grid: &EvalGrid, tasks: usize, epochs: usize) -> Result<()> {
    if !grid.is_fixed_order() {
        return Err(Error::UnsupportedOrdering(
            "analysis requires the identity permutation in every epoch".into(),
        ));
    }
    if grid.tasks() != tasks {
        return Err(Error::Contract(format!("grid has {} tasks, expected {tasks}", grid.tasks())));
    }
    if grid.rows().len() < tasks * epochs + 1 {
        return Err(Error::Contract(format!(
            "grid has {} rows, need {} for {epochs} epochs",
            grid.rows().len(),
            tasks * epochs + 1
        )));
    }
    Ok(())
}

/// Recovery score per epoch: the share of the forgetting since the last visit
/// that is undone before the next visit.
pub fn recovery_scores(grid: &EvalGrid, tasks: usize, epochs: usize) -> Result<RecoveryReport> {
    require_fixed(grid, tasks, epochs)?;
    if epochs < 2 {
        return Err(Error::Contract("recovery scores need at least 2 epochs".into()));
    }
    if tasks < 2 {
        return Err(Error::Contract("recovery scores need at least 2 tasks".into()));
    }
    let rows = grid.rows();
    let tf = tasks as f64;
    let mut out = Vec::with_capacity(epochs - 1);
    for n in 1..epochs {
        let (mut l_max, mut l_before, mut l_after) = (0.0, 0.0, 0.0);
        for t in 1..=tasks {
            let j = (n - 1) * tasks + t;
            let next = j + tasks;
            let peak = rows[j + 1..next].iter().map(|r| r[t - 1]).fold(f64::NEG_INFINITY, f64::max);
            l_max += peak / tf;
            l_before += rows[next - 1][t - 1] / tf;
            l_after += rows[j][t - 1] / tf;
        }
        let denom = l_max - l_after;
        let undefined = denom < RS_UNDEFINED_BELOW;
        out.push(EpochRecovery {
            epoch: n,
            l_max,
            l_before,
            l_after,
            rs: (!undefined).then(|| (l_max - l_before) / denom),
            undefined,
        });
    }
    Ok(RecoveryReport { tasks, epochs: out })
}

/// Loss curves re-indexed so that index 0 is the evaluation just before each
/// task's first episode.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedCurves {
    pub tasks: usize,
    pub per_task: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Indices `0, T, 2T, ...`: the evaluation right before each visit.
    pub markers: Vec<usize>,
}

pub fn aligned_curves(grid: &EvalGrid, tasks: usize, epochs: usize) -> Result<AlignedCurves> {
    require_fixed(grid, tasks, epochs)?;
    if epochs < 1 {
        return Err(Error::Contract("aligned curves need at least 1 epoch".into()));
    }
    let len = tasks * (epochs - 1) + 1;
    let rows = grid.rows();
    let per_task: Vec<Vec<f64>> = (0..tasks).map(|t| (0..len).map(|k| rows[t + k][t]).collect()).collect();
    let mean = (0..len)
        .map(|k| per_task.iter().map(|c| c[k]).sum::<f64>() / tasks as f64)
        .collect();
    let markers = (0..len).step_by(tasks).collect();
    Ok(AlignedCurves {
        tasks,
        per_task,
        mean,
        markers,
    })
}

/// Episodes between the within-epoch loss peak and the evaluation right
/// before the revisit, for each epoch `n = 1..` whose revisit is on the curve.
/// The peak is searched over `k in [(n-1)T + 2, nT]`, skipping the
/// just-trained point.
pub fn peak_offsets(curve: &[f64], tasks: usize) -> Vec<Option<usize>> {
    if tasks == 0 || curve.is_empty() {
        return Vec::new();
    }
    let epochs = (curve.len() - 1) / tasks;
    (1..=epochs)
        .map(|n| {
            let (lo, hi) = ((n - 1) * tasks + 2, n * tasks);
            if lo > hi {
                return None;
            }
            let mut best = lo;
            for k in lo..=hi {
                if curve[k] > curve[best] {
                    best = k;
                }
            }
            Some(hi - best)
        })
        .collect()
}

impl AlignedCurves {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn peak_offsets(&self) -> Vec<Option<usize>> {
        peak_offsets(&self.mean, self.tasks)
    }

    /// `k,mean,task_1,...,task_T`, one row per aligned index.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,mean");
        for t in 1..=self.tasks {
            write!(s, ",task_{t}").unwrap();
        }
        s.push('\n');
        for k in 0..self.len() {
            write!(s, "{k},{}", self.mean[k]).unwrap();
            for c in &self.per_task {
                write!(s, ",{}", c[k]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Input(format!("malformed aligned-curves CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "k" || cols[1] != "mean" {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let tasks = cols.len() - 2;
        let mut mean = Vec::new();
        let mut per_task = vec![Vec::new(); tasks];
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() || f[0].parse::<usize>().ok() != Some(k) {
                return Err(bad(format!("row {k}")));
            }
            let vals = f[1..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            mean.push(vals[0]);
            for (c, v) in per_task.iter_mut().zip(&vals[1..]) {
                c.push(*v);
            }
        }
        if mean.is_empty() {
            return Err(bad("no data rows".into()));
        }
        let markers = (0..mean.len()).step_by(tasks).collect();
        Ok(Self {
            tasks,
            per_task,
            mean,
            markers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Grid where every task sits at `after` right after its visit, rises to
    /// `peak` mid-epoch and returns to `before` just before the revisit.
    fn shaped(tasks: usize, epochs: usize, after: f64, peak: f64, before: f64) -> EvalGrid {
        let mut rows = vec![vec![5.0; tasks]];
        for j in 1..=tasks * epochs {
            let row = (0..tasks)
                .map(|t| {
                    let since = (j + tasks - (t + 1)) % tasks;
                    match since {
                        0 => after,
                        s if s == tasks - 1 => before,
                        _ if j <= t => 5.0,
                        _ => peak,
                    }
                })
                .collect();
            rows.push(row);
        }
        EvalGrid::fixed(tasks, rows).unwrap()
    }

    #[test]
    fn half_recovery() {
        let r = recovery_scores(&shaped(4, 3, 1.0, 3.0, 2.0), 4, 3).unwrap();
        assert_eq!(r.epochs.len(), 2);
        for e in &r.epochs {
            assert_eq!((e.l_max, e.l_before, e.l_after), (3.0, 2.0, 1.0));
            assert_eq!(e.rs, Some(0.5));
        }
    }

    #[test]
    fn endpoints() {
        assert_eq!(recovery_scores(&shaped(4, 2, 1.0, 3.0, 3.0), 4, 2).unwrap().rs(1), Some(0.0));
        assert_eq!(recovery_scores(&shaped(4, 2, 1.0, 3.0, 1.0), 4, 2).unwrap().rs(1), Some(1.0));
    }

    #[test]
    fn flat_grid_is_undefined() {
        let rows = vec![vec![1.0; 3]; 3 * 2 + 1];
        let r = recovery_scores(&EvalGrid::fixed(3, rows).unwrap(), 3, 2).unwrap();
        assert!(r.epochs[0].undefined);
        assert_eq!(r.rs(1), None);
    }

    #[test]
    fn shuffled_grid_is_rejected() {
        let mut g = shaped(3, 2, 1.0, 2.0, 1.5);
        g.set_permutations(vec![vec![0, 2, 1], vec![0, 1, 2]]);
        assert!(matches!(recovery_scores(&g, 3, 2), Err(Error::UnsupportedOrdering(_))));
        assert!(matches!(aligned_curves(&g, 3, 2), Err(Error::UnsupportedOrdering(_))));
    }

    #[test]
    fn piecewise_linear_grid_matches_hand_computation() {
        // T = 4, E = 2. Task t sits at 0 after its visit, climbs by t per
        // episode, then falls back to t just before the revisit.
        let shape = |s: usize, t: usize| [0, t, 2 * t, t][s] as f64;
        let rows: Vec<Vec<f64>> = (0..=8)
            .map(|j: usize| (1..=4usize).map(|t| if j < t { 10.0 } else { shape((j - t) % 4, t) }).collect())
            .collect();
        let g = EvalGrid::fixed(4, rows).unwrap();
        let r = recovery_scores(&g, 4, 2).unwrap();
        // mean of t over 1..=4 is 2.5
        assert_eq!(r.epochs[0].l_after, 0.0);
        assert_eq!(r.epochs[0].l_max, 5.0);
        assert_eq!(r.epochs[0].l_before, 2.5);
        assert_eq!(r.rs(1), Some(0.5));
        let a = aligned_curves(&g, 4, 2).unwrap();
        assert_eq!(a.mean, vec![10.0, 0.0, 2.5, 5.0, 2.5]);
    }

    #[test]
    fn two_task_alignment_by_hand() {
        let rows = vec![vec![1.0, 2.0], vec![0.0, 3.0], vec![4.0, 0.5], vec![0.25, 6.0], vec![7.0, 0.0]];
        let a = aligned_curves(&EvalGrid::fixed(2, rows).unwrap(), 2, 2).unwrap();
        assert_eq!(a.per_task, vec![vec![1.0, 0.0, 4.0], vec![3.0, 0.5, 6.0]]);
        assert_eq!(a.mean, vec![2.0, 0.25, 5.0]);
        assert_eq!(a.markers, vec![0, 2]);
    }

    #[test]
    fn peak_offset_counts_from_revisit() {
        // T = 5: k = 0..5; peak at k = 3 -> two episodes before index 5
        let curve = [9.0, 0.0, 1.0, 4.0, 2.0, 1.5];
        assert_eq!(peak_offsets(&curve, 5), vec![Some(2)]);
    }

    #[test]
    fn csv_round_trip() {
        let a = aligned_curves(&shaped(3, 3, 0.5, 2.25, 1.0), 3, 3).unwrap();
        assert_eq!(AlignedCurves::from_csv(&a.to_csv()).unwrap(), a);
        assert!(AlignedCurves::from_csv("").is_err());
    }

    proptest! {
        #[test]
        fn alignment_is_a_column_slice(vals in proptest::collection::vec(0.0f64..10.0, 3 * 10)) {
            let (t, e) = (3, 3);
            let rows: Vec<Vec<f64>> = vals.chunks(t).take(t * e + 1).map(|c| c.to_vec()).collect();
            let g = EvalGrid::fixed(t, rows.clone()).unwrap();
            let a = aligned_curves(&g, t, e).unwrap();
            for (ti, c) in a.per_task.iter().enumerate() {
                let col: Vec<f64> = rows[ti..ti + c.len()].iter().map(|r| r[ti]).collect();
                prop_assert_eq!(c, &col);
            }
        }

        #[test]
        fn rs_is_scale_and_shift_invariant(vals in proptest::collection::vec(0.0f64..10.0, 4 * 13),
                                           a in 0.5f64..4.0, b in -3.0f64..3.0) {
            let t = 4;
            let rows: Vec<Vec<f64>> = vals.chunks(t).take(t * 3 + 1).map(|c| c.to_vec()).collect();
            let moved: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| a * v + b).collect()).collect();
            let r1 = recovery_scores(&EvalGrid::fixed(t, rows).unwrap(), t, 3).unwrap();
            let r2 = recovery_scores(&EvalGrid::fixed(t, moved).unwrap(), t, 3).unwrap();
            for (x, y) in r1.epochs.iter().zip(&r2.epochs) {
                if let (Some(p), Some(q)) = (x.rs, y.rs) {
                    if (x.l_max - x.l_after).abs() > 1e-3 {
                        prop_assert!((p - q).abs() < 1e-6 * (1.0 + p.abs()));
                    }
                }
            }
        }
    }
}
