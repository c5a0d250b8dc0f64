use serde::{Deserialize, Serialize};

use super::recovery::aligned_curves;
use crate::error::{Error, Result};
use crate::numcore::{pca_snapshot, FlatVector};
use crate::trainer::{CheckpointStore, EvalGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// One row of principal coordinates per snapshot.
    pub coords: Vec<Vec<f64>>,
    pub explained: Vec<f64>,
    pub rank_deficient: bool,
    pub degenerate: bool,
    /// Labels of the snapshots (episode indices or task numbers).
    pub labels: Vec<usize>,
    /// Per-epoch peak offset of the mean aligned loss curve.
    pub peak_offsets: Vec<Option<usize>>,
    /// Angular-order agreement with label order, for planar projections.
    pub circular_correlation: Option<f64>,
}

fn report(vectors: &[FlatVector], k: usize, labels: Vec<usize>) -> Result<TrajectoryReport> {
    let pca = pca_snapshot(vectors, k)?;
    Ok(TrajectoryReport {
        coords: pca.coords,
        explained: pca.explained,
        rank_deficient: pca.rank_deficient,
        degenerate: pca.degenerate,
        labels,
        peak_offsets: Vec::new(),
        circular_correlation: None,
    })
}

/// PCA of a checkpoint trajectory. With a grid, also reports the peak offset
/// of the mean aligned loss curve in each epoch.
pub fn trajectory_pca(store: &CheckpointStore, k: usize, grid: Option<&EvalGrid>) -> Result<TrajectoryReport> {
    let mut r = report(&store.to_vectors(), k, store.episodes().to_vec())?;
    if let Some(g) = grid {
        let epochs = g.epochs();
        if epochs >= 1 {
            r.peak_offsets = aligned_curves(g, g.tasks(), epochs)?.peak_offsets();
        }
    }
    Ok(r)
}

/// PCA of one epoch's inverse targets `f_i^{-1}(P x_i)`, one point per task.
pub fn toy_trajectory_pca(snapshot: &[Vec<f64>], k: usize) -> Result<TrajectoryReport> {
    let vectors: Vec<FlatVector> = snapshot.iter().map(|v| FlatVector::new(v.clone(), "inverse_target")).collect();
    let mut r = report(&vectors, k, (1..=snapshot.len()).collect())?;
    if k >= 2 && !r.degenerate {
        r.circular_correlation = Some(circular_rank_correlation(&r.coords)?);
    }
    Ok(r)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Agreement between the angular order of 2-D points about their centroid
/// and their index order. Angular ranks are compared with indices by rank
/// correlation under the best circular shift and orientation, so a perfect
/// cycle in either direction scores 1.
pub fn circular_rank_correlation(points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    if n < 3 || points.iter().any(|p| p.len() < 2) {
        return Err(Error::Contract("circular order needs at least 3 planar points".into()));
    }
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let angles: Vec<f64> = points.iter().map(|p| (p[1] - cy).atan2(p[0] - cx)).collect();
    let mut by_angle: Vec<usize> = (0..n).collect();
    by_angle.sort_by(|&a, &b| angles[a].total_cmp(&angles[b]));
    let mut rank = vec![0usize; n];
    for (r, &i) in by_angle.iter().enumerate() {
        rank[i] = r;
    }
    let index: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut best = f64::NEG_INFINITY;
    for shift in 0..n {
        for reversed in [false, true] {
            let shifted: Vec<f64> = rank
                .iter()
                .map(|&r| {
                    let r = if reversed { n - 1 - r } else { r };
                    ((r + shift) % n) as f64
                })
                .collect();
            best = best.max(pearson(&shifted, &index));
        }
    }
    Ok(best)
}

/// Least-squares slope of `values` against their index.
pub fn trend_slope(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let x: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    let n = values.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, values.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(values).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use std::f64::consts::PI;

    fn circle(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()
    }

    #[test]
    fn perfect_cycles_score_one() {
        let pts = circle(12);
        assert!((circular_rank_correlation(&pts).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0], -p[1]]).collect();
        assert!((circular_rank_correlation(&rev).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scrambled_cycle_scores_low() {
        let mut pts = circle(25);
        pts.shuffle(&mut seeded_rng(3));
        assert!(circular_rank_correlation(&pts).unwrap() < 0.9);
    }

    #[test]
    fn planar_trajectory_is_fully_explained() {
        let snaps: Vec<Vec<f64>> = circle(10).into_iter().map(|p| vec![p[0], p[1], p[0] + 2.0 * p[1], 0.0]).collect();
        let r = toy_trajectory_pca(&snaps, 2).unwrap();
        assert!((r.explained.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(r.coords.len(), 10);
        assert!(r.circular_correlation.unwrap() > 0.99);
    }

    #[test]
    fn too_many_components() {
        let snaps = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(toy_trajectory_pca(&snaps, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn slope_of_line() {
        assert!((trend_slope(&[3.0, 2.5, 2.0, 1.5]) + 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_and_scale_do_not_change_order(theta in 0.0f64..std::f64::consts::TAU, s in 0.1f64..10.0) {
            let pts: Vec<Vec<f64>> = circle(9)
                .into_iter()
                .map(|p| vec![s * (p[0] * theta.cos() - p[1] * theta.sin()), s * (p[0] * theta.sin() + p[1] * theta.cos())])
                .collect();
            prop_assert!((circular_rank_correlation(&pts).unwrap() - 1.0).abs() < 1e-9);
        }
    }
}
