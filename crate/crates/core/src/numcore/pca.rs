//! Snapshot PCA on top of a cyclic Jacobi eigensolver.
//!
//! Snapshot counts are small (at most a few hundred) while snapshot vectors
//! can be large, so the decomposition works on the `n x n` Gram matrix of the
//! mean-centred snapshots instead of the `p x p` covariance.

use super::flat::FlatVector;
use crate::error::{dim, Error, Result};

const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;
/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Row-major `n x n`; column `c` is the eigenvector of `values[c]`.
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

/// Cyclic Jacobi rotations on a symmetric row-major `n x n` matrix.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<Eigen> {
    if matrix.len() != n * n {
        return Err(dim("jacobi_eigen", format!("{} entries for n = {n}", matrix.len())));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &[f64]| {
        let mut s = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    s += a[p * n + q] * a[p * n + q];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS && off(&a) > JACOBI_TOL * total {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off(&a) > JACOBI_TOL * total {
        return Err(Error::Contract(format!("Jacobi did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (c, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + c] = v[r * n + src];
        }
    }
    Ok(Eigen {
        values,
        vectors,
        sweeps,
    })
}

/// Result of [`pca_snapshot`].
#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// One row per snapshot, one column per returned component.
    pub coords: Vec<Vec<f64>>,
    /// Fraction of total variance carried by each returned component.
    pub explained: Vec<f64>,
    /// Fewer than the requested components carry variance.
    pub rank_deficient: bool,
    /// All snapshots coincide; no component is returned.
    pub degenerate: bool,
}

impl PcaResult {
    pub fn components(&self) -> usize {
        self.explained.len()
    }
}

/// Projects mean-centred snapshots onto their top-`k` principal axes.
///
/// Sign convention: within each component the coordinate of largest
/// magnitude is positive.
pub fn pca_snapshot(snapshots: &[FlatVector], k: usize) -> Result<PcaResult> {
    let n = snapshots.len();
    if k == 0 || k >= n {
        return Err(Error::Contract(format!("PCA needs 1 <= k < snapshot count, got k = {k}, n = {n}")));
    }
    let p = snapshots[0].len();
    if p == 0 || snapshots.iter().any(|s| s.len() != p) {
        return Err(dim("pca_snapshot", "snapshots must share a non-zero length"));
    }

    let mut mean = vec![0.0; p];
    for s in snapshots {
        for (m, x) in mean.iter_mut().zip(&s.values) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centred: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| s.values.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let d: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
            gram[i * n + j] = d;
            gram[j * n + i] = d;
        }
    }

    let eig = jacobi_eigen(&gram, n)?;
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let largest = eig.values[0];
    if !(total > 0.0) || !(largest > 0.0) {
        return Ok(PcaResult {
            coords: vec![Vec::new(); n],
            explained: Vec::new(),
            rank_deficient: true,
            degenerate: true,
        });
    }
    let rank = eig.values.iter().take_while(|&&v| v > RANK_TOL * largest).count();
    let comps = k.min(rank);

    let mut coords = vec![vec![0.0; comps]; n];
    for c in 0..comps {
        let scale = eig.values[c].sqrt();
        let mut col: Vec<f64> = (0..n).map(|i| eig.vectors[i * n + c] * scale).collect();
        let pivot = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (row, x) in coords.iter_mut().zip(col) {
            row[c] = x;
        }
    }
    Ok(PcaResult {
        coords,
        explained: eig.values[..comps].iter().map(|v| v / total).collect(),
        rank_deficient: comps < k,
        degenerate: false,
    })
}
