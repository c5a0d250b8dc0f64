use crate::error::{dim, Error, Result};

/// A flattened parameter (or activation) vector together with the selector
/// that produced it. Two vectors from the same selector are element-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatVector {
    pub values: Vec<f64>,
    pub origin: String,
}

impl FlatVector {
    pub fn new(values: Vec<f64>, origin: impl Into<String>) -> Self {
        Self {
            values,
            origin: origin.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity `u.v / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(dim("cosine", format!("lengths {} and {}", u.len(), v.len())));
    }
    let sq = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>();
    let (su, sv) = (sq(u), sq(v));
    if su == 0.0 || sv == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    // one square root keeps cos(u, u) exact when |u|^2 is representable
    Ok((dot / (su * sv).sqrt()).clamp(-1.0, 1.0))
}
