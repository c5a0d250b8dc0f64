use super::flat::FlatVector;
use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A scalar function of a flat vector with an analytic gradient.
pub trait ScalarFunction {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Wraps a graph builder: the closure receives a fresh graph and a leaf holding
/// `x` reshaped to `shape`, and returns the scalar output node.
pub struct GraphFunction<F> {
    shape: Vec<usize>,
    build: F,
}

impl<F> GraphFunction<F>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    pub fn new(shape: Vec<usize>, build: F) -> Self {
        Self { shape, build }
    }

    fn record(&self, x: &[f64]) -> Result<(Graph, Var, Var)> {
        let mut g = Graph::new();
        let leaf = g.leaf(Tensor::new(self.shape.clone(), x.to_vec())?.with_requires_grad(true));
        let out = (self.build)(&mut g, leaf)?;
        Ok((g, leaf, out))
    }
}

impl<F> ScalarFunction for GraphFunction<F>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (g, _, out) = self.record(x)?;
        Ok(g.value(out).data()[0])
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (g, leaf, out) = self.record(x)?;
        let mut grads = g.backward(out)?;
        Ok(grads.remove(leaf).expect("leaf requires grad").into_data())
    }
}

/// Max over all coordinates of `|analytic - central| / max(1, |central|)`.
pub fn grad_check(f: &dyn ScalarFunction, point: &FlatVector, eps: f64) -> Result<f64> {
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_coords(f, point, eps, &coords)
}

/// Same as [`grad_check`], restricted to `coords`.
pub fn grad_check_coords(f: &dyn ScalarFunction, point: &FlatVector, eps: f64, coords: &[usize]) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = f.gradient(&point.values)?;
    let mut x = point.values.clone();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f.value(&x)?;
        x[i] = orig - eps;
        let down = f.value(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { op: "grad_check" });
        }
        let central = (up - down) / (2.0 * eps);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = GraphFunction::new(vec![5, 1], |g, x| {
            let xt = g.transpose(x)?;
            let sq = g.matmul(xt, x)?;
            g.scale(sq, 0.5)
        });
        let p = FlatVector::new(vec![0.3, -1.2, 4.0, 2.5, -0.7], "x");
        assert!(grad_check(&f, &p, 1e-4).unwrap() < 1e-9);
    }

    #[test]
    fn rejects_bad_eps() {
        let f = GraphFunction::new(vec![1], |g, x| g.sum(x));
        let p = FlatVector::new(vec![1.0], "x");
        assert!(grad_check(&f, &p, 0.0).is_err());
    }
}
