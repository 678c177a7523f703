//! Central finite-difference gradients.
//!
//! This is the independent oracle against which the hand-written backward
//! rules are verified. It only ever calls the supplied loss closure, so it
//! cannot share a code path with [`model_backward`](crate::nn::model_backward).

use crate::error::{Error, Result};
use crate::nn::params::{GradientSet, ParameterSet};
use crate::nn::tensor::Tensor;

/// Estimate `∂loss/∂θ` entrywise via `(f(θ+h) − f(θ−h)) / 2h`.
pub fn finite_diff_grad<F>(loss_fn: F, params: &ParameterSet, h: f64) -> Result<GradientSet>
where
    F: Fn(&ParameterSet) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut grads = Vec::with_capacity(names.len());
    for name in &names {
        let n = params.expect(name)?.numel();
        let shape = params.expect(name)?.shape().to_vec();
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            g.push((loss_fn(&plus)? - loss_fn(&minus)?) / (2.0 * h));
        }
        grads.push((name.clone(), Tensor::new(shape, g)?));
    }
    Ok(grads.into_iter().collect())
}

/// Largest relative disagreement between two gradient sets.
///
/// Per entry: `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &GradientSet, b: &GradientSet) -> f64 {
    let mut worst = 0.0f64;
    for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_two_theta() {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::from_flat(vec![1.0, 2.0])).unwrap();
        let g = finite_diff_grad(
            |q| Ok(q.get("x").unwrap().data().iter().map(|v| v * v).sum()),
            &p,
            1e-5,
        )
        .unwrap();
        let got = g.get("x").unwrap().data();
        assert!((got[0] - 2.0).abs() < 1e-8);
        assert!((got[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::from_flat(vec![3.0, -1.0, 0.5]))
            .unwrap();
        let g = finite_diff_grad(|_| Ok(7.25), &p, 1e-5).unwrap();
        assert!(g.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = ParameterSet::new();
        assert!(finite_diff_grad(|_| Ok(0.0), &p, 0.0).is_err());
    }
}
