//! Bias-corrected Adam with value semantics.
//!
//! [`adam_step`] never mutates its inputs; it returns fresh parameter and
//! state values so an optimization trajectory can be forked or replayed at
//! any point. Both the inner and outer loops of meta-training use this
//! optimizer.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::params::{GradientSet, ParameterSet};
use crate::nn::tensor::Tensor;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// First/second moment estimates plus the step counter for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
    t: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Fresh zero-moment state mirroring `params`, with the default constants.
    pub fn new(params: &ParameterSet) -> Self {
        Self::with_hyperparams(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON)
    }

    pub fn with_hyperparams(params: &ParameterSet, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            m: params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect(),
            v: params
                .iter()
                .map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape())))
                .collect(),
            t: 0,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// Number of steps applied so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.v.get(name)
    }
}

/// One bias-corrected Adam update.
///
/// Returns the updated parameters and a state with `t + 1`; the inputs are
/// untouched. Identical inputs produce bit-identical outputs.
pub fn adam_step(
    params: &ParameterSet,
    grads: &GradientSet,
    state: &AdamState,
    lr: f64,
) -> Result<(ParameterSet, AdamState)> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.mirrors(params) {
        return Err(Error::shape(
            "adam_step",
            "gradient layout does not mirror the parameter set",
        ));
    }
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }

    let t_next = state.t + 1;
    let bc1 = 1.0 - state.beta1.powi(t_next as i32);
    let bc2 = 1.0 - state.beta2.powi(t_next as i32);

    let mut new_params = ParameterSet::new();
    let mut new_m = IndexMap::with_capacity(params.len());
    let mut new_v = IndexMap::with_capacity(params.len());
    for (name, p) in params.iter() {
        let g = grads.expect(name)?;
        let m_prev = state
            .m
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let v_prev = state
            .v
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if m_prev.shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("optimizer state for '{name}' does not match parameter shape"),
            ));
        }
        let n = p.numel();
        let mut p_out = Vec::with_capacity(n);
        let mut m_out = Vec::with_capacity(n);
        let mut v_out = Vec::with_capacity(n);
        for i in 0..n {
            let gi = g.data()[i];
            let mi = state.beta1 * m_prev.data()[i] + (1.0 - state.beta1) * gi;
            let vi = state.beta2 * v_prev.data()[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p_out.push(p.data()[i] - lr * m_hat / (v_hat.sqrt() + state.epsilon));
            m_out.push(mi);
            v_out.push(vi);
        }
        new_params.insert(name, Tensor::new(p.shape().to_vec(), p_out)?)?;
        new_m.insert(name.to_string(), Tensor::new(p.shape().to_vec(), m_out)?);
        new_v.insert(name.to_string(), Tensor::new(p.shape().to_vec(), v_out)?);
    }

    Ok((
        new_params,
        AdamState {
            m: new_m,
            v: new_v,
            t: t_next,
            beta1: state.beta1,
            beta2: state.beta2,
            epsilon: state.epsilon,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::from_flat(vec![value])).unwrap();
        p
    }

    fn scalar_grads(params: &ParameterSet, g: f64) -> GradientSet {
        let mut grads = GradientSet::zeros_like(params);
        grads.get_mut("w").unwrap().data_mut()[0] = g;
        grads
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let p = scalar_params(1.5);
        let g = GradientSet::zeros_like(&p);
        let s = AdamState::new(&p);
        let (p2, s2) = adam_step(&p, &g, &s, 0.001).unwrap();
        assert_eq!(p2.get("w").unwrap().data()[0].to_bits(), 1.5f64.to_bits());
        assert_eq!(s2.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_matches_hand_computation() {
        // t=1: m̂ = g, v̂ = g², so the update is lr·g/(|g| + ε).
        let p = scalar_params(0.0);
        let s = AdamState::new(&p);
        let (p2, _) = adam_step(&p, &scalar_grads(&p, 0.5), &s, 0.001).unwrap();
        let expected = 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p2.get("w").unwrap().data()[0] - (-expected)).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_scale_invariant() {
        let p = scalar_params(0.0);
        let s = AdamState::new(&p);
        let (p2, _) = adam_step(&p, &scalar_grads(&p, 100.0), &s, 0.001).unwrap();
        let expected = 0.001 * 100.0 / (100.0 + 1e-8);
        let got = -p2.get("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.001).abs() < 1e-9);
    }

    #[test]
    fn step_is_deterministic() {
        let p = scalar_params(2.0);
        let s = AdamState::new(&p);
        let g = scalar_grads(&p, 0.3);
        let (a, sa) = adam_step(&p, &g, &s, 0.01).unwrap();
        let (b, sb) = adam_step(&p, &g, &s, 0.01).unwrap();
        assert_eq!(
            a.get("w").unwrap().data()[0].to_bits(),
            b.get("w").unwrap().data()[0].to_bits()
        );
        assert_eq!(sa, sb);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let p = scalar_params(2.0);
        let s = AdamState::new(&p);
        let g = scalar_grads(&p, 0.3);
        let _ = adam_step(&p, &g, &s, 0.01).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 2.0);
        assert_eq!(s.step_count(), 0);
        assert_eq!(s.first_moment("w").unwrap().data()[0], 0.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let p = scalar_params(0.0);
        let s = AdamState::new(&p);
        let err = adam_step(&p, &scalar_grads(&p, f64::NAN), &s, 0.001).unwrap_err();
        assert!(err.to_string().contains("'w'"));
    }

    #[test]
    fn step_counter_increments_by_one() {
        let p = scalar_params(0.0);
        let mut s = AdamState::new(&p);
        let g = scalar_grads(&p, 0.1);
        let mut cur = p;
        for expect_t in 1..=5u64 {
            let (np, ns) = adam_step(&cur, &g, &s, 0.001).unwrap();
            assert_eq!(ns.step_count(), expect_t);
            cur = np;
            s = ns;
        }
    }
}
