use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::energy::Parameters;
use crate::gradients::GradientEstimate;
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

/// Nesterov momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerState<T> {
    pub momentum: BTreeMap<String, Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &Parameters<T>) -> Self {
        Self {
            momentum: params
                .tensors
                .iter()
                .map(|(id, p)| (id.clone(), Tensor::zeros(p.shape())))
                .collect(),
            step: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> OptimizerState<U> {
        OptimizerState {
            momentum: self.momentum.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            step: self.step,
        }
    }
}

/// One Nesterov update for every parameter that has a gradient.
///
/// `g ← g + wd·p; v ← μ·v + g; p ← p − lr·(g + μ·v)`, with `lr` looked up per parameter.
pub fn nesterov_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &GradientEstimate<T>,
    state: &mut OptimizerState<T>,
    lr: impl Fn(&str) -> f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "momentum must be in [0, 1) and weight decay >= 0 (got {momentum}, {weight_decay})"
        )));
    }
    let mu = T::lit(momentum);
    let wd = T::lit(weight_decay);
    for (id, g) in &grads.grads {
        let rate = lr(id);
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate for {id} must be > 0, got {rate}"
            )));
        }
        let rate = T::lit(rate);
        let p = params.get_mut(id)?;
        p.check_same_shape(g, id)?;
        let v = state
            .momentum
            .entry(id.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        v.check_same_shape(g, id)?;
        for ((pi, vi), &gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            let gi = gi + wd * *pi;
            *vi = mu * *vi + gi;
            *pi -= rate * (gi + mu * *vi);
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::Estimator;

    fn setup(p0: f64, g: f64) -> (Parameters<f64>, GradientEstimate<f64>, OptimizerState<f64>) {
        let params = Parameters {
            tensors: BTreeMap::from([("w".into(), Tensor::new(vec![1], vec![p0]).unwrap())]),
            site_alpha: BTreeMap::new(),
        };
        let grads = GradientEstimate {
            grads: BTreeMap::from([("w".into(), Tensor::new(vec![1], vec![g]).unwrap())]),
            estimator: Estimator::Cep,
            beta: None,
        };
        let state = OptimizerState::new(&params);
        (params, grads, state)
    }

    #[test]
    fn plain_descent_without_momentum() {
        let (mut p, g, mut s) = setup(1.0, 0.5);
        nesterov_step(&mut p, &g, &mut s, |_| 0.1, 0.0, 0.0).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let (mut p, g, mut s) = setup(1.0, 0.0);
        nesterov_step(&mut p, &g, &mut s, |_| 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn two_nesterov_steps_match_recursion() {
        // v1 = g, p1 = p0 - lr (g + μ g); v2 = μ g + g, p2 = p1 - lr (g + μ (1 + μ) g)
        let (lr, mu, g0) = (0.1, 0.9, 2.0);
        let (mut p, g, mut s) = setup(0.0, g0);
        nesterov_step(&mut p, &g, &mut s, |_| lr, mu, 0.0).unwrap();
        nesterov_step(&mut p, &g, &mut s, |_| lr, mu, 0.0).unwrap();
        let expect = -lr * g0 * ((1.0 + mu) + (1.0 + mu * (1.0 + mu)));
        assert!((p.get("w").unwrap().data()[0] - expect).abs() < 1e-12);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let (mut p, g, mut s) = setup(2.0, 0.0);
        nesterov_step(&mut p, &g, &mut s, |_| 0.5, 0.0, 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn non_positive_lr_is_rejected() {
        let (mut p, g, mut s) = setup(1.0, 1.0);
        assert!(nesterov_step(&mut p, &g, &mut s, |_| 0.0, 0.9, 0.0).is_err());
        assert!(nesterov_step(&mut p, &g, &mut s, |_| -1.0, 0.9, 0.0).is_err());
    }
}
