//! Parameter gradients from equilibria, and a finite-difference oracle to check them.
//!
//! All estimators return `+∂L/∂θ` (the optimizer descends along its negation) averaged
//! over the batch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::energy::{forward_edge, NeuronStates, Nudge, Parameters};
use crate::numerics::{conv2d_weight_grad, dense_weight_grad, inverse_maxpool2, Scalar, Tensor};
use crate::relaxation::{relax_to_convergence, squared_error, Scheduler};
use crate::topology::{bias_id, EdgeOp, NetworkTopology};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Centered: `+β` and `−β` nudged phases.
    #[default]
    Cep,
    /// One-sided: a single `+β` nudged phase.
    EpOnesided,
    /// Gradient of the energy itself (not a loss gradient).
    EnergyGrad,
    /// Central finite differences of the loss at the free fixed point.
    FdOracle,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Cep => "cep",
            Estimator::EpOnesided => "ep_onesided",
            Estimator::EnergyGrad => "energy_grad",
            Estimator::FdOracle => "fd_oracle",
        }
    }
}

/// One tensor per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    pub grads: BTreeMap<String, Tensor<T>>,
    pub estimator: Estimator,
    pub beta: Option<f64>,
}

impl<T: Scalar> GradientEstimate<T> {
    pub fn get(&self, id: &str) -> Result<&Tensor<T>> {
        self.grads
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no gradient for {id}")))
    }

    pub fn scale(&mut self, c: T) {
        self.grads.values_mut().for_each(|g| g.scale(c));
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (id, g) in &self.grads {
            g.ensure_finite(&format!("gradient {id}"))?;
        }
        Ok(())
    }

    /// `c · (self − other)`, keyed like `self`.
    fn scaled_difference(&self, other: &Self, c: T, estimator: Estimator, beta: f64) -> Result<Self> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::ShapeMismatch(
                "gradient estimates cover different parameters".into(),
            ));
        }
        let grads = self
            .grads
            .iter()
            .map(|(id, a)| {
                let mut d = a.sub(other.get(id)?)?;
                d.scale(c);
                Ok((id.clone(), d))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grads,
            estimator,
            beta: Some(beta),
        })
    }
}

/// `∂Φ/∂θ` with the states held fixed, averaged over the batch.
pub fn param_energy_grad<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
) -> Result<GradientEstimate<T>> {
    states.check(topology)?;
    let inv_batch = T::one() / T::lit(states.batch() as f64);
    let mut grads = BTreeMap::new();
    for (e, edge) in topology.edges().iter().enumerate() {
        let (Some(id), Some(shape)) = (&edge.param_id, topology.param_shape(edge)) else {
            continue;
        };
        let from = &states.states[edge.from_state];
        let to = &states.states[edge.to_state];
        let unpooled;
        let upstream = if edge.pooled {
            let f = forward_edge(topology, params, e, from)?;
            unpooled = inverse_maxpool2(to, f.indices.as_ref().expect("pooled"))?;
            &unpooled
        } else {
            to
        };
        let mut g = match edge.op {
            EdgeOp::Dense => dense_weight_grad(&shape, from, upstream)?,
            _ => conv2d_weight_grad(&shape, from, upstream)?,
        };
        g.scale(inv_batch);
        grads.insert(id.clone(), g);
    }
    if topology.has_biases() {
        for n in topology.updatable() {
            let s = &states.states[n];
            let c = topology.state(n).chw()[0];
            let plane = s.sample_len() / c;
            let mut g = Tensor::zeros(&[c]);
            for (i, &v) in s.data().iter().enumerate() {
                g.data_mut()[(i / plane) % c] += v;
            }
            g.scale(inv_batch);
            grads.insert(bias_id(n), g);
        }
    }
    Ok(GradientEstimate {
        grads,
        estimator: Estimator::EnergyGrad,
        beta: None,
    })
}

/// `−(1/β) (g_nudged − g_free)` for any non-zero `β`.
pub fn ep_combine<T: Scalar>(
    nudged: &GradientEstimate<T>,
    free: &GradientEstimate<T>,
    beta: f64,
) -> Result<GradientEstimate<T>> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be non-zero, got {beta}")));
    }
    nudged.scaled_difference(free, T::lit(-1.0 / beta), Estimator::EpOnesided, beta)
}

/// `−(1/2β) (g_{+β} − g_{−β})`.
pub fn cep_combine<T: Scalar>(
    pos: &GradientEstimate<T>,
    neg: &GradientEstimate<T>,
    beta: f64,
) -> Result<GradientEstimate<T>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    pos.scaled_difference(neg, T::lit(-0.5 / beta), Estimator::Cep, beta)
}

/// One-sided estimate from the free and `+β` equilibria.
pub fn ep_gradient_onesided<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    free_eq: &NeuronStates<T>,
    nudged_eq: &NeuronStates<T>,
    beta: f64,
) -> Result<GradientEstimate<T>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    let g_nudged = param_energy_grad(topology, params, nudged_eq)?;
    let g_free = param_energy_grad(topology, params, free_eq)?;
    ep_combine(&g_nudged, &g_free, beta)
}

/// Centered estimate from the `+β` and `−β` equilibria.
pub fn cep_gradient<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    pos_eq: &NeuronStates<T>,
    neg_eq: &NeuronStates<T>,
    beta: f64,
) -> Result<GradientEstimate<T>> {
    let g_pos = param_energy_grad(topology, params, pos_eq)?;
    let g_neg = param_energy_grad(topology, params, neg_eq)?;
    cep_combine(&g_pos, &g_neg, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub epsilon: f64,
    /// Residual below which a perturbed relaxation counts as converged.
    pub tolerance: f64,
    pub max_steps: usize,
    pub scheduler: Scheduler,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-10,
            max_steps: 20_000,
            scheduler: Scheduler::Synchronous,
        }
    }
}

/// Batch-mean loss at the free fixed point, relaxed from zero to `tolerance`.
pub fn loss_at_equilibrium<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    config: &OracleConfig,
) -> Result<f64> {
    let eq = relax_to_convergence(
        topology,
        params,
        input,
        None::<Nudge<'_, T>>,
        config.scheduler,
        config.tolerance,
        config.max_steps,
        None,
    )?;
    let l = squared_error(eq.states.output(), target)?;
    Ok(l.iter().map(|v| v.as_f64()).sum::<f64>() / l.len() as f64)
}

/// Central finite difference of the equilibrium loss with respect to every parameter
/// entry. Costs two full relaxations per entry; meant for desk-scale nets.
pub fn fd_loss_gradient_oracle<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    config: &OracleConfig,
) -> Result<GradientEstimate<T>> {
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be > 0".into()));
    }
    let eps = T::lit(config.epsilon);
    let mut grads = BTreeMap::new();
    let mut work = params.clone();
    for id in topology.param_ids() {
        let len = params.get(&id)?.len();
        let mut g = Tensor::zeros(params.get(&id)?.shape());
        for i in 0..len {
            let orig = params.get(&id)?.data()[i];
            work.get_mut(&id)?.data_mut()[i] = orig + eps;
            let up = loss_at_equilibrium(topology, &work, input, target, config)?;
            work.get_mut(&id)?.data_mut()[i] = orig - eps;
            let down = loss_at_equilibrium(topology, &work, input, target, config)?;
            work.get_mut(&id)?.data_mut()[i] = orig;
            g.data_mut()[i] = T::lit((up - down) / (2.0 * config.epsilon));
        }
        grads.insert(id, g);
    }
    Ok(GradientEstimate {
        grads,
        estimator: Estimator::FdOracle,
        beta: None,
    })
}

/// Per-parameter `‖est − reference‖∞ / ‖reference‖∞` (absolute error where the
/// reference is identically zero).
pub fn relative_errors<T: Scalar>(
    estimate: &GradientEstimate<T>,
    reference: &GradientEstimate<T>,
) -> Result<BTreeMap<String, f64>> {
    reference
        .grads
        .iter()
        .map(|(id, r)| {
            let diff = estimate.get(id)?.max_abs_diff(r)?.as_f64();
            let scale = r.max_abs().as_f64();
            Ok((id.clone(), if scale > 0.0 { diff / scale } else { diff }))
        })
        .collect()
}

/// Largest of [`relative_errors`].
pub fn max_relative_error<T: Scalar>(
    estimate: &GradientEstimate<T>,
    reference: &GradientEstimate<T>,
) -> Result<f64> {
    Ok(relative_errors(estimate, reference)?
        .values()
        .fold(0.0, |m, &v| m.max(v)))
}

/// Errors of both estimators against a reference gradient at one nudge strength.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaErrors {
    pub beta: f64,
    pub cep: BTreeMap<String, f64>,
    pub ep_onesided: BTreeMap<String, f64>,
}

impl BetaErrors {
    pub fn cep_max(&self) -> f64 {
        self.cep.values().fold(0.0, |m, &v| m.max(v))
    }

    pub fn ep_max(&self) -> f64 {
        self.ep_onesided.values().fold(0.0, |m, &v| m.max(v))
    }
}

/// Relax the free and `±β` phases to convergence for every `β` and compare both
/// estimators with `reference` (normally [`fd_loss_gradient_oracle`]).
pub fn estimator_errors<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    betas: &[f64],
    reference: &GradientEstimate<T>,
    config: &OracleConfig,
) -> Result<Vec<BetaErrors>> {
    let relax = |nudge: Option<Nudge<'_, T>>, init: Option<NeuronStates<T>>| {
        relax_to_convergence(
            topology,
            params,
            input,
            nudge,
            config.scheduler,
            config.tolerance,
            config.max_steps,
            init,
        )
    };
    let free = relax(None, None)?.states;
    betas
        .iter()
        .map(|&beta| {
            let b = T::lit(beta);
            let pos = relax(Some(Nudge { target, beta: b }), Some(free.clone()))?.states;
            let neg = relax(Some(Nudge { target, beta: -b }), Some(free.clone()))?.states;
            let ep = ep_gradient_onesided(topology, params, &free, &pos, beta)?;
            let cep = cep_gradient(topology, params, &pos, &neg, beta)?;
            Ok(BetaErrors {
                beta,
                cep: relative_errors(&cep, reference)?,
                ep_onesided: relative_errors(&ep, reference)?,
            })
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_dense, BuildOptions};

    fn toy() -> (NetworkTopology, Parameters<f64>) {
        let t = build_dense(&[2, 1], BuildOptions::default()).unwrap();
        let p = Parameters::zeros(&t);
        (t, p)
    }

    fn states(from: [f64; 2], to: f64) -> NeuronStates<f64> {
        NeuronStates {
            states: vec![
                Tensor::new(vec![1, 2, 1, 1], from.to_vec()).unwrap(),
                Tensor::new(vec![1, 1, 1, 1], vec![to]).unwrap(),
            ],
        }
    }

    #[test]
    fn dense_energy_grad_is_outer_product() {
        let (t, p) = toy();
        let g = param_energy_grad(&t, &p, &states([1.0, 2.0], 3.0)).unwrap();
        assert_eq!(g.get("w0_1").unwrap().data(), &[3.0, 6.0]);
        let z = param_energy_grad(&t, &p, &states([0.0, 0.0], 0.0)).unwrap();
        assert_eq!(z.get("w0_1").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn identical_equilibria_give_zero() {
        let (t, p) = toy();
        let s = states([1.0, 2.0], 3.0);
        let ep = ep_gradient_onesided(&t, &p, &s, &s, 0.1).unwrap();
        assert_eq!(ep.get("w0_1").unwrap().max_abs(), 0.0);
        let cep = cep_gradient(&t, &p, &s, &s, 0.1).unwrap();
        assert_eq!(cep.get("w0_1").unwrap().max_abs(), 0.0);
    }

    #[test]
    fn non_positive_beta_is_rejected() {
        let (t, p) = toy();
        let s = states([1.0, 2.0], 3.0);
        assert!(ep_gradient_onesided(&t, &p, &s, &s, 0.0).is_err());
        assert!(ep_gradient_onesided(&t, &p, &s, &s, -0.1).is_err());
        assert!(cep_gradient(&t, &p, &s, &s, 0.0).is_err());
    }

    #[test]
    fn cep_is_antisymmetric_and_linear() {
        let (t, p) = toy();
        let a = param_energy_grad(&t, &p, &states([1.0, 2.0], 3.0)).unwrap();
        let b = param_energy_grad(&t, &p, &states([0.5, 1.0], -1.0)).unwrap();
        let ab = cep_combine(&a, &b, 0.2).unwrap();
        let ba = cep_combine(&b, &a, 0.2).unwrap();
        for (x, y) in ab.get("w0_1").unwrap().data().iter().zip(ba.get("w0_1").unwrap().data()) {
            assert_eq!(*x, -*y);
        }
        let mut a3 = a.clone();
        a3.scale(3.0);
        let mut b3 = b.clone();
        b3.scale(3.0);
        let scaled = ep_combine(&a3, &b3, 0.2).unwrap();
        let base = ep_combine(&a, &b, 0.2).unwrap();
        for (x, y) in scaled.get("w0_1").unwrap().data().iter().zip(base.get("w0_1").unwrap().data()) {
            assert!((x - 3.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_error_uses_tensor_scale() {
        let mk = |v: Vec<f64>| GradientEstimate {
            grads: BTreeMap::from([("w".to_string(), Tensor::new(vec![2], v).unwrap())]),
            estimator: Estimator::Cep,
            beta: None,
        };
        let e = max_relative_error(&mk(vec![1.1, 0.0]), &mk(vec![1.0, 0.0])).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
    }
}
