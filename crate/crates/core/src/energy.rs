//! The bilinear energy `Φ = Σ_edges s_to · P(op(w, s_from)) [+ Σ b·s]` and its
//! state gradient, which drives the dynamics `s ← σ(∂Φ/∂s)`.
//!
//! Pooling indices used by the adjoint path are always those of the forward op
//! evaluated on the current from-state, so `pre_activation` is the exact gradient
//! of the energy at the current states.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{
    conv2d, conv2d_transpose, dense, dense_transpose, inverse_maxpool2, maxpool2,
    relu_alpha_scalar, relu_alpha_sites, ConvKernel, PoolIndices, Scalar, Tensor,
};
use crate::topology::{bias_id, Activation, EdgeOp, NetworkTopology};
use crate::{Error, Result};

/// Trainable weights (one tensor per edge, shared by both directions), optional
/// per-state biases, and optional fixed per-site activation bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Parameters<T> {
    pub tensors: BTreeMap<String, Tensor<T>>,
    #[serde(default)]
    pub site_alpha: BTreeMap<usize, Tensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(topology: &NetworkTopology) -> Self {
        let mut tensors = BTreeMap::new();
        for e in topology.edges() {
            if let (Some(id), Some(shape)) = (&e.param_id, topology.param_shape(e)) {
                tensors.insert(id.clone(), Tensor::zeros(&shape));
            }
        }
        if topology.has_biases() {
            for n in topology.updatable() {
                tensors.insert(bias_id(n), Tensor::zeros(&[topology.state(n).chw()[0]]));
            }
        }
        Self {
            tensors,
            site_alpha: BTreeMap::new(),
        }
    }

    /// Weights uniform in `[-k, k]`, `k = gain / sqrt(fan_in)`; biases zero.
    pub fn init_uniform(topology: &NetworkTopology, gain: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(topology);
        for e in topology.edges() {
            let Some(id) = &e.param_id else { continue };
            let k = gain / (topology.fan_in(e) as f64).sqrt();
            let t = p.tensors.get_mut(id).expect("allocated above");
            for v in t.data_mut() {
                *v = T::lit(rng.random_range(-k..=k));
            }
        }
        p
    }

    /// Fix one activation bound per hidden neuron, uniform in `[lo, hi]`.
    pub fn randomize_alpha(
        &mut self,
        topology: &NetworkTopology,
        lo: f64,
        hi: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "random alpha range [{lo}, {hi}] is empty"
            )));
        }
        for n in topology.updatable() {
            let s = topology.state(n);
            if let Activation::ReluAlpha { .. } = s.activation {
                let t = Tensor::from_fn(&s.chw(), |_| {
                    // alpha must stay strictly positive
                    T::lit(rng.random_range(lo..=hi).max(f64::MIN_POSITIVE))
                });
                self.site_alpha.insert(n, t);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {id}")))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(id)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {id}")))
    }

    /// Check one tensor per trainable edge (and bias), with the right shapes.
    pub fn check(&self, topology: &NetworkTopology) -> Result<()> {
        let expected = Self::zeros(topology);
        if expected.tensors.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "topology has {} parameter tensors, got {}",
                expected.tensors.len(),
                self.tensors.len()
            )));
        }
        for (id, t) in &expected.tensors {
            let got = self.get(id)?;
            if got.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {id}: expected {:?}, got {:?}",
                    t.shape(),
                    got.shape()
                )));
            }
        }
        for (&n, a) in &self.site_alpha {
            if n == 0 || n >= topology.num_states() || a.len() != topology.state(n).numel() {
                return Err(Error::ShapeMismatch(format!("site alpha for state {n}")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            site_alpha: self.site_alpha.iter().map(|(&k, v)| (k, v.cast())).collect(),
        }
    }
}

/// Per-state tensors `(N, C, H, W)` aligned with the topology; state 0 is the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NeuronStates<T> {
    pub states: Vec<Tensor<T>>,
}

impl<T: Scalar> NeuronStates<T> {
    /// Input clamped, everything else zero.
    pub fn zeros_with_input(topology: &NetworkTopology, input: &Tensor<T>) -> Result<Self> {
        let batch = input.batch();
        let expected = topology.state(0).batch_shape(batch);
        if input.shape() != expected {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} does not match input state {expected:?}",
                input.shape()
            )));
        }
        let mut states = vec![input.clone()];
        for s in &topology.states()[1..] {
            states.push(Tensor::zeros(&s.batch_shape(batch)));
        }
        Ok(Self { states })
    }

    pub fn batch(&self) -> usize {
        self.states[0].batch()
    }

    pub fn output(&self) -> &Tensor<T> {
        self.states.last().expect("at least one state")
    }

    pub fn check(&self, topology: &NetworkTopology) -> Result<()> {
        if self.states.len() != topology.num_states() {
            return Err(Error::ShapeMismatch(format!(
                "{} state tensors for {} states",
                self.states.len(),
                topology.num_states()
            )));
        }
        let batch = self.batch();
        for (n, s) in self.states.iter().enumerate() {
            if s.shape() != topology.state(n).batch_shape(batch) {
                return Err(Error::ShapeMismatch(format!(
                    "state {n}: expected {:?}, got {:?}",
                    topology.state(n).batch_shape(batch),
                    s.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> NeuronStates<U> {
        NeuronStates {
            states: self.states.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Output force `β (target − s_out)` added during the weakly clamped phase.
#[derive(Debug, Clone, Copy)]
pub struct Nudge<'a, T> {
    pub target: &'a Tensor<T>,
    pub beta: T,
}

pub(crate) struct EdgeForward<T> {
    pub value: Tensor<T>,
    pub indices: Option<PoolIndices>,
}

/// `P(op(w, s_from))` for edge `e`, keeping the pooling indices.
pub(crate) fn forward_edge<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    e: usize,
    from: &Tensor<T>,
) -> Result<EdgeForward<T>> {
    let edge = topology.edge(e);
    let raw = match edge.op {
        EdgeOp::Conv3x3 | EdgeOp::Conv1x1Skip => {
            let w = params.get(edge.param_id.as_deref().unwrap_or_default())?;
            conv2d(&ConvKernel::new(w)?, from)?
        }
        EdgeOp::Dense => {
            let w = params.get(edge.param_id.as_deref().unwrap_or_default())?;
            dense(w, from)?
        }
        EdgeOp::IdentitySkip => from.clone(),
    };
    if edge.pooled {
        let (value, indices) = maxpool2(&raw)?;
        Ok(EdgeForward {
            value,
            indices: Some(indices),
        })
    } else {
        Ok(EdgeForward {
            value: raw,
            indices: None,
        })
    }
}

/// `op*(w, P⁻¹(s_to))`: the adjoint of [`forward_edge`] at frozen pooling indices.
pub(crate) fn adjoint_edge<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    e: usize,
    to: &Tensor<T>,
    indices: Option<&PoolIndices>,
) -> Result<Tensor<T>> {
    let edge = topology.edge(e);
    let unpooled;
    let upstream = match (edge.pooled, indices) {
        (true, Some(idx)) => {
            unpooled = inverse_maxpool2(to, idx)?;
            &unpooled
        }
        (true, None) => {
            return Err(Error::InvalidArgument(format!(
                "pooled edge {e} needs pooling indices"
            )))
        }
        (false, _) => to,
    };
    match edge.op {
        EdgeOp::Conv3x3 | EdgeOp::Conv1x1Skip => {
            let w = params.get(edge.param_id.as_deref().unwrap_or_default())?;
            conv2d_transpose(&ConvKernel::new(w)?, upstream)
        }
        EdgeOp::Dense => {
            let w = params.get(edge.param_id.as_deref().unwrap_or_default())?;
            dense_transpose(w, upstream, &topology.state(edge.from_state).chw())
        }
        EdgeOp::IdentitySkip => Ok(upstream.clone()),
    }
}

fn add_bias<T: Scalar>(acc: &mut Tensor<T>, bias: &Tensor<T>) {
    let c = bias.len();
    let plane = acc.sample_len() / c.max(1);
    for (i, v) in acc.data_mut().iter_mut().enumerate() {
        *v += bias.data()[(i / plane) % c];
    }
}

/// Energy of every batch element.
pub fn energy<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
) -> Result<Vec<T>> {
    states.check(topology)?;
    let mut phi = vec![T::zero(); states.batch()];
    for (e, edge) in topology.edges().iter().enumerate() {
        let f = forward_edge(topology, params, e, &states.states[edge.from_state])?;
        let d = states.states[edge.to_state].dot_per_sample(&f.value)?;
        phi.iter_mut().zip(d).for_each(|(p, x)| *p += x);
    }
    if topology.has_biases() {
        for n in topology.updatable() {
            let mut ones = Tensor::zeros(states.states[n].shape());
            add_bias(&mut ones, params.get(&bias_id(n))?);
            let d = states.states[n].dot_per_sample(&ones)?;
            phi.iter_mut().zip(d).for_each(|(p, x)| *p += x);
        }
    }
    Ok(phi)
}

/// `∂Φ/∂s^n` for each requested state, sharing forward evaluations between them.
pub fn pre_activations<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
    targets: &[usize],
) -> Result<Vec<Tensor<T>>> {
    states.check(topology)?;
    let ns = topology.num_states();
    let mut wanted = vec![false; ns];
    for &n in targets {
        if n == 0 || n >= ns {
            return Err(Error::InvalidArgument(format!(
                "state {n} is not updatable (input is clamped)"
            )));
        }
        wanted[n] = true;
    }
    let batch = states.batch();
    let mut acc: Vec<Option<Tensor<T>>> = (0..ns)
        .map(|n| wanted[n].then(|| Tensor::zeros(&topology.state(n).batch_shape(batch))))
        .collect();
    for (e, edge) in topology.edges().iter().enumerate() {
        let to_wanted = wanted[edge.to_state];
        let from_wanted = wanted[edge.from_state];
        if !to_wanted && !from_wanted {
            continue;
        }
        let fwd = if to_wanted || edge.pooled {
            Some(forward_edge(topology, params, e, &states.states[edge.from_state])?)
        } else {
            None
        };
        if from_wanted {
            let back = adjoint_edge(
                topology,
                params,
                e,
                &states.states[edge.to_state],
                fwd.as_ref().and_then(|f| f.indices.as_ref()),
            )?;
            acc[edge.from_state].as_mut().expect("wanted").add_assign(&back)?;
        }
        if to_wanted {
            let f = fwd.expect("computed when to_wanted");
            acc[edge.to_state].as_mut().expect("wanted").add_assign(&f.value)?;
        }
    }
    if topology.has_biases() {
        for &n in targets {
            add_bias(acc[n].as_mut().expect("wanted"), params.get(&bias_id(n))?);
        }
    }
    Ok(targets
        .iter()
        .map(|&n| acc[n].take().expect("each target filled once"))
        .collect())
}

/// `∂Φ/∂s^n`: forward contributions from `pre(n)` plus adjoint contributions from `post(n)`.
pub fn pre_activation<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
    n: usize,
) -> Result<Tensor<T>> {
    Ok(pre_activations(topology, params, states, &[n])?.remove(0))
}

/// `σ_n` applied to a pre-activation.
pub fn activate<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    n: usize,
    pre: Tensor<T>,
) -> Result<Tensor<T>> {
    if let Some(alphas) = params.site_alpha.get(&n) {
        return relu_alpha_sites(&pre, alphas);
    }
    match topology.state(n).activation {
        Activation::ReluAlpha { alpha } => {
            let a = T::lit(alpha);
            Ok(pre.map(|x| relu_alpha_scalar(x, a)))
        }
        Activation::Identity => Ok(pre),
    }
}

fn update_group<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
    group: &[usize],
    nudge: Option<Nudge<'_, T>>,
) -> Result<Vec<Tensor<T>>> {
    let out = topology.output_index();
    let pres = pre_activations(topology, params, states, group)?;
    group
        .iter()
        .zip(pres)
        .map(|(&n, mut pre)| {
            if let (true, Some(nudge)) = (n == out, nudge) {
                let current = &states.states[out];
                nudge.target.check_same_shape(current, "nudge target")?;
                for ((p, &y), &s) in pre
                    .data_mut()
                    .iter_mut()
                    .zip(nudge.target.data())
                    .zip(current.data())
                {
                    *p += nudge.beta * (y - s);
                }
            }
            let next = activate(topology, params, n, pre)?;
            next.ensure_finite(&format!("state {n}"))?;
            Ok(next)
        })
        .collect()
}

/// All updatable states replaced at once from the previous states.
pub fn step_synchronous<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
    nudge: Option<Nudge<'_, T>>,
) -> Result<NeuronStates<T>> {
    let group: Vec<usize> = topology.updatable().collect();
    let new = update_group(topology, params, states, &group, nudge)?;
    let mut next = states.clone();
    for (n, s) in group.into_iter().zip(new) {
        next.states[n] = s;
    }
    Ok(next)
}

/// Even-indexed states first, then odd-indexed states from the refreshed even ones.
pub fn step_asynchronous<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
    nudge: Option<Nudge<'_, T>>,
) -> Result<NeuronStates<T>> {
    let mut next = states.clone();
    for parity in [0, 1] {
        let group: Vec<usize> = topology.updatable().filter(|n| n % 2 == parity).collect();
        if group.is_empty() {
            continue;
        }
        let new = update_group(topology, params, &next, &group, nudge)?;
        for (n, s) in group.into_iter().zip(new) {
            next.states[n] = s;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_dense, build_hopfield_resnet, BuildOptions, SkipKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_states(t: &NetworkTopology, batch: usize, rng: &mut ChaCha8Rng) -> NeuronStates<f64> {
        NeuronStates {
            states: t
                .states()
                .iter()
                .map(|s| Tensor::from_fn(&s.batch_shape(batch), |_| rng.random_range(0.05..1.0)))
                .collect(),
        }
    }

    #[test]
    fn two_state_dense_energy_by_hand() {
        let t = build_dense(&[1, 1], BuildOptions::default()).unwrap();
        let mut p = Parameters::<f64>::zeros(&t);
        p.get_mut("w0_1").unwrap().data_mut()[0] = 3.0;
        let s = NeuronStates {
            states: vec![
                Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
                Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap(),
            ],
        };
        assert_eq!(energy(&t, &p, &s).unwrap(), vec![6.0]);
    }

    #[test]
    fn zero_states_have_zero_energy() {
        let t = build_hopfield_resnet([1, 4, 4], &[2, 2], 3, SkipKind::Conv1x1, Default::default())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Parameters::<f64>::init_uniform(&t, 1.0, &mut rng);
        let s = NeuronStates::zeros_with_input(&t, &Tensor::zeros(&[2, 1, 4, 4])).unwrap();
        assert_eq!(energy(&t, &p, &s).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn edge_summand_is_linear_in_its_weights() {
        let t = build_dense(&[3, 4, 2], BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Parameters::<f64>::init_uniform(&t, 1.0, &mut rng);
        let s = random_states(&t, 2, &mut rng);
        let base = energy(&t, &p, &s).unwrap();
        let mut zeroed = p.clone();
        zeroed.get_mut("w1_2").unwrap().scale(0.0);
        let without = energy(&t, &zeroed, &s).unwrap();
        let mut scaled = p.clone();
        scaled.get_mut("w1_2").unwrap().scale(2.5);
        let with = energy(&t, &scaled, &s).unwrap();
        for i in 0..2 {
            let summand = base[i] - without[i];
            assert!((with[i] - without[i] - 2.5 * summand).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_pre_activation_has_two_terms() {
        let t = build_dense(&[3, 4, 2], BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Parameters::<f64>::init_uniform(&t, 1.0, &mut rng);
        let s = random_states(&t, 2, &mut rng);
        let got = pre_activation(&t, &p, &s, 1).unwrap();
        let mut expect = dense(p.get("w0_1").unwrap(), &s.states[0]).unwrap();
        expect
            .add_assign(&dense_transpose(p.get("w1_2").unwrap(), &s.states[2], &[4, 1, 1]).unwrap())
            .unwrap();
        assert!(got.max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn mismatched_conv_channels_are_reported() {
        let t = build_hopfield_resnet([1, 4, 4], &[2, 2], 3, SkipKind::Conv1x1, Default::default())
            .unwrap();
        let mut p = Parameters::<f64>::zeros(&t);
        assert!(p.check(&t).is_ok());
        p.tensors.insert("w1_2".into(), Tensor::zeros(&[2, 3, 3, 3]));
        let err = p.check(&t).unwrap_err().to_string();
        assert!(err.contains("w1_2"), "{err}");
    }

    #[test]
    fn input_state_cannot_be_updated() {
        let t = build_dense(&[2, 2], BuildOptions::default()).unwrap();
        let p = Parameters::<f64>::zeros(&t);
        let s = NeuronStates::zeros_with_input(&t, &Tensor::zeros(&[1, 2, 1, 1])).unwrap();
        assert!(pre_activation(&t, &p, &s, 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_pre_activation_and_states() {
        let t = build_hopfield_resnet([1, 4, 4], &[2, 2], 3, SkipKind::Conv1x1, Default::default())
            .unwrap();
        let p = Parameters::<f64>::zeros(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_states(&t, 2, &mut rng);
        for n in t.updatable() {
            assert_eq!(pre_activation(&t, &p, &s, n).unwrap().max_abs(), 0.0);
        }
        let next = step_synchronous(&t, &p, &s, None).unwrap();
        for n in t.updatable() {
            assert_eq!(next.states[n].max_abs(), 0.0);
        }
        assert_eq!(next.states[0], s.states[0]);
    }

    #[test]
    fn one_step_on_two_state_net_by_hand() {
        let t = build_dense(&[2, 2, 1], BuildOptions::default()).unwrap();
        let mut p = Parameters::<f64>::zeros(&t);
        p.get_mut("w0_1")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[1.0, -2.0, 3.0, 4.0]);
        let x = Tensor::new(vec![1, 2, 1, 1], vec![0.5, 1.0]).unwrap();
        let s = NeuronStates::zeros_with_input(&t, &x).unwrap();
        let next = step_synchronous(&t, &p, &s, None).unwrap();
        // σ([0.5 - 2, 1.5 + 4]) = [0, 5.5]
        assert_eq!(next.states[1].data(), &[0.0, 5.5]);
        let big = Tensor::new(vec![1, 2, 1, 1], vec![2.0, 1.0]).unwrap();
        let s = NeuronStates::zeros_with_input(&t, &big).unwrap();
        let next = step_synchronous(&t, &p, &s, None).unwrap();
        // [2 - 2, 6 + 4] -> clipped to [0, 6]
        assert_eq!(next.states[1].data(), &[0.0, 6.0]);
    }

    #[test]
    fn async_group_order_is_even_then_odd() {
        // chain x -> h1 -> h2 -> out with unit weights, zero init:
        // even half updates h2 (sees h1 = 0) then odd half updates h1 and out.
        let t = build_dense(&[1, 1, 1, 1], BuildOptions::default()).unwrap();
        let mut p = Parameters::<f64>::zeros(&t);
        for id in ["w0_1", "w1_2", "w2_3"] {
            p.get_mut(id).unwrap().data_mut()[0] = 1.0;
        }
        let x = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let s = NeuronStates::zeros_with_input(&t, &x).unwrap();
        let a = step_asynchronous(&t, &p, &s, None).unwrap();
        assert_eq!(a.states[1].data(), &[1.0]);
        assert_eq!(a.states[2].data(), &[0.0]);
        assert_eq!(a.states[3].data(), &[0.0]);
        let b = step_asynchronous(&t, &p, &a, None).unwrap();
        // h2 = σ(h1 + out) = 1, then h1 = σ(x + h2) = 2, out = h2 = 1
        assert_eq!(b.states[2].data(), &[1.0]);
        assert_eq!(b.states[1].data(), &[2.0]);
        assert_eq!(b.states[3].data(), &[1.0]);
    }

    #[test]
    fn nudge_pulls_output_toward_target() {
        let t = build_dense(&[1, 1], BuildOptions::default()).unwrap();
        let p = Parameters::<f64>::zeros(&t);
        let x = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let s = NeuronStates::zeros_with_input(&t, &x).unwrap();
        let y = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let nudge = Nudge {
            target: &y,
            beta: 0.5,
        };
        let next = step_synchronous(&t, &p, &s, Some(nudge)).unwrap();
        assert_eq!(next.output().data(), &[0.5]);
    }

    #[test]
    fn biases_enter_energy_and_pre_activation() {
        let opts = BuildOptions {
            biases: true,
            ..Default::default()
        };
        let t = build_dense(&[2, 2], opts).unwrap();
        let mut p = Parameters::<f64>::zeros(&t);
        p.get_mut("b1").unwrap().data_mut().copy_from_slice(&[1.0, -1.0]);
        let s = NeuronStates {
            states: vec![
                Tensor::new(vec![1, 2, 1, 1], vec![0.0, 0.0]).unwrap(),
                Tensor::new(vec![1, 2, 1, 1], vec![3.0, 1.0]).unwrap(),
            ],
        };
        assert_eq!(energy(&t, &p, &s).unwrap(), vec![2.0]);
        assert_eq!(pre_activation(&t, &p, &s, 1).unwrap().data(), &[1.0, -1.0]);
    }
}
