//! Free and weakly clamped relaxation.
//!
//! Runs are fixed-length (`t_free` / `t_nudge` steps); the residual tolerance is
//! only used to flag convergence in the returned trace. [`relax_to_convergence`]
//! is the exception, used by the finite-difference oracle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::energy::{energy, step_asynchronous, step_synchronous, NeuronStates, Nudge, Parameters};
use crate::numerics::{Scalar, Tensor};
use crate::topology::NetworkTopology;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    Synchronous,
    Asynchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxationConfig {
    pub t_free: usize,
    pub t_nudge: usize,
    pub scheduler: Scheduler,
    pub residual_tolerance: f64,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self {
            t_free: 120,
            t_nudge: 50,
            scheduler: Scheduler::Synchronous,
            residual_tolerance: 1e-6,
        }
    }
}

impl RelaxationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_free == 0 || self.t_nudge == 0 {
            return Err(Error::InvalidArgument(format!(
                "t_free and t_nudge must be >= 1 (got {} / {})",
                self.t_free, self.t_nudge
            )));
        }
        if !(self.residual_tolerance >= 0.0) {
            return Err(Error::InvalidArgument(
                "residual_tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step residual (max-norm state change) and batch-mean energy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelaxationTrace {
    pub residuals: Vec<f64>,
    pub energies: Vec<f64>,
}

impl RelaxationTrace {
    pub fn steps(&self) -> usize {
        self.residuals.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }

    /// First step (1-based) whose residual is below `tolerance`.
    pub fn steps_to_tolerance(&self, tolerance: f64) -> Option<usize> {
        self.residuals.iter().position(|&r| r < tolerance).map(|i| i + 1)
    }

    /// `step,residual,energy` rows.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,residual,energy")?;
        for (i, (r, e)) in self.residuals.iter().zip(&self.energies).enumerate() {
            writeln!(out, "{},{r:e},{e:e}", i + 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult<T> {
    pub states: NeuronStates<T>,
    pub trace: RelaxationTrace,
    pub converged: bool,
}

/// Max over states and entries of `|next − prev|`.
pub fn residual<T: Scalar>(prev: &NeuronStates<T>, next: &NeuronStates<T>) -> Result<f64> {
    if prev.states.len() != next.states.len() {
        return Err(Error::ShapeMismatch(format!(
            "residual over {} vs {} states",
            prev.states.len(),
            next.states.len()
        )));
    }
    let mut r = T::zero();
    for (a, b) in prev.states.iter().zip(&next.states) {
        r = r.max(a.max_abs_diff(b)?);
    }
    Ok(r.as_f64())
}

fn mean_energy<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
) -> Result<f64> {
    let phi = energy(topology, params, states)?;
    Ok(phi.iter().map(|p| p.as_f64()).sum::<f64>() / phi.len().max(1) as f64)
}

fn step<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    states: &NeuronStates<T>,
    scheduler: Scheduler,
    nudge: Option<Nudge<'_, T>>,
) -> Result<NeuronStates<T>> {
    match scheduler {
        Scheduler::Synchronous => step_synchronous(topology, params, states, nudge),
        Scheduler::Asynchronous => step_asynchronous(topology, params, states, nudge),
    }
}

#[allow(clippy::too_many_arguments)]
fn run<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    mut states: NeuronStates<T>,
    steps: usize,
    scheduler: Scheduler,
    tolerance: f64,
    nudge: Option<Nudge<'_, T>>,
    stop_early: bool,
) -> Result<EquilibriumResult<T>> {
    let mut trace = RelaxationTrace::default();
    for _ in 0..steps {
        let next = step(topology, params, &states, scheduler, nudge)?;
        let r = residual(&states, &next)?;
        states = next;
        trace.residuals.push(r);
        trace.energies.push(mean_energy(topology, params, &states)?);
        if stop_early && r < tolerance {
            break;
        }
    }
    let converged = trace.final_residual() < tolerance;
    Ok(EquilibriumResult {
        states,
        trace,
        converged,
    })
}

fn initial_states<T: Scalar>(
    topology: &NetworkTopology,
    input: &Tensor<T>,
    init: Option<NeuronStates<T>>,
) -> Result<NeuronStates<T>> {
    match init {
        None => NeuronStates::zeros_with_input(topology, input),
        Some(mut s) => {
            s.check(topology)?;
            input.check_same_shape(&s.states[0], "clamped input")?;
            s.states[0] = input.clone();
            Ok(s)
        }
    }
}

/// Free phase: input clamped, no label force, exactly `t_free` steps.
/// States start at zero unless `init` is given.
pub fn relax_free<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    input: &Tensor<T>,
    config: &RelaxationConfig,
    init: Option<NeuronStates<T>>,
) -> Result<EquilibriumResult<T>> {
    config.validate()?;
    let states = initial_states(topology, input, init)?;
    run(
        topology,
        params,
        states,
        config.t_free,
        config.scheduler,
        config.residual_tolerance,
        None,
        false,
    )
}

/// Weakly clamped phase: the output update gains `β (target − s_out)`; runs `t_nudge`
/// steps from `init` (normally the free equilibrium).
pub fn relax_nudged<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    beta: T,
    config: &RelaxationConfig,
    init: NeuronStates<T>,
) -> Result<EquilibriumResult<T>> {
    config.validate()?;
    if beta == T::zero() || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "nudged phase needs a finite non-zero beta, got {beta} (use relax_free for beta = 0)"
        )));
    }
    let states = initial_states(topology, input, Some(init))?;
    target.check_same_shape(states.output(), "target")?;
    run(
        topology,
        params,
        states,
        config.t_nudge,
        config.scheduler,
        config.residual_tolerance,
        Some(Nudge { target, beta }),
        false,
    )
}

/// Relax until the residual drops below `tolerance`, failing after `max_steps`.
#[allow(clippy::too_many_arguments)]
pub fn relax_to_convergence<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    input: &Tensor<T>,
    nudge: Option<Nudge<'_, T>>,
    scheduler: Scheduler,
    tolerance: f64,
    max_steps: usize,
    init: Option<NeuronStates<T>>,
) -> Result<EquilibriumResult<T>> {
    let states = initial_states(topology, input, init)?;
    let res = run(
        topology, params, states, max_steps, scheduler, tolerance, nudge, true,
    )?;
    if !res.converged {
        return Err(Error::NonConvergence {
            steps: res.trace.steps(),
            residual: res.trace.final_residual(),
        });
    }
    Ok(res)
}

/// `½ ‖s_out − y‖²` per batch element.
pub fn squared_error<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<Vec<T>> {
    let d = output.sub(target)?;
    Ok(d.dot_per_sample(&d)?
        .into_iter()
        .map(|v| v * T::lit(0.5))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_dense, BuildOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64, gain: f64) -> (NetworkTopology, Parameters<f64>, Tensor<f64>) {
        let t = build_dense(&[5, 4, 3], BuildOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Parameters::init_uniform(&t, gain, &mut rng);
        let x = Tensor::from_fn(&[2, 5, 1, 1], |_| rng.random_range(0.0..1.0));
        (t, p, x)
    }

    #[test]
    fn residual_basics() {
        let a = NeuronStates {
            states: vec![Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap()],
        };
        let mut b = a.clone();
        assert_eq!(residual(&a, &b).unwrap(), 0.0);
        b.states[0].data_mut()[1] = 2.5;
        assert_eq!(residual(&a, &b).unwrap(), 0.5);
        assert_eq!(residual(&b, &a).unwrap(), 0.5);
    }

    #[test]
    fn zero_weights_converge_in_one_step() {
        let (t, _, x) = small_net(1, 1.0);
        let p = Parameters::zeros(&t);
        let r = relax_free(&t, &p, &x, &RelaxationConfig::default(), None).unwrap();
        assert!(r.trace.residuals.iter().all(|&v| v == 0.0));
        assert_eq!(r.trace.steps_to_tolerance(1e-6), Some(1));
        assert!(r.converged);
    }

    #[test]
    fn default_config_runs_exactly_120_steps() {
        let (t, p, x) = small_net(2, 0.3);
        let r = relax_free(&t, &p, &x, &RelaxationConfig::default(), None).unwrap();
        assert_eq!(r.trace.steps(), 120);
        assert_eq!(r.trace.energies.len(), 120);
    }

    #[test]
    fn zero_beta_is_rejected() {
        let (t, p, x) = small_net(3, 0.3);
        let cfg = RelaxationConfig::default();
        let free = relax_free(&t, &p, &x, &cfg, None).unwrap();
        let y = Tensor::zeros(&[2, 3, 1, 1]);
        assert!(relax_nudged(&t, &p, &x, &y, 0.0, &cfg, free.states).is_err());
    }

    #[test]
    fn target_at_free_output_leaves_fixed_point() {
        let (t, p, x) = small_net(4, 0.3);
        let cfg = RelaxationConfig {
            t_free: 400,
            ..Default::default()
        };
        let free = relax_to_convergence(&t, &p, &x, None, Scheduler::Synchronous, 0.0, 5000, None)
            .unwrap_or_else(|_| relax_free(&t, &p, &x, &cfg, None).unwrap());
        let y = free.states.output().clone();
        let nudged = relax_nudged(&t, &p, &x, &y, 0.3, &cfg, free.states.clone()).unwrap();
        assert!(residual(&free.states, &nudged.states).unwrap() < 1e-14);
    }

    #[test]
    fn zero_steps_are_rejected() {
        let bad = RelaxationConfig {
            t_free: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let (t, p, x) = small_net(5, 0.3);
        let cfg = RelaxationConfig {
            t_free: 7,
            ..Default::default()
        };
        let r = relax_free(&t, &p, &x, &cfg, None).unwrap();
        let mut buf = Vec::new();
        r.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.starts_with("step,residual,energy"));
    }
}
