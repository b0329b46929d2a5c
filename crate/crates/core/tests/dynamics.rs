use eqprop::energy::{energy, pre_activation, step_asynchronous, step_synchronous};
use eqprop::gradients::{
    cep_gradient, ep_gradient_onesided, estimator_errors, fd_loss_gradient_oracle, max_relative_error, OracleConfig,
};
use eqprop::relaxation::{relax_free, relax_nudged, relax_to_convergence, residual, squared_error};
use eqprop::topology::{build_dense, build_hopfield_resnet13, build_vgg5, BuildOptions};
use eqprop::training::one_hot;
use eqprop::{NetworkTopology, NeuronStates, Parameters, RelaxationConfig, Scheduler, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(t: &NetworkTopology, batch: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let [c, h, w] = t.input_shape();
    Tensor::from_fn(&[batch, c, h, w], |_| rng.random_range(0.0..1.0))
}

fn random_states(t: &NetworkTopology, batch: usize, rng: &mut ChaCha8Rng) -> NeuronStates<f64> {
    NeuronStates {
        states: t
            .states()
            .iter()
            .map(|s| Tensor::from_fn(&s.batch_shape(batch), |_| rng.random_range(0.0..3.0)))
            .collect(),
    }
}

fn small_dense() -> NetworkTopology {
    build_dense(&[8, 6, 4], BuildOptions::default()).unwrap()
}

#[test]
fn async_and_sync_steps_differ_on_resnet13() {
    let t = build_hopfield_resnet13([3, 16, 16], [4, 4, 6, 6], 10, BuildOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = Parameters::<f64>::init_uniform(&t, 1.0, &mut rng);
    let s = random_states(&t, 2, &mut rng);
    let a = step_asynchronous(&t, &p, &s, None).unwrap();
    let b = step_synchronous(&t, &p, &s, None).unwrap();
    assert!(residual(&a, &b).unwrap() > 1e-6);
    // the even group is computed from the same states in both schedules
    for n in (2..t.num_states()).step_by(2) {
        assert_eq!(a.states[n], b.states[n], "even state {n}");
    }
}

#[test]
fn relaxation_treats_batch_elements_independently() {
    let t = build_vgg5([1, 8, 8], [3, 4, 4, 5], [true, true, true, false], 4, BuildOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
    let x = random_input(&t, 3, &mut rng);
    let cfg = RelaxationConfig {
        t_free: 25,
        ..Default::default()
    };
    let joint = relax_free(&t, &p, &x, &cfg, None).unwrap();
    for i in 0..3 {
        let alone = relax_free(&t, &p, &x.gather(&[i]), &cfg, None).unwrap();
        for (a, b) in joint.states.states.iter().zip(&alone.states.states) {
            assert_eq!(a.sample(i), b.data());
        }
    }
}

#[test]
fn nudging_toward_the_target_lowers_the_loss() {
    for seed in 0..10 {
        let t = small_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
        let x = random_input(&t, 4, &mut rng);
        let y = one_hot::<f64>(&t, &[0, 1, 2, 3]).unwrap();
        let free = relax_to_convergence(&t, &p, &x, None, Scheduler::Synchronous, 1e-12, 10_000, None).unwrap();
        let nudge = eqprop::Nudge { target: &y, beta: 0.2 };
        let pos = relax_to_convergence(
            &t,
            &p,
            &x,
            Some(nudge),
            Scheduler::Synchronous,
            1e-12,
            10_000,
            Some(free.states.clone()),
        )
        .unwrap();
        let before: f64 = squared_error(free.states.output(), &y).unwrap().iter().sum();
        let after: f64 = squared_error(pos.states.output(), &y).unwrap().iter().sum();
        assert!(after <= before + 1e-12, "seed {seed}: {after} > {before}");
    }
}

#[test]
fn opposite_nudges_reach_different_states() {
    let t = small_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
    let x = random_input(&t, 2, &mut rng);
    let y = one_hot::<f64>(&t, &[1, 2]).unwrap();
    let cfg = RelaxationConfig::default();
    let free = relax_free(&t, &p, &x, &cfg, None).unwrap();
    let pos = relax_nudged(&t, &p, &x, &y, 0.25, &cfg, free.states.clone()).unwrap();
    let neg = relax_nudged(&t, &p, &x, &y, -0.25, &cfg, free.states.clone()).unwrap();
    assert!(residual(&pos.states, &neg.states).unwrap() > 1e-3);
}

#[test]
fn centered_estimate_is_the_mean_of_the_one_sided_ones() {
    let t = small_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
    let x = random_input(&t, 2, &mut rng);
    let y = one_hot::<f64>(&t, &[0, 3]).unwrap();
    let cfg = RelaxationConfig::default();
    let free = relax_free(&t, &p, &x, &cfg, None).unwrap();
    let pos = relax_nudged(&t, &p, &x, &y, 0.1, &cfg, free.states.clone()).unwrap();
    let neg = relax_nudged(&t, &p, &x, &y, -0.1, &cfg, free.states.clone()).unwrap();
    let cep = cep_gradient(&t, &p, &pos.states, &neg.states, 0.1).unwrap();
    let up = ep_gradient_onesided(&t, &p, &free.states, &pos.states, 0.1).unwrap();
    // the one-sided estimate taken at -beta is the negated estimate from that equilibrium
    let mut down = ep_gradient_onesided(&t, &p, &free.states, &neg.states, 0.1).unwrap();
    down.scale(-1.0);
    for (id, g) in &cep.grads {
        let mean: Vec<f64> = up.grads[id]
            .data()
            .iter()
            .zip(down.grads[id].data())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        for (a, b) in g.data().iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{id}: {a} vs {b}");
        }
    }
}

#[test]
fn smaller_beta_gives_a_closer_estimate() {
    let t = small_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
    let x = random_input(&t, 1, &mut rng);
    let y = one_hot::<f64>(&t, &[0]).unwrap();
    let cfg = OracleConfig::default();
    let oracle = fd_loss_gradient_oracle(&t, &p, &x, &y, &cfg).unwrap();
    let errs = estimator_errors(&t, &p, &x, &y, &[0.1, 0.01], &oracle, &cfg).unwrap();
    assert!(errs[1].ep_max() < errs[0].ep_max());
    assert!(errs[1].cep_max() < errs[0].cep_max());
}

#[test]
fn oracle_is_stable_under_step_halving() {
    let t = small_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
    let x = random_input(&t, 2, &mut rng);
    let y = one_hot::<f64>(&t, &[2, 1]).unwrap();
    let coarse = OracleConfig::default();
    let fine = OracleConfig {
        epsilon: coarse.epsilon / 2.0,
        ..coarse
    };
    let a = fd_loss_gradient_oracle(&t, &p, &x, &y, &coarse).unwrap();
    let b = fd_loss_gradient_oracle(&t, &p, &x, &y, &fine).unwrap();
    assert!(max_relative_error(&b, &a).unwrap() < 1e-6);
}

#[test]
fn zero_network_oracle_ignores_deep_weights() {
    let t = build_dense(&[5, 4, 3, 2], BuildOptions::default()).unwrap();
    let p = Parameters::<f64>::zeros(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_input(&t, 1, &mut rng);
    let y = one_hot::<f64>(&t, &[1]).unwrap();
    let g = fd_loss_gradient_oracle(&t, &p, &x, &y, &OracleConfig::default()).unwrap();
    // with every state at zero only a change of two consecutive layers can move the output
    for (id, grad) in &g.grads {
        assert!(grad.data().iter().all(|v| *v == 0.0), "{id}");
    }
}

#[test]
fn estimators_vanish_when_phases_coincide() {
    let t = small_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = Parameters::<f64>::init_uniform(&t, 0.8, &mut rng);
    let s = random_states(&t, 2, &mut rng);
    for g in [
        ep_gradient_onesided(&t, &p, &s, &s, 0.2).unwrap(),
        cep_gradient(&t, &p, &s, &s, 0.2).unwrap(),
    ] {
        assert!(g.grads.values().all(|v| v.data().iter().all(|x| *x == 0.0)));
    }
}

#[test]
fn fixed_point_is_left_alone_by_either_schedule() {
    let t = small_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = Parameters::<f64>::init_uniform(&t, 0.5, &mut rng);
    let x = random_input(&t, 2, &mut rng);
    let mut s = NeuronStates::zeros_with_input(&t, &x).unwrap();
    loop {
        let next = step_synchronous(&t, &p, &s, None).unwrap();
        if next == s {
            break;
        }
        s = next;
    }
    assert_eq!(step_asynchronous(&t, &p, &s, None).unwrap(), s);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hidden_states_stay_in_the_activation_range(seed in 0u64..1000, gain in 0.1f64..4.0, alpha in 0.5f64..8.0) {
        let t = build_dense(&[6, 5, 5, 3], BuildOptions { alpha, biases: true }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Parameters::<f64>::init_uniform(&t, gain, &mut rng);
        let x = Tensor::from_fn(&[2, 6, 1, 1], |_| rng.random_range(-5.0..5.0));
        let cfg = RelaxationConfig { t_free: 30, scheduler: if seed % 2 == 0 { Scheduler::Synchronous } else { Scheduler::Asynchronous }, ..Default::default() };
        let r = relax_free(&t, &p, &x, &cfg, None).unwrap();
        for n in 1..t.output_index() {
            prop_assert!(r.states.states[n].data().iter().all(|v| (0.0..=alpha).contains(v)));
        }
    }

    #[test]
    fn state_gradient_matches_energy_differences(seed in 0u64..1000) {
        let t = build_dense(&[4, 3, 3, 2], BuildOptions { alpha: 6.0, biases: seed % 2 == 0 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Parameters::<f64>::init_uniform(&t, 1.0, &mut rng);
        let s = random_states(&t, 1, &mut rng);
        let eps = 1e-5;
        for n in t.updatable() {
            let analytic = pre_activation(&t, &p, &s, n).unwrap();
            for i in 0..analytic.len() {
                let mut up = s.clone();
                up.states[n].data_mut()[i] += eps;
                let mut down = s.clone();
                down.states[n].data_mut()[i] -= eps;
                let fd = (energy(&t, &p, &up).unwrap()[0] - energy(&t, &p, &down).unwrap()[0]) / (2.0 * eps);
                prop_assert!((fd - analytic.data()[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
