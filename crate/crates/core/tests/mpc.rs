mod common;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rokmpc::experiment::{builtin_change, recalibrate_scenario, ExperimentConfig};
use rokmpc::koopman::{fit_reduced, ReducedKoopmanModel, Snapshots};
use rokmpc::lifting::LiftingMap;
use rokmpc::mpc::{
    build_condensed_qp, design_feedback_gain, mpc_step, error_bound, run_closed_loop, sequence_cost, ControllerKind,
    MpcConfig, RobustGain, Scenario, SetPoint,
};
use rokmpc::plant::benchmark::{SAMPLE_TIME, U_MAX, U_MIN, X0};
use rokmpc::plant::{generate_excitation, simulate_open_loop, Integrator, PlantParams};
use rokmpc::scaling::AffineScaling;

/// Linear predictor of the plant in normalized states, fitted on an
/// excitation run. Good enough to close the loop for a few hours.
fn plant_model() -> &'static ReducedKoopmanModel {
    static MODEL: OnceLock<ReducedKoopmanModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let p = PlantParams::default();
        let u = generate_excitation(&U_MIN, &U_MAX, 1.5, 30.0, SAMPLE_TIME, 1).unwrap();
        let ds = simulate_open_loop(&X0, &u, &[], &p, &Integrator::default(), SAMPLE_TIME).unwrap();
        let norm = AffineScaling::from_samples(9, ds.states.iter().map(|s| s.as_slice())).unwrap();
        let inputs = AffineScaling::from_bounds(&U_MIN.0, &U_MAX.0).unwrap();
        fit_reduced(&Snapshots::from(&ds), &LiftingMap::identity(norm), &inputs, 9).unwrap()
    })
}

fn short_scenario(hours: f64, seed: u64) -> Scenario {
    let mut s = recalibrate_scenario(&builtin_change().scenario, &PlantParams::default()).unwrap();
    s.horizon = hours;
    s.setpoints[1].time = hours / 2.0;
    s.disturbance_seed = seed;
    s
}

fn plant_cfg() -> MpcConfig {
    let cfg = ExperimentConfig::default();
    let s = short_scenario(1.0, 0);
    let (lo, hi) = cfg.input_box(&s.setpoints.iter().map(|p| p.u_s).collect::<Vec<_>>());
    MpcConfig::diagonal(10, &[1.0; 9], &cfg.mpc.r, lo, hi, SAMPLE_TIME)
}

#[test]
fn zero_gain_robust_run_reproduces_nominal_bit_for_bit() {
    let model = plant_model();
    let cfg = plant_cfg();
    let zero = RobustGain::zero(&model.a, 3).unwrap();
    let scenario = short_scenario(1.0, 4);
    let run = |kind, gain| {
        run_closed_loop(&PlantParams::default(), &Integrator::default(), model, kind, &cfg, gain, &scenario).unwrap()
    };
    let nominal = run(ControllerKind::ReducedKmpc, None);
    let robust = run(ControllerKind::ReducedRkmpc, Some(&zero));
    assert!(nominal.failure.is_none());
    assert_eq!(nominal.trajectory.states, robust.trajectory.states);
    assert_eq!(nominal.trajectory.inputs, robust.trajectory.inputs);
}

#[test]
fn applied_inputs_never_leave_the_box() {
    let model = plant_model();
    let cfg = plant_cfg();
    let a = &model.a;
    let gain = design_feedback_gain(a, &model.b, &DMatrix::identity(9, 9), &DMatrix::identity(3, 3)).unwrap();
    for kind in [ControllerKind::ReducedKmpc, ControllerKind::ReducedRkmpc] {
        let res = run_closed_loop(
            &PlantParams::default(),
            &Integrator::default(),
            model,
            kind,
            &cfg,
            Some(&gain),
            &short_scenario(1.0, 8),
        )
        .unwrap();
        for u in &res.trajectory.inputs {
            for i in 0..3 {
                assert!(cfg.u_min[i] <= u.0[i] && u.0[i] <= cfg.u_max[i]);
            }
        }
    }
}

#[test]
fn lqr_gain_certificate_and_error_bound_hold_in_simulation() {
    let model = plant_model();
    let (a, b) = (&model.a, &model.b);
    let gain = design_feedback_gain(a, b, &DMatrix::identity(9, 9), &(DMatrix::identity(3, 3) * 3.0)).unwrap();
    let a_k = gain.closed_loop(a, b);
    let rho = a_k.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(rho < 1.0);
    assert!((rho - gain.spectral_radius).abs() < 1e-12);

    let w_max = 0.01;
    let bound = error_bound(&a_k, w_max).unwrap();
    let mut rng = common::rng(17);
    let mut e = DVector::zeros(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        // box-bounded draw scaled into the Euclidean ball
        let w = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0)) * (w_max / 3.0);
        e = &a_k * e + w;
        worst = worst.max(e.norm());
    }
    assert!(worst <= bound, "{worst} > {bound}");
}

fn small_system() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (0u64..500, 1usize..5, 1usize..3, 1usize..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn condensed_cost_equals_rollout((seed, n, m, horizon) in small_system()) {
        let mut rng = common::rng(seed);
        let (a, b) = common::stable_system(&mut rng, n, m, 0.95);
        let (x, u) = common::simulate_linear(&mut rng, &a, &b, 30 + 5 * (n + m));
        let model = fit_reduced(
            &Snapshots::new(x, u).unwrap(),
            &LiftingMap::identity(AffineScaling::identity(n)),
            &AffineScaling::identity(m),
            n,
        ).unwrap();
        let q_diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        let r_diag: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..3.0)).collect();
        let cfg = MpcConfig::diagonal(horizon, &q_diag, &r_diag, vec![-2.0; m], vec![2.0; m], 1.0);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let us: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sp = SetPoint::new(&model, &xs, &us, 0.0).unwrap();
        let q0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let c = build_condensed_qp(&model, &q0, &sp, &cfg).unwrap();
        let seq: Vec<DVector<f64>> = (0..horizon)
            .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let stacked = DVector::from_iterator(horizon * m, seq.iter().flat_map(|v| v.iter().copied()));
        let rollout = sequence_cost(&model, &q0, &seq, &sp, &cfg);
        let condensed = c.problem.objective(&stacked) + c.constant;
        prop_assert!((rollout - condensed).abs() <= 1e-8 * rollout.abs().max(1.0));
    }

    #[test]
    fn lqr_gains_are_schur_stable(seed in 0u64..500, n in 1usize..6, m in 1usize..3) {
        let mut rng = common::rng(seed);
        // deliberately unstable open loop
        let (a, b) = common::stable_system(&mut rng, n, m, 1.3);
        // a random B makes (A, B) controllable almost surely
        let g = design_feedback_gain(&a, &b, &DMatrix::identity(n, n), &DMatrix::identity(m, m)).unwrap();
        let a_k = g.closed_loop(&a, &b);
        prop_assert!(g.spectral_radius < 1.0);
        prop_assert!(error_bound(&a_k, 1.0).unwrap().is_finite());
    }

    #[test]
    fn optimal_sequence_never_costs_more_than_holding_u_s((seed, n, m, horizon) in small_system()) {
        let mut rng = common::rng(seed ^ 0x5eed);
        let (model, a, b) = linear_model(&mut rng, n, m);
        let cfg = MpcConfig::diagonal(horizon, &vec![1.0; n], &vec![0.5; m], vec![-2.0; m], vec![2.0; m], 1.0);
        let (xs, us) = equilibrium(&mut rng, &a, &b);
        let sp = SetPoint::new(&model, xs.as_slice(), us.as_slice(), 0.0).unwrap();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let step = mpc_step(&model, &x0, &sp, &cfg, None).unwrap();
        let hold = vec![sp.u_s_n.clone(); horizon];
        let optimal = sequence_cost(&model, &step.q_current, &step.u_seq, &sp, &cfg);
        let constant = sequence_cost(&model, &step.q_current, &hold, &sp, &cfg);
        prop_assert!(optimal <= constant + 1e-7 * constant.max(1.0));
    }

    #[test]
    fn cost_to_go_decreases_under_a_perfect_model(seed in 0u64..300, n in 1usize..4, m in 1usize..3) {
        let mut rng = common::rng(seed ^ 0xc057);
        let (model, a, b) = linear_model(&mut rng, n, m);
        let cfg = MpcConfig::diagonal(12, &vec![1.0; n], &vec![0.1; m], vec![-2.0; m], vec![2.0; m], 1.0);
        let (xs, us) = equilibrium(&mut rng, &a, &b);
        let sp = SetPoint::new(&model, xs.as_slice(), us.as_slice(), 0.0).unwrap();
        // the plant is the model itself
        let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let step = mpc_step(&model, x.as_slice(), &sp, &cfg, None).unwrap();
            let v = sequence_cost(&model, &step.q_current, &step.u_seq, &sp, &cfg);
            prop_assert!(v <= last * (1.0 + 1e-8) + 1e-12, "{v} > {last}");
            last = v;
            x = &a * &x + &b * &step.u_seq[0];
        }
    }
}

/// Identity-lifted model of a random stable system, fitted from noise-free
/// data so that it reproduces `(A, B)` up to roundoff.
fn linear_model(
    rng: &mut rand_chacha::ChaCha8Rng,
    n: usize,
    m: usize,
) -> (ReducedKoopmanModel, DMatrix<f64>, DMatrix<f64>) {
    let (a, b) = common::stable_system(rng, n, m, 0.9);
    let (x, u) = common::simulate_linear(rng, &a, &b, 30 + 5 * (n + m));
    let model = fit_reduced(
        &Snapshots::new(x, u).unwrap(),
        &LiftingMap::identity(AffineScaling::identity(n)),
        &AffineScaling::identity(m),
        n,
    )
    .unwrap();
    (model, a, b)
}

/// Random admissible `u_s` and the matching steady state.
fn equilibrium(rng: &mut rand_chacha::ChaCha8Rng, a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let us = DVector::from_fn(b.ncols(), |_, _| rng.random_range(-1.0..1.0));
    let n = a.nrows();
    let xs = (DMatrix::identity(n, n) - a).lu().solve(&(b * &us)).unwrap();
    (xs, us)
}
