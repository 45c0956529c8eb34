mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rokmpc::qp::{solve, warm_start, QpProblem, QpSettings, QpStatus};

#[test]
fn random_qps_match_active_set_enumeration() {
    let mut rng = common::rng(2024);
    let settings = QpSettings::default();
    for case in 0..200 {
        let p = common::random_qp(&mut rng);
        let (z_ref, f_ref) = common::enumerate_qp(&p);
        let sol = solve(&p, &settings).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
        assert!(
            (sol.objective - f_ref).abs() <= 1e-6 * f_ref.abs().max(1.0),
            "case {case}: {} vs {f_ref}",
            sol.objective
        );
        assert!(sol.kkt_residual <= 1e-6, "case {case}: kkt {}", sol.kkt_residual);
        assert!((&sol.z - &z_ref).amax() <= 1e-4, "case {case}");
    }
}

#[test]
fn oracle_agrees_with_closed_form_on_a_box() {
    // min 0.5 |z|^2 - c'z over [0, 1]^2 is the clipped c
    let p = QpProblem::boxed(
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![-2.0, 0.5]),
        DVector::zeros(2),
        DVector::from_element(2, 1.0),
    );
    let (z, _) = common::enumerate_qp(&p);
    assert_eq!(z.as_slice(), &[1.0, 0.0]);
}

fn boxed_qp() -> impl Strategy<Value = QpProblem> {
    (1usize..8).prop_flat_map(|d| {
        (
            prop::collection::vec(-2.0f64..2.0, d * d),
            prop::collection::vec(-5.0f64..5.0, d),
            prop::collection::vec(0.05f64..2.0, d),
        )
            .prop_map(move |(m, g, w)| {
                let m = DMatrix::from_vec(d, d, m);
                let h = m.transpose() * &m + DMatrix::identity(d, d) * 0.5;
                let w = DVector::from_vec(w);
                QpProblem::boxed(h, DVector::from_vec(g), -&w, w)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_are_feasible_and_stationary(p in boxed_qp()) {
        let sol = solve(&p, &QpSettings::default()).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(common::feasible(&p, &sol.z, 0.0));
        prop_assert!(sol.kkt_residual <= 1e-6);
        for (l, u) in sol.duals.lower.iter().zip(sol.duals.upper.iter()) {
            prop_assert!(*l >= 0.0 && *u >= 0.0);
        }
    }

    #[test]
    fn no_feasible_corner_beats_the_solution(p in boxed_qp()) {
        let sol = solve(&p, &QpSettings::default()).unwrap();
        let d = p.dim();
        for mask in 0u32..(1 << d.min(6)) {
            let z = DVector::from_fn(d, |i, _| if mask & (1 << i.min(31)) != 0 { p.ub[i] } else { p.lb[i] });
            let fz = p.objective(&z);
            prop_assert!(sol.objective <= fz + 1e-9, "gap {:e}, objective {}, kkt {:e}", sol.objective - fz, sol.objective, sol.kkt_residual);
        }
    }

    #[test]
    fn warm_start_from_the_optimum_stays_there(p in boxed_qp()) {
        let s = QpSettings::default();
        let cold = solve(&p, &s).unwrap();
        let warm = warm_start(&p, &cold, &s).unwrap();
        prop_assert!((&warm.z - &cold.z).amax() <= 1e-6);
        prop_assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn text_dump_round_trips(p in boxed_qp()) {
        let mut buf = Vec::new();
        p.write_text(&mut buf).unwrap();
        let back = QpProblem::read_text(&buf[..]).unwrap();
        prop_assert_eq!(back, p);
    }
}
