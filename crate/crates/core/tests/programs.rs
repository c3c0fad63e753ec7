mod common;

use std::time::Instant;

use approx::assert_abs_diff_eq;
use common::*;
use fairshare::cmdp::ActionMode;
use fairshare::lpcore::Tolerances;
use fairshare::programs::{solve_f, solve_f_with, solve_p, solve_p_with, FairnessSlack};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FAIR: FairnessSlack = FairnessSlack::Bounded(0.0);

#[test]
fn parity_instance_theta_is_alpha_gap() {
    for b in [2, 4, 6, 8, 10, 12] {
        let t = Instant::now();
        let inst = instance(vec![u_hi(), u_lo()], b, ActionMode::Efficient);
        let r = solve_f(&inst).unwrap();
        assert_abs_diff_eq!(r.objective, 0.51 - 0.95, epsilon = 1e-6);
        let min_c = r.contributions.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(min_c, r.objective, epsilon = 1e-8);
        let odd: f64 = r.battery_marginal.iter().skip(1).step_by(2).sum();
        assert!(odd <= 1e-9, "b_max {b}: odd mass {odd}");
        assert!(t.elapsed().as_secs_f64() < 10.0);
    }
}

#[test]
fn report_invariants_hold() {
    let inst = instance(vec![u_hi(), u_dem()], 6, ActionMode::Full);
    for delta in [FAIR, FairnessSlack::Bounded(0.1), FairnessSlack::Unconstrained] {
        let r = solve_p(&inst, delta).unwrap();
        assert!(r.llr_per_user.iter().all(|&v| v >= -1e-10));
        assert_abs_diff_eq!(r.llr_sys(), r.objective, epsilon = 1e-9);
        assert_abs_diff_eq!(r.contributions.iter().sum::<f64>(), 0.0, epsilon = 1e-8);
        let d = delta.value();
        assert!(r.contributions.iter().all(|&c| c >= -d - 1e-8));
        assert!(r.diagnostics.stationarity_residual <= 1e-8);
        assert!(r.diagnostics.mass_error <= 1e-9);
        assert!(r.diagnostics.net_battery_flow.abs() <= 1e-8);
        assert_abs_diff_eq!(r.battery_marginal.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
    }
}

#[test]
fn frozen_optima_from_an_independent_solver() {
    // Values from HiGHS on an independently written model of the same LPs.
    let hidem = [
        0.28875235278300615,
        0.23618612430057184,
        0.21415616592478384,
        0.20539663896743054,
        0.20223863655961433,
        0.20106653013850315,
    ];
    let hilo = [
        0.14558811715810527,
        0.0747389665879912,
        0.04428941640792196,
        0.027437225744770498,
        0.016794307720256595,
        0.009503415559302933,
    ];
    for (k, b) in [2, 4, 6, 8, 10, 12].into_iter().enumerate() {
        let r = solve_p(&instance(vec![u_hi(), u_dem()], b, ActionMode::Full), FAIR).unwrap();
        assert_abs_diff_eq!(r.objective, hidem[k], epsilon = 1e-8);
        let r = solve_p(&instance(vec![u_hi(), u_lo()], b, ActionMode::Full), FAIR).unwrap();
        assert_abs_diff_eq!(r.objective, hilo[k], epsilon = 1e-8);
    }
}

#[test]
fn three_user_frontier_matches_reference() {
    let inst = instance(frontier_three(), 12, ActionMode::Full);
    let reference = [
        (0.0, 5.257527446615277e-05),
        (0.05, 1.4394655575608864e-05),
        (0.1, 8.14098045573847e-06),
        (0.3, 7.753227759025624e-06),
    ];
    for (d, v) in reference {
        let r = solve_p(&inst, FairnessSlack::Bounded(d)).unwrap();
        assert!((r.objective - v).abs() <= 1e-9 * v.max(1e-6), "delta {d}: {} vs {v}", r.objective);
    }
}

#[test]
fn five_user_frontier_matches_reference() {
    let inst = instance(frontier_five(), 12, ActionMode::Full);
    let reference = [
        (0.0, 0.33453115247349235),
        (0.05, 0.2839161566025517),
        (0.1, 0.2338365610217672),
        (0.15, 0.18390700151658995),
        (0.2, 0.13408083929543327),
        (0.3, 0.03572974113360149),
        (0.5, 0.009389093188946868),
    ];
    for (d, v) in reference {
        let r = solve_p(&inst, FairnessSlack::Bounded(d)).unwrap();
        assert!((r.objective - v).abs() <= 1e-9, "delta {d}: {} vs {v}", r.objective);
    }
}

#[test]
fn built_in_simplex_agrees_with_microlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..6 {
        let users = vec![random_user(&mut rng, "a"), random_user(&mut rng, "b")];
        let b = 2 + trial % 3;
        let full = instance(users.clone(), b, ActionMode::Full);
        for delta in [FAIR, FairnessSlack::Bounded(0.2), FairnessSlack::Unconstrained] {
            let ours = solve_p(&full, delta).unwrap();
            let theirs = solve_p_with(&full, delta, &MicroLp, &Tolerances::default()).unwrap();
            assert_abs_diff_eq!(ours.objective, theirs.objective, epsilon = 1e-8);
        }
        let eff = instance(users, b, ActionMode::Efficient);
        let ours = solve_f(&eff).unwrap();
        let theirs = solve_f_with(&eff, &MicroLp, &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(ours.objective, theirs.objective, epsilon = 1e-8);
    }
}

#[test]
fn single_user_problems() {
    let inst = instance(vec![u_gen()], 2, ActionMode::Full);
    let r = solve_p(&inst, FAIR).unwrap();
    assert_abs_diff_eq!(r.objective, birth_death_llr(0.6, 2), epsilon = 1e-9);
    assert!(r.contributions[0] >= -1e-9);
    let r = solve_f(&instance(vec![u_gen()], 4, ActionMode::Efficient)).unwrap();
    assert_abs_diff_eq!(r.objective, 0.0, epsilon = 1e-9);
}

#[test]
fn net_demanding_user_keeps_optimum_above_its_deficit() {
    for b in [1, 3, 5] {
        let r = solve_p(&instance(vec![u_hi(), u_dem()], b, ActionMode::Full), FAIR).unwrap();
        assert!(r.objective >= 0.2 - 1e-8);
    }
}

fn user_strategy() -> impl Strategy<Value = (f64, f64)> {
    (0.05f64..0.95, 0.05f64..0.95)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn objective_monotone_in_delta(a in user_strategy(), c in user_strategy(), b in 1usize..5) {
        let inst = instance(vec![two_state("a", a.0, a.1), two_state("b", c.0, c.1)], b, ActionMode::Full);
        let mut prev = f64::INFINITY;
        for d in [0.0, 0.1, 0.3, 1.0] {
            let v = solve_p(&inst, FairnessSlack::Bounded(d)).unwrap().objective;
            prop_assert!(v <= prev + 1e-9);
            prev = v;
        }
        let e = solve_p(&inst, FairnessSlack::Unconstrained).unwrap().objective;
        prop_assert!(e <= prev + 1e-9);
        // |s-| = 1, so delta = 1 already removes the fairness restriction.
        prop_assert!((e - prev).abs() <= 1e-8);
    }

    #[test]
    fn fair_optimum_monotone_in_battery(a in user_strategy(), c in user_strategy(), b in 0usize..5) {
        let users = vec![two_state("a", a.0, a.1), two_state("b", c.0, c.1)];
        let small = solve_p(&instance(users.clone(), b, ActionMode::Full), FAIR).unwrap().objective;
        let large = solve_p(&instance(users, b + 1, ActionMode::Full), FAIR).unwrap().objective;
        prop_assert!(large <= small + 1e-9);
    }

    #[test]
    fn theta_invariant_under_relabeling(a in user_strategy(), c in user_strategy(), e in user_strategy(), b in 1usize..4) {
        let users = vec![two_state("a", a.0, a.1), two_state("b", c.0, c.1), two_state("c", e.0, e.1)];
        let fwd = solve_f(&instance(users.clone(), b, ActionMode::Efficient)).unwrap();
        let rev_users: Vec<_> = users.into_iter().rev().collect();
        let rev = solve_f(&instance(rev_users, b, ActionMode::Efficient)).unwrap();
        prop_assert!((fwd.objective - rev.objective).abs() <= 1e-8);
        prop_assert!(fwd.objective <= 1e-9);
        let mut fc = fwd.contributions.clone();
        fc.reverse();
        // The maximizing measure need not be unique; only the optimal value is invariant.
        prop_assert!(fc.iter().cloned().fold(f64::INFINITY, f64::min) >= rev.objective - 1e-8);
    }
}
