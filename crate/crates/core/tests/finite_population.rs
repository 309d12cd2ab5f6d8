//! Finite-population excess demand around the mean-field clearing condition.

mod common;

use common::{one_step, scenario, shortened};
use mfe_core::analysis::forward_joint_law;
use mfe_core::convergence::{convergence_study, sample_population};
use mfe_core::market::Scenario;
use mfe_core::solver::{solve, EquilibriumSolution, SolveOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Equal-weight types with `gamma` 1 and 3 at `L = 1`: positions 1.5 and 0.5.
fn two_type() -> (Scenario, EquilibriumSolution) {
    let types = json!([{"gamma": 1.0, "weight": 0.5}, {"gamma": 3.0, "weight": 0.5}]);
    let sc = scenario(&one_step(
        types,
        json!({"family": "constant", "params": {"value": 1.0}}),
    ));
    let sol = solve(&sc, &SolveOptions::default()).unwrap();
    (sc, sol)
}

#[test]
fn two_type_positions_are_one_and_a_half_and_one_half() {
    let (_, sol) = two_type();
    assert!((sol.phi(0, 0, 0, 0, 0, 0) - 1.5).abs() < 1e-12);
    assert!((sol.phi(0, 0, 0, 0, 0, 1) - 0.5).abs() < 1e-12);
}

#[test]
fn two_type_mse_is_a_quarter_over_population_size() {
    let (sc, sol) = two_type();
    let law = forward_joint_law(&sol, &sc.y_chain).unwrap();
    let rep = convergence_study(&sol, &law, &[10, 40, 100], 10_000, 11, None).unwrap();
    for s in &rep.sizes {
        let expected = 0.25 / s.n_agents as f64;
        let rel = (s.mean_mse - expected).abs() / expected;
        assert!(
            rel < 0.05,
            "N_p={} mse={} expected={expected}",
            s.n_agents,
            s.mean_mse
        );
    }
    let ratio = rep.sizes[0].mean_mse / rep.sizes[1].mean_mse;
    assert!(
        (ratio - 4.0).abs() < 0.4,
        "quadrupling N_p should quarter the MSE, ratio {ratio}"
    );
    let slope = rep.slope.unwrap();
    assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
}

#[test]
fn excess_demand_is_unbiased() {
    let (_, sol) = two_type();
    let n_agents = 25;
    let reps = 4000;
    let mut errs = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(r as u64);
        let s = sample_population(&sol, n_agents, 0, &mut rng).unwrap();
        let c = &s.counts[0];
        let mean = (1.5 * c[0] as f64 + 0.5 * c[1] as f64) / n_agents as f64;
        errs.push(mean - 1.0);
    }
    let m = errs.iter().sum::<f64>() / reps as f64;
    let sd = (errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!(
        m.abs() < 3.0 * sd / (reps as f64).sqrt(),
        "mean excess demand {m}"
    );
}

#[test]
fn doubling_replications_shrinks_standard_errors_by_root_two() {
    let (sc, sol) = two_type();
    let law = forward_joint_law(&sol, &sc.y_chain).unwrap();
    let a = convergence_study(&sol, &law, &[20, 200], 2000, 3, None).unwrap();
    let b = convergence_study(&sol, &law, &[20, 200], 4000, 3, None).unwrap();
    for (x, y) in a.sizes.iter().zip(&b.sizes) {
        let ratio = y.std_error / x.std_error;
        let target = std::f64::consts::FRAC_1_SQRT_2;
        assert!((ratio - target).abs() < 0.2 * target, "ratio {ratio}");
    }
}

#[test]
fn mse_stays_under_the_smallest_size_bound() {
    let f = shortened("table1_f1", 12);
    let sc = scenario(&f);
    let sol = solve(&sc, &SolveOptions::default()).unwrap();
    let law = forward_joint_law(&sol, &sc.y_chain).unwrap();
    let rep = convergence_study(&sol, &law, &[50, 200, 800], 300, 1, Some(6)).unwrap();
    let c_hat = rep.sizes[0].mean_mse * rep.sizes[0].n_agents as f64;
    for s in &rep.sizes {
        assert!(s.mean_mse <= c_hat / s.n_agents as f64 + 3.0 * s.std_error);
    }
}

#[test]
fn degenerate_population_has_zero_mse_and_no_slope() {
    let types = json!([{"gamma": 1.0, "weight": 1.0}]);
    let sc = scenario(&one_step(
        types,
        json!({"family": "constant", "params": {"value": 0.4}}),
    ));
    let sol = solve(&sc, &SolveOptions::default()).unwrap();
    let law = forward_joint_law(&sol, &sc.y_chain).unwrap();
    let rep = convergence_study(&sol, &law, &[1, 10], 5, 0, None).unwrap();
    assert!(rep.rows.iter().all(|r| r.mse == 0.0));
    assert!(rep.degenerate && rep.slope.is_none());
}

#[test]
fn seeded_studies_repeat_exactly() {
    let (sc, sol) = two_type();
    let law = forward_joint_law(&sol, &sc.y_chain).unwrap();
    let a = convergence_study(&sol, &law, &[10, 100], 50, 9, None).unwrap();
    let b = convergence_study(&sol, &law, &[10, 100], 50, 9, None).unwrap();
    assert_eq!(a, b);
}
