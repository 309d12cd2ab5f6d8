//! Path-indexed against node-indexed solves, and genuine path dependence.

mod common;

use common::{max_abs_diff, scenario, shortened};
use mfe_core::lattice::PathIndex;
use mfe_core::market::PayoffField;
use mfe_core::solver::oracle::{brute_force_node_oracle, NodeProblem};
use mfe_core::solver::{backward_solve, path_dependent_solve, SolveOptions};

fn assert_paths_match_nodes(name: &str, n: usize) {
    let sc = scenario(&shortened(name, n));
    let node = backward_solve(&sc, &SolveOptions::default()).unwrap();
    let path = path_dependent_solve(&sc, &SolveOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for step in 0..n {
        let ny = node.ny[step];
        for bits in 0..path.stock_count(step) {
            let k = PathIndex {
                step,
                bits: bits as u64,
            }
            .up_count();
            for y in 0..ny {
                worst = worst.max((path.p(step, bits, y) - node.p(step, k, y)).abs());
                let pp = path.populations[0].phi_cells(step, ny, bits, y);
                let pn = node.populations[0].phi_cells(step, ny, k, y);
                worst = worst.max(max_abs_diff(pp, pn));
            }
        }
    }
    assert!(worst <= 1e-12, "{name}: path/node gap {worst:e}");
}

#[test]
fn exponential_path_solve_equals_node_solve_at_n10() {
    assert_paths_match_nodes("table1_f1", 10);
}

#[test]
fn recursive_path_solve_equals_node_solve_with_flow_and_bias() {
    assert_paths_match_nodes("table2_flow_on", 8);
    assert_paths_match_nodes("table2_contrarian", 8);
}

#[test]
fn running_maximum_separates_paths_to_the_same_node() {
    let mut f = shortened("table1_f1", 3);
    f.populations[0].liability = PayoffField::RunningMaxProduct { a: 0.0, b: -3.0 };
    f.analysis.path_mode = true;
    let sc = scenario(&f);
    assert!(backward_solve(&sc, &SolveOptions::default()).is_err());
    let sol = path_dependent_solve(&sc, &SolveOptions::default().with_diagnostics()).unwrap();
    // Up-then-down (bits 0b10) and down-then-up (0b01) both end one up move above the root.
    let (ud, du) = (0b10, 0b01);
    let step = 2;
    let mut separated = false;
    for y in 0..sol.ny[step] {
        separated |= (sol.p(step, ud, y) - sol.p(step, du, y)).abs() > 1e-6;
        // The stored position of one cell is the one-period optimum under that path's p.
        for bits in [ud, du] {
            let p = sol.p(step, bits, y);
            let log_f = sol.log_f(0, step, bits, y, 0, 0).unwrap();
            let phi = sol.phi(0, step, bits, y, 0, 0);
            let t = &sol.populations[0].types[0];
            let node = NodeProblem {
                log_p: p.ln(),
                log_q: (1.0 - p).ln(),
                gamma: t.gamma,
                disc: sol.populations[0].discount[0][step + 1],
                u: sol.lattice.u,
                d: sol.lattice.d,
                log_a_up: log_f,
                log_a_down: 0.0,
            };
            let o = brute_force_node_oracle(&node, None).unwrap();
            assert!((o.phi - phi).abs() < 1e-6, "oracle {} vs {}", o.phi, phi);
        }
    }
    assert!(separated, "running maximum should make p path dependent");
}
