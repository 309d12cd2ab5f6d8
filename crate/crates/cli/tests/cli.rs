//! End-to-end runs of the `mfe` binary: exit codes and output files.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn mfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfe"))
        .args(args)
        .env("MFE_THREADS", "2")
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scenario(dir: &Path, name: &str, v: serde_json::Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn small(lattice: serde_json::Value, order_flow: serde_json::Value) -> serde_json::Value {
    json!({
        "lattice": lattice,
        "y_chain": {"y0": 1.0, "sigma_y": 0.1, "p_y": 0.5},
        "populations": [{
            "weight": 1.0,
            "mode": "exponential_terminal",
            "agent_grid": {"gamma_min": 0.5, "gamma_max": 1.5, "n_gamma": 2},
            "z_chain": {"z0": 1.0, "sigma_z": 0.1, "p_z": 0.5},
            "F": {"family": "affine_product", "params": {"a": 0.0, "b": -3.0}}
        }],
        "order_flow": order_flow
    })
}

/// Data rows of a CSV written by the tool (hash comment and header skipped).
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# scenario_hash="));
    lines.next().unwrap();
    lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn solve_table1_writes_tables_and_manifest() {
    let out = tempfile::tempdir().unwrap();
    let o = mfe(&[
        "solve",
        "--scenario",
        "table1_f1",
        "--out",
        path_str(out.path()),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // One row per (n, stock node, Y state) with n + 1 of each at step n.
    let expected: usize = (0..48usize).map(|n| (n + 1) * (n + 1)).sum();
    let p = rows(&out.path().join("p_table.csv"));
    assert_eq!(p.len(), expected);
    assert!(p.iter().all(|r| (0.0..1.0).contains(&num(&r[3]))));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["details"]["checks"]["clearing_pass"], json!(true));
    assert_eq!(m["scenario_hash"].as_str().unwrap().len(), 64);
    for f in ["phi_table.csv", "positions.csv", "scenario.json"] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn lattice_with_arbitrage_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(
        dir.path(),
        "bad.json",
        small(
            json!({"N": 4, "T": 1.0, "r": 0.0, "s0": 1.0, "u_tilde": 1.1, "d_tilde": 1.05}),
            json!({"family": "zero"}),
        ),
    );
    let o = mfe(&[
        "solve",
        "--scenario",
        &sc,
        "--out",
        path_str(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lattice"));
}

#[test]
fn extreme_order_flow_exits_with_numerical_code_naming_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(
        dir.path(),
        "flow.json",
        small(
            json!({"N": 4, "T": 1.0, "r": 0.02, "s0": 1.0, "sigma": 0.2}),
            json!({"family": "constant", "params": {"value": 1.0e4}}),
        ),
    );
    let o = mfe(&[
        "solve",
        "--scenario",
        &sc,
        "--out",
        path_str(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("infeasible") && err.contains("n=3"), "{err}");
}

#[test]
fn malformed_and_missing_scenarios_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("broken.json");
    std::fs::write(&p, "{ not json").unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        mfe(&["solve", "--scenario", path_str(&p), "--out", path_str(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        mfe(&[
            "solve",
            "--scenario",
            "no_such_preset",
            "--out",
            path_str(&out)
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn converge_needs_two_population_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfe(&[
        "converge",
        "--scenario",
        "table1_f1",
        "--out",
        path_str(dir.path()),
        "--sizes",
        "100",
        "--replications",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfe(&[
        "converge",
        "--scenario",
        "table1_f1",
        "--out",
        path_str(dir.path()),
        "--sizes",
        "50,500",
        "--replications",
        "20",
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(rows(&dir.path().join("convergence.csv")).len(), 40);
    let s: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("convergence_summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(s["seed"], json!(3));
    assert!(s["slope"].is_string());
}

#[test]
fn degenerate_scenario_has_equal_p_and_q_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small(
        json!({"N": 12, "T": 1.0, "r": 0.03, "s0": 1.0, "sigma": 0.2}),
        json!({"family": "zero"}),
    );
    v["populations"][0]["F"] = json!({"family": "affine_product", "params": {"a": 2.0, "b": 0.0}});
    let sc = write_scenario(dir.path(), "rn.json", v);
    let out = dir.path().join("o");
    assert_eq!(
        mfe(&["analyze", "--scenario", &sc, "--out", path_str(&out)])
            .status
            .code(),
        Some(0)
    );
    for r in rows(&out.join("expected_path.csv")) {
        assert!((num(&r[2]) - num(&r[3])).abs() <= 1e-10);
    }
    let files = [
        "distributions.csv",
        "excess_return.csv",
        "volume.csv",
        "manifest.json",
    ];
    assert!(files.iter().all(|f| out.join(f).is_file()));
}

#[test]
fn countercyclical_sign_flip_gives_negative_excess_returns() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfe(&[
        "analyze",
        "--scenario",
        "table1_f2",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(rows(&dir.path().join("excess_return.csv"))
        .iter()
        .all(|r| num(&r[2]) < 0.0));
    let d = rows(&dir.path().join("distributions.csv"));
    let measures: std::collections::BTreeSet<&str> = d.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(measures.len(), 4);
    let steps: std::collections::BTreeSet<&str> = d.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(steps, ["16", "48"].into_iter().collect());
}

#[test]
fn comparing_a_scenario_with_itself_gives_zero_differences() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfe(&[
        "compare",
        "--scenario",
        "table1_f1",
        "--against",
        "table1_f1",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for r in rows(&dir.path().join("compare_moments.csv")) {
        for i in [4, 7, 10, 13] {
            assert_eq!(num(&r[i]), 0.0);
        }
    }
    for r in rows(&dir.path().join("compare_distributions.csv")) {
        assert_eq!(num(&r[4]), 0.0);
    }
}

#[test]
fn comparing_different_lattices_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(
        dir.path(),
        "other.json",
        small(
            json!({"N": 6, "T": 1.0, "r": 0.0, "s0": 1.0, "sigma": 0.2}),
            json!({"family": "zero"}),
        ),
    );
    let o = mfe(&[
        "compare",
        "--scenario",
        "table1_f1",
        "--against",
        &sc,
        "--out",
        path_str(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn order_flow_fattens_the_upper_tail_in_compare_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfe(&[
        "compare",
        "--scenario",
        "table1_f1",
        "--against",
        "table1_flow_pos",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let last = rows(&dir.path().join("compare_moments.csv")).pop().unwrap();
    assert!(num(&last[13]) > 0.0, "upper tail difference {}", last[13]);
}

#[test]
fn path_mode_flag_and_percentile_convention_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(
        dir.path(),
        "s.json",
        small(
            json!({"N": 6, "T": 1.0, "r": 0.01, "s0": 1.0, "sigma": 0.2}),
            json!({"family": "zero"}),
        ),
    );
    let out = dir.path().join("o");
    let o = mfe(&[
        "analyze",
        "--scenario",
        &sc,
        "--out",
        path_str(&out),
        "--path-mode",
        "--percentile-convention",
        "probability",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["details"]["indexing"], json!("path"));
    assert_eq!(m["details"]["percentile_convention"], json!("probability"));
}
