#![allow(dead_code)]

use mfe_core::config::{preset, ScenarioFile};
use mfe_core::market::{validate_scenario, Scenario};
use serde_json::{json, Value};

/// A bundled preset truncated to `n` steps over a proportionally shorter horizon.
pub fn shortened(name: &str, n: usize) -> ScenarioFile {
    let mut f = preset(name).unwrap();
    f.lattice.t *= n as f64 / f.lattice.n as f64;
    f.lattice.n = n;
    f
}

pub fn scenario(f: &ScenarioFile) -> Scenario {
    validate_scenario(f).unwrap()
}

pub fn from_value(v: Value) -> ScenarioFile {
    ScenarioFile::from_json(&v.to_string()).unwrap()
}

/// One-step zero-rate lattice with degenerate factors and explicit types.
pub fn one_step(types: Value, order_flow: Value) -> ScenarioFile {
    from_value(json!({
        "lattice": {"N": 1, "T": 1.0, "r": 0.0, "s0": 1.0, "u_tilde": 1.2, "d_tilde": 0.85},
        "y_chain": {"y0": 1.0, "sigma_y": 0.0, "p_y": 0.5},
        "populations": [{
            "weight": 1.0,
            "mode": "exponential_terminal",
            "types": types,
            "z_chain": {"z0": 1.0, "sigma_z": 0.0, "p_z": 0.5}
        }],
        "order_flow": order_flow
    }))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
