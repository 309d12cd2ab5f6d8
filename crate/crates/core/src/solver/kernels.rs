//! Per-node closed forms: discount schedules, branch expectations, equilibrium
//! probability, optimal positions, value updates and the spending policy.
//!
//! `D` denotes the mode-dependent discount weight of the next-period value:
//! `beta^(N-n)` for terminal exponential utility and `eta_n` for recursive utility.

use crate::error::{MfeError, NodeRef, Result};
use crate::lattice::LatticeSpec;
use crate::market::AgentType;
use crate::numerics::{log_add_exp, log_sum_exp, softplus};

/// Largest `|G|` accepted before `exp(G)` is considered to overflow.
pub const MAX_LOGIT_SHIFT: f64 = 700.0;

/// One backward step of the weight recursion.
#[inline]
pub fn eta_step(eta_n: f64, t: &AgentType, beta: f64, dt: f64) -> f64 {
    let a = t.psi * eta_n * beta;
    a / (t.zeta + dt * a)
}

/// `eta_0..eta_N` with `eta_N = 1`.
pub fn eta_schedule(t: &AgentType, lattice: &LatticeSpec) -> Vec<f64> {
    let n = lattice.n_steps;
    let mut eta = vec![1.0; n + 1];
    for k in (0..n).rev() {
        eta[k] = eta_step(eta[k + 1], t, lattice.beta, lattice.dt);
    }
    eta
}

/// `beta^(N-n)` for `n = 0..=N`.
pub fn terminal_discount(lattice: &LatticeSpec) -> Vec<f64> {
    (0..=lattice.n_steps)
        .map(|n| lattice.beta.powi((lattice.n_steps - n) as i32))
        .collect()
}

/// `log E[exp(h(y', z'))]` over independent one-step transitions of Y and Z.
pub fn branch_expectation<H: Fn(usize, usize) -> f64>(
    y_succ: &[(usize, f64)],
    z_succ: &[(usize, f64)],
    h: H,
    node: NodeRef,
) -> Result<f64> {
    let mut terms = [0.0f64; 16];
    let mut heap = Vec::new();
    let use_heap = y_succ.len() * z_succ.len() > terms.len();
    let mut k = 0;
    for &(yj, py) in y_succ {
        let lpy = py.ln();
        for &(zj, pz) in z_succ {
            let v = lpy + pz.ln() + h(yj, zj);
            if use_heap {
                heap.push(v);
            } else {
                terms[k] = v;
            }
            k += 1;
        }
    }
    let out = if use_heap {
        log_sum_exp(&heap)
    } else {
        log_sum_exp(&terms[..k])
    };
    if !out.is_finite() {
        return Err(MfeError::NumericalOverflow {
            node,
            detail: format!("branch log-expectation is {out}"),
        });
    }
    Ok(out)
}

/// `log f = log A_up - log A_down`.
#[inline]
pub fn f_ratio(log_a_up: f64, log_a_down: f64) -> f64 {
    log_a_up - log_a_down
}

/// `log f^pi = log(bias) + log f`.
pub fn apply_bias(log_f: f64, bias: f64) -> Result<f64> {
    if !(bias > 0.0) {
        return Err(MfeError::Domain(format!(
            "bias must be positive, got {bias}"
        )));
    }
    Ok(bias.ln() + log_f)
}

/// Cross-sectional aggregates of one population: `E[log f^pi/(gamma D)]` and `E[1/(gamma D)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub weight: f64,
    pub mean_log_f: f64,
    pub mean_inv_risk: f64,
}

/// The clearing log-odds shift `G`; the equilibrium odds are `p/q = (-d/u) exp(-G)`.
pub fn logit_shift(aggs: &[Aggregate], supply: f64, lattice: &LatticeSpec) -> f64 {
    let num: f64 = aggs.iter().map(|a| a.weight * a.mean_log_f).sum();
    let den: f64 = aggs.iter().map(|a| a.weight * a.mean_inv_risk).sum();
    assert!(den > 0.0, "risk-tolerance aggregate must be positive");
    (num - (lattice.u - lattice.d) * supply) / den
}

/// `p = -d / (u exp(G) - d)`.
#[inline]
pub fn prob_from_shift(g: f64, lattice: &LatticeSpec) -> f64 {
    -lattice.d / (lattice.u * g.exp() - lattice.d)
}

/// Equilibrium up-probability, rejecting shifts whose exponential would overflow.
pub fn equilibrium_prob(
    aggs: &[Aggregate],
    supply: f64,
    lattice: &LatticeSpec,
    node: NodeRef,
) -> Result<f64> {
    checked_prob(logit_shift(aggs, supply, lattice), lattice, node)
}

/// `p` from the shift `g`, rejecting shifts that overflow or round `p` to 0 or 1.
pub(crate) fn checked_prob(g: f64, lattice: &LatticeSpec, node: NodeRef) -> Result<f64> {
    if !g.is_finite() || g.abs() > MAX_LOGIT_SHIFT {
        return Err(MfeError::ScenarioInfeasible {
            node,
            detail: format!("clearing log-odds shift {g:.6e} exceeds +/-{MAX_LOGIT_SHIFT}"),
        });
    }
    let p = prob_from_shift(g, lattice);
    if !(p > 0.0 && p < 1.0) {
        return Err(MfeError::ScenarioInfeasible {
            node,
            detail: format!("clearing log-odds shift {g:.6e} drives p to {p}"),
        });
    }
    Ok(p)
}

/// `log(p/q)` at the equilibrium defined by shift `g`.
#[inline]
pub fn logit_from_shift(g: f64, lattice: &LatticeSpec) -> f64 {
    (-lattice.d / lattice.u).ln() - g
}

/// `phi* = (log(-p u / (q d)) + log f^pi) / (gamma D (u - d))`.
pub fn optimal_position(
    p: f64,
    log_f_pi: f64,
    gamma: f64,
    disc: f64,
    lattice: &LatticeSpec,
) -> f64 {
    let (u, d) = (lattice.u, lattice.d);
    let odds = (p / (1.0 - p)).ln() + (u / -d).ln();
    (odds + log_f_pi) / (gamma * disc * (u - d))
}

/// Optimal position written directly in terms of the clearing shift.
#[inline]
pub fn position_from_shift(
    g: f64,
    log_f_pi: f64,
    gamma: f64,
    disc: f64,
    lattice: &LatticeSpec,
) -> f64 {
    (log_f_pi - g) / (gamma * disc * (lattice.u - lattice.d))
}

/// `(log p_sub, log q_sub)` of the subjective law with odds `bias * p/q`, from the
/// objective log-odds and `log(bias)`.
#[inline]
pub fn subjective_log_probs(logit: f64, log_bias: f64) -> (f64, f64) {
    let l = logit + log_bias;
    (-softplus(-l), -softplus(l))
}

/// `log[p exp(-gamma D phi u) A_up + q exp(-gamma D phi d) A_down]`.
#[allow(clippy::too_many_arguments)]
pub fn log_value_update(
    log_p: f64,
    log_q: f64,
    gamma_disc: f64,
    phi: f64,
    lattice: &LatticeSpec,
    log_a_up: f64,
    log_a_down: f64,
) -> f64 {
    log_add_exp(
        log_p - gamma_disc * phi * lattice.u + log_a_up,
        log_q - gamma_disc * phi * lattice.d + log_a_down,
    )
}

/// Additive constant `(1/(zeta + dt psi eta_n beta)) log(delta psi eta_n beta / zeta) - (1/zeta) log eta_{n-1}`.
pub fn recursive_constant(t: &AgentType, eta_n: f64, eta_prev: f64, beta: f64, dt: f64) -> f64 {
    let a = t.psi * eta_n * beta;
    (t.delta * a / t.zeta).ln() / (t.zeta + dt * a) - eta_prev.ln() / t.zeta
}

/// Continuation liability `V_{n-1}`, so that `U_{n-1} = eta_{n-1} x - V_{n-1}`, from `log V~_{n-1}`.
pub fn recursive_value(
    log_vtilde: f64,
    t: &AgentType,
    eta_n: f64,
    eta_prev: f64,
    beta: f64,
    dt: f64,
) -> f64 {
    eta_prev / (eta_n * t.gamma * beta) * log_vtilde
        + recursive_constant(t, eta_n, eta_prev, beta, dt)
}

/// Optimal spending rate at wealth `x`.
pub fn consumption_policy(
    x: f64,
    log_vtilde: f64,
    t: &AgentType,
    eta_n: f64,
    beta: f64,
    dt: f64,
) -> f64 {
    let a = t.psi * eta_n * beta;
    let k = t.zeta + dt * a;
    a / k * x - ((t.delta * a / t.zeta).ln() + t.psi / t.gamma * log_vtilde) / k
}

#[cfg(test)]
mod tests {
    use super::*;

    const NODE: NodeRef = NodeRef {
        step: 0,
        stock_idx: 0,
        y_idx: 0,
    };

    fn unit_type() -> AgentType {
        AgentType {
            gamma: 1.0,
            zeta: 1.0,
            psi: 1.0,
            delta: 1.0,
            xi: 0.0,
            weight: 1.0,
        }
    }

    fn one_step() -> LatticeSpec {
        LatticeSpec::new(1, 1.0, 0.0, 1.0, 1.1, 0.9).unwrap()
    }

    #[test]
    fn eta_terminal_and_fixed_point() {
        let l = LatticeSpec::from_sigma(48, 3.0, 0.033, 1.0, 0.15).unwrap();
        let eta = eta_schedule(&unit_type(), &l);
        assert_eq!(eta[48], 1.0);
        assert_eq!(eta_step(1.0, &unit_type(), 1.0, 0.0), 1.0);
    }

    #[test]
    fn eta_one_step_value() {
        let t = AgentType {
            zeta: 0.952381,
            ..unit_type()
        };
        let v = eta_step(1.0, &t, 1.002_064_628_416_159_6, 0.0625);
        assert!((v - 0.987_246_026_779_120_2).abs() < 1e-12);
    }

    #[test]
    fn branch_expectation_examples() {
        let det = [(0usize, 1.0)];
        assert_eq!(
            branch_expectation(&det, &det, |_, _| 0.0, NODE).unwrap(),
            0.0
        );
        // F = -s, gamma = 1, s0 = 1, N = 1: up node 1.1, down node 0.9
        let up = branch_expectation(&det, &det, |_, _| -1.1, NODE).unwrap();
        let dn = branch_expectation(&det, &det, |_, _| -0.9, NODE).unwrap();
        assert!((up + 1.1).abs() < 1e-15 && (dn + 0.9).abs() < 1e-15);
        let two = [(0usize, 0.3), (1, 0.7)];
        let c = branch_expectation(&two, &two, |_, _| 2.5, NODE).unwrap();
        assert!((c - 2.5).abs() < 1e-14);
        let bad = branch_expectation(&det, &det, |_, _| f64::INFINITY, NODE);
        assert!(matches!(bad, Err(MfeError::NumericalOverflow { .. })));
    }

    #[test]
    fn f_ratio_and_bias() {
        assert_eq!(f_ratio(0.3, 0.3), 0.0);
        let lf = f_ratio(-1.1, -0.9);
        assert!((lf.exp() - 0.818_730_753_077_981_8).abs() < 1e-12);
        let lfp = apply_bias(lf, 0.8).unwrap();
        assert!((lfp.exp() - 0.8 * 0.818_730_753_077_981_8).abs() < 1e-12);
        assert!((apply_bias(0.0, 1.2).unwrap().exp() - 1.2).abs() < 1e-15);
        assert_eq!(apply_bias(0.7, 1.0).unwrap(), 0.7);
        assert!(matches!(apply_bias(0.0, 0.0), Err(MfeError::Domain(_))));
    }

    fn single(log_f: f64) -> [Aggregate; 1] {
        [Aggregate {
            weight: 1.0,
            mean_log_f: log_f,
            mean_inv_risk: 1.0,
        }]
    }

    #[test]
    fn equilibrium_probability_examples() {
        let l = LatticeSpec::from_sigma(48, 3.0, 0.033, 1.0, 0.15).unwrap();
        let p = equilibrium_prob(&single(0.0), 0.0, &l, NODE).unwrap();
        assert!((p - l.p_q).abs() < 1e-15);

        let l1 = one_step();
        let p = equilibrium_prob(&single(-0.2), 0.0, &l1, NODE).unwrap();
        assert!((p - 0.549_833_997_312_478).abs() < 1e-12);
        // positive supply with f = 1 gives the same shift via (u - d) L = 0.2
        let p = equilibrium_prob(&single(0.0), 1.0, &l1, NODE).unwrap();
        assert!((p - 0.549_833_997_312_478).abs() < 1e-12);
        assert!(p > l1.p_q);
        let inf = equilibrium_prob(&single(0.0), 1e4, &l1, NODE);
        assert!(matches!(inf, Err(MfeError::ScenarioInfeasible { .. })));
    }

    #[test]
    fn optimal_position_examples() {
        let l = LatticeSpec::from_sigma(48, 3.0, 0.033, 1.0, 0.15).unwrap();
        assert!(optimal_position(l.p_q, 0.0, 0.7, 1.0, &l).abs() < 1e-12);

        // two types, f = 1, L = 1
        let l1 = one_step();
        let aggs = [Aggregate {
            weight: 1.0,
            mean_log_f: 0.0,
            mean_inv_risk: 0.5 * (1.0 / 0.5 + 1.0 / 1.5),
        }];
        let g = logit_shift(&aggs, 1.0, &l1);
        let p = prob_from_shift(g, &l1);
        let a = optimal_position(p, 0.0, 0.5, 1.0, &l1);
        let b = optimal_position(p, 0.0, 1.5, 1.0, &l1);
        assert!((a - 1.5).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
        assert!((position_from_shift(g, 0.0, 0.5, 1.0, &l1) - a).abs() < 1e-12);
    }

    #[test]
    fn one_step_value_example() {
        let l1 = one_step();
        let p = 0.549_833_997_312_478;
        let lf = -0.2;
        let phi = optimal_position(p, lf, 1.0, 1.0, &l1);
        assert!(phi.abs() < 1e-12);
        let v = log_value_update(p.ln(), (1.0 - p).ln(), 1.0, phi, &l1, -1.1, -0.9).exp();
        assert!((v - 0.366_047_677_078_902_96).abs() < 1e-12);
        // the two summands coincide at the optimum
        let a = p * (-1.1f64).exp();
        let b = (1.0 - p) * (-0.9f64).exp();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn recursive_constants() {
        let t = unit_type();
        let eta_prev = eta_step(1.0, &t, 1.0, 1.0);
        assert_eq!(eta_prev, 0.5);
        let v = recursive_value(0.0, &t, 1.0, eta_prev, 1.0, 1.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn consumption_examples() {
        let t = unit_type();
        assert!((consumption_policy(3.0, 0.0, &t, 1.0, 1.0, 1.0) - 1.5).abs() < 1e-15);
        assert!((consumption_policy(3.0, 2.0, &t, 1.0, 1.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn subjective_probs_are_a_law() {
        for &(lg, lb) in &[(0.0, 0.0), (3.0, -0.5), (-40.0, 0.2), (600.0, 0.0)] {
            let (lp, lq) = subjective_log_probs(lg, lb);
            assert!((lp.exp() + lq.exp() - 1.0).abs() < 1e-14);
            assert!((lp - lq - (lg + lb)).abs() < 1e-9 * (1.0 + lg.abs()));
        }
    }
}
