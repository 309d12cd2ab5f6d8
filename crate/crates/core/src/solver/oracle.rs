//! Direct numerical minimisation of a single node's one-period problem, used to check
//! the closed-form positions and spending rates.

use crate::error::{MfeError, Result};
use crate::market::AgentType;
use crate::numerics::{golden_section_min, log_add_exp};

/// Search interval for positions and spending rates.
pub const ORACLE_BRACKET: (f64, f64) = (-50.0, 50.0);

/// Branch data of one node as seen by one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeProblem {
    /// Log of the agent's (possibly subjective) up probability.
    pub log_p: f64,
    pub log_q: f64,
    pub gamma: f64,
    /// Discount weight `D` of the next-period value.
    pub disc: f64,
    pub u: f64,
    pub d: f64,
    pub log_a_up: f64,
    pub log_a_down: f64,
}

/// Extra data for the recursive model's spending choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpendingProblem {
    pub wealth: f64,
    pub agent: AgentType,
    pub eta_n: f64,
    pub beta: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub phi: f64,
    /// Minimised `log[p e^{-gamma D phi u} A_up + q e^{-gamma D phi d} A_down]`.
    pub log_objective: f64,
    pub consumption: Option<f64>,
    /// Optimal recursive utility `U_{n-1}` at the given wealth.
    pub utility: Option<f64>,
}

fn search<F: Fn(f64) -> f64>(f: F, what: &str) -> Result<f64> {
    let (a, b) = ORACLE_BRACKET;
    let x = golden_section_min(f, a, b, 1e-12);
    if (x - a).abs() < 1e-6 || (b - x).abs() < 1e-6 {
        return Err(MfeError::Bracket(format!(
            "{what} minimum at {x} touches [{a}, {b}]"
        )));
    }
    Ok(x)
}

/// Minimise the one-period objective by golden-section search.
pub fn brute_force_node_oracle(
    node: &NodeProblem,
    spending: Option<&SpendingProblem>,
) -> Result<OracleResult> {
    let k = node.gamma * node.disc;
    let obj = |phi: f64| {
        log_add_exp(
            node.log_p - k * phi * node.u + node.log_a_up,
            node.log_q - k * phi * node.d + node.log_a_down,
        )
    };
    let phi = search(obj, "position")?;
    let log_objective = obj(phi);
    let Some(sp) = spending else {
        return Ok(OracleResult {
            phi,
            log_objective,
            consumption: None,
            utility: None,
        });
    };
    let t = &sp.agent;
    // log{ exp(-zeta c) dt + delta exp((psi/gamma) log E[exp(-gamma U_n)]) } with
    // log E[exp(-gamma U_n)] = -gamma eta_n beta (x - c dt) + log_objective.
    let spend = |c: f64| {
        log_add_exp(
            -t.zeta * c + sp.dt.ln(),
            t.delta.ln()
                + t.psi / t.gamma
                    * (-t.gamma * sp.eta_n * sp.beta * (sp.wealth - c * sp.dt) + log_objective),
        )
    };
    let c = search(spend, "spending")?;
    Ok(OracleResult {
        phi,
        log_objective,
        consumption: Some(c),
        utility: Some(-spend(c) / t.zeta),
    })
}
