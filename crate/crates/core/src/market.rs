//! Agents, populations and the scenario functions: terminal liabilities, endowments,
//! external order flow and subjective biases.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{
    ChainFile, EndowmentFile, GridFile, LatticeFile, PopulationFile, ScenarioFile,
};
use crate::error::{MfeError, Result, Violation};
use crate::lattice::{LatticeSpec, MarkovChain};
use crate::numerics::clamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentType {
    pub gamma: f64,
    #[serde(default = "unit")]
    pub zeta: f64,
    #[serde(default = "unit")]
    pub psi: f64,
    #[serde(default = "unit")]
    pub delta: f64,
    #[serde(default)]
    pub xi: f64,
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

/// A finite, weighted set of agent types.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTypeGrid {
    types: Vec<AgentType>,
}

impl AgentTypeGrid {
    pub fn new(types: Vec<AgentType>) -> Self {
        Self { types }
    }

    /// Uniform product grid over `gamma` and `psi` with `zeta = psi / a_zeta`
    /// and common `delta = exp(-rho dt)`.
    pub fn uniform(g: &GridFile, dt: f64) -> Self {
        let n = (g.n_gamma + 1) * (g.n_psi + 1);
        let w = 1.0 / n as f64;
        let delta = (-g.rho * dt).exp();
        let mut types = Vec::with_capacity(n);
        for kg in 0..=g.n_gamma {
            let gamma = grid_point(g.gamma_min, g.gamma_max, kg, g.n_gamma);
            for kp in 0..=g.n_psi {
                let psi = grid_point(g.psi_min, g.psi_max, kp, g.n_psi);
                types.push(AgentType {
                    gamma,
                    zeta: psi / g.a_zeta,
                    psi,
                    delta,
                    xi: g.xi,
                    weight: w,
                });
            }
        }
        Self { types }
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}

fn grid_point(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    if n == 0 {
        lo
    } else {
        lo + (hi - lo) * k as f64 / n as f64
    }
}

/// Everything a scenario function may depend on at one lattice/chain state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePoint {
    pub n: usize,
    pub stock_idx: usize,
    pub s: f64,
    /// Running maximum of the price path; only known in path-indexed solves.
    pub running_max: Option<f64>,
    pub y_idx: usize,
    pub y: f64,
    pub z_idx: usize,
    pub z: f64,
    pub dt: f64,
}

impl StatePoint {
    /// A point with only prices and factor values set, for the closed-form families.
    pub fn simple(s: f64, y: f64, z: f64) -> Self {
        Self {
            n: 0,
            stock_idx: 0,
            s,
            running_max: None,
            y_idx: 0,
            y,
            z_idx: 0,
            z,
            dt: 0.0,
        }
    }
}

/// Explicit table keyed by integer coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<TableEntry>", into = "Vec<TableEntry>")]
pub struct Table {
    values: BTreeMap<Vec<usize>, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub key: Vec<usize>,
    pub value: f64,
}

impl From<Vec<TableEntry>> for Table {
    fn from(v: Vec<TableEntry>) -> Self {
        Self {
            values: v.into_iter().map(|e| (e.key, e.value)).collect(),
        }
    }
}

impl From<Table> for Vec<TableEntry> {
    fn from(t: Table) -> Self {
        t.values
            .into_iter()
            .map(|(key, value)| TableEntry { key, value })
            .collect()
    }
}

impl Table {
    pub fn insert(&mut self, key: Vec<usize>, value: f64) {
        self.values.insert(key, value);
    }

    pub fn get(&self, key: &[usize]) -> Result<f64> {
        self.values
            .get(key)
            .copied()
            .ok_or_else(|| MfeError::MissingEntry(format!("no table value at {key:?}")))
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.values().copied()
    }
}

/// Terminal liability or per-step endowment.
///
/// Custom tables are keyed by `[n, stock_idx, y_idx, z_idx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PayoffField {
    #[default]
    Zero,
    /// `a + b s y z`.
    AffineProduct {
        a: f64,
        b: f64,
    },
    /// `a + b dt s y z`.
    AffineProductDt {
        a: f64,
        b: f64,
    },
    /// `a + b max(S_0..S_n) y z`; path mode only.
    RunningMaxProduct {
        a: f64,
        b: f64,
    },
    Custom {
        table: Table,
    },
}

impl PayoffField {
    pub fn eval(&self, pt: &StatePoint) -> Result<f64> {
        match self {
            PayoffField::Zero => Ok(0.0),
            PayoffField::AffineProduct { a, b } => Ok(a + b * pt.s * pt.y * pt.z),
            PayoffField::AffineProductDt { a, b } => Ok(a + b * pt.dt * pt.s * pt.y * pt.z),
            PayoffField::RunningMaxProduct { a, b } => {
                let m = pt.running_max.ok_or_else(|| {
                    MfeError::Input("running-maximum payoff needs a path-indexed solve".into())
                })?;
                Ok(a + b * m * pt.y * pt.z)
            }
            PayoffField::Custom { table } => table.get(&[pt.n, pt.stock_idx, pt.y_idx, pt.z_idx]),
        }
    }

    pub fn is_path_dependent(&self) -> bool {
        matches!(self, PayoffField::RunningMaxProduct { .. })
    }

    /// True when the value provably does not depend on the stock price.
    pub fn is_stock_independent(&self) -> bool {
        match self {
            PayoffField::Zero => true,
            PayoffField::AffineProduct { b, .. }
            | PayoffField::AffineProductDt { b, .. }
            | PayoffField::RunningMaxProduct { b, .. } => *b == 0.0,
            PayoffField::Custom { .. } => false,
        }
    }

    /// The same field shifted by a constant.
    pub fn shifted(&self, c: f64) -> PayoffField {
        match self {
            PayoffField::Zero => PayoffField::AffineProduct { a: c, b: 0.0 },
            PayoffField::AffineProduct { a, b } => PayoffField::AffineProduct { a: a + c, b: *b },
            PayoffField::AffineProductDt { a, b } => {
                PayoffField::AffineProductDt { a: a + c, b: *b }
            }
            PayoffField::RunningMaxProduct { a, b } => {
                PayoffField::RunningMaxProduct { a: a + c, b: *b }
            }
            PayoffField::Custom { table } => PayoffField::Custom {
                table: Table {
                    values: table
                        .values
                        .iter()
                        .map(|(k, v)| (k.clone(), v + c))
                        .collect(),
                },
            },
        }
    }

    fn check_finite(&self, what: &str, out: &mut Vec<Violation>) {
        let finite = match self {
            PayoffField::Zero => true,
            PayoffField::AffineProduct { a, b }
            | PayoffField::AffineProductDt { a, b }
            | PayoffField::RunningMaxProduct { a, b } => a.is_finite() && b.is_finite(),
            PayoffField::Custom { table } => table.values().all(f64::is_finite),
        };
        if !finite {
            out.push(Violation::new(
                "payoff.finite",
                format!("{what} has non-finite parameters"),
            ));
        }
    }
}

/// A single hinge term `a * max(s - c, 0)` or `a * max(c - s, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub a: f64,
    pub c: f64,
}

/// Per-capita external net supply. Custom tables are keyed by `[n, stock_idx, y_idx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum OrderFlowField {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `sum a_k max(s - c_k, 0) + sum b_j max(c_j - s, 0)`.
    RampSum {
        #[serde(default)]
        up: Vec<Ramp>,
        #[serde(default)]
        down: Vec<Ramp>,
    },
    Custom {
        table: Table,
    },
}

impl OrderFlowField {
    pub fn eval(&self, n: usize, stock_idx: usize, s: f64, y_idx: usize) -> Result<f64> {
        match self {
            OrderFlowField::Zero => Ok(0.0),
            OrderFlowField::Constant { value } => Ok(*value),
            OrderFlowField::RampSum { .. } => Ok(self.eval_price(s)),
            OrderFlowField::Custom { table } => table.get(&[n, stock_idx, y_idx]),
        }
    }

    /// Closed-form families as a function of price alone; custom tables evaluate to 0.
    pub fn eval_price(&self, s: f64) -> f64 {
        match self {
            OrderFlowField::Zero | OrderFlowField::Custom { .. } => 0.0,
            OrderFlowField::Constant { value } => *value,
            OrderFlowField::RampSum { up, down } => {
                let u: f64 = up.iter().map(|r| r.a * (s - r.c).max(0.0)).sum();
                let d: f64 = down.iter().map(|r| r.a * (r.c - s).max(0.0)).sum();
                u + d
            }
        }
    }

    fn check_finite(&self, out: &mut Vec<Violation>) {
        let finite = match self {
            OrderFlowField::Zero => true,
            OrderFlowField::Constant { value } => value.is_finite(),
            OrderFlowField::RampSum { up, down } => up
                .iter()
                .chain(down)
                .all(|r| r.a.is_finite() && r.c.is_finite()),
            OrderFlowField::Custom { table } => table.values().all(f64::is_finite),
        };
        if !finite {
            out.push(Violation::new(
                "flow.finite",
                "order flow has non-finite parameters",
            ));
        }
    }
}

/// Multiplicative tilt of an agent's subjective up/down odds.
///
/// Custom tables are keyed by `[n, stock_idx, y_idx, z_idx, type_idx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasField {
    #[default]
    None,
    Constant {
        value: f64,
    },
    /// `clamp((s0 beta^n / s) (z0 / z), lo, hi)`.
    Contrarian {
        lo: f64,
        hi: f64,
    },
    /// `clamp((s / (s0 beta^n)) (z / z0), lo, hi)`.
    Momentum {
        lo: f64,
        hi: f64,
    },
    Custom {
        lo: f64,
        hi: f64,
        table: Table,
    },
}

impl BiasField {
    pub fn is_none(&self) -> bool {
        matches!(self, BiasField::None)
    }

    /// Closed-form families at step `n`, price `s` and idiosyncratic state `z`.
    pub fn eval_simple(&self, n: usize, s: f64, z: f64, lattice: &LatticeSpec, z0: f64) -> f64 {
        match self {
            BiasField::None | BiasField::Custom { .. } => 1.0,
            BiasField::Constant { value } => *value,
            BiasField::Contrarian { lo, hi } => clamp(
                lattice.s0 * lattice.beta.powi(n as i32) / s * (z0 / z),
                *lo,
                *hi,
            ),
            BiasField::Momentum { lo, hi } => clamp(
                s / (lattice.s0 * lattice.beta.powi(n as i32)) * (z / z0),
                *lo,
                *hi,
            ),
        }
    }

    pub fn eval(
        &self,
        pt: &StatePoint,
        type_idx: usize,
        lattice: &LatticeSpec,
        z0: f64,
    ) -> Result<f64> {
        match self {
            BiasField::Custom { lo, hi, table } => Ok(clamp(
                table.get(&[pt.n, pt.stock_idx, pt.y_idx, pt.z_idx, type_idx])?,
                *lo,
                *hi,
            )),
            _ => Ok(self.eval_simple(pt.n, pt.s, pt.z, lattice, z0)),
        }
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        match self {
            BiasField::None => None,
            BiasField::Constant { value } => Some((*value, *value)),
            BiasField::Contrarian { lo, hi }
            | BiasField::Momentum { lo, hi }
            | BiasField::Custom { lo, hi, .. } => Some((*lo, *hi)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    /// Exponential utility of terminal wealth net of the liability.
    ExponentialTerminal,
    /// Recursive exponential-type utility with intermediate spending.
    Recursive,
}

/// Endowment paid at steps `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub enum Endowment {
    Uniform(PayoffField),
    PerStep(Vec<PayoffField>),
}

impl Endowment {
    /// Field paid at step `n` (1-based).
    pub fn at(&self, n: usize) -> &PayoffField {
        match self {
            Endowment::Uniform(f) => f,
            Endowment::PerStep(v) => &v[n - 1],
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Endowment::Uniform(f) => *f == PayoffField::Zero,
            Endowment::PerStep(v) => v.iter().all(|f| *f == PayoffField::Zero),
        }
    }

    fn fields(&self) -> Vec<&PayoffField> {
        match self {
            Endowment::Uniform(f) => vec![f],
            Endowment::PerStep(v) => v.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub weight: f64,
    pub mode: UtilityMode,
    pub types: AgentTypeGrid,
    pub z_chain: MarkovChain,
    /// Common initial idiosyncratic state, when the initial law is a point mass.
    pub z0: Option<f64>,
    pub liability: PayoffField,
    pub endowment: Endowment,
    pub bias: BiasField,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub lattice: LatticeSpec,
    pub y_chain: MarkovChain,
    pub populations: Vec<Population>,
    pub order_flow: OrderFlowField,
}

impl Scenario {
    /// True when some scenario function depends on the price history.
    pub fn requires_path_mode(&self) -> bool {
        self.populations.iter().any(|p| {
            p.liability.is_path_dependent()
                || p.endowment.fields().iter().any(|f| f.is_path_dependent())
        })
    }
}

fn build_lattice(l: &LatticeFile) -> Result<LatticeSpec> {
    match (l.sigma, l.u_tilde, l.d_tilde) {
        (Some(sigma), None, None) => LatticeSpec::from_sigma(l.n, l.t, l.r, l.s0, sigma),
        (None, Some(u), Some(d)) => LatticeSpec::new(l.n, l.t, l.r, l.s0, u, d),
        _ => Err(MfeError::InvalidLattice(
            "give either sigma or both u_tilde and d_tilde".into(),
        )),
    }
}

fn build_chain(
    c: &ChainFile,
    n_steps: usize,
    dt: f64,
    multiplicative: bool,
) -> Result<MarkovChain> {
    match c {
        ChainFile::Binomial { start, sigma, p_up } => {
            if multiplicative {
                MarkovChain::multiplicative_binomial(n_steps, dt, *start, *sigma, *p_up)
            } else {
                MarkovChain::additive_binomial(n_steps, dt, *start, *sigma, *p_up)
            }
        }
        ChainFile::Explicit {
            states,
            transitions,
            initial,
        } => MarkovChain::homogeneous(
            n_steps,
            states.clone(),
            transitions.clone(),
            initial.clone(),
        ),
    }
}

fn chain_violation(e: MfeError, what: &str) -> Violation {
    Violation::new("chain.stochastic", format!("{what}: {e}"))
}

/// Check every invariant of a scenario document, reporting all violations at once.
pub fn validate_scenario(file: &ScenarioFile) -> Result<Scenario> {
    let mut v = Vec::new();
    let lattice = match build_lattice(&file.lattice) {
        Ok(l) => Some(l),
        Err(e) => {
            v.push(Violation::new("lattice.order", e.to_string()));
            None
        }
    };
    let n_steps = file.lattice.n.max(1);
    let dt = file.lattice.t / n_steps as f64;

    let y_chain = match build_chain(&file.y_chain, n_steps, dt, false) {
        Ok(c) => Some(c),
        Err(e) => {
            v.push(chain_violation(e, "y_chain"));
            None
        }
    };

    if file.populations.is_empty() {
        v.push(Violation::new(
            "population.empty",
            "at least one population is required",
        ));
    }
    let wsum: f64 = file.populations.iter().map(|p| p.weight).sum();
    if !file.populations.is_empty() && (wsum - 1.0).abs() > 1e-12 {
        v.push(Violation::new(
            "weights.sum",
            format!("population weights sum to {wsum}, expected 1"),
        ));
    }

    let mut populations = Vec::new();
    for (i, p) in file.populations.iter().enumerate() {
        if let Some(pop) = validate_population(i, p, n_steps, dt, lattice.as_ref(), &mut v) {
            populations.push(pop);
        }
    }

    file.order_flow.check_finite(&mut v);

    let path_mode = file.analysis.path_mode;
    let path_dependent = populations.iter().any(|p| {
        p.liability.is_path_dependent()
            || p.endowment.fields().iter().any(|f| f.is_path_dependent())
    });
    if path_dependent && !path_mode {
        v.push(Violation::new(
            "payoff.path_mode",
            "a path-dependent payoff requires analysis.path_mode = true",
        ));
    }
    if path_mode && file.lattice.n > file.analysis.path_cap {
        v.push(Violation::new(
            "path.cap",
            format!(
                "path mode needs N <= path_cap, got N={} and cap={}",
                file.lattice.n, file.analysis.path_cap
            ),
        ));
    }
    let [lo, hi] = file.analysis.percentiles;
    if !(lo > 0.0 && lo < 1.0 && hi > 0.0 && hi < 1.0) {
        v.push(Violation::new(
            "analysis.percentiles",
            "percentiles must lie in (0,1)",
        ));
    }
    if let Some(&bad) = file
        .analysis
        .report_steps
        .iter()
        .find(|&&n| n > file.lattice.n)
    {
        v.push(Violation::new(
            "analysis.report_steps",
            format!("report step {bad} exceeds N={}", file.lattice.n),
        ));
    }

    if !v.is_empty() {
        return Err(MfeError::Validation(v));
    }
    Ok(Scenario {
        lattice: lattice.expect("checked above"),
        y_chain: y_chain.expect("checked above"),
        populations,
        order_flow: file.order_flow.clone(),
    })
}

fn validate_population(
    i: usize,
    p: &PopulationFile,
    n_steps: usize,
    dt: f64,
    lattice: Option<&LatticeSpec>,
    v: &mut Vec<Violation>,
) -> Option<Population> {
    let before = v.len();
    let tag = format!("population[{i}]");
    if !(p.weight > 0.0 && p.weight <= 1.0) {
        v.push(Violation::new(
            "weights.range",
            format!("{tag}: weight {} outside (0,1]", p.weight),
        ));
    }
    let types = match (&p.agent_grid, &p.types) {
        (Some(g), None) => {
            if !(g.gamma_min <= g.gamma_max && g.psi_min <= g.psi_max && g.a_zeta > 0.0) {
                v.push(Violation::new(
                    "grid.range",
                    format!("{tag}: grid bounds must be ordered and a_zeta positive"),
                ));
            }
            AgentTypeGrid::uniform(g, dt)
        }
        (None, Some(t)) => AgentTypeGrid::new(t.clone()),
        _ => {
            v.push(Violation::new(
                "grid.shape",
                format!("{tag}: give exactly one of agent_grid or types"),
            ));
            AgentTypeGrid::new(Vec::new())
        }
    };
    if types.is_empty() && (p.agent_grid.is_some() || p.types.is_some()) {
        v.push(Violation::new(
            "grid.empty",
            format!("{tag}: no agent types"),
        ));
    }
    for (k, t) in types.types().iter().enumerate() {
        let pos = [t.gamma, t.zeta, t.psi, t.delta, t.weight];
        if pos.iter().any(|x| !(*x > 0.0) || !x.is_finite()) || !t.xi.is_finite() {
            v.push(Violation::new(
                "type.positive",
                format!("{tag}: type {k} needs finite positive gamma, zeta, psi, delta and weight"),
            ));
        }
    }
    let tw: f64 = types.types().iter().map(|t| t.weight).sum();
    if !types.is_empty() && (tw - 1.0).abs() > 1e-12 {
        v.push(Violation::new(
            "types.weight_sum",
            format!("{tag}: type weights sum to {tw}, expected 1"),
        ));
    }

    let z_chain = match build_chain(&p.z_chain, n_steps, dt, true) {
        Ok(c) => Some(c),
        Err(e) => {
            v.push(chain_violation(e, &format!("{tag}.z_chain")));
            None
        }
    };
    let z0 = z_chain.as_ref().and_then(|c| c.initial_value());

    p.liability.check_finite(&format!("{tag}.F"), v);
    let endowment = match &p.g {
        EndowmentFile::Uniform(f) => Endowment::Uniform(f.clone()),
        EndowmentFile::PerStep(list) => {
            if list.len() != n_steps {
                v.push(Violation::new(
                    "endowment.length",
                    format!(
                        "{tag}: per-step g needs {n_steps} entries, got {}",
                        list.len()
                    ),
                ));
            }
            Endowment::PerStep(list.clone())
        }
    };
    for f in endowment.fields() {
        f.check_finite(&format!("{tag}.g"), v);
    }
    if p.mode == UtilityMode::ExponentialTerminal && !endowment.is_zero() {
        v.push(Violation::new(
            "endowment.exponential",
            format!("{tag}: endowments need the recursive utility mode"),
        ));
    }

    if let Some((lo, hi)) = p.bias.bounds() {
        if !(lo > 0.0) {
            v.push(Violation::new(
                "bias.positive",
                format!("{tag}: bias lower bound must be > 0, got {lo}"),
            ));
        }
        if !(lo <= hi && hi.is_finite()) {
            v.push(Violation::new(
                "bias.bounds",
                format!("{tag}: bias bounds must satisfy lo <= hi < inf, got [{lo}, {hi}]"),
            ));
        }
        if matches!(
            p.bias,
            BiasField::Contrarian { .. } | BiasField::Momentum { .. }
        ) {
            if z_chain.is_some() && z0.is_none() {
                v.push(Violation::new(
                    "bias.z0",
                    format!("{tag}: price/factor biases need a common initial z0"),
                ));
            }
            if z_chain
                .as_ref()
                .is_some_and(|c| (0..=c.n_steps()).any(|n| c.states(n).iter().any(|&z| !(z > 0.0))))
            {
                v.push(Violation::new(
                    "bias.z_positive",
                    format!("{tag}: price/factor biases need strictly positive z states"),
                ));
            }
        }
    }

    if v.len() > before || lattice.is_none() {
        return None;
    }
    Some(Population {
        weight: p.weight,
        mode: p.mode,
        types,
        z_chain: z_chain?,
        z0,
        liability: p.liability.clone(),
        endowment,
        bias: p.bias.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn lattice() -> LatticeSpec {
        LatticeSpec::from_sigma(48, 3.0, 0.033, 1.0, 0.15).unwrap()
    }

    #[test]
    fn affine_product_values() {
        let f = PayoffField::AffineProduct { a: 0.0, b: -3.0 };
        assert_eq!(f.eval(&StatePoint::simple(1.0, 1.0, 1.0)).unwrap(), -3.0);
        assert_eq!(
            PayoffField::Zero
                .eval(&StatePoint::simple(7.0, 2.0, 3.0))
                .unwrap(),
            0.0
        );
        let f = PayoffField::AffineProduct { a: 5.0, b: 3.0 };
        assert!((f.eval(&StatePoint::simple(1.1, 1.0, 1.0)).unwrap() - 8.3).abs() < 1e-12);
    }

    #[test]
    fn custom_table_miss() {
        let mut t = Table::default();
        t.insert(vec![1, 0, 0, 0], 2.5);
        let f = PayoffField::Custom { table: t };
        let mut pt = StatePoint::simple(1.0, 1.0, 1.0);
        pt.n = 1;
        assert_eq!(f.eval(&pt).unwrap(), 2.5);
        pt.z_idx = 1;
        assert!(matches!(f.eval(&pt), Err(MfeError::MissingEntry(_))));
    }

    #[test]
    fn two_sided_flow() {
        let l = OrderFlowField::RampSum {
            up: vec![Ramp { a: 8.0, c: 1.6 }],
            down: vec![Ramp { a: -8.0, c: 1.1 }],
        };
        assert!((l.eval_price(1.8) - 1.6).abs() < 1e-12);
        assert_eq!(l.eval_price(1.3), 0.0);
        assert!((l.eval_price(1.0) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn bias_families() {
        let l = lattice();
        let n = 10;
        let s = 1.5 * l.s0 * l.beta.powi(n);
        assert_eq!(
            BiasField::None.eval_simple(n as usize, s, 1.3, &l, 1.0),
            1.0
        );
        let c = BiasField::Contrarian { lo: 0.8, hi: 1.2 };
        let m = BiasField::Momentum { lo: 0.8, hi: 1.2 };
        assert_eq!(c.eval_simple(n as usize, s, 1.0, &l, 1.0), 0.8);
        assert_eq!(m.eval_simple(n as usize, s, 1.0, &l, 1.0), 1.2);
    }

    #[test]
    fn uniform_grid_layout() {
        let g = GridFile {
            gamma_min: 0.4,
            gamma_max: 1.6,
            n_gamma: 3,
            psi_min: 0.5,
            psi_max: 1.5,
            n_psi: 2,
            a_zeta: 1.05,
            rho: 0.05,
            xi: 0.0,
        };
        let grid = AgentTypeGrid::uniform(&g, 0.0625);
        assert_eq!(grid.len(), 12);
        let w: f64 = grid.types().iter().map(|t| t.weight).sum();
        assert!((w - 1.0).abs() < 1e-12);
        let t = grid.types()[5];
        assert!((t.gamma - 0.8).abs() < 1e-15);
        assert!((t.psi - 1.5).abs() < 1e-15);
        assert!((t.psi / t.zeta - 1.05).abs() < 1e-14);
        assert!((t.delta - (-0.05f64 * 0.0625).exp()).abs() < 1e-15);
    }

    #[test]
    fn presets_validate() {
        for name in crate::config::PRESET_NAMES {
            validate_scenario(&preset(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    fn codes(e: MfeError) -> Vec<&'static str> {
        match e {
            MfeError::Validation(v) => v.into_iter().map(|x| x.code).collect(),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn weight_sum_violation() {
        let mut f = preset("table1_f1").unwrap();
        let mut p = f.populations[0].clone();
        p.weight = 0.6;
        f.populations = vec![p.clone(), p];
        assert!(codes(validate_scenario(&f).unwrap_err()).contains(&"weights.sum"));
    }

    #[test]
    fn all_violations_are_reported() {
        let mut f = preset("table1_f1").unwrap();
        f.populations[0].bias = BiasField::Contrarian { lo: 0.0, hi: 1.2 };
        f.lattice.sigma = Some(-0.15);
        let c = codes(validate_scenario(&f).unwrap_err());
        assert!(c.contains(&"bias.positive"));
        assert!(c.contains(&"lattice.order"));
    }

    #[test]
    fn exponential_mode_rejects_endowments() {
        let mut f = preset("table1_f1").unwrap();
        f.populations[0].g = EndowmentFile::Uniform(PayoffField::AffineProduct { a: 1.0, b: 0.0 });
        assert!(codes(validate_scenario(&f).unwrap_err()).contains(&"endowment.exponential"));
    }

    #[test]
    fn running_max_needs_path_mode() {
        let mut f = preset("table1_f1").unwrap();
        f.populations[0].liability = PayoffField::RunningMaxProduct { a: 0.0, b: -1.0 };
        assert!(codes(validate_scenario(&f).unwrap_err()).contains(&"payoff.path_mode"));
        f.analysis.path_mode = true;
        let c = codes(validate_scenario(&f).unwrap_err());
        assert!(c.contains(&"path.cap"));
        assert!(!c.contains(&"payoff.path_mode"));
    }

    #[test]
    fn field_json_shapes() {
        let f: PayoffField =
            serde_json::from_str(r#"{"family":"affine_product","params":{"a":0,"b":-3}}"#).unwrap();
        assert_eq!(f, PayoffField::AffineProduct { a: 0.0, b: -3.0 });
        let z: PayoffField = serde_json::from_str(r#"{"family":"zero"}"#).unwrap();
        assert_eq!(z, PayoffField::Zero);
        let b: BiasField =
            serde_json::from_str(r#"{"family":"momentum","lo":0.8,"hi":1.2}"#).unwrap();
        assert_eq!(b, BiasField::Momentum { lo: 0.8, hi: 1.2 });
    }
}
