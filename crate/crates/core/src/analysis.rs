//! Forward propagation of the equilibrium law and the reported statistics: price
//! distributions, expected paths, excess returns, trading volume and sampled agent paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExcessReturnConvention, PercentileConvention};
use crate::error::{MfeError, Result};
use crate::lattice::{renormalize, LatticeSpec, MarkovChain, StockIndexing};
use crate::market::{Scenario, StatePoint, UtilityMode};
use crate::numerics::pairwise_sum;
use crate::solver::EquilibriumSolution;

/// Joint law of (stock index, Y state) per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardLaw {
    pub indexing: StockIndexing,
    pub lattice: LatticeSpec,
    pub ny: Vec<usize>,
    mass: Vec<Vec<f64>>,
}

/// Propagate the joint law with up-probability `p(n, stock, y)`.
pub fn propagate<P: Fn(usize, usize, usize) -> f64>(
    lattice: &LatticeSpec,
    y_chain: &MarkovChain,
    indexing: StockIndexing,
    n_steps: usize,
    p: P,
) -> Result<ForwardLaw> {
    let ny: Vec<usize> = (0..=n_steps).map(|n| y_chain.count(n)).collect();
    let mut mass = Vec::with_capacity(n_steps + 1);
    mass.push(y_chain.initial_law().to_vec());
    for n in 0..n_steps {
        let cur = &mass[n];
        let mut next = vec![0.0; indexing.count(n + 1) * ny[n + 1]];
        for a in 0..indexing.count(n) {
            let (up, dn) = (indexing.up_child(a), indexing.down_child(a));
            for y in 0..ny[n] {
                let m = cur[a * ny[n] + y];
                if m == 0.0 {
                    continue;
                }
                let pu = p(n, a, y);
                for &(yj, py) in y_chain.successors(n, y) {
                    next[up * ny[n + 1] + yj] += m * pu * py;
                    next[dn * ny[n + 1] + yj] += m * (1.0 - pu) * py;
                }
            }
        }
        renormalize(&mut next)?;
        mass.push(next);
    }
    Ok(ForwardLaw {
        indexing,
        lattice: lattice.clone(),
        ny,
        mass,
    })
}

/// Law under the equilibrium up-probabilities.
pub fn forward_joint_law(sol: &EquilibriumSolution, y_chain: &MarkovChain) -> Result<ForwardLaw> {
    propagate(
        &sol.lattice,
        y_chain,
        sol.indexing,
        sol.n_steps(),
        |n, a, y| sol.p(n, a, y),
    )
}

/// Law under the risk-neutral up-probability.
pub fn risk_neutral_law(lattice: &LatticeSpec, y_chain: &MarkovChain) -> Result<ForwardLaw> {
    let pq = lattice.p_q;
    propagate(
        lattice,
        y_chain,
        StockIndexing::Node,
        lattice.n_steps,
        move |_, _, _| pq,
    )
}

/// A discrete price distribution over the recombining nodes of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceDistribution {
    pub step: usize,
    pub prices: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PriceDistribution {
    pub fn mean(&self) -> f64 {
        let t: Vec<f64> = self
            .prices
            .iter()
            .zip(&self.probs)
            .map(|(s, p)| s * p)
            .collect();
        pairwise_sum(&t)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let t: Vec<f64> = self
            .prices
            .iter()
            .zip(&self.probs)
            .map(|(s, p)| p * (s - m) * (s - m))
            .collect();
        pairwise_sum(&t)
    }

    /// Mass strictly below `x`.
    pub fn mass_below(&self, x: f64) -> f64 {
        self.prices
            .iter()
            .zip(&self.probs)
            .filter(|(s, _)| **s < x)
            .map(|(_, p)| p)
            .sum()
    }

    /// Mass strictly above `x`.
    pub fn mass_above(&self, x: f64) -> f64 {
        self.prices
            .iter()
            .zip(&self.probs)
            .filter(|(s, _)| **s > x)
            .map(|(_, p)| p)
            .sum()
    }

    /// CDF at every node, in increasing price order.
    pub fn cdf(&self) -> Vec<f64> {
        self.probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

impl ForwardLaw {
    pub fn n_steps(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn mass(&self, n: usize, stock: usize, y: usize) -> f64 {
        self.mass[n][stock * self.ny[n] + y]
    }

    pub fn table(&self, n: usize) -> &[f64] {
        &self.mass[n]
    }

    fn check_step(&self, n: usize) -> Result<()> {
        if n > self.n_steps() {
            return Err(MfeError::Range(format!("step {n} > N={}", self.n_steps())));
        }
        Ok(())
    }

    /// Marginal law of Y at step `n`.
    pub fn y_marginal(&self, n: usize) -> Result<Vec<f64>> {
        self.check_step(n)?;
        let ny = self.ny[n];
        let mut out = vec![0.0; ny];
        for (i, m) in self.mass[n].iter().enumerate() {
            out[i % ny] += m;
        }
        Ok(out)
    }

    fn node_distribution<F: Fn(usize) -> bool>(&self, n: usize, keep_y: F) -> PriceDistribution {
        let ny = self.ny[n];
        let mut probs = vec![0.0; n + 1];
        for a in 0..self.indexing.count(n) {
            let k = self.indexing.up_moves(a);
            for y in (0..ny).filter(|&y| keep_y(y)) {
                probs[k] += self.mass[n][a * ny + y];
            }
        }
        PriceDistribution {
            step: n,
            prices: (0..=n)
                .map(|k| self.lattice.price_unchecked(n, k))
                .collect(),
            probs,
        }
    }

    pub fn marginal_price_distribution(&self, n: usize) -> Result<PriceDistribution> {
        self.check_step(n)?;
        let mut d = self.node_distribution(n, |_| true);
        renormalize(&mut d.probs)?;
        Ok(d)
    }

    /// Price law at step `n` given `Y_n = y`.
    pub fn conditional_price_distribution(&self, n: usize, y: usize) -> Result<PriceDistribution> {
        self.check_step(n)?;
        if y >= self.ny[n] {
            return Err(MfeError::Range(format!("y index {y} at step {n}")));
        }
        let mut d = self.node_distribution(n, |j| j == y);
        let total: f64 = d.probs.iter().sum();
        if !(total > 0.0) {
            return Err(MfeError::Conditioning(format!(
                "Y node {y} at step {n} has zero mass"
            )));
        }
        for p in &mut d.probs {
            *p /= total;
        }
        Ok(d)
    }

    pub fn expected_price(&self, n: usize) -> Result<f64> {
        Ok(self.marginal_price_distribution(n)?.mean())
    }
}

/// Y node selected by percentile `q` at step `n`.
///
/// `NodeIndex` picks position `floor(q * (count - 1))` among the states sorted by value;
/// `Probability` picks the first sorted state whose marginal CDF reaches `q`.
pub fn percentile_y_node(
    y_chain: &MarkovChain,
    n: usize,
    q: f64,
    conv: PercentileConvention,
) -> Result<usize> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MfeError::Domain(format!("percentile {q} outside (0,1)")));
    }
    let states = y_chain.states(n);
    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by(|&i, &j| states[i].total_cmp(&states[j]));
    match conv {
        PercentileConvention::NodeIndex => {
            let pos = (q * (states.len() - 1) as f64).floor() as usize;
            Ok(order[pos])
        }
        PercentileConvention::Probability => {
            let law = y_chain.marginal(n)?;
            let mut acc = 0.0;
            for &i in &order {
                acc += law[i];
                if acc >= q {
                    return Ok(i);
                }
            }
            Ok(*order.last().expect("chains have at least one state"))
        }
    }
}

/// Annualised excess return of a mean price `mean` at time `t`.
pub fn annualized_excess_return(
    mean: f64,
    lattice: &LatticeSpec,
    n: usize,
    conv: ExcessReturnConvention,
) -> Result<f64> {
    if n == 0 {
        return Err(MfeError::Domain("excess return needs t > 0".into()));
    }
    let t = lattice.time(n);
    Ok(match conv {
        ExcessReturnConvention::Log => (mean / lattice.s0).ln() / t - lattice.rate,
        ExcessReturnConvention::Simple => {
            (mean - lattice.s0 * lattice.beta.powi(n as i32)) / (lattice.s0 * t)
        }
    })
}

/// Root-mean-square position at decision step `n`, optionally given `Y_n = y`.
pub fn trading_volume(
    sol: &EquilibriumSolution,
    law: &ForwardLaw,
    n: usize,
    y: Option<usize>,
) -> Result<f64> {
    if n >= sol.n_steps() {
        return Err(MfeError::Range(format!(
            "volume needs a decision step < N, got {n}"
        )));
    }
    let ny = sol.ny[n];
    let weights: Vec<Vec<f64>> = sol.populations.iter().map(|p| p.cell_weights(n)).collect();
    let mut node_terms = Vec::new();
    let mut total = 0.0;
    for a in 0..sol.stock_count(n) {
        for yi in 0..ny {
            if y.is_some_and(|sel| sel != yi) {
                continue;
            }
            let m = law.mass(n, a, yi);
            total += m;
            if m == 0.0 {
                continue;
            }
            let mut second = 0.0;
            for (ps, w) in sol.populations.iter().zip(&weights) {
                let t: Vec<f64> = ps
                    .phi_cells(n, ny, a, yi)
                    .iter()
                    .zip(w)
                    .map(|(phi, w)| w * phi * phi)
                    .collect();
                second += ps.weight * pairwise_sum(&t);
            }
            node_terms.push(m * second);
        }
    }
    if !(total > 0.0) {
        return Err(MfeError::Conditioning(format!(
            "no mass at step {n} for the selected Y node"
        )));
    }
    Ok((pairwise_sum(&node_terms) / total).sqrt())
}

/// One sampled agent along a sampled market path.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub population: usize,
    pub type_idx: usize,
    pub z: Vec<usize>,
    /// `X_0..X_N`.
    pub wealth: Vec<f64>,
    /// `c_0..c_{N-1}` (zero for terminal-utility agents).
    pub consumption: Vec<f64>,
    /// `phi_0..phi_{N-1}`.
    pub position: Vec<f64>,
}

/// One sampled market path with its agents.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    /// Stock index at every step, in the solution's indexing.
    pub stock: Vec<usize>,
    pub y: Vec<usize>,
    pub agents: Vec<AgentTrajectory>,
}

fn draw(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Sample market and agent paths and roll wealth forward under the optimal policies.
///
/// Path `j` uses `ChaCha8Rng::seed_from_u64(seed)` on stream `j`, so every path is
/// reproducible independently of how many paths are drawn.
pub fn simulate_agent_paths(
    sol: &EquilibriumSolution,
    sc: &Scenario,
    n_agents: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SampledPath>> {
    let big_n = sol.n_steps();
    let lat = &sol.lattice;
    for (pi, ps) in sol.populations.iter().enumerate() {
        if ps.mode == UtilityMode::Recursive && big_n > 0 {
            ps.log_vtilde_table(0).map_err(|_| {
                MfeError::DiagnosticsNotRetained(format!(
                    "population {pi} needs V~ tables for spending; solve with diagnostics"
                ))
            })?;
        }
    }
    let mut out = Vec::with_capacity(n_paths);
    for j in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let mut stock = vec![0usize];
        let mut ys = vec![draw(
            &mut rng,
            sc.y_chain.initial_law().iter().copied().enumerate(),
        )];
        let mut ups = Vec::with_capacity(big_n);
        for n in 0..big_n {
            let (a, y) = (stock[n], ys[n]);
            let up = rng.gen::<f64>() < sol.p(n, a, y);
            ups.push(up);
            stock.push(if up {
                sol.indexing.up_child(a)
            } else {
                sol.indexing.down_child(a)
            });
            ys.push(draw(&mut rng, sc.y_chain.successors(n, y).iter().copied()));
        }
        let mut agents = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            let pi = draw(
                &mut rng,
                sol.populations.iter().map(|p| p.weight).enumerate(),
            );
            let pop = &sc.populations[pi];
            let ps = &sol.populations[pi];
            let t = draw(&mut rng, ps.types.iter().map(|t| t.weight).enumerate());
            let mut z = vec![draw(
                &mut rng,
                pop.z_chain.initial_law().iter().copied().enumerate(),
            )];
            for n in 0..big_n {
                let next = draw(&mut rng, pop.z_chain.successors(n, z[n]).iter().copied());
                z.push(next);
            }
            let mut wealth = vec![ps.types[t].xi];
            let mut consumption = Vec::with_capacity(big_n);
            let mut position = Vec::with_capacity(big_n);
            for n in 0..big_n {
                let x = wealth[n];
                let phi = sol.phi(pi, n, stock[n], ys[n], z[n], t);
                let c = match ps.mode {
                    UtilityMode::Recursive => {
                        sol.consumption(pi, n, stock[n], ys[n], z[n], t, x)?
                    }
                    UtilityMode::ExponentialTerminal => 0.0,
                };
                let s_next = sol.indexing.price(lat, n + 1, stock[n + 1]);
                let pt = StatePoint {
                    n: n + 1,
                    stock_idx: stock[n + 1],
                    s: s_next,
                    running_max: None,
                    y_idx: ys[n + 1],
                    y: sc.y_chain.state(n + 1, ys[n + 1]),
                    z_idx: z[n + 1],
                    z: pop.z_chain.state(n + 1, z[n + 1]),
                    dt: lat.dt,
                };
                let g = if pop.endowment.is_zero() {
                    0.0
                } else {
                    pop.endowment
                        .at(n + 1)
                        .eval(&path_point(sol, pt, &stock, n + 1))?
                };
                let r = if ups[n] { lat.u } else { lat.d };
                wealth.push(lat.beta * (x - c * lat.dt) + phi * r + g);
                consumption.push(c);
                position.push(phi);
            }
            agents.push(AgentTrajectory {
                population: pi,
                type_idx: t,
                z,
                wealth,
                consumption,
                position,
            });
        }
        out.push(SampledPath {
            stock,
            y: ys,
            agents,
        });
    }
    Ok(out)
}

fn path_point(
    sol: &EquilibriumSolution,
    mut pt: StatePoint,
    stock: &[usize],
    n: usize,
) -> StatePoint {
    if sol.indexing == StockIndexing::Path {
        pt.running_max = Some(
            (0..=n)
                .map(|k| sol.indexing.price(&sol.lattice, k, stock[k]))
                .fold(f64::MIN, f64::max),
        );
    }
    pt
}

/// Statistic of one step under the four reported measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureRow {
    pub step: usize,
    pub time: f64,
    pub p: f64,
    pub q: f64,
    pub p_top: f64,
    pub p_bottom: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeRow {
    pub step: usize,
    pub time: f64,
    pub marginal: f64,
    pub top: f64,
    pub bottom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub report_steps: Vec<usize>,
    pub percentiles: [f64; 2],
    pub percentile_convention: PercentileConvention,
    pub excess_return_convention: ExcessReturnConvention,
}

/// Everything the analyzer reports for one solved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    /// `(measure label, distribution)` at each report step.
    pub distributions: Vec<(String, PriceDistribution)>,
    pub expected_path: Vec<MeasureRow>,
    /// Rows for `n >= 1`.
    pub excess_return: Vec<MeasureRow>,
    pub volume: Vec<VolumeRow>,
}

/// Measure labels, in output order.
pub const MEASURES: [&str; 4] = ["P", "Q", "P|Ytop", "P|Ybottom"];

/// Build the full report for a node-indexed or path-indexed solution.
pub fn build_report(
    sc: &Scenario,
    sol: &EquilibriumSolution,
    opts: &ReportOptions,
) -> Result<ReportBundle> {
    let law = forward_joint_law(sol, &sc.y_chain)?;
    let q_law = risk_neutral_law(&sc.lattice, &sc.y_chain)?;
    let big_n = sol.n_steps();
    let [lo, hi] = opts.percentiles;
    let y_nodes = |n: usize| -> Result<(usize, usize)> {
        Ok((
            percentile_y_node(&sc.y_chain, n, hi, opts.percentile_convention)?,
            percentile_y_node(&sc.y_chain, n, lo, opts.percentile_convention)?,
        ))
    };

    let mut distributions = Vec::new();
    for &n in &opts.report_steps {
        let (top, bottom) = y_nodes(n)?;
        distributions.push((MEASURES[0].to_string(), law.marginal_price_distribution(n)?));
        distributions.push((
            MEASURES[1].to_string(),
            q_law.marginal_price_distribution(n)?,
        ));
        distributions.push((
            MEASURES[2].to_string(),
            law.conditional_price_distribution(n, top)?,
        ));
        distributions.push((
            MEASURES[3].to_string(),
            law.conditional_price_distribution(n, bottom)?,
        ));
    }

    let mut expected_path = Vec::with_capacity(big_n + 1);
    for n in 0..=big_n {
        let (top, bottom) = y_nodes(n)?;
        expected_path.push(MeasureRow {
            step: n,
            time: sc.lattice.time(n),
            p: law.expected_price(n)?,
            q: q_law.expected_price(n)?,
            p_top: law.conditional_price_distribution(n, top)?.mean(),
            p_bottom: law.conditional_price_distribution(n, bottom)?.mean(),
        });
    }

    let conv = opts.excess_return_convention;
    let xr = |m: f64, n: usize| annualized_excess_return(m, &sc.lattice, n, conv);
    let excess_return = expected_path[1..]
        .iter()
        .map(|r| {
            Ok(MeasureRow {
                step: r.step,
                time: r.time,
                p: xr(r.p, r.step)?,
                q: xr(r.q, r.step)?,
                p_top: xr(r.p_top, r.step)?,
                p_bottom: xr(r.p_bottom, r.step)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut volume = Vec::with_capacity(big_n);
    for n in 0..big_n {
        let (top, bottom) = y_nodes(n)?;
        volume.push(VolumeRow {
            step: n,
            time: sc.lattice.time(n),
            marginal: trading_volume(sol, &law, n, None)?,
            top: trading_volume(sol, &law, n, Some(top))?,
            bottom: trading_volume(sol, &law, n, Some(bottom))?,
        });
    }

    Ok(ReportBundle {
        distributions,
        expected_path,
        excess_return,
        volume,
    })
}
