//! Backward induction for the mean-field equilibrium.
//!
//! One sweep from `N` down to `1` serves every model variant: each population carries
//! its own utility mode, type grid, idiosyncratic chain, liability, endowment and bias,
//! and all populations enter one weighted clearing condition per `(stock, y)` node.
//!
//! Slices at step `n` are laid out as `((stock * ny + y) * nz + z) * n_types + t`.
//! Stored values are `log V` for terminal exponential utility and `V` for recursive utility,
//! where the optimal recursive utility at wealth `x` is `eta_n x - V_n`.

pub mod kernels;
pub mod oracle;

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{MfeError, NodeRef, Result};
use crate::lattice::{LatticeSpec, PathIndex, StockIndexing, DEFAULT_PATH_CAP};
use crate::market::{AgentType, Population, Scenario, StatePoint, UtilityMode};
use crate::numerics::pairwise_sum;

use kernels::{
    branch_expectation, checked_prob, eta_schedule, log_value_update, logit_from_shift,
    logit_shift, position_from_shift, recursive_value, subjective_log_probs, terminal_discount,
    Aggregate,
};

/// Default bound on the market-clearing residual.
pub const CLEARING_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub indexing: StockIndexing,
    /// Keep `log f`, `log V~` and value tables for every step.
    pub retain_diagnostics: bool,
    pub path_cap: usize,
    pub clearing_tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            indexing: StockIndexing::Node,
            retain_diagnostics: false,
            path_cap: DEFAULT_PATH_CAP,
            clearing_tolerance: CLEARING_TOLERANCE,
        }
    }
}

impl SolveOptions {
    pub fn with_diagnostics(mut self) -> Self {
        self.retain_diagnostics = true;
        self
    }

    pub fn path(mut self) -> Self {
        self.indexing = StockIndexing::Path;
        self
    }
}

/// Solver output for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSolution {
    pub mode: UtilityMode,
    pub weight: f64,
    pub types: Vec<AgentType>,
    /// Discount weight `D_n` per type, `n = 0..=N`.
    pub discount: Vec<Vec<f64>>,
    /// Marginal law of the idiosyncratic chain per step.
    pub z_law: Vec<Vec<f64>>,
    pub z_states: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    log_f: Option<Vec<Vec<f64>>>,
    log_vtilde: Option<Vec<Vec<f64>>>,
    value: Option<Vec<Vec<f64>>>,
}

impl PopulationSolution {
    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn nz(&self, n: usize) -> usize {
        self.z_law[n].len()
    }

    /// `eta_0..eta_N` of type `t` (recursive mode only).
    pub fn eta(&self, t: usize) -> Option<&[f64]> {
        (self.mode == UtilityMode::Recursive).then(|| self.discount[t].as_slice())
    }

    /// Optimal positions at decision step `n`, for all `(z, t)` cells of node `(stock, y)`.
    pub fn phi_cells(&self, n: usize, ny: usize, stock: usize, y: usize) -> &[f64] {
        let w = self.nz(n) * self.n_types();
        let start = (stock * ny + y) * w;
        &self.phi[n][start..start + w]
    }

    /// Cross-sectional weights of the `(z, t)` cells at step `n`, aligned with [`Self::phi_cells`].
    pub fn cell_weights(&self, n: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.nz(n) * self.n_types());
        for &mz in &self.z_law[n] {
            for t in &self.types {
                w.push(mz * t.weight);
            }
        }
        w
    }

    pub fn phi_table(&self, n: usize) -> &[f64] {
        &self.phi[n]
    }

    pub fn log_f_table(&self, n: usize) -> Result<&[f64]> {
        self.log_f
            .as_ref()
            .map(|v| v[n].as_slice())
            .ok_or_else(|| MfeError::DiagnosticsNotRetained("log f tables".into()))
    }

    pub fn log_vtilde_table(&self, n: usize) -> Result<&[f64]> {
        if self.mode != UtilityMode::Recursive {
            return Err(MfeError::DiagnosticsNotRetained(
                "V~ exists only for recursive populations".into(),
            ));
        }
        self.log_vtilde
            .as_ref()
            .map(|v| v[n].as_slice())
            .ok_or_else(|| MfeError::DiagnosticsNotRetained("V~ tables".into()))
    }

    /// Value slice at step `n` (`0..=N`): `log V` or `V` depending on the mode.
    pub fn value_table(&self, n: usize) -> Result<&[f64]> {
        self.value
            .as_ref()
            .map(|v| v[n].as_slice())
            .ok_or_else(|| MfeError::DiagnosticsNotRetained("value tables".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub indexing: StockIndexing,
    pub lattice: LatticeSpec,
    /// Y state count per step.
    pub ny: Vec<usize>,
    p: Vec<Vec<f64>>,
    pub populations: Vec<PopulationSolution>,
    pub max_clearing_residual: f64,
    pub biased: bool,
}

impl EquilibriumSolution {
    pub fn n_steps(&self) -> usize {
        self.lattice.n_steps
    }

    pub fn is_multi_population(&self) -> bool {
        self.populations.len() > 1
    }

    pub fn stock_count(&self, n: usize) -> usize {
        self.indexing.count(n)
    }

    /// Equilibrium up-probability at decision step `n < N`.
    pub fn p(&self, n: usize, stock: usize, y: usize) -> f64 {
        self.p[n][stock * self.ny[n] + y]
    }

    /// Flat table for step `n`, ordered by `(stock, y)`.
    pub fn p_table(&self, n: usize) -> &[f64] {
        &self.p[n]
    }

    pub fn phi(&self, pop: usize, n: usize, stock: usize, y: usize, z: usize, t: usize) -> f64 {
        let ps = &self.populations[pop];
        ps.phi_cells(n, self.ny[n], stock, y)[z * ps.n_types() + t]
    }

    fn cell_index(
        &self,
        pop: usize,
        n: usize,
        stock: usize,
        y: usize,
        z: usize,
        t: usize,
    ) -> usize {
        let ps = &self.populations[pop];
        ((stock * self.ny[n] + y) * ps.nz(n) + z) * ps.n_types() + t
    }

    pub fn log_f(
        &self,
        pop: usize,
        n: usize,
        stock: usize,
        y: usize,
        z: usize,
        t: usize,
    ) -> Result<f64> {
        let i = self.cell_index(pop, n, stock, y, z, t);
        Ok(self.populations[pop].log_f_table(n)?[i])
    }

    pub fn log_vtilde(
        &self,
        pop: usize,
        n: usize,
        stock: usize,
        y: usize,
        z: usize,
        t: usize,
    ) -> Result<f64> {
        let i = self.cell_index(pop, n, stock, y, z, t);
        Ok(self.populations[pop].log_vtilde_table(n)?[i])
    }

    pub fn value(
        &self,
        pop: usize,
        n: usize,
        stock: usize,
        y: usize,
        z: usize,
        t: usize,
    ) -> Result<f64> {
        let i = self.cell_index(pop, n, stock, y, z, t);
        Ok(self.populations[pop].value_table(n)?[i])
    }

    /// Optimal spending rate at decision step `n` for wealth `x` (recursive populations).
    #[allow(clippy::too_many_arguments)]
    pub fn consumption(
        &self,
        pop: usize,
        n: usize,
        stock: usize,
        y: usize,
        z: usize,
        t: usize,
        x: f64,
    ) -> Result<f64> {
        let lv = self.log_vtilde(pop, n, stock, y, z, t)?;
        let ps = &self.populations[pop];
        Ok(kernels::consumption_policy(
            x,
            lv,
            &ps.types[t],
            ps.discount[t][n + 1],
            self.lattice.beta,
            self.lattice.dt,
        ))
    }

    /// Population-weighted mean position at a node.
    pub fn mean_position(&self, n: usize, stock: usize, y: usize) -> f64 {
        self.populations
            .iter()
            .map(|ps| {
                let terms: Vec<f64> = ps
                    .phi_cells(n, self.ny[n], stock, y)
                    .iter()
                    .zip(ps.cell_weights(n))
                    .map(|(phi, w)| phi * w)
                    .collect();
                ps.weight * pairwise_sum(&terms)
            })
            .sum()
    }
}

/// Node-indexed solve. Fails for path-dependent scenarios.
pub fn backward_solve(sc: &Scenario, opts: &SolveOptions) -> Result<EquilibriumSolution> {
    let opts = SolveOptions {
        indexing: StockIndexing::Node,
        ..*opts
    };
    if sc.requires_path_mode() {
        return Err(MfeError::Input(
            "scenario has path-dependent payoffs; use the path-indexed solver".into(),
        ));
    }
    solve_impl(sc, &opts)
}

/// Path-indexed solve, exact for payoffs depending on the whole price history.
pub fn path_dependent_solve(sc: &Scenario, opts: &SolveOptions) -> Result<EquilibriumSolution> {
    let n = sc.lattice.n_steps;
    if n > opts.path_cap || n >= 63 {
        return Err(MfeError::Capacity {
            step: n,
            cap: opts.path_cap,
        });
    }
    let opts = SolveOptions {
        indexing: StockIndexing::Path,
        ..*opts
    };
    solve_impl(sc, &opts)
}

/// Dispatch on `opts.indexing`.
pub fn solve(sc: &Scenario, opts: &SolveOptions) -> Result<EquilibriumSolution> {
    match opts.indexing {
        StockIndexing::Node => backward_solve(sc, opts),
        StockIndexing::Path => path_dependent_solve(sc, opts),
    }
}

/// Price and running maximum for every stock index at step `n`.
fn stock_states(lat: &LatticeSpec, idx: StockIndexing, n: usize) -> Vec<(f64, Option<f64>)> {
    (0..idx.count(n))
        .map(|a| match idx {
            StockIndexing::Node => (lat.price_unchecked(n, a), None),
            StockIndexing::Path => {
                let path = PathIndex {
                    step: n,
                    bits: a as u64,
                };
                (path.price(lat), Some(path.running_max(lat)))
            }
        })
        .collect()
}

struct PopCtx<'a> {
    pop: &'a Population,
    types: &'a [AgentType],
    discount: Vec<Vec<f64>>,
    z_law: Vec<Vec<f64>>,
}

impl PopCtx<'_> {
    fn nz(&self, n: usize) -> usize {
        self.z_law[n].len()
    }
}

struct Block {
    p: Vec<f64>,
    max_residual: f64,
    pops: Vec<PopBlock>,
}

#[derive(Default)]
struct PopBlock {
    phi: Vec<f64>,
    value: Vec<f64>,
    log_f: Vec<f64>,
    log_vtilde: Vec<f64>,
}

fn terminal_slice(
    sc: &Scenario,
    ctx: &PopCtx,
    idx: StockIndexing,
    stocks: &[(f64, Option<f64>)],
) -> Result<Vec<f64>> {
    let lat = &sc.lattice;
    let n = lat.n_steps;
    let ny = sc.y_chain.count(n);
    let nz = ctx.nz(n);
    let nt = ctx.types.len();
    let mut out = Vec::with_capacity(idx.count(n) * ny * nz * nt);
    for (a, &(s, running_max)) in stocks.iter().enumerate() {
        for yi in 0..ny {
            for zi in 0..nz {
                let pt = StatePoint {
                    n,
                    stock_idx: a,
                    s,
                    running_max,
                    y_idx: yi,
                    y: sc.y_chain.state(n, yi),
                    z_idx: zi,
                    z: ctx.pop.z_chain.state(n, zi),
                    dt: lat.dt,
                };
                let f = ctx.pop.liability.eval(&pt)?;
                for t in ctx.types {
                    out.push(match ctx.pop.mode {
                        UtilityMode::ExponentialTerminal => t.gamma * f,
                        UtilityMode::Recursive => f,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Log-integrand of the branch expectations at step `n`.
fn integrand<'v>(
    sc: &Scenario,
    ctx: &PopCtx,
    n: usize,
    stocks: &[(f64, Option<f64>)],
    value: &'v [f64],
) -> Result<Cow<'v, [f64]>> {
    if ctx.pop.mode == UtilityMode::ExponentialTerminal {
        return Ok(Cow::Borrowed(value));
    }
    let lat = &sc.lattice;
    let ny = sc.y_chain.count(n);
    let nz = ctx.nz(n);
    let nt = ctx.types.len();
    let g = ctx.pop.endowment.at(n);
    let blocks: Vec<Result<Vec<f64>>> = stocks
        .par_iter()
        .enumerate()
        .map(|(a, &(s, running_max))| {
            let mut out = Vec::with_capacity(ny * nz * nt);
            for yi in 0..ny {
                for zi in 0..nz {
                    let pt = StatePoint {
                        n,
                        stock_idx: a,
                        s,
                        running_max,
                        y_idx: yi,
                        y: sc.y_chain.state(n, yi),
                        z_idx: zi,
                        z: ctx.pop.z_chain.state(n, zi),
                        dt: lat.dt,
                    };
                    let gv = g.eval(&pt)?;
                    let base = ((a * ny + yi) * nz + zi) * nt;
                    for (t, ty) in ctx.types.iter().enumerate() {
                        out.push(ty.gamma * (value[base + t] - ctx.discount[t][n] * gv));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut flat = Vec::with_capacity(value.len());
    for b in blocks {
        flat.extend(b?);
    }
    Ok(Cow::Owned(flat))
}

#[allow(clippy::too_many_arguments)]
fn node_block(
    sc: &Scenario,
    ctxs: &[PopCtx],
    idx: StockIndexing,
    m: usize,
    a: usize,
    state: (f64, Option<f64>),
    h: &[Cow<[f64]>],
    opts: &SolveOptions,
) -> Result<Block> {
    let lat = &sc.lattice;
    let n = m + 1;
    let (s, running_max) = state;
    let ny_m = sc.y_chain.count(m);
    let ny_n = sc.y_chain.count(n);
    let (up, dn) = (idx.up_child(a), idx.down_child(a));
    let keep = opts.retain_diagnostics;

    let mut block = Block {
        p: Vec::with_capacity(ny_m),
        max_residual: 0.0,
        pops: ctxs.iter().map(|_| PopBlock::default()).collect(),
    };

    // scratch per population: (log A_up, log A_down, log bias, log f^pi)
    let mut scratch: Vec<Vec<[f64; 4]>> = ctxs.iter().map(|_| Vec::new()).collect();

    for yi in 0..ny_m {
        let node = NodeRef {
            step: m,
            stock_idx: a,
            y_idx: yi,
        };
        let supply = sc.order_flow.eval(m, a, s, yi)?;
        let y_succ = sc.y_chain.successors(m, yi);
        let mut aggs = Vec::with_capacity(ctxs.len());

        for (pi, ctx) in ctxs.iter().enumerate() {
            let nz_m = ctx.nz(m);
            let nz_n = ctx.nz(n);
            let nt = ctx.types.len();
            let hp = &h[pi];
            let sc_p = &mut scratch[pi];
            sc_p.clear();
            let mut num_terms = Vec::with_capacity(nz_m * nt);
            let mut den_terms = Vec::with_capacity(nz_m * nt);
            for zi in 0..nz_m {
                let z_succ = ctx.pop.z_chain.successors(m, zi);
                let pt = StatePoint {
                    n: m,
                    stock_idx: a,
                    s,
                    running_max,
                    y_idx: yi,
                    y: sc.y_chain.state(m, yi),
                    z_idx: zi,
                    z: ctx.pop.z_chain.state(m, zi),
                    dt: lat.dt,
                };
                let mz = ctx.z_law[m][zi];
                for (t, ty) in ctx.types.iter().enumerate() {
                    let at = |child: usize| {
                        move |yj: usize, zj: usize| hp[((child * ny_n + yj) * nz_n + zj) * nt + t]
                    };
                    let la_up = branch_expectation(y_succ, z_succ, at(up), node)?;
                    let la_dn = branch_expectation(y_succ, z_succ, at(dn), node)?;
                    let lb = if ctx.pop.bias.is_none() {
                        0.0
                    } else {
                        let w = ctx.pop.bias.eval(&pt, t, lat, ctx.pop.z0.unwrap_or(1.0))?;
                        kernels::apply_bias(0.0, w)?
                    };
                    let lfp = la_up - la_dn + lb;
                    let gd = ty.gamma * ctx.discount[t][n];
                    let w = mz * ty.weight;
                    num_terms.push(w * lfp / gd);
                    den_terms.push(w / gd);
                    sc_p.push([la_up, la_dn, lb, lfp]);
                }
            }
            aggs.push(Aggregate {
                weight: ctx.pop.weight,
                mean_log_f: pairwise_sum(&num_terms),
                mean_inv_risk: pairwise_sum(&den_terms),
            });
        }

        let g = logit_shift(&aggs, supply, lat);
        let p = checked_prob(g, lat, node)?;
        let logit = logit_from_shift(g, lat);
        block.p.push(p);

        let mut cleared = 0.0;
        for (pi, ctx) in ctxs.iter().enumerate() {
            let nt = ctx.types.len();
            let out = &mut block.pops[pi];
            let mut clear_terms = Vec::with_capacity(scratch[pi].len());
            for (k, &[la_up, la_dn, lb, lfp]) in scratch[pi].iter().enumerate() {
                let (zi, t) = (k / nt, k % nt);
                let ty = &ctx.types[t];
                let disc = ctx.discount[t][n];
                let phi = position_from_shift(g, lfp, ty.gamma, disc, lat);
                clear_terms.push(ctx.z_law[m][zi] * ty.weight * phi);
                let (lp, lq) = subjective_log_probs(logit, lb);
                let lv = log_value_update(lp, lq, ty.gamma * disc, phi, lat, la_up, la_dn);
                let v = match ctx.pop.mode {
                    UtilityMode::ExponentialTerminal => lv,
                    UtilityMode::Recursive => {
                        recursive_value(lv, ty, disc, ctx.discount[t][m], lat.beta, lat.dt)
                    }
                };
                if !v.is_finite() || !phi.is_finite() {
                    return Err(MfeError::NumericalOverflow {
                        node,
                        detail: format!("non-finite value {v} or position {phi}"),
                    });
                }
                out.phi.push(phi);
                out.value.push(v);
                if keep {
                    out.log_f.push(la_up - la_dn);
                    if ctx.pop.mode == UtilityMode::Recursive {
                        out.log_vtilde.push(lv);
                    }
                }
            }
            cleared += ctx.pop.weight * pairwise_sum(&clear_terms);
        }
        let residual = (cleared - supply).abs();
        if !(residual <= opts.clearing_tolerance) {
            return Err(MfeError::InternalConsistency {
                node,
                detail: format!(
                    "clearing residual {residual:.3e} exceeds {:.1e}",
                    opts.clearing_tolerance
                ),
            });
        }
        block.max_residual = block.max_residual.max(residual);
    }
    Ok(block)
}

fn solve_impl(sc: &Scenario, opts: &SolveOptions) -> Result<EquilibriumSolution> {
    let lat = &sc.lattice;
    let big_n = lat.n_steps;
    let idx = opts.indexing;
    let keep = opts.retain_diagnostics;

    let mut ctxs = Vec::with_capacity(sc.populations.len());
    for pop in &sc.populations {
        let types = pop.types.types();
        let discount = match pop.mode {
            UtilityMode::ExponentialTerminal => vec![terminal_discount(lat); types.len()],
            UtilityMode::Recursive => types.iter().map(|t| eta_schedule(t, lat)).collect(),
        };
        ctxs.push(PopCtx {
            pop,
            types,
            discount,
            z_law: pop.z_chain.marginals()?,
        });
    }

    let ny: Vec<usize> = (0..=big_n).map(|n| sc.y_chain.count(n)).collect();
    let mut p_tables = vec![Vec::new(); big_n];
    let mut phi_tables: Vec<Vec<Vec<f64>>> = ctxs.iter().map(|_| vec![Vec::new(); big_n]).collect();
    let mut diag_f: Vec<Vec<Vec<f64>>> = ctxs
        .iter()
        .map(|_| {
            if keep {
                vec![Vec::new(); big_n]
            } else {
                Vec::new()
            }
        })
        .collect();
    let mut diag_vt = diag_f.clone();
    let mut diag_v: Vec<Vec<Vec<f64>>> = ctxs
        .iter()
        .map(|_| {
            if keep {
                vec![Vec::new(); big_n + 1]
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut stocks_n = stock_states(lat, idx, big_n);
    let mut values: Vec<Vec<f64>> = ctxs
        .iter()
        .map(|c| terminal_slice(sc, c, idx, &stocks_n))
        .collect::<Result<_>>()?;
    let mut max_residual: f64 = 0.0;

    for n in (1..=big_n).rev() {
        let m = n - 1;
        if keep {
            for (pi, v) in values.iter().enumerate() {
                diag_v[pi][n] = v.clone();
            }
        }
        let h: Vec<Cow<[f64]>> = ctxs
            .iter()
            .zip(&values)
            .map(|(c, v)| integrand(sc, c, n, &stocks_n, v))
            .collect::<Result<_>>()?;
        let stocks_m = stock_states(lat, idx, m);
        let blocks: Vec<Result<Block>> = stocks_m
            .par_iter()
            .enumerate()
            .map(|(a, &st)| node_block(sc, &ctxs, idx, m, a, st, &h, opts))
            .collect();
        drop(h);

        let mut p = Vec::with_capacity(stocks_m.len() * ny[m]);
        let mut next: Vec<Vec<f64>> = ctxs.iter().map(|_| Vec::new()).collect();
        for b in blocks {
            let b = b?;
            max_residual = max_residual.max(b.max_residual);
            p.extend(b.p);
            for (pi, pb) in b.pops.into_iter().enumerate() {
                phi_tables[pi][m].extend(pb.phi);
                next[pi].extend(pb.value);
                if keep {
                    diag_f[pi][m].extend(pb.log_f);
                    diag_vt[pi][m].extend(pb.log_vtilde);
                }
            }
        }
        p_tables[m] = p;
        values = next;
        stocks_n = stocks_m;
    }
    if keep {
        for (pi, v) in values.into_iter().enumerate() {
            diag_v[pi][0] = v;
        }
    }

    let populations = ctxs
        .into_iter()
        .enumerate()
        .map(|(pi, c)| {
            let recursive = c.pop.mode == UtilityMode::Recursive;
            PopulationSolution {
                mode: c.pop.mode,
                weight: c.pop.weight,
                types: c.types.to_vec(),
                discount: c.discount,
                z_states: (0..=big_n)
                    .map(|n| c.pop.z_chain.states(n).to_vec())
                    .collect(),
                z_law: c.z_law,
                phi: std::mem::take(&mut phi_tables[pi]),
                log_f: keep.then(|| std::mem::take(&mut diag_f[pi])),
                log_vtilde: (keep && recursive).then(|| std::mem::take(&mut diag_vt[pi])),
                value: keep.then(|| std::mem::take(&mut diag_v[pi])),
            }
        })
        .collect();

    Ok(EquilibriumSolution {
        indexing: idx,
        lattice: lat.clone(),
        ny,
        p: p_tables,
        populations,
        max_clearing_residual: max_residual,
        biased: sc.populations.iter().any(|p| !p.bias.is_none()),
    })
}
