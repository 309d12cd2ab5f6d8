//! Finite-population check of the market-clearing rate: sample `N_p` agents, plug the
//! mean-field positions in, and measure the squared excess demand.
//!
//! Positions at decision step `m` depend on an agent only through its `(Z_m, type)`
//! cell, so a finite population is represented by its cell counts. Replication `r` of
//! the `i`-th population size draws from `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `(i << 32) | r`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::ForwardLaw;
use crate::error::{MfeError, Result};
use crate::numerics::pairwise_sum;
use crate::solver::EquilibriumSolution;

/// Cell counts of a sampled finite population at one decision step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPopulation {
    pub step: usize,
    pub n_agents: usize,
    /// Per population, counts over `(z, type)` cells in solver order.
    pub counts: Vec<Vec<u32>>,
}

/// Split `total` agents across `weights` by rounding with largest-remainder correction.
pub fn population_counts(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Draw `n_agents` i.i.d. agents and tally their cells at decision step `step`.
pub fn sample_population(
    sol: &EquilibriumSolution,
    n_agents: usize,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampledPopulation> {
    if n_agents == 0 {
        return Err(MfeError::Input("population size must be >= 1".into()));
    }
    if step >= sol.n_steps() {
        return Err(MfeError::Range(format!(
            "decision step {step} >= N={}",
            sol.n_steps()
        )));
    }
    let weights: Vec<f64> = sol.populations.iter().map(|p| p.weight).collect();
    let per_pop = population_counts(&weights, n_agents);
    let mut counts = Vec::with_capacity(per_pop.len());
    for (ps, &k) in sol.populations.iter().zip(&per_pop) {
        let w = ps.cell_weights(step);
        let mut c = vec![0u32; w.len()];
        if k > 0 {
            let dist = WeightedIndex::new(&w)
                .map_err(|e| MfeError::Numerical(format!("cell law: {e}")))?;
            for _ in 0..k {
                c[dist.sample(rng)] += 1;
            }
        }
        counts.push(c);
    }
    Ok(SampledPopulation {
        step,
        n_agents,
        counts,
    })
}

/// Forward-law-weighted mean over nodes of the squared excess demand.
///
/// The excess demand at a node is `sum_cells (k_cell / N_p - w_cell) phi_cell`, the gap
/// between the sampled and the mean-field mean position; the latter equals `L` to within
/// the solver's clearing tolerance, and the gap is exactly zero when the sample
/// reproduces the cell law.
pub fn excess_demand_mse(
    sol: &EquilibriumSolution,
    law: &ForwardLaw,
    sample: &SampledPopulation,
) -> Result<f64> {
    let n = sample.step;
    let shape_ok = sample.counts.len() == sol.populations.len()
        && sol
            .populations
            .iter()
            .zip(&sample.counts)
            .all(|(p, c)| c.len() == p.nz(n) * p.n_types());
    if !shape_ok {
        return Err(MfeError::Input(
            "sampled population does not belong to this solution".into(),
        ));
    }
    let ny = sol.ny[n];
    let inv_n = 1.0 / sample.n_agents as f64;
    let gaps: Vec<Vec<f64>> = sol
        .populations
        .iter()
        .zip(&sample.counts)
        .map(|(ps, c)| {
            ps.cell_weights(n)
                .iter()
                .zip(c)
                .map(|(w, &k)| k as f64 * inv_n - ps.weight * w)
                .collect()
        })
        .collect();
    let mut terms = Vec::with_capacity(sol.stock_count(n) * ny);
    for a in 0..sol.stock_count(n) {
        for y in 0..ny {
            let m = law.mass(n, a, y);
            if m == 0.0 {
                continue;
            }
            let mut e = 0.0;
            for (ps, g) in sol.populations.iter().zip(&gaps) {
                let phi = ps.phi_cells(n, ny, a, y);
                e += phi.iter().zip(g).map(|(p, g)| p * g).sum::<f64>();
            }
            terms.push(m * e * e);
        }
    }
    Ok(pairwise_sum(&terms))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_agents: usize,
    pub replication: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSummary {
    pub n_agents: usize,
    pub mean_mse: f64,
    /// Monte Carlo standard error of `mean_mse`.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub sizes: Vec<SizeSummary>,
    /// OLS slope of `log mean_mse` on `log N_p`; `None` when degenerate.
    pub slope: Option<f64>,
    /// Approximate 95% interval for the slope.
    pub slope_ci: Option<(f64, f64)>,
    pub degenerate: bool,
    pub replications: usize,
    pub seed: u64,
    pub step: usize,
}

/// Stream id of replication `rep` for the `size_idx`-th population size.
pub fn stream_id(size_idx: usize, rep: usize) -> u64 {
    ((size_idx as u64) << 32) | rep as u64
}

/// Monte Carlo study of the excess demand across population sizes.
pub fn convergence_study(
    sol: &EquilibriumSolution,
    law: &ForwardLaw,
    sizes: &[usize],
    replications: usize,
    seed: u64,
    step: Option<usize>,
) -> Result<ConvergenceReport> {
    let mut distinct = sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MfeError::Input(
            "need at least two distinct population sizes".into(),
        ));
    }
    if replications < 2 {
        return Err(MfeError::Input("need at least two replications".into()));
    }
    if sol.n_steps() == 0 {
        return Err(MfeError::Input("no decision steps".into()));
    }
    let step = step.unwrap_or(sol.n_steps() - 1);

    let mut rows = Vec::with_capacity(sizes.len() * replications);
    let mut summaries = Vec::with_capacity(sizes.len());
    for (i, &np) in sizes.iter().enumerate() {
        let mses: Vec<Result<f64>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream_id(i, r));
                let sample = sample_population(sol, np, step, &mut rng)?;
                excess_demand_mse(sol, law, &sample)
            })
            .collect();
        let mses: Vec<f64> = mses.into_iter().collect::<Result<_>>()?;
        let mean = pairwise_sum(&mses) / replications as f64;
        let var = mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (replications - 1) as f64;
        summaries.push(SizeSummary {
            n_agents: np,
            mean_mse: mean,
            std_error: (var / replications as f64).sqrt(),
        });
        rows.extend(mses.into_iter().enumerate().map(|(r, mse)| ConvergenceRow {
            n_agents: np,
            replication: r,
            mse,
        }));
    }

    let degenerate = summaries.iter().any(|s| !(s.mean_mse > 0.0));
    let (slope, slope_ci) = if degenerate {
        (None, None)
    } else {
        let (b, ci) = log_log_fit(&summaries);
        (Some(b), Some(ci))
    };
    Ok(ConvergenceReport {
        rows,
        sizes: summaries,
        slope,
        slope_ci,
        degenerate,
        replications,
        seed,
        step,
    })
}

/// OLS slope with a delta-method interval from the per-point standard errors.
fn log_log_fit(s: &[SizeSummary]) -> (f64, (f64, f64)) {
    let xs: Vec<f64> = s.iter().map(|r| (r.n_agents as f64).ln()).collect();
    let ys: Vec<f64> = s.iter().map(|r| r.mean_mse.ln()).collect();
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let b = sxy / sxx;
    let var: f64 = xs
        .iter()
        .zip(s)
        .map(|(x, r)| ((x - xm) / sxx).powi(2) * (r.std_error / r.mean_mse).powi(2))
        .sum();
    let h = 1.96 * var.sqrt();
    (b, (b - h, b + h))
}
