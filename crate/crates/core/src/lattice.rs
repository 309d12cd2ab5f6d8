//! Binomial stock lattice, finite Markov factor chains and path indexing.
//!
//! Stock node `(n, k)` carries the price `s0 * u_tilde^k * d_tilde^(n-k)`: `k` counts
//! up-moves. Paths at step `n` are bit strings of length `n` whose first move is the
//! most significant bit, so `idx * 2 + 1` is the up-extension of `idx` and the natural
//! integer order coincides with lexicographic order over `{d < u}`.

use crate::error::{MfeError, Result};

/// Default cap on the length of enumerated stock paths.
pub const DEFAULT_PATH_CAP: usize = 16;

/// Maximum tolerated drift of total probability mass before renormalisation fails.
pub const MASS_DRIFT_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub n_steps: usize,
    pub horizon: f64,
    pub dt: f64,
    pub rate: f64,
    pub beta: f64,
    pub s0: f64,
    pub u_tilde: f64,
    pub d_tilde: f64,
    /// Excess up return `u_tilde - beta`.
    pub u: f64,
    /// Excess down return `d_tilde - beta` (negative).
    pub d: f64,
    pub p_q: f64,
}

impl LatticeSpec {
    /// Lattice with explicit gross returns.
    pub fn new(
        n_steps: usize,
        horizon: f64,
        rate: f64,
        s0: f64,
        u_tilde: f64,
        d_tilde: f64,
    ) -> Result<Self> {
        if n_steps == 0 {
            return Err(MfeError::InvalidLattice("step count must be >= 1".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(MfeError::InvalidLattice(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(s0 > 0.0) || !s0.is_finite() {
            return Err(MfeError::InvalidLattice(format!(
                "initial price must be positive, got {s0}"
            )));
        }
        if !rate.is_finite() {
            return Err(MfeError::InvalidLattice("rate must be finite".into()));
        }
        let dt = horizon / n_steps as f64;
        let beta = (rate * dt).exp();
        let p_q = risk_neutral_prob_from(u_tilde, d_tilde, beta)?;
        Ok(Self {
            n_steps,
            horizon,
            dt,
            rate,
            beta,
            s0,
            u_tilde,
            d_tilde,
            u: u_tilde - beta,
            d: d_tilde - beta,
            p_q,
        })
    }

    /// CRR-style lattice with `u_tilde = 1/d_tilde = exp(sigma * sqrt(dt))`.
    pub fn from_sigma(
        n_steps: usize,
        horizon: f64,
        rate: f64,
        s0: f64,
        sigma: f64,
    ) -> Result<Self> {
        if n_steps == 0 {
            return Err(MfeError::InvalidLattice("step count must be >= 1".into()));
        }
        let dt = horizon / n_steps as f64;
        let u_tilde = (sigma * dt.sqrt()).exp();
        Self::new(n_steps, horizon, rate, s0, u_tilde, 1.0 / u_tilde)
    }

    pub fn node_price(&self, n: usize, k: usize) -> Result<f64> {
        if n > self.n_steps || k > n {
            return Err(MfeError::Range(format!(
                "node (n={n}, k={k}) outside lattice with N={}",
                self.n_steps
            )));
        }
        Ok(self.price_unchecked(n, k))
    }

    #[inline]
    pub(crate) fn price_unchecked(&self, n: usize, k: usize) -> f64 {
        self.s0 * self.u_tilde.powi(k as i32) * self.d_tilde.powi((n - k) as i32)
    }

    /// Risk-neutral up probability `(beta - d_tilde) / (u_tilde - d_tilde)`.
    pub fn risk_neutral_prob(&self) -> f64 {
        self.p_q
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Step whose time is closest to `t` (years).
    pub fn step_at(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }

    pub fn enumerate_stock_paths(
        &self,
        n: usize,
        cap: usize,
    ) -> Result<impl Iterator<Item = PathIndex>> {
        if n > cap || n >= 63 {
            return Err(MfeError::Capacity { step: n, cap });
        }
        if n > self.n_steps {
            return Err(MfeError::Range(format!("step {n} > N={}", self.n_steps)));
        }
        Ok((0..(1u64 << n)).map(move |bits| PathIndex { step: n, bits }))
    }
}

/// Risk-neutral probability for gross returns and per-period growth `beta`.
pub fn risk_neutral_prob_from(u_tilde: f64, d_tilde: f64, beta: f64) -> Result<f64> {
    if !(d_tilde > 0.0 && d_tilde < beta && beta < u_tilde && u_tilde.is_finite()) {
        return Err(MfeError::InvalidLattice(format!(
            "require 0 < d_tilde < beta < u_tilde, got d_tilde={d_tilde}, beta={beta}, u_tilde={u_tilde}"
        )));
    }
    Ok((beta - d_tilde) / (u_tilde - d_tilde))
}

/// A stock path of length `step`, encoded as a bit string (1 = up).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathIndex {
    pub step: usize,
    pub bits: u64,
}

impl PathIndex {
    pub fn root() -> Self {
        Self { step: 0, bits: 0 }
    }

    pub fn up_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn extend(&self, up: bool) -> Self {
        Self {
            step: self.step + 1,
            bits: (self.bits << 1) | u64::from(up),
        }
    }

    /// Moves in chronological order.
    pub fn moves(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.step).rev().map(move |i| (self.bits >> i) & 1 == 1)
    }

    pub fn label(&self) -> String {
        self.moves().map(|m| if m { 'u' } else { 'd' }).collect()
    }

    pub fn price(&self, lattice: &LatticeSpec) -> f64 {
        lattice.price_unchecked(self.step, self.up_count())
    }

    /// Prices `S_0..S_step` along the path.
    pub fn prices(&self, lattice: &LatticeSpec) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.step + 1);
        let mut k = 0;
        out.push(lattice.s0);
        for (i, up) in self.moves().enumerate() {
            k += usize::from(up);
            out.push(lattice.price_unchecked(i + 1, k));
        }
        out
    }

    pub fn running_max(&self, lattice: &LatticeSpec) -> f64 {
        self.prices(lattice).into_iter().fold(f64::MIN, f64::max)
    }
}

/// How stock states are indexed inside the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StockIndexing {
    /// Recombining nodes `k = 0..=n`.
    Node,
    /// Full path enumeration, `2^n` states at step `n`.
    Path,
}

impl StockIndexing {
    #[inline]
    pub fn count(self, n: usize) -> usize {
        match self {
            StockIndexing::Node => n + 1,
            StockIndexing::Path => 1usize << n,
        }
    }

    #[inline]
    pub fn up_child(self, idx: usize) -> usize {
        match self {
            StockIndexing::Node => idx + 1,
            StockIndexing::Path => idx * 2 + 1,
        }
    }

    #[inline]
    pub fn down_child(self, idx: usize) -> usize {
        match self {
            StockIndexing::Node => idx,
            StockIndexing::Path => idx * 2,
        }
    }

    #[inline]
    pub fn up_moves(self, idx: usize) -> usize {
        match self {
            StockIndexing::Node => idx,
            StockIndexing::Path => (idx as u64).count_ones() as usize,
        }
    }

    #[inline]
    pub fn price(self, lattice: &LatticeSpec, n: usize, idx: usize) -> f64 {
        lattice.price_unchecked(n, self.up_moves(idx))
    }
}

/// A finite-state Markov chain with per-step state sets and sparse transition rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    states: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    initial_law: Vec<f64>,
}

impl MarkovChain {
    /// Additive binomial chain: `y0 + (2j - n) * sigma * sqrt(dt)` at step `n`, up-prob `p_up`.
    pub fn additive_binomial(
        n_steps: usize,
        dt: f64,
        y0: f64,
        sigma: f64,
        p_up: f64,
    ) -> Result<Self> {
        let h = sigma * dt.sqrt();
        Self::binomial(n_steps, p_up, |n, j| y0 + (2.0 * j as f64 - n as f64) * h)
    }

    /// Multiplicative binomial chain: `z0 * u_z^j * d_z^(n-j)` with `u_z = 1/d_z = exp(sigma sqrt(dt))`.
    pub fn multiplicative_binomial(
        n_steps: usize,
        dt: f64,
        z0: f64,
        sigma: f64,
        p_up: f64,
    ) -> Result<Self> {
        let uz = (sigma * dt.sqrt()).exp();
        let dz = 1.0 / uz;
        Self::binomial(n_steps, p_up, |n, j| {
            z0 * uz.powi(j as i32) * dz.powi((n - j) as i32)
        })
    }

    fn binomial<F: Fn(usize, usize) -> f64>(n_steps: usize, p_up: f64, value: F) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_up) {
            return Err(MfeError::Domain(format!(
                "up probability {p_up} outside [0,1]"
            )));
        }
        let states = (0..=n_steps)
            .map(|n| (0..=n).map(|j| value(n, j)).collect())
            .collect();
        let transitions = (0..n_steps)
            .map(|n| {
                (0..=n)
                    .map(|j| {
                        let mut row = Vec::with_capacity(2);
                        if p_up < 1.0 {
                            row.push((j, 1.0 - p_up));
                        }
                        if p_up > 0.0 {
                            row.push((j + 1, p_up));
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            states,
            transitions,
            initial_law: vec![1.0],
        })
    }

    /// Time-homogeneous chain on a fixed state set (e.g. a regime-switching factor).
    pub fn homogeneous(
        n_steps: usize,
        states: Vec<f64>,
        matrix: Vec<Vec<f64>>,
        initial_law: Vec<f64>,
    ) -> Result<Self> {
        let per_step_states = vec![states; n_steps + 1];
        let per_step_matrices = vec![matrix; n_steps];
        Self::from_dense(per_step_states, per_step_matrices, initial_law)
    }

    /// General chain from dense per-step matrices. Validates stochasticity.
    pub fn from_dense(
        states: Vec<Vec<f64>>,
        matrices: Vec<Vec<Vec<f64>>>,
        initial_law: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() || matrices.len() + 1 != states.len() {
            return Err(MfeError::Input(format!(
                "chain needs N+1 state sets and N matrices, got {} and {}",
                states.len(),
                matrices.len()
            )));
        }
        check_law(&initial_law, states[0].len(), "initial law")?;
        let mut transitions = Vec::with_capacity(matrices.len());
        for (n, m) in matrices.iter().enumerate() {
            if m.len() != states[n].len() {
                return Err(MfeError::Input(format!(
                    "transition matrix at step {n} has {} rows, expected {}",
                    m.len(),
                    states[n].len()
                )));
            }
            let mut rows = Vec::with_capacity(m.len());
            for (i, row) in m.iter().enumerate() {
                check_law(
                    row,
                    states[n + 1].len(),
                    &format!("transition row {i} at step {n}"),
                )?;
                rows.push(
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(j, &p)| (j, p))
                        .collect(),
                );
            }
            transitions.push(rows);
        }
        Ok(Self {
            states,
            transitions,
            initial_law,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.transitions.len()
    }

    pub fn count(&self, n: usize) -> usize {
        self.states[n].len()
    }

    pub fn states(&self, n: usize) -> &[f64] {
        &self.states[n]
    }

    pub fn state(&self, n: usize, i: usize) -> f64 {
        self.states[n][i]
    }

    /// Nonzero transitions `(to, prob)` out of state `i` at step `n`.
    pub fn successors(&self, n: usize, i: usize) -> &[(usize, f64)] {
        &self.transitions[n][i]
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.initial_law
    }

    /// The common starting value when the initial law is a point mass.
    pub fn initial_value(&self) -> Option<f64> {
        let support: Vec<usize> = (0..self.initial_law.len())
            .filter(|&i| self.initial_law[i] > 0.0)
            .collect();
        (support.len() == 1).then(|| self.states[0][support[0]])
    }

    /// Push a law at step `n` forward one step, renormalising with the drift guard.
    pub fn push_forward(&self, n: usize, law: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.count(n + 1)];
        for (i, &m) in law.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for &(j, p) in self.successors(n, i) {
                out[j] += m * p;
            }
        }
        renormalize(&mut out)?;
        Ok(out)
    }

    /// Marginal law of the chain at step `n`.
    pub fn marginal(&self, n: usize) -> Result<Vec<f64>> {
        if n > self.n_steps() {
            return Err(MfeError::Range(format!(
                "step {n} > chain length {}",
                self.n_steps()
            )));
        }
        let mut law = self.initial_law.clone();
        for k in 0..n {
            law = self.push_forward(k, &law)?;
        }
        Ok(law)
    }

    /// All marginals `0..=N`.
    pub fn marginals(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        out.push(self.initial_law.clone());
        for k in 0..self.n_steps() {
            let next = self.push_forward(k, &out[k])?;
            out.push(next);
        }
        Ok(out)
    }
}

fn check_law(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(MfeError::Input(format!(
            "{what}: length {} != {len}",
            row.len()
        )));
    }
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(MfeError::Domain(format!(
            "{what}: entries must lie in [0,1]"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-14 {
        return Err(MfeError::Domain(format!("{what}: sums to {s}, not 1")));
    }
    Ok(())
}

/// Rescale `law` to unit mass; fails when the mass drifted by more than the guard.
pub fn renormalize(law: &mut [f64]) -> Result<()> {
    let s = crate::numerics::pairwise_sum(law);
    if (s - 1.0).abs() > MASS_DRIFT_GUARD {
        return Err(MfeError::Numerical(format!(
            "probability mass drifted to {s} before renormalisation"
        )));
    }
    for x in law.iter_mut() {
        *x /= s;
    }
    Ok(())
}
