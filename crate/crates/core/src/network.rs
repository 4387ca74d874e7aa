//! Combination matrices over the agent graph.
//!
//! `A = [a_{ℓk}]` is left-stochastic: column `k` holds the weights agent `k`
//! puts on its in-neighbours `ℓ`. Primitivity is certified by strong
//! connectivity of the support graph plus at least one self-loop.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const COLUMN_SUM_TOL: f64 = 1e-12;
pub const PERRON_STEP_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITERS: usize = 100_000;

/// Probability that a non-skeleton edge is added by the random generator.
const EXTRA_EDGE_PROB: f64 = 0.3;

/// Outcome of each structural check on a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    pub nonnegative: bool,
    pub left_stochastic: bool,
    pub strongly_connected: bool,
    pub has_self_loop: bool,
}

impl Diagnostics {
    pub fn passes(&self) -> bool {
        self.nonnegative && self.left_stochastic && self.strongly_connected && self.has_self_loop
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.nonnegative {
            out.push("weights must lie in [0, 1]");
        }
        if !self.left_stochastic {
            out.push("every column must sum to 1");
        }
        if !self.strongly_connected {
            out.push("support graph is not strongly connected");
        }
        if !self.has_self_loop {
            out.push("no agent has a self-loop");
        }
        out
    }
}

/// Runs every check on a row-major matrix `rows[ℓ][k] = a_{ℓk}`.
pub fn validate(rows: &[Vec<f64>]) -> Result<Diagnostics> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("weight matrix is empty".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!(
            "weight matrix is not square: row {bad} has {} entries, expected {n}",
            rows[bad].len()
        )));
    }
    let nonnegative = rows
        .iter()
        .flatten()
        .all(|a| a.is_finite() && (0.0..=1.0).contains(a));
    let left_stochastic =
        (0..n).all(|k| ((0..n).map(|l| rows[l][k]).sum::<f64>() - 1.0).abs() <= COLUMN_SUM_TOL);
    let has_self_loop = (0..n).any(|k| rows[k][k] > 0.0);
    let strongly_connected = is_strongly_connected(n, |l, k| rows[l][k] > 0.0);
    Ok(Diagnostics {
        nonnegative,
        left_stochastic,
        strongly_connected,
        has_self_loop,
    })
}

/// Forward and backward reachability from node 0 on the edge set `ℓ → k`.
fn is_strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let e = if forward { edge(u, v) } else { edge(v, u) };
                if e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// A validated left-stochastic combination matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    weights: Array2<f64>,
    /// Nonzero `(ℓ, a_{ℓk})` pairs per column `k`.
    neighborhoods: Vec<Vec<(usize, f64)>>,
}

impl Network {
    /// Validates and wraps a row-major matrix `rows[ℓ][k] = a_{ℓk}`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let diag = validate(rows)?;
        if !diag.passes() {
            return Err(Error::InvalidInput(format!(
                "weight matrix fails validation: {}",
                diag.failures().join("; ")
            )));
        }
        let n = rows.len();
        let weights = Array2::from_shape_fn((n, n), |(l, k)| rows[l][k]);
        Ok(Self::from_validated(weights))
    }

    fn from_validated(weights: Array2<f64>) -> Self {
        let n = weights.nrows();
        let neighborhoods = (0..n)
            .map(|k| {
                (0..n)
                    .filter(|&l| weights[[l, k]] > 0.0)
                    .map(|l| (l, weights[[l, k]]))
                    .collect()
            })
            .collect();
        Self {
            weights,
            neighborhoods,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[[from, to]]
    }

    /// In-neighbours `ℓ ∈ N_k` of agent `k` with their weights.
    pub fn neighborhood(&self, k: usize) -> &[(usize, f64)] {
        &self.neighborhoods[k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        validate(&self.rows()).expect("square by construction")
    }

    /// `Σ_ℓ a_{ℓk} v_ℓ` for agent `k`.
    pub fn average(&self, k: usize, values: &[f64]) -> f64 {
        self.neighborhoods[k]
            .iter()
            .map(|&(l, a)| a * values[l])
            .sum()
    }

    /// Perron vector by power iteration on `A`.
    pub fn perron(&self) -> Result<PerronVector> {
        let n = self.n_agents();
        let mut pi = Array1::from_elem(n, 1.0 / n as f64);
        let mut last_change = f64::INFINITY;
        for _ in 0..PERRON_MAX_ITERS {
            let mut next = self.weights.dot(&pi);
            let s = next.sum();
            next /= s;
            last_change = next
                .iter()
                .zip(pi.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if last_change < PERRON_STEP_TOL {
                return Ok(PerronVector { pi: pi.to_vec() });
            }
        }
        Err(Error::NonConvergence {
            iterations: PERRON_MAX_ITERS,
            residual: last_change,
        })
    }
}

/// Positive eigenvector `Aπ = π` normalized to sum one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerronVector {
    pub pi: Vec<f64>,
}

impl PerronVector {
    /// `‖Aπ − π‖∞`.
    pub fn residual(&self, network: &Network) -> f64 {
        let pi = Array1::from(self.pi.clone());
        let api = network.weights().dot(&pi);
        api.iter()
            .zip(&self.pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Topology recipes for [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    /// Uniform weights `1/n` everywhere.
    Full,
    /// Shuffled Hamiltonian cycle plus random extra edges, random weights.
    RandomStronglyConnected,
    /// Directed ring `k-1 → k` with weight 1/2 and self-weight 1/2.
    Ring,
    /// Row-major `a_{ℓk}` supplied by the caller.
    Explicit(Vec<Vec<f64>>),
}

/// Builds a network; deterministic in `(topology, n, seed)`.
pub fn generate(topology: &Topology, n: usize, seed: u64) -> Result<Network> {
    if let Topology::Explicit(rows) = topology {
        return Network::from_rows(rows);
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 agents, got {n}")));
    }
    let weights = match topology {
        Topology::Full => Array2::from_elem((n, n), 1.0 / n as f64),
        Topology::Ring => {
            let mut w = Array2::zeros((n, n));
            for k in 0..n {
                w[[k, k]] = 0.5;
                w[[(k + n - 1) % n, k]] = 0.5;
            }
            w
        }
        Topology::RandomStronglyConnected => random_strongly_connected(n, seed),
        Topology::Explicit(_) => unreachable!(),
    };
    Ok(Network::from_validated(weights))
}

fn random_strongly_connected(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut support = Array2::from_elem((n, n), false);
    for i in 0..n {
        support[[order[i], order[(i + 1) % n]]] = true;
    }
    for l in 0..n {
        for k in 0..n {
            if !support[[l, k]] && rng.random::<f64>() < EXTRA_EDGE_PROB {
                support[[l, k]] = true;
            }
        }
    }
    support[[0, 0]] = true;

    let mut w = Array2::zeros((n, n));
    for k in 0..n {
        for l in 0..n {
            if support[[l, k]] {
                w[[l, k]] = rng.random_range(0.1..1.0);
            }
        }
        let s: f64 = w.column(k).sum();
        w.column_mut(k).mapv_inplace(|a| a / s);
    }
    w
}
