//! Log-belief-ratio dynamics of the diffusion alpha-HMM.
//!
//! With `θ₀` the designated true state, agent `k` tracks
//! `x_k(θ_m) = log μ_k(θ_m) − log μ_k(θ₀)` for the `M − 1` wrong states. One
//! round of the strategy maps these ratios through the nonlinear map
//!
//! ```text
//! F_m(x) = log [ (1−αM)e^{x_m} + α + α Σ_n e^{x_n} ] − log [ 1−αM+α + α Σ_n e^{x_n} ]
//! ```
//!
//! followed by the network average. Replacing the random log-likelihood
//! ratios by their means `−d` gives a deterministic reference system whose
//! unique fixed point controls the steady-state error probability.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Belief, IdentifiabilityTable};
use crate::network::Network;
use crate::numeric::{log_add_exp, log_sum_exp};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

/// Sampling box for contraction certificates: `[−20, 0)^{M−1}`.
const CERT_LOW: f64 = -20.0;

/// Precomputed logs of the constants appearing in `F`.
#[derive(Debug, Clone, Copy)]
struct MapConsts {
    log_keep: f64,
    log_alpha: f64,
    log_gamma0: f64,
}

impl MapConsts {
    fn new(alpha: f64, m_states: usize) -> Self {
        let keep = (1.0 - alpha * m_states as f64).max(0.0);
        Self {
            log_keep: keep.ln(),
            log_alpha: alpha.ln(),
            log_gamma0: (keep + alpha).ln(),
        }
    }

    /// `(log Γ(x) − c, log Σ e^{x_n} − c)` with `c = max(0, max_n x_n)`.
    fn log_gamma(&self, x: &[f64], c: f64) -> (f64, f64) {
        let s = log_sum_exp(x) - c;
        (log_add_exp(self.log_gamma0 - c, self.log_alpha + s), s)
    }

    /// `log Λ_m(x) − c`, given the shifted log-sum from [`Self::log_gamma`].
    fn log_lambda(&self, x_m: f64, c: f64, log_sum: f64) -> f64 {
        log_add_exp(
            log_add_exp(self.log_keep + (x_m - c), self.log_alpha - c),
            self.log_alpha + log_sum,
        )
    }
}

/// `log |e^x − 1| − c`, without overflow for large `x`.
fn log_abs_expm1_shifted(x: f64, c: f64) -> f64 {
    if x > 1.0 {
        (x - c) + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().abs().ln() - c
    }
}

/// Writes `F(x)` into `out`.
///
/// Uses `Λ_m − Γ = (1−αM)(e^{x_m} − 1)`, so `F_m = log1p((1−αM)(e^{x_m} − 1)/Γ)`
/// with `log Γ` computed after factoring out the largest exponent. This keeps
/// the sign of `F_m` exact and avoids both overflow and cancellation.
fn f_map_into(x: &[f64], c: &MapConsts, out: &mut [f64]) {
    let shift = x.iter().fold(0.0_f64, |a, &v| a.max(v));
    let (log_gamma, _) = c.log_gamma(x, shift);
    for (o, &xm) in out.iter_mut().zip(x) {
        let r = (c.log_keep + log_abs_expm1_shifted(xm, shift) - log_gamma).exp();
        *o = if xm < 0.0 { (-r).ln_1p() } else { r.ln_1p() };
    }
}

/// The nonlinear map `F: ℝ^{M−1} → ℝ^{M−1}`.
pub fn f_map(x: &[f64], alpha: f64, m_states: usize) -> Vec<f64> {
    debug_assert_eq!(x.len() + 1, m_states);
    let mut out = vec![0.0; x.len()];
    f_map_into(x, &MapConsts::new(alpha, m_states), &mut out);
    out
}

/// `sup |F_m| = log((1 − αM + α) / α)`.
pub fn f_range_bound(alpha: f64, m_states: usize) -> f64 {
    ((1.0 - alpha * m_states as f64 + alpha) / alpha).ln()
}

/// Closed-form Jacobian `∂F_m/∂x_ℓ`:
///
/// * off-diagonal: `α e^{x_ℓ}/Λ_m − α e^{x_ℓ}/Γ`
/// * diagonal: `(1−αM+α) e^{x_m}/Λ_m − α e^{x_m}/Γ`
pub fn f_jacobian(x: &[f64], alpha: f64, m_states: usize) -> Array2<f64> {
    let c = MapConsts::new(alpha, m_states);
    let d = x.len();
    let (log_gamma, s) = c.log_gamma(x, 0.0);
    let mut jac = Array2::zeros((d, d));
    for m in 0..d {
        let log_lambda = c.log_lambda(x[m], 0.0, s);
        for l in 0..d {
            let shared = (c.log_alpha + x[l] - log_gamma).exp();
            jac[[m, l]] = if l == m {
                (c.log_gamma0 + x[m] - log_lambda).exp() - shared
            } else {
                (c.log_alpha + x[l] - log_lambda).exp() - shared
            };
        }
    }
    jac
}

/// Row sums of the Jacobian, `(1−αM+α)/Γ − α/Λ_m`.
pub fn f_jacobian_row_sums(x: &[f64], alpha: f64, m_states: usize) -> Vec<f64> {
    let c = MapConsts::new(alpha, m_states);
    let (log_gamma, s) = c.log_gamma(x, 0.0);
    x.iter()
        .map(|&xm| (c.log_gamma0 - log_gamma).exp() - (c.log_alpha - c.log_lambda(xm, 0.0, s)).exp())
        .collect()
}

/// `N × (M−1)` matrix of log-belief ratios against the true state.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioState {
    pub x: Array2<f64>,
}

impl LogRatioState {
    pub fn zeros(n: usize, m_states: usize) -> Self {
        Self {
            x: Array2::zeros((n, m_states - 1)),
        }
    }

    /// Ratios from normalized log-beliefs laid out as `[k*M + m]`.
    pub fn from_log_beliefs(log_mu: &[f64], m_states: usize, true_state: usize) -> Self {
        let n = log_mu.len() / m_states;
        let mut x = Array2::zeros((n, m_states - 1));
        for k in 0..n {
            let row = &log_mu[k * m_states..(k + 1) * m_states];
            for (j, m) in (0..m_states).filter(|&m| m != true_state).enumerate() {
                x[[k, j]] = row[m] - row[true_state];
            }
        }
        Self { x }
    }

    /// Ratios from probability beliefs, with the diagnostic log floor.
    pub fn from_beliefs(beliefs: &[Belief], true_state: usize) -> Self {
        let m = beliefs[0].len();
        let logs: Vec<f64> = beliefs.iter().flat_map(|b| b.floored_logs()).collect();
        Self::from_log_beliefs(&logs, m, true_state)
    }
}

/// `x'_{k,m} = Σ_ℓ a_{ℓk} (F_m(x_ℓ) + drive_{ℓ,m})`.
fn propagate(x: &Array2<f64>, drive: &Array2<f64>, network: &Network, c: &MapConsts) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut y = Array2::zeros((n, d));
    let mut buf = vec![0.0; d];
    for l in 0..n {
        let row = x.row(l);
        let xs = row.as_slice().expect("standard layout");
        f_map_into(xs, c, &mut buf);
        for j in 0..d {
            y[[l, j]] = buf[j] + drive[[l, j]];
        }
    }
    let mut out = Array2::zeros((n, d));
    for k in 0..n {
        for &(l, a) in network.neighborhood(k) {
            for j in 0..d {
                out[[k, j]] += a * y[[l, j]];
            }
        }
    }
    out
}

/// One round of the stochastic log-ratio recursion given the realized
/// log-likelihood ratios `log L_ℓ(ξ_ℓ|θ_m) − log L_ℓ(ξ_ℓ|θ₀)`.
pub fn log_ratio_step(
    x: &LogRatioState,
    log_lik_ratios: &Array2<f64>,
    network: &Network,
    alpha: f64,
) -> LogRatioState {
    let m_states = x.x.ncols() + 1;
    LogRatioState {
        x: propagate(&x.x, log_lik_ratios, network, &MapConsts::new(alpha, m_states)),
    }
}

/// Deterministic reference system driven by `−d`.
#[derive(Debug, Clone)]
pub struct ReferenceSystem {
    network: Network,
    d: Array2<f64>,
    alpha: f64,
    m_states: usize,
}

impl ReferenceSystem {
    pub fn new(network: Network, table: &IdentifiabilityTable, alpha: f64) -> Result<Self> {
        let n = network.n_agents();
        if table.n_agents() != n {
            return Err(Error::InvalidInput(format!(
                "identifiability table has {} agents, network has {n}",
                table.n_agents()
            )));
        }
        let d = Array2::from_shape_fn((n, table.n_wrong()), |(k, j)| table.d[k][j]);
        Self::from_matrix(network, d, alpha)
    }

    /// `d` given directly as an `N × (M−1)` matrix.
    pub fn from_matrix(network: Network, d: Array2<f64>, alpha: f64) -> Result<Self> {
        let (n, w) = d.dim();
        if n != network.n_agents() {
            return Err(Error::InvalidInput(format!(
                "d has {n} rows, network has {} agents",
                network.n_agents()
            )));
        }
        if w == 0 {
            return Err(Error::InvalidInput("need at least one wrong state".into()));
        }
        let m_states = w + 1;
        if !(alpha > 0.0 && alpha < 1.0 / m_states as f64) {
            return Err(Error::InvalidParameter(format!(
                "reference system needs 0 < alpha < 1/M = {}, got {alpha}",
                1.0 / m_states as f64
            )));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("identifiability entries must be finite".into()));
        }
        Ok(Self {
            network,
            d,
            alpha,
            m_states,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn d(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m_states(&self) -> usize {
        self.m_states
    }

    /// `Σ_ℓ a_{ℓk} d_ℓ(θ_m)` for every agent and wrong state.
    pub fn neighborhood_identifiability(&self) -> Array2<f64> {
        let (n, w) = self.d.dim();
        Array2::from_shape_fn((n, w), |(k, j)| {
            self.network
                .neighborhood(k)
                .iter()
                .map(|&(l, a)| a * self.d[[l, j]])
                .sum()
        })
    }
}

/// `x̂'_{k,m} = Σ_ℓ a_{ℓk} (F_m(x̂_ℓ) − d_ℓ(θ_m))`.
pub fn reference_step(x: &Array2<f64>, system: &ReferenceSystem) -> Array2<f64> {
    let drive = system.d.mapv(|v| -v);
    propagate(x, &drive, &system.network, &MapConsts::new(system.alpha, system.m_states))
}

/// Converged fixed point of the reference system.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub x_inf: Array2<f64>,
    /// `max_{k,m} x̂^∞_k(θ_m)`.
    pub x_bar_inf: f64,
    pub iterations: usize,
    pub residual: f64,
    /// `−Σ_ℓ a_{ℓk} d_ℓ(θ_m) − x̂^∞_k(θ_m)`; strictly positive when the
    /// fixed-point bound holds.
    pub margins: Array2<f64>,
}

impl FixedPoint {
    pub fn bound_holds(&self) -> bool {
        self.margins.iter().all(|v| *v > 0.0)
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Plain iteration of the reference map until `‖x_i − x_{i−1}‖∞ < tol`.
pub fn solve_fixed_point(
    system: &ReferenceSystem,
    x0: &Array2<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    if x0.dim() != system.d.dim() {
        return Err(Error::InvalidInput(format!(
            "initial state has shape {:?}, expected {:?}",
            x0.dim(),
            system.d.dim()
        )));
    }
    let consts = MapConsts::new(system.alpha, system.m_states);
    let drive = system.d.mapv(|v| -v);
    let mut x = x0.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = propagate(&x, &drive, &system.network, &consts);
        residual = next
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if residual < tol {
            let bound = system.neighborhood_identifiability();
            let margins = &bound.mapv(|v| -v) - &x;
            let x_bar_inf = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Ok(FixedPoint {
                x_inf: x,
                x_bar_inf,
                iterations: it,
                residual,
                margins,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Solver with the default start (zeros), tolerance and iteration cap.
pub fn solve_fixed_point_default(system: &ReferenceSystem) -> Result<FixedPoint> {
    solve_fixed_point(system, &Array2::zeros(system.d.dim()), DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

/// A sampled pair that broke the contraction bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionWitness {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub samples: usize,
    /// Coincident pairs, which carry no information.
    pub skipped: usize,
    pub max_ratio: f64,
    /// `1 − α`.
    pub bound: f64,
    pub violation: Option<ContractionWitness>,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Ratio `‖F(x) − F(x')‖∞ / ‖x − x'‖∞`, or `None` for coincident points.
pub fn contraction_ratio(x: &[f64], x_prime: &[f64], alpha: f64, m_states: usize) -> Option<f64> {
    let dx = x
        .iter()
        .zip(x_prime)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if dx == 0.0 {
        return None;
    }
    let fx = f_map(x, alpha, m_states);
    let fy = f_map(x_prime, alpha, m_states);
    let df = fx
        .iter()
        .zip(&fy)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Some(df / dx)
}

/// Monte Carlo check that `F` contracts the negative orthant at rate `1 − α`.
/// Violations are reported with the first witness, not raised.
pub fn contraction_certificate(alpha: f64, m_states: usize, samples: usize, seed: u64) -> Result<ContractionReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0 / m_states as f64) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1/M]")));
    }
    let bound = 1.0 - alpha;
    let dim = m_states - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ContractionReport {
        samples,
        skipped: 0,
        max_ratio: 0.0,
        bound,
        violation: None,
    };
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(CERT_LOW..0.0)).collect()
    };
    for _ in 0..samples {
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        match contraction_ratio(&x, &y, alpha, m_states) {
            None => report.skipped += 1,
            Some(r) => {
                report.max_ratio = report.max_ratio.max(r);
                if r > bound && report.violation.is_none() {
                    report.violation = Some(ContractionWitness {
                        x,
                        x_prime: y,
                        ratio: r,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Certificate for the system's own `α` and `M`.
pub fn system_contraction_certificate(system: &ReferenceSystem, samples: usize, seed: u64) -> Result<ContractionReport> {
    contraction_certificate(system.alpha, system.m_states, samples, seed)
}

/// Steady-state error-probability bound `C / (−α x̄^∞)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBoundReport {
    /// Every neighbourhood identifiability exceeds `C`.
    pub condition_holds: bool,
    pub min_neighborhood_identifiability: f64,
    pub c: f64,
    pub x_bar_inf: f64,
    pub bound: f64,
    /// `bound ≥ 1`: true but uninformative.
    pub vacuous: bool,
}

pub fn theorem2_bound(system: &ReferenceSystem, c: f64) -> Result<ErrorBoundReport> {
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter(format!("C must be >= 0, got {c}")));
    }
    let fp = solve_fixed_point_default(system)?;
    let nbr = system.neighborhood_identifiability();
    let min_nbr = nbr.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = if c == 0.0 { 0.0 } else { c / (-system.alpha * fp.x_bar_inf) };
    Ok(ErrorBoundReport {
        condition_holds: nbr.iter().all(|v| *v > c),
        min_neighborhood_identifiability: min_nbr,
        c,
        x_bar_inf: fp.x_bar_inf,
        bound,
        vacuous: !(bound < 1.0),
    })
}
