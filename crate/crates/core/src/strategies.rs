//! Belief-update strategies.
//!
//! Every strategy is a private inference step followed by the shared
//! geometric aggregation over the in-neighbourhood. All arithmetic is done on
//! log-beliefs with max-subtraction normalization; the probability-space
//! functions below are thin wrappers around the same kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Belief, LikelihoodModel, Observation};
use crate::network::Network;
use crate::numeric::{log_add_exp, log_normalize, log_sum_exp};

/// Slack allowed when comparing `α` against `1/M`, so that `1.0 / M as f64`
/// is accepted.
const ALPHA_EDGE_TOL: f64 = 1e-12;

/// A tagged strategy configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Strategy {
    /// Equal-exit HMM inference with exit probability `alpha`.
    AlphaHmm { alpha: f64 },
    /// Full HMM prediction with a row-stochastic transition matrix.
    Hmm { transition: Vec<Vec<f64>> },
    /// Classical Bayes update.
    Bayes,
    /// Adaptive social learning with step size `delta`.
    Asl { delta: f64 },
    /// First-order expansion of the alpha-HMM log-ratio recursion.
    LinearizedAlphaHmm { alpha: f64 },
    /// `ψ ∝ μ^{1−δ₁} · L^{δ₂}`.
    Generalized { delta1: f64, delta2: f64 },
}

impl Strategy {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::AlphaHmm { .. } => "alpha-hmm",
            Self::Hmm { .. } => "hmm",
            Self::Bayes => "bayes",
            Self::Asl { .. } => "asl",
            Self::LinearizedAlphaHmm { .. } => "linearized-alpha-hmm",
            Self::Generalized { .. } => "generalized",
        }
    }

    /// Compact parameter description, e.g. `alpha=0.1`.
    pub fn param_label(&self) -> String {
        match self {
            Self::AlphaHmm { alpha } | Self::LinearizedAlphaHmm { alpha } => format!("alpha={alpha}"),
            Self::Hmm { transition } => format!("transition={transition:?}"),
            Self::Bayes => String::new(),
            Self::Asl { delta } => format!("delta={delta}"),
            Self::Generalized { delta1, delta2 } => format!("delta1={delta1};delta2={delta2}"),
        }
    }

    /// Equal-exit transition matrix: stay with `1 − h`, move to each other
    /// state with `h / (M − 1)`.
    pub fn equal_exit_transition(m: usize, h: f64) -> Vec<Vec<f64>> {
        let off = h / (m - 1) as f64;
        (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 - h } else { off }).collect())
            .collect()
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            Self::AlphaHmm { alpha } | Self::LinearizedAlphaHmm { alpha } => check_alpha(*alpha, m),
            Self::Hmm { transition } => check_transition(transition, m),
            Self::Bayes => Ok(()),
            Self::Asl { delta } => {
                if *delta > 0.0 && *delta <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("ASL delta must be in (0, 1], got {delta}")))
                }
            }
            Self::Generalized { delta1, delta2 } => {
                if !(0.0..=1.0).contains(delta1) {
                    return Err(Error::InvalidParameter(format!(
                        "delta1 must be in [0, 1], got {delta1}"
                    )));
                }
                if !(*delta2 >= 0.0 && delta2.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "delta2 must be >= 0, got {delta2}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Private inference on log-beliefs. Writes normalized `log ψ` into `out`.
    pub fn infer_log(&self, log_prior: &[f64], log_liks: &[f64], out: &mut [f64]) {
        let m = log_prior.len();
        match self {
            Self::AlphaHmm { alpha } => {
                let (log_keep, log_alpha) = alpha_mix_logs(*alpha, m);
                for i in 0..m {
                    out[i] = log_add_exp(log_keep + log_prior[i], log_alpha) + log_liks[i];
                }
            }
            Self::Hmm { transition } => {
                let mut terms = [0.0f64; 16];
                let mut heap;
                let terms: &mut [f64] = if m <= terms.len() {
                    &mut terms[..m]
                } else {
                    heap = vec![0.0; m];
                    &mut heap
                };
                for j in 0..m {
                    for n in 0..m {
                        let p = transition[n][j];
                        terms[n] = if p > 0.0 { p.ln() + log_prior[n] } else { f64::NEG_INFINITY };
                    }
                    out[j] = log_sum_exp(terms) + log_liks[j];
                }
            }
            Self::Bayes => weighted_log_sum(log_prior, 1.0, log_liks, 1.0, out),
            Self::Asl { delta } => weighted_log_sum(log_prior, 1.0 - delta, log_liks, *delta, out),
            Self::LinearizedAlphaHmm { alpha } => {
                let keep = (1.0 - alpha * m as f64).max(0.0);
                weighted_log_sum(log_prior, keep, log_liks, 1.0, out)
            }
            Self::Generalized { delta1, delta2 } => {
                weighted_log_sum(log_prior, 1.0 - delta1, log_liks, *delta2, out)
            }
        }
        log_normalize(out);
    }
}

fn check_alpha(alpha: f64, m: usize) -> Result<()> {
    let max = 1.0 / m as f64;
    if alpha > 0.0 && alpha <= max + ALPHA_EDGE_TOL {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha must be in (0, 1/M] = (0, {max}], got {alpha}"
        )))
    }
}

fn check_transition(p: &[Vec<f64>], m: usize) -> Result<()> {
    if p.len() != m || p.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter(format!("transition matrix must be {m}x{m}")));
    }
    for (i, row) in p.iter().enumerate() {
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "transition row {i} has entries outside [0, 1]"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "transition row {i} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// `(log(1 − αM), log α)` with the mixing weight clamped at zero.
fn alpha_mix_logs(alpha: f64, m: usize) -> (f64, f64) {
    let keep = (1.0 - alpha * m as f64).max(0.0);
    (keep.ln(), alpha.ln())
}

/// `out = a·x + b·y`, treating a zero coefficient as dropping the term so that
/// `0 · (−∞)` never appears.
fn weighted_log_sum(x: &[f64], a: f64, y: &[f64], b: f64, out: &mut [f64]) {
    for i in 0..out.len() {
        let xa = if a == 0.0 { 0.0 } else { a * x[i] };
        let yb = if b == 0.0 { 0.0 } else { b * y[i] };
        out[i] = xa + yb;
    }
}

fn prior_logs(prior: &Belief) -> Vec<f64> {
    prior.probs().iter().map(|p| p.ln()).collect()
}

fn check_lengths(prior: &Belief, log_liks: &[f64]) -> Result<()> {
    if prior.len() != log_liks.len() {
        return Err(Error::InvalidInput(format!(
            "prior has {} states, log-likelihood vector has {}",
            prior.len(),
            log_liks.len()
        )));
    }
    if log_liks.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidInput("log-likelihoods must be finite or -inf".into()));
    }
    Ok(())
}

fn run_inference(strategy: &Strategy, prior: &Belief, log_liks: &[f64]) -> Result<Belief> {
    check_lengths(prior, log_liks)?;
    strategy.validate(prior.len())?;
    let mut out = vec![0.0; prior.len()];
    strategy.infer_log(&prior_logs(prior), log_liks, &mut out);
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput(
            "posterior is undefined: every state has zero weight".into(),
        ));
    }
    Ok(Belief::from_log_weights(&out))
}

/// `ψ(θ_m) ∝ ((1 − αM)·μ(θ_m) + α)·L(θ_m)`.
pub fn infer_alpha_hmm(prior: &Belief, log_liks: &[f64], alpha: f64) -> Result<Belief> {
    run_inference(&Strategy::AlphaHmm { alpha }, prior, log_liks)
}

/// `ψ(θ_m) ∝ (Σ_n p_{nm} μ(θ_n))·L(θ_m)`.
pub fn infer_hmm(prior: &Belief, log_liks: &[f64], transition: &[Vec<f64>]) -> Result<Belief> {
    run_inference(
        &Strategy::Hmm {
            transition: transition.to_vec(),
        },
        prior,
        log_liks,
    )
}

/// `ψ(θ_m) ∝ μ(θ_m)^{1−δ₁}·L(θ_m)^{δ₂}`.
pub fn infer_generalized(prior: &Belief, log_liks: &[f64], delta1: f64, delta2: f64) -> Result<Belief> {
    run_inference(&Strategy::Generalized { delta1, delta2 }, prior, log_liks)
}

/// Geometric pooling for agent `k` of log-posteriors `log_psis[ℓ*m..(ℓ+1)*m]`.
/// Writes normalized log-beliefs into `out`.
pub fn aggregate_log(log_psis: &[f64], m: usize, network: &Network, agent: usize, out: &mut [f64]) {
    out.fill(0.0);
    for &(l, a) in network.neighborhood(agent) {
        let row = &log_psis[l * m..(l + 1) * m];
        for (o, v) in out.iter_mut().zip(row) {
            *o += a * v;
        }
    }
    log_normalize(out);
}

/// `μ_k(θ) ∝ exp(Σ_{ℓ∈N_k} a_{ℓk} log ψ_ℓ(θ))`.
pub fn aggregate_geometric(psis: &[Belief], network: &Network, agent: usize) -> Result<Belief> {
    if psis.len() != network.n_agents() {
        return Err(Error::InvalidInput(format!(
            "{} posteriors for {} agents",
            psis.len(),
            network.n_agents()
        )));
    }
    if agent >= psis.len() {
        return Err(Error::InvalidInput(format!("agent {agent} out of range")));
    }
    let m = psis[0].len();
    if psis.iter().any(|p| p.len() != m) {
        return Err(Error::InvalidInput("posteriors have different lengths".into()));
    }
    for &(l, _) in network.neighborhood(agent) {
        if !psis[l].is_strictly_positive() {
            return Err(Error::InvalidInput(format!(
                "posterior of agent {l} has a zero entry; its log is undefined"
            )));
        }
    }
    let logs: Vec<f64> = psis.iter().flat_map(|p| p.probs().iter().map(|v| v.ln())).collect();
    let mut out = vec![0.0; m];
    aggregate_log(&logs, m, network, agent, &mut out);
    Ok(Belief::from_log_weights(&out))
}

/// One synchronous round on flattened `N × M` log-beliefs.
///
/// All agents infer first, then all agents aggregate. `log_liks` holds
/// `log L_k(ξ_k|θ_m)` at `[k*M + m]`. `scratch` must have length `N*M`.
pub fn step_log(
    strategy: &Strategy,
    network: &Network,
    m: usize,
    log_mu: &mut [f64],
    log_liks: &[f64],
    scratch: &mut [f64],
) {
    let n = network.n_agents();
    for k in 0..n {
        let r = k * m..(k + 1) * m;
        strategy.infer_log(&log_mu[r.clone()], &log_liks[r.clone()], &mut scratch[r]);
    }
    for k in 0..n {
        aggregate_log(scratch, m, network, k, &mut log_mu[k * m..(k + 1) * m]);
    }
}

/// One synchronous round in probability space.
pub fn step(
    strategy: &Strategy,
    beliefs: &[Belief],
    observations: &[Observation],
    models: &LikelihoodModel,
    network: &Network,
) -> Result<Vec<Belief>> {
    let n = network.n_agents();
    if beliefs.len() != n || observations.len() != n || models.n_agents() != n {
        return Err(Error::InvalidInput(format!(
            "network has {n} agents but got {} beliefs, {} observations, {} likelihood models",
            beliefs.len(),
            observations.len(),
            models.n_agents()
        )));
    }
    let m = models.n_states();
    if beliefs.iter().any(|b| b.len() != m) {
        return Err(Error::InvalidInput(format!("beliefs must have {m} entries")));
    }
    strategy.validate(m)?;

    let mut log_mu: Vec<f64> = beliefs.iter().flat_map(|b| b.probs().iter().map(|p| p.ln())).collect();
    let mut log_liks = vec![0.0; n * m];
    for (k, obs) in observations.iter().enumerate() {
        models.log_likelihoods_into(k, *obs, &mut log_liks[k * m..(k + 1) * m])?;
    }
    let mut scratch = vec![0.0; n * m];
    step_log(strategy, network, m, &mut log_mu, &log_liks, &mut scratch);
    if let Some(k) = (0..n).find(|&k| scratch[k * m..(k + 1) * m].iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidInput(format!(
            "posterior of agent {k} has a zero entry; geometric aggregation is undefined"
        )));
    }
    Ok(log_mu.chunks(m).map(Belief::from_log_weights).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate, Topology};
    use approx::assert_abs_diff_eq;

    fn b(p: &[f64]) -> Belief {
        Belief::new(p.to_vec()).unwrap()
    }

    #[test]
    fn alpha_one_over_m_ignores_prior() {
        let ll = [0.3f64.ln(), 0.5f64.ln(), 0.2f64.ln()];
        let out = infer_alpha_hmm(&b(&[0.9, 0.05, 0.05]), &ll, 1.0 / 3.0).unwrap();
        assert_abs_diff_eq!(out.probs()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out.probs()[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out.probs()[2], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn alpha_hmm_symmetric_and_direct_examples() {
        let out = infer_alpha_hmm(&b(&[0.5, 0.5]), &[-1.0, -1.0], 0.3).unwrap();
        assert_abs_diff_eq!(out.probs()[0], 0.5, epsilon = 1e-15);

        let out = infer_alpha_hmm(&b(&[0.9, 0.1]), &[0.0, 0.0], 0.1).unwrap();
        assert_abs_diff_eq!(out.probs()[0], 0.82, epsilon = 1e-15);
        assert_abs_diff_eq!(out.probs()[1], 0.18, epsilon = 1e-15);
    }

    #[test]
    fn alpha_above_one_over_m_rejected() {
        let err = infer_alpha_hmm(&b(&[0.5, 0.5]), &[0.0, 0.0], 0.6).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
        assert!(infer_alpha_hmm(&b(&[0.5, 0.5]), &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn hmm_identity_is_bayes() {
        let prior = b(&[0.6, 0.3, 0.1]);
        let ll = [-0.2, -1.5, -0.7];
        let eye = Strategy::equal_exit_transition(3, 0.0);
        let hmm = infer_hmm(&prior, &ll, &eye).unwrap();
        let bayes = infer_generalized(&prior, &ll, 0.0, 1.0).unwrap();
        for (x, y) in hmm.probs().iter().zip(bayes.probs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        let direct: Vec<f64> = prior.probs().iter().zip(&ll).map(|(p, l)| p * l.exp()).collect();
        let s: f64 = direct.iter().sum();
        for (x, d) in hmm.probs().iter().zip(&direct) {
            assert_abs_diff_eq!(*x, d / s, epsilon = 1e-15);
        }
    }

    #[test]
    fn hmm_equal_exit_matches_alpha_hmm() {
        let prior = b(&[0.7, 0.2, 0.1]);
        let ll = [-3.0, -0.1, -2.2];
        let alpha = 0.07;
        let p = Strategy::equal_exit_transition(3, alpha * 2.0);
        let a = infer_alpha_hmm(&prior, &ll, alpha).unwrap();
        let h = infer_hmm(&prior, &ll, &p).unwrap();
        for (x, y) in a.probs().iter().zip(h.probs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn uniform_transition_erases_prior() {
        let p = vec![vec![1.0 / 3.0; 3]; 3];
        let ll = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let out = infer_hmm(&b(&[0.98, 0.01, 0.01]), &ll, &p).unwrap();
        assert_abs_diff_eq!(out.probs()[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn non_stochastic_transition_rejected() {
        let p = vec![vec![0.5, 0.4], vec![0.5, 0.5]];
        assert!(matches!(
            infer_hmm(&b(&[0.5, 0.5]), &[0.0, 0.0], &p),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn generalized_examples() {
        let out = infer_generalized(&b(&[0.8, 0.2]), &[0.0, 0.0], 0.5, 0.5).unwrap();
        let expected = 0.8f64.sqrt() / (0.8f64.sqrt() + 0.2f64.sqrt());
        assert_abs_diff_eq!(out.probs()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(out.probs()[0], 0.6667, epsilon = 1e-4);

        let ll = [0.25f64.ln(), 0.75f64.ln()];
        let out = infer_generalized(&b(&[0.99, 0.01]), &ll, 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(out.probs()[0], 0.0625 / 0.625, epsilon = 1e-15);
    }

    #[test]
    fn aggregation_examples() {
        let net = generate(&Topology::Full, 2, 0).unwrap();
        let mu = aggregate_geometric(&[b(&[0.8, 0.2]), b(&[0.2, 0.8])], &net, 0).unwrap();
        assert_abs_diff_eq!(mu.probs()[0], 0.5, epsilon = 1e-15);

        let same = b(&[0.3, 0.7]);
        let mu = aggregate_geometric(&[same.clone(), same.clone()], &net, 1).unwrap();
        assert_abs_diff_eq!(mu.probs()[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn aggregation_rejects_zero_posterior() {
        let net = generate(&Topology::Full, 2, 0).unwrap();
        let err = aggregate_geometric(&[b(&[1.0, 0.0]), b(&[0.5, 0.5])], &net, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn single_agent_step_is_inference_only() {
        let net = Network::from_rows(&[vec![1.0]]).unwrap();
        let models = LikelihoodModel::gaussian(vec![vec![0.0, 1.0]], 0.5).unwrap();
        let prior = b(&[0.6, 0.4]);
        let obs = Observation::Real(0.3);
        let s = Strategy::AlphaHmm { alpha: 0.2 };
        let stepped = step(&s, std::slice::from_ref(&prior), &[obs], &models, &net).unwrap();
        let mut ll = vec![0.0; 2];
        models.log_likelihoods_into(0, obs, &mut ll).unwrap();
        let inferred = infer_alpha_hmm(&prior, &ll, 0.2).unwrap();
        for (x, y) in stepped[0].probs().iter().zip(inferred.probs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_agents_stay_identical() {
        let net = generate(&Topology::Full, 3, 0).unwrap();
        let models = LikelihoodModel::gaussian(vec![vec![0.0, 1.0]; 3], 1.0).unwrap();
        let beliefs = vec![Belief::uniform(2); 3];
        let obs = vec![Observation::Real(0.4); 3];
        let out = step(&Strategy::AlphaHmm { alpha: 0.1 }, &beliefs, &obs, &models, &net).unwrap();
        for w in out.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn linearized_is_generalized_with_unit_likelihood_weight() {
        let prior = b(&[0.5, 0.3, 0.2]);
        let ll = [-0.4, -1.0, -2.0];
        let mut a = vec![0.0; 3];
        let mut g = vec![0.0; 3];
        let lp: Vec<f64> = prior.probs().iter().map(|p| p.ln()).collect();
        Strategy::LinearizedAlphaHmm { alpha: 0.1 }.infer_log(&lp, &ll, &mut a);
        Strategy::Generalized { delta1: 0.3, delta2: 1.0 }.infer_log(&lp, &ll, &mut g);
        for (x, y) in a.iter().zip(&g) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-14);
        }
    }
}
