//! State spaces, beliefs, observation models and the information quantities
//! derived from them (KL divergence, identifiability, the log-likelihood
//! ratio bound).
//!
//! Two observation families are supported:
//!
//! | Family | Likelihood `L_k(ξ|θ)` | KL |
//! |--------|------------------------|----|
//! | Gaussian | `N(mean[k][θ], σ²)` | closed form |
//! | Finite alphabet | mass table `mass[k][θ][ξ]` | exact sum |

use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Smallest admissible likelihood mass entry.
pub const MIN_MASS: f64 = 1e-12;

/// Tolerance on probability vectors summing to one.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Floor applied to beliefs before taking logs in diagnostics.
pub const DIAGNOSTIC_FLOOR: f64 = 1e-300;

/// Ordered set of candidate states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSpace {
    labels: Vec<String>,
    values: Option<Vec<f64>>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>, values: Option<Vec<f64>>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "state space needs at least 2 states, got {}",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidInput(format!("duplicate state label {l:?}")));
            }
        }
        if let Some(v) = &values {
            if v.len() != labels.len() {
                return Err(Error::InvalidInput(format!(
                    "{} state values for {} labels",
                    v.len(),
                    labels.len()
                )));
            }
        }
        Ok(Self { labels, values })
    }

    /// States labelled by their numeric values, e.g. `{0, 1, 2}`.
    pub fn numeric(values: &[f64]) -> Result<Self> {
        Self::new(
            values.iter().map(|v| format!("{v}")).collect(),
            Some(values.to_vec()),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }
}

/// An agent's probability vector over the states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput("belief needs at least 2 entries".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "belief entries must be finite and nonnegative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "belief sums to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// A valid initial belief: on the simplex and strictly positive.
    pub fn initial(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| *p <= 0.0) {
            return Err(Error::InvalidInput(
                "initial beliefs must be strictly positive".into(),
            ));
        }
        Self::new(probs)
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            probs: vec![1.0 / m as f64; m],
        }
    }

    /// Builds a belief from normalized or unnormalized log weights.
    pub fn from_log_weights(log_weights: &[f64]) -> Self {
        let mut probs = vec![0.0; log_weights.len()];
        crate::numeric::softmax_into(log_weights, &mut probs);
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Log-probabilities with the diagnostic floor applied.
    pub fn floored_logs(&self) -> Vec<f64> {
        self.probs
            .iter()
            .map(|p| p.max(DIAGNOSTIC_FLOOR).ln())
            .collect()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }
}

/// A single private signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Real(f64),
    Symbol(usize),
}

impl Observation {
    /// Stable bit pattern used for stream digests.
    pub fn bits(&self) -> u64 {
        match *self {
            Observation::Real(x) => x.to_bits(),
            Observation::Symbol(s) => s as u64 ^ 0x8000_0000_0000_0000,
        }
    }
}

/// A single observation distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Gaussian { mean: f64, sigma: f64 },
    Categorical(Vec<f64>),
}

fn gaussian_log_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

fn check_pmf(row: &[f64], min_entry: f64, what: &str) -> Result<()> {
    if row.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: empty mass row")));
    }
    if row.iter().any(|p| !p.is_finite() || *p < min_entry) {
        return Err(Error::InvalidInput(format!(
            "{what}: mass entries must be >= {min_entry:e}, got {row:?}"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "{what}: mass row sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// `D_KL(p ‖ q)` in nats.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    match (p, q) {
        (
            Distribution::Gaussian { mean: m1, sigma: s1 },
            Distribution::Gaussian { mean: m2, sigma: s2 },
        ) => {
            if *s1 <= 0.0 || *s2 <= 0.0 {
                return Err(Error::InvalidInput("gaussian sigma must be > 0".into()));
            }
            let dm = m1 - m2;
            if s1 == s2 {
                Ok(dm * dm / (2.0 * s1 * s1))
            } else {
                Ok((s2 / s1).ln() + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5)
            }
        }
        (Distribution::Categorical(p), Distribution::Categorical(q)) => {
            if p.len() != q.len() {
                return Err(Error::InvalidInput(format!(
                    "alphabet sizes differ: {} vs {}",
                    p.len(),
                    q.len()
                )));
            }
            let mut kl = 0.0;
            for (&pi, &qi) in p.iter().zip(q) {
                if pi > 0.0 {
                    if qi <= 0.0 {
                        return Ok(f64::INFINITY);
                    }
                    kl += pi * (pi / qi).ln();
                }
            }
            // Rounding can push an exact zero slightly negative.
            Ok(kl.max(0.0))
        }
        _ => Err(Error::InvalidInput(
            "cannot compare gaussian and categorical distributions".into(),
        )),
    }
}

/// Per-agent likelihood families `L_k(ξ|θ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodModel {
    /// `means[k][m]` with one shared standard deviation.
    Gaussian { means: Vec<Vec<f64>>, sigma: f64 },
    /// `masses[k][m][ξ]`, strictly positive rows.
    Finite { masses: Vec<Vec<Vec<f64>>> },
}

impl LikelihoodModel {
    pub fn gaussian(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        check_rectangular(&means, "likelihood means")?;
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("likelihood means must be finite".into()));
        }
        Ok(Self::Gaussian { means, sigma })
    }

    pub fn finite(masses: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        check_rectangular(&masses, "likelihood mass tables")?;
        let alphabet = masses[0][0].len();
        for (k, agent) in masses.iter().enumerate() {
            for (m, row) in agent.iter().enumerate() {
                if row.len() != alphabet {
                    return Err(Error::InvalidInput(format!(
                        "agent {k} state {m}: alphabet size {} differs from {alphabet}",
                        row.len()
                    )));
                }
                check_pmf(row, MIN_MASS, &format!("agent {k} state {m}"))?;
            }
        }
        Ok(Self::Finite { masses })
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Self::Gaussian { means, .. } => means.len(),
            Self::Finite { masses } => masses.len(),
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            Self::Gaussian { means, .. } => means[0].len(),
            Self::Finite { masses } => masses[0].len(),
        }
    }

    pub fn is_finite_alphabet(&self) -> bool {
        matches!(self, Self::Finite { .. })
    }

    pub fn distribution(&self, agent: usize, state: usize) -> Distribution {
        match self {
            Self::Gaussian { means, sigma } => Distribution::Gaussian {
                mean: means[agent][state],
                sigma: *sigma,
            },
            Self::Finite { masses } => Distribution::Categorical(masses[agent][state].clone()),
        }
    }

    /// Same family with a different shared sigma. Finite models are rejected.
    pub fn with_sigma(&self, new_sigma: f64) -> Result<Self> {
        match self {
            Self::Gaussian { means, .. } => Self::gaussian(means.clone(), new_sigma),
            Self::Finite { .. } => Err(Error::UnsupportedModel(
                "sigma only applies to gaussian likelihoods".into(),
            )),
        }
    }

    /// `log L_agent(obs | state)` in nats.
    pub fn eval_log_likelihood(&self, agent: usize, state: usize, obs: Observation) -> Result<f64> {
        if agent >= self.n_agents() || state >= self.n_states() {
            return Err(Error::InvalidInput(format!(
                "agent {agent} / state {state} out of range"
            )));
        }
        match (self, obs) {
            (Self::Gaussian { means, sigma }, Observation::Real(x)) => {
                Ok(gaussian_log_density(x, means[agent][state], *sigma))
            }
            (Self::Finite { masses }, Observation::Symbol(s)) => {
                let row = &masses[agent][state];
                row.get(s).map(|p| p.ln()).ok_or_else(|| {
                    Error::Domain(format!("symbol {s} outside alphabet of size {}", row.len()))
                })
            }
            (Self::Gaussian { .. }, Observation::Symbol(s)) => Err(Error::Domain(format!(
                "symbol {s} given to a gaussian likelihood"
            ))),
            (Self::Finite { .. }, Observation::Real(x)) => Err(Error::Domain(format!(
                "real value {x} given to a finite-alphabet likelihood"
            ))),
        }
    }

    /// Fills `out[m] = log L_agent(obs | θ_m)` for every state.
    pub fn log_likelihoods_into(&self, agent: usize, obs: Observation, out: &mut [f64]) -> Result<()> {
        match (self, obs) {
            (Self::Gaussian { means, sigma }, Observation::Real(x)) => {
                let norm = -sigma.ln() - 0.5 * (2.0 * PI).ln();
                let inv = 1.0 / sigma;
                for (o, &mu) in out.iter_mut().zip(&means[agent]) {
                    let z = (x - mu) * inv;
                    *o = -0.5 * z * z + norm;
                }
                Ok(())
            }
            _ => {
                for (m, o) in out.iter_mut().enumerate() {
                    *o = self.eval_log_likelihood(agent, m, obs)?;
                }
                Ok(())
            }
        }
    }
}

fn check_rectangular<T>(rows: &[Vec<T>], what: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{what}: no agents")));
    }
    let m = rows[0].len();
    if m < 2 {
        return Err(Error::InvalidInput(format!("{what}: need at least 2 states")));
    }
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidInput(format!("{what}: ragged state dimension")));
    }
    Ok(())
}

/// The law `f(·|θ)` generating observations, shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub enum TrueModel {
    Gaussian { means: Vec<f64>, sigma: f64 },
    /// Rows may contain zeros: the true law need not have full support.
    Finite { masses: Vec<Vec<f64>> },
}

impl TrueModel {
    pub fn gaussian(means: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
        }
        if means.len() < 2 || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput(
                "true model needs at least 2 finite state means".into(),
            ));
        }
        Ok(Self::Gaussian { means, sigma })
    }

    pub fn finite(masses: Vec<Vec<f64>>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::InvalidInput("true model needs at least 2 states".into()));
        }
        let alphabet = masses[0].len();
        for (m, row) in masses.iter().enumerate() {
            if row.len() != alphabet {
                return Err(Error::InvalidInput(format!(
                    "true state {m}: alphabet size {} differs from {alphabet}",
                    row.len()
                )));
            }
            check_pmf(row, 0.0, &format!("true state {m}"))?;
        }
        Ok(Self::Finite { masses })
    }

    pub fn n_states(&self) -> usize {
        match self {
            Self::Gaussian { means, .. } => means.len(),
            Self::Finite { masses } => masses.len(),
        }
    }

    pub fn distribution(&self, state: usize) -> Distribution {
        match self {
            Self::Gaussian { means, sigma } => Distribution::Gaussian {
                mean: means[state],
                sigma: *sigma,
            },
            Self::Finite { masses } => Distribution::Categorical(masses[state].clone()),
        }
    }

    pub fn with_sigma(&self, new_sigma: f64) -> Result<Self> {
        match self {
            Self::Gaussian { means, .. } => Self::gaussian(means.clone(), new_sigma),
            Self::Finite { .. } => Err(Error::UnsupportedModel(
                "sigma only applies to gaussian observation laws".into(),
            )),
        }
    }

    /// Draws one observation from `f(·|state)`.
    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Observation {
        match self {
            Self::Gaussian { means, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                Observation::Real(means[state] + sigma * z)
            }
            Self::Finite { masses } => {
                let u: f64 = rng.random();
                let row = &masses[state];
                let mut acc = 0.0;
                let mut last_positive = 0;
                for (s, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        last_positive = s;
                        acc += p;
                        if u < acc {
                            return Observation::Symbol(s);
                        }
                    }
                }
                Observation::Symbol(last_positive)
            }
        }
    }

    /// Whether `symbol` has positive probability under `f(·|state)`.
    /// Gaussian laws have full support.
    fn in_support(&self, state: usize, symbol: usize) -> bool {
        match self {
            Self::Gaussian { .. } => true,
            Self::Finite { masses } => masses[state].get(symbol).is_some_and(|p| *p > 0.0),
        }
    }
}

/// `d[k][j]`: how well agent `k` separates the true state from
/// `wrong_states[j]`, in nats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityTable {
    pub true_state: usize,
    pub wrong_states: Vec<usize>,
    pub d: Vec<Vec<f64>>,
}

/// A failure or warning from the global identifiability check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum IdentifiabilityIssue {
    /// No agent can separate the true state from this one.
    Indistinguishable { true_state: usize, state: usize },
    /// The agent's model is KL-closer to a wrong state than to the truth.
    NegativeEntry { agent: usize, state: usize, value: f64 },
}

impl IdentifiabilityTable {
    pub fn n_agents(&self) -> usize {
        self.d.len()
    }

    pub fn n_wrong(&self) -> usize {
        self.wrong_states.len()
    }

    /// All columns with no positive entry, plus every negative entry.
    pub fn issues(&self) -> Vec<IdentifiabilityIssue> {
        let mut out = Vec::new();
        for (j, &state) in self.wrong_states.iter().enumerate() {
            if !self.d.iter().any(|row| row[j] > 0.0) {
                out.push(IdentifiabilityIssue::Indistinguishable {
                    true_state: self.true_state,
                    state,
                });
            }
        }
        for (k, row) in self.d.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < 0.0 {
                    out.push(IdentifiabilityIssue::NegativeEntry {
                        agent: k,
                        state: self.wrong_states[j],
                        value: v,
                    });
                }
            }
        }
        out
    }

    /// Every wrong state is separated by at least one agent.
    pub fn globally_identifiable(&self) -> bool {
        (0..self.n_wrong()).all(|j| self.d.iter().any(|row| row[j] > 0.0))
    }
}

fn check_shapes(true_model: &TrueModel, models: &LikelihoodModel, true_state: usize) -> Result<()> {
    let m = models.n_states();
    if true_model.n_states() != m {
        return Err(Error::InvalidInput(format!(
            "true model has {} states, likelihoods have {m}",
            true_model.n_states()
        )));
    }
    if true_state >= m {
        return Err(Error::InvalidInput(format!(
            "true state {true_state} out of range for {m} states"
        )));
    }
    match (true_model, models) {
        (TrueModel::Gaussian { .. }, LikelihoodModel::Gaussian { .. }) => Ok(()),
        (TrueModel::Finite { masses: t }, LikelihoodModel::Finite { masses: l }) => {
            if t[0].len() != l[0][0].len() {
                Err(Error::InvalidInput(format!(
                    "true alphabet size {} differs from likelihood alphabet {}",
                    t[0].len(),
                    l[0][0].len()
                )))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::InvalidInput(
            "true model and likelihoods are of different kinds".into(),
        )),
    }
}

/// `d_k(θ_m) = KL(f(·|θ₀) ‖ L_k(·|θ_m)) − KL(f(·|θ₀) ‖ L_k(·|θ₀))`.
pub fn identifiability(
    true_model: &TrueModel,
    models: &LikelihoodModel,
    true_state: usize,
) -> Result<IdentifiabilityTable> {
    check_shapes(true_model, models, true_state)?;
    let f = true_model.distribution(true_state);
    let wrong_states: Vec<usize> = (0..models.n_states()).filter(|&m| m != true_state).collect();
    let mut d = Vec::with_capacity(models.n_agents());
    for k in 0..models.n_agents() {
        let base = kl_divergence(&f, &models.distribution(k, true_state))?;
        let row = wrong_states
            .iter()
            .map(|&m| Ok(kl_divergence(&f, &models.distribution(k, m))? - base))
            .collect::<Result<Vec<_>>>()?;
        d.push(row);
    }
    Ok(IdentifiabilityTable {
        true_state,
        wrong_states,
        d,
    })
}

/// Almost-sure bound on the centred log-likelihood ratios:
/// `max_{k,m,ξ} |log(L_k(ξ|θ_m)/L_k(ξ|θ₀)) + d_k(θ_m)|`, where `ξ` ranges over
/// the symbols with positive probability under `f(·|θ₀)`.
pub fn bound_c(
    true_model: &TrueModel,
    models: &LikelihoodModel,
    table: &IdentifiabilityTable,
) -> Result<f64> {
    let masses = match models {
        LikelihoodModel::Finite { masses } => masses,
        LikelihoodModel::Gaussian { .. } => {
            return Err(Error::UnsupportedModel(
                "bounded log-likelihood ratio assumption fails for gaussian likelihoods \
                 (unbounded support); C is infinite"
                    .into(),
            ))
        }
    };
    check_shapes(true_model, models, table.true_state)?;
    let t = table.true_state;
    let mut c: f64 = 0.0;
    for (k, agent) in masses.iter().enumerate() {
        for (j, &m) in table.wrong_states.iter().enumerate() {
            for xi in 0..agent[t].len() {
                if !true_model.in_support(t, xi) {
                    continue;
                }
                let ratio = (agent[m][xi] / agent[t][xi]).ln();
                c = c.max((ratio + table.d[k][j]).abs());
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scenario_means() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 1.0],
            vec![0.0, 0.0, 2.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ]
    }

    #[test]
    fn state_space_rejects_duplicates_and_singletons() {
        assert!(StateSpace::new(vec!["a".into()], None).is_err());
        assert!(StateSpace::new(vec!["a".into(), "a".into()], None).is_err());
        let s = StateSpace::numeric(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.values().unwrap(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![0.5, 0.6]).is_err());
        assert!(Belief::new(vec![-0.1, 1.1]).is_err());
        assert!(Belief::initial(vec![0.0, 1.0]).is_err());
        assert!(Belief::new(vec![0.0, 1.0]).is_ok());
        let b = Belief::from_log_weights(&[-1000.0, -1000.0 + 2f64.ln()]);
        assert_abs_diff_eq!(b.probs()[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_log_likelihood_closed_form() {
        let m = LikelihoodModel::gaussian(vec![vec![0.0, 1.0]], 1.0).unwrap();
        let v = m.eval_log_likelihood(0, 0, Observation::Real(0.0)).unwrap();
        assert_abs_diff_eq!(v, -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, -0.9189385332046727, epsilon = 1e-12);

        let m = LikelihoodModel::gaussian(vec![vec![1.0, 0.0]], 0.5).unwrap();
        let v = m.eval_log_likelihood(0, 0, Observation::Real(1.0)).unwrap();
        assert_abs_diff_eq!(v, (1.0 / (0.5 * (2.0 * PI).sqrt())).ln(), epsilon = 1e-14);
    }

    #[test]
    fn finite_log_likelihood_and_domain_error() {
        let m = LikelihoodModel::finite(vec![vec![vec![0.5, 0.5], vec![0.9, 0.1]]]).unwrap();
        let v = m.eval_log_likelihood(0, 0, Observation::Symbol(0)).unwrap();
        assert_abs_diff_eq!(v, -std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(matches!(
            m.eval_log_likelihood(0, 0, Observation::Symbol(2)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            m.eval_log_likelihood(0, 0, Observation::Real(0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn finite_model_rejects_tiny_or_bad_rows() {
        assert!(LikelihoodModel::finite(vec![vec![vec![1.0, 0.0], vec![0.5, 0.5]]]).is_err());
        assert!(LikelihoodModel::finite(vec![vec![vec![0.6, 0.6], vec![0.5, 0.5]]]).is_err());
        assert!(LikelihoodModel::gaussian(vec![vec![0.0, 1.0]], 0.0).is_err());
        // True laws may have holes in their support.
        assert!(TrueModel::finite(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).is_ok());
    }

    #[test]
    fn kl_examples() {
        let g = |m| Distribution::Gaussian { mean: m, sigma: 0.5 };
        assert_eq!(kl_divergence(&g(0.0), &g(0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_divergence(&g(0.0), &g(1.0)).unwrap(), 2.0, epsilon = 1e-15);

        let p = Distribution::Categorical(vec![0.8, 0.2]);
        let q = Distribution::Categorical(vec![0.2, 0.8]);
        let expected = 0.8 * 4f64.ln() + 0.2 * 0.25f64.ln();
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.8318, epsilon = 1e-4);

        assert!(kl_divergence(&p, &g(0.0)).is_err());
        let r = Distribution::Categorical(vec![0.5, 0.25, 0.25]);
        assert!(kl_divergence(&p, &r).is_err());
    }

    #[test]
    fn kl_unequal_sigma_matches_general_formula() {
        let p = Distribution::Gaussian { mean: 0.3, sigma: 0.7 };
        let q = Distribution::Gaussian { mean: -0.2, sigma: 1.3 };
        // Quadrature oracle on a fine grid.
        let lp = |x: f64| gaussian_log_density(x, 0.3, 0.7);
        let lq = |x: f64| gaussian_log_density(x, -0.2, 1.3);
        let h = 1e-3;
        let mut acc = 0.0;
        let mut x = -15.0;
        while x < 15.0 {
            acc += lp(x).exp() * (lp(x) - lq(x)) * h;
            x += h;
        }
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), acc, epsilon = 1e-8);
    }

    #[test]
    fn identifiability_of_scenario_models() {
        let models = LikelihoodModel::gaussian(scenario_means(), 0.5).unwrap();
        let truth = TrueModel::gaussian(vec![0.0, 1.0, 2.0], 0.5).unwrap();
        let t = identifiability(&truth, &models, 0).unwrap();
        assert_eq!(t.wrong_states, vec![1, 2]);
        assert_abs_diff_eq!(t.d[0][0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t.d[0][1], 8.0, epsilon = 1e-14);
        assert_eq!(t.d[4], vec![0.0, 0.0]);
        assert!(t.globally_identifiable());
        assert!(t.issues().is_empty());
    }

    #[test]
    fn identifiability_reports_negative_entries_without_clamping() {
        let models = LikelihoodModel::gaussian(scenario_means(), 0.5).unwrap();
        let truth = TrueModel::gaussian(vec![0.0, 1.0, 2.0], 0.5).unwrap();
        // Agent 4 (index 3) believes θ2 looks like 0, so with truth θ2 it
        // prefers θ1.
        let t = identifiability(&truth, &models, 2).unwrap();
        assert!(t.globally_identifiable());
        let neg: Vec<_> = t
            .issues()
            .into_iter()
            .filter(|i| matches!(i, IdentifiabilityIssue::NegativeEntry { agent: 3, .. }))
            .collect();
        assert!(!neg.is_empty());
        assert!(t.d[3].iter().any(|v| *v < 0.0));
    }

    #[test]
    fn indistinguishable_states_fail_global_check() {
        let models = LikelihoodModel::gaussian(vec![vec![0.0, 0.0, 0.0]; 3], 1.0).unwrap();
        let truth = TrueModel::gaussian(vec![0.0, 1.0, 2.0], 1.0).unwrap();
        let t = identifiability(&truth, &models, 0).unwrap();
        assert!(t.d.iter().flatten().all(|v| *v == 0.0));
        assert!(!t.globally_identifiable());
        assert_eq!(
            t.issues(),
            vec![
                IdentifiabilityIssue::Indistinguishable { true_state: 0, state: 1 },
                IdentifiabilityIssue::Indistinguishable { true_state: 0, state: 2 },
            ]
        );
    }

    #[test]
    fn bound_c_examples() {
        let models =
            LikelihoodModel::finite(vec![vec![vec![0.8, 0.2], vec![0.2, 0.8]]]).unwrap();
        let truth = TrueModel::finite(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let t = identifiability(&truth, &models, 0).unwrap();
        assert_abs_diff_eq!(t.d[0][0], 0.8317766166719343, epsilon = 1e-12);
        let c = bound_c(&truth, &models, &t).unwrap();
        assert_abs_diff_eq!(c, 4f64.ln() + t.d[0][0], epsilon = 1e-14);
        assert_abs_diff_eq!(c, 2.218, epsilon = 1e-3);

        let flat = LikelihoodModel::finite(vec![vec![vec![0.3, 0.7]; 2]; 2]).unwrap();
        let truth = TrueModel::finite(vec![vec![0.3, 0.7]; 2]).unwrap();
        let t = identifiability(&truth, &flat, 0).unwrap();
        assert_eq!(bound_c(&truth, &flat, &t).unwrap(), 0.0);

        let g = LikelihoodModel::gaussian(vec![vec![0.0, 1.0]], 1.0).unwrap();
        let gt = TrueModel::gaussian(vec![0.0, 1.0], 1.0).unwrap();
        let t = identifiability(&gt, &g, 0).unwrap();
        assert!(matches!(bound_c(&gt, &g, &t), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn bound_c_ignores_symbols_outside_true_support() {
        let models = LikelihoodModel::finite(vec![vec![
            vec![0.5, 0.4, 0.1],
            vec![0.2, 0.3, 0.5],
        ]])
        .unwrap();
        let truth = TrueModel::finite(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let t = identifiability(&truth, &models, 0).unwrap();
        let d = 0.5 * (0.5f64 / 0.2).ln() + 0.5 * (0.4f64 / 0.3).ln();
        assert_abs_diff_eq!(t.d[0][0], d, epsilon = 1e-14);
        let c = bound_c(&truth, &models, &t).unwrap();
        let expected = ((0.2f64 / 0.5).ln() + d)
            .abs()
            .max(((0.3f64 / 0.4).ln() + d).abs());
        assert_abs_diff_eq!(c, expected, epsilon = 1e-14);
        assert!(c < d);
    }

    #[test]
    fn finite_sampling_respects_support() {
        let truth = TrueModel::finite(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            match truth.sample(0, &mut rng) {
                Observation::Symbol(s) => assert!(s < 2),
                Observation::Real(_) => unreachable!(),
            }
            assert_eq!(truth.sample(1, &mut rng), Observation::Symbol(2));
        }
    }
}
