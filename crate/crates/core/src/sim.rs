//! True-state processes, observation sampling and the simulation engine.
//!
//! A run advances the true state, draws one observation per agent and feeds
//! the same observations to every configured strategy, so strategies are
//! compared on identical data. Beliefs are carried as normalized
//! log-probabilities between rounds.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LikelihoodModel, Observation, StateSpace, TrueModel};
use crate::network::Network;
use crate::numeric::{softmax_into, strict_argmax};
use crate::rng::{derive_seed, observation_stream, stream, TRUTH_STREAM};
use crate::strategies::{step_log, Strategy};

/// Cap on the default burn-in.
pub const MAX_DEFAULT_BURN_IN: usize = 5_000;

/// How the true state evolves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthProcess {
    Constant { state: usize },
    /// Stay with `1 − α₀(M−1)`, else jump to each other state with `α₀`.
    MarkovEqualExit { alpha0: f64 },
    /// Redraw uniformly from all states every `t0` steps.
    PeriodicSwitch { t0: usize },
}

impl TruthProcess {
    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            Self::Constant { state } if state >= m => Err(Error::InvalidInput(format!(
                "constant true state {state} out of range for {m} states"
            ))),
            Self::MarkovEqualExit { alpha0 } if !(0.0..=1.0 / (m - 1) as f64).contains(&alpha0) => {
                Err(Error::InvalidParameter(format!(
                    "alpha0 must be in [0, 1/(M-1)], got {alpha0}"
                )))
            }
            Self::PeriodicSwitch { t0: 0 } => {
                Err(Error::InvalidParameter("t0 must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    /// State at step 1.
    pub fn initial_state<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> usize {
        match *self {
            Self::Constant { state } => state,
            _ => rng.random_range(0..m),
        }
    }
}

/// State at step `step` (1-based, `step ≥ 2`) given the state at `step − 1`.
pub fn truth_step<R: Rng + ?Sized>(
    process: &TruthProcess,
    current: usize,
    step: usize,
    m: usize,
    rng: &mut R,
) -> usize {
    match *process {
        TruthProcess::Constant { .. } => current,
        TruthProcess::MarkovEqualExit { alpha0 } => {
            let leave = alpha0 * (m - 1) as f64;
            let u: f64 = rng.random();
            if u >= leave {
                current
            } else {
                let j = rng.random_range(0..m - 1);
                if j >= current {
                    j + 1
                } else {
                    j
                }
            }
        }
        TruthProcess::PeriodicSwitch { t0 } => {
            if (step - 1).is_multiple_of(t0) {
                rng.random_range(0..m)
            } else {
                current
            }
        }
    }
}

/// One draw from `f(·|true_state)` per agent, each from its own stream.
pub fn observe<R: Rng>(true_model: &TrueModel, true_state: usize, streams: &mut [R]) -> Vec<Observation> {
    streams
        .iter_mut()
        .map(|rng| true_model.sample(true_state, rng))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RecordOptions {
    /// Keep per-step beliefs of the first replication.
    pub trajectories: bool,
}

/// Everything needed for a reproducible run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub states: StateSpace,
    pub network: Network,
    pub models: LikelihoodModel,
    pub true_model: TrueModel,
    pub truth: TruthProcess,
    pub strategies: Vec<Strategy>,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub record: RecordOptions,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let m = self.states.len();
        let n = self.network.n_agents();
        if self.models.n_states() != m || self.true_model.n_states() != m {
            return Err(Error::InvalidInput(format!(
                "state space has {m} states; likelihoods have {}, true model has {}",
                self.models.n_states(),
                self.true_model.n_states()
            )));
        }
        if self.models.n_agents() != n {
            return Err(Error::InvalidInput(format!(
                "network has {n} agents, likelihoods describe {}",
                self.models.n_agents()
            )));
        }
        match (&self.models, &self.true_model) {
            (LikelihoodModel::Gaussian { .. }, TrueModel::Gaussian { .. }) => {}
            (LikelihoodModel::Finite { masses }, TrueModel::Finite { masses: t }) => {
                if masses[0][0].len() != t[0].len() {
                    return Err(Error::InvalidInput(
                        "true model and likelihoods use different alphabets".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::InvalidInput(
                    "true model and likelihoods are of different kinds".into(),
                ))
            }
        }
        self.truth.validate(m)?;
        if self.strategies.is_empty() {
            return Err(Error::InvalidInput("no strategies configured".into()));
        }
        for s in &self.strategies {
            s.validate(m)?;
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be >= 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-step beliefs of one replication, `beliefs[(i*N + k)*M + m]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub truth: Vec<usize>,
    pub beliefs: Vec<f64>,
}

/// Everything recorded for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    /// Fraction of steps whose strict argmax equals the true state, averaged
    /// over replications.
    pub accuracy: Vec<f64>,
    /// Per replication, per step: some agent weighs a wrong state at least
    /// as much as the true one.
    pub error_events: Vec<Vec<bool>>,
    /// Per replication digest of the observations this strategy consumed.
    pub observation_digests: Vec<u64>,
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub outcomes: Vec<StrategyOutcome>,
    pub horizon: usize,
    pub seed: u64,
    pub replication_seeds: Vec<u64>,
}

/// `min(horizon / 10, 5000)`.
pub fn default_burn_in(horizon: usize) -> usize {
    (horizon / 10).min(MAX_DEFAULT_BURN_IN)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(hash: u64, word: u64) -> u64 {
    word.to_le_bytes()
        .iter()
        .fold(hash, |h, b| (h ^ *b as u64).wrapping_mul(FNV_PRIME))
}

struct Lane<'a> {
    strategy: &'a Strategy,
    log_mu: Vec<f64>,
    scratch: Vec<f64>,
    correct: Vec<u64>,
    events: Vec<bool>,
    digest: u64,
    trajectory: Option<Trajectory>,
}

struct Replication {
    correct: Vec<Vec<u64>>,
    events: Vec<Vec<bool>>,
    digests: Vec<u64>,
    trajectories: Vec<Option<Trajectory>>,
}

fn run_replication(config: &SimConfig, seed: u64, record: bool) -> Result<Replication> {
    let m = config.states.len();
    let n = config.network.n_agents();
    let h = config.horizon;

    let mut truth_rng = stream(seed, TRUTH_STREAM);
    let mut obs_rngs: Vec<_> = (0..n).map(|k| stream(seed, observation_stream(k))).collect();

    let uniform = -(m as f64).ln();
    let mut lanes: Vec<Lane> = config
        .strategies
        .iter()
        .map(|s| Lane {
            strategy: s,
            log_mu: vec![uniform; n * m],
            scratch: vec![0.0; n * m],
            correct: vec![0; n],
            events: Vec::with_capacity(h),
            digest: FNV_OFFSET,
            trajectory: record.then(|| Trajectory {
                truth: Vec::with_capacity(h),
                beliefs: Vec::with_capacity(h * n * m),
            }),
        })
        .collect();

    let mut log_liks = vec![0.0; n * m];
    let mut probs = vec![0.0; m];
    let mut state = config.truth.initial_state(m, &mut truth_rng);
    for step in 1..=h {
        if step > 1 {
            state = truth_step(&config.truth, state, step, m, &mut truth_rng);
        }
        let obs = observe(&config.true_model, state, &mut obs_rngs);
        for (k, o) in obs.iter().enumerate() {
            config
                .models
                .log_likelihoods_into(k, *o, &mut log_liks[k * m..(k + 1) * m])?;
        }
        for lane in lanes.iter_mut() {
            for o in &obs {
                lane.digest = fnv_mix(lane.digest, o.bits());
            }
            step_log(
                lane.strategy,
                &config.network,
                m,
                &mut lane.log_mu,
                &log_liks,
                &mut lane.scratch,
            );
            if let Some(bad) = lane.log_mu.iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericFailure {
                    step,
                    detail: format!(
                        "strategy {} agent {} state {}: log-belief {}",
                        lane.strategy.kind(),
                        bad / m,
                        bad % m,
                        lane.log_mu[bad]
                    ),
                });
            }
            let mut event = false;
            for k in 0..n {
                let row = &lane.log_mu[k * m..(k + 1) * m];
                if strict_argmax(row) == Some(state) {
                    lane.correct[k] += 1;
                }
                let truth_weight = row[state];
                if row.iter().enumerate().any(|(j, v)| j != state && *v >= truth_weight) {
                    event = true;
                }
            }
            lane.events.push(event);
            if let Some(tr) = lane.trajectory.as_mut() {
                tr.truth.push(state);
                for k in 0..n {
                    softmax_into(&lane.log_mu[k * m..(k + 1) * m], &mut probs);
                    tr.beliefs.extend_from_slice(&probs);
                }
            }
        }
    }

    let mut rep = Replication {
        correct: Vec::new(),
        events: Vec::new(),
        digests: Vec::new(),
        trajectories: Vec::new(),
    };
    for lane in lanes {
        rep.correct.push(lane.correct);
        rep.events.push(lane.events);
        rep.digests.push(lane.digest);
        rep.trajectories.push(lane.trajectory);
    }
    Ok(rep)
}

/// Runs every strategy over `replications` independent seeded replications.
pub fn run(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let n = config.network.n_agents();
    let s = config.strategies.len();
    let replication_seeds: Vec<u64> = (0..config.replications as u64)
        .map(|r| derive_seed(config.seed, r))
        .collect();

    let mut outcomes: Vec<StrategyOutcome> = config
        .strategies
        .iter()
        .map(|st| StrategyOutcome {
            strategy: st.clone(),
            accuracy: vec![0.0; n],
            error_events: Vec::with_capacity(config.replications),
            observation_digests: Vec::with_capacity(config.replications),
            trajectory: None,
        })
        .collect();

    for (r, &seed) in replication_seeds.iter().enumerate() {
        let rep = run_replication(config, seed, config.record.trajectories && r == 0)?;
        for (i, out) in outcomes.iter_mut().enumerate().take(s) {
            for k in 0..n {
                out.accuracy[k] += rep.correct[i][k] as f64 / config.horizon as f64;
            }
        }
        for (i, ((ev, dg), tr)) in rep
            .events
            .into_iter()
            .zip(rep.digests)
            .zip(rep.trajectories)
            .enumerate()
        {
            outcomes[i].error_events.push(ev);
            outcomes[i].observation_digests.push(dg);
            if tr.is_some() {
                outcomes[i].trajectory = tr;
            }
        }
    }
    for out in outcomes.iter_mut() {
        for a in out.accuracy.iter_mut() {
            *a /= config.replications as f64;
        }
    }
    Ok(SimResult {
        outcomes,
        horizon: config.horizon,
        seed: config.seed,
        replication_seeds,
    })
}

/// Fraction of post-burn-in steps where the network error event fires,
/// averaged over replications. Ties count as errors.
pub fn estimate_error_probability(outcome: &StrategyOutcome, burn_in: usize) -> Result<f64> {
    let mut total = 0.0;
    for events in &outcome.error_events {
        if burn_in >= events.len() {
            return Err(Error::InvalidParameter(format!(
                "burn-in {burn_in} must be below the horizon {}",
                events.len()
            )));
        }
        let tail = &events[burn_in..];
        total += tail.iter().filter(|e| **e).count() as f64 / tail.len() as f64;
    }
    if outcome.error_events.is_empty() {
        return Err(Error::InvalidInput("outcome has no replications".into()));
    }
    Ok(total / outcome.error_events.len() as f64)
}

impl Strategy {
    /// The strategy re-parameterized by a sweep grid value `α`.
    ///
    /// ASL and the generalized rule take `δ = αM` (resp. `δ₁ = αM`); the full
    /// HMM takes the equal-exit matrix with `h = α(M − 1)`; Bayes ignores it.
    pub fn with_grid_value(&self, alpha: f64, m: usize) -> Strategy {
        let am = alpha * m as f64;
        match self {
            Self::AlphaHmm { .. } => Self::AlphaHmm { alpha },
            Self::LinearizedAlphaHmm { .. } => Self::LinearizedAlphaHmm { alpha },
            Self::Asl { .. } => Self::Asl { delta: am },
            Self::Hmm { .. } => Self::Hmm {
                transition: Strategy::equal_exit_transition(m, alpha * (m - 1) as f64),
            },
            Self::Generalized { delta2, .. } => Self::Generalized {
                delta1: am,
                delta2: *delta2,
            },
            Self::Bayes => Self::Bayes,
        }
    }
}

/// Grid and execution settings for [`sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub alpha_grid: Vec<f64>,
    /// `None` keeps the base configuration's noise level.
    pub sigma_list: Option<Vec<f64>>,
    pub strategies: Vec<Strategy>,
    pub burn_in: Option<usize>,
    /// Worker threads; `None` uses the global pool. Never affects results.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub accuracy: Vec<f64>,
    pub error_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub strategy: Strategy,
    pub alpha: f64,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub outcome: std::result::Result<CellSummary, String>,
}

/// The single-cell configuration a sweep cell runs.
pub fn sweep_cell_config(
    base: &SimConfig,
    strategy: &Strategy,
    alpha: f64,
    sigma: Option<f64>,
    seed: u64,
) -> Result<SimConfig> {
    let m = base.states.len();
    let mut cfg = base.clone();
    cfg.strategies = vec![strategy.with_grid_value(alpha, m)];
    cfg.seed = seed;
    if let Some(s) = sigma {
        cfg.models = base.models.with_sigma(s)?;
        cfg.true_model = base.true_model.with_sigma(s)?;
    }
    Ok(cfg)
}

/// Cartesian product over (strategy, σ, α). Cell `c` runs with seed
/// `derive_seed(base.seed, c)`; a failing cell is recorded and the sweep
/// continues.
pub fn sweep(base: &SimConfig, spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.alpha_grid.is_empty() {
        return Err(Error::InvalidInput("alpha grid is empty".into()));
    }
    if spec.strategies.is_empty() {
        return Err(Error::InvalidInput("no strategies to sweep".into()));
    }
    let sigmas: Vec<Option<f64>> = match &spec.sigma_list {
        Some(list) if list.is_empty() => {
            return Err(Error::InvalidInput("sigma list is empty".into()))
        }
        Some(list) => list.iter().map(|s| Some(*s)).collect(),
        None => vec![None],
    };
    if spec.sigma_list.is_some() && base.models.is_finite_alphabet() {
        return Err(Error::UnsupportedModel(
            "sigma sweeps need gaussian likelihoods".into(),
        ));
    }
    let burn_in = spec.burn_in.unwrap_or_else(|| default_burn_in(base.horizon));

    let mut cells = Vec::new();
    for strategy in &spec.strategies {
        for &sigma in &sigmas {
            for &alpha in &spec.alpha_grid {
                let index = cells.len();
                cells.push((index, strategy, sigma, alpha));
            }
        }
    }

    let run_cell = |&(index, strategy, sigma, alpha): &(usize, &Strategy, Option<f64>, f64)| {
        let seed = derive_seed(base.seed, index as u64);
        let m = base.states.len();
        let outcome = sweep_cell_config(base, strategy, alpha, sigma, seed)
            .and_then(|cfg| run(&cfg))
            .and_then(|res| {
                let out = &res.outcomes[0];
                Ok(CellSummary {
                    accuracy: out.accuracy.clone(),
                    error_prob: estimate_error_probability(out, burn_in)?,
                })
            })
            .map_err(|e| e.to_string());
        SweepCell {
            index,
            strategy: strategy.with_grid_value(alpha, m),
            alpha,
            sigma,
            seed,
            outcome,
        }
    };

    let results = match spec.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| cells.par_iter().map(run_cell).collect())
        }
        None => cells.par_iter().map(run_cell).collect(),
    };
    Ok(results)
}
