//! JSON experiment configuration.
//!
//! Parsing rejects unknown keys and reports the JSON path of the first
//! offending value. [`ConfigFile::resolve`] turns a parsed file into the
//! engine's [`SimConfig`].

use std::path::Path;

use dhmm_core::network::{generate, Network, Topology};
use dhmm_core::sim::{default_burn_in, RecordOptions, SimConfig, SweepSpec, TruthProcess};
use dhmm_core::{LikelihoodModel, StateSpace, Strategy, TrueModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub states: StatesSection,
    pub network: NetworkSection,
    pub likelihoods: LikelihoodSection,
    pub truth: TruthProcess,
    pub strategies: Vec<Strategy>,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatesSection {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NetworkSection {
    Full { n: usize },
    RandomStronglyConnected { n: usize, seed: u64 },
    Ring { n: usize },
    /// `matrix[ℓ][k]` is the weight agent `k` gives agent `ℓ`.
    Explicit { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LikelihoodSection {
    Gaussian {
        /// `means[k][m]`.
        means: Vec<Vec<f64>>,
        sigma: f64,
        /// Means of the true observation law; defaults to `states.values`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        true_means: Option<Vec<f64>>,
    },
    Finite {
        /// `masses[k][m][symbol]`.
        masses: Vec<Vec<Vec<f64>>>,
        /// `true_masses[m][symbol]`.
        true_masses: Vec<Vec<f64>>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: usize,
    #[serde(default = "one")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub record_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alpha_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_list: Option<Vec<f64>>,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::schema(if path == "." { "$".into() } else { format!("$.{path}") }, e.inner().to_string())
        })?;
        cfg.check_schema()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Structural invariants that serde alone does not express.
    fn check_schema(&self) -> Result<()> {
        if self.run.horizon == 0 {
            return Err(CliError::schema("$.run.horizon", "must be >= 1"));
        }
        if self.run.replications == 0 {
            return Err(CliError::schema("$.run.replications", "must be >= 1"));
        }
        if let Some(b) = self.run.burn_in {
            if b >= self.run.horizon {
                return Err(CliError::schema("$.run.burn_in", "must be below the horizon"));
            }
        }
        if self.strategies.is_empty() {
            return Err(CliError::schema("$.strategies", "must list at least one strategy"));
        }
        if let Some(values) = &self.states.values {
            if values.len() != self.states.labels.len() {
                return Err(CliError::schema(
                    "$.states.values",
                    "must have one entry per label",
                ));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.alpha_grid.is_empty() {
                return Err(CliError::schema("$.sweep.alpha_grid", "must be non-empty"));
            }
            if sweep.sigma_list.as_ref().is_some_and(|s| s.is_empty()) {
                return Err(CliError::schema("$.sweep.sigma_list", "must be non-empty when present"));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        self
    }

    pub fn state_space(&self) -> Result<StateSpace> {
        Ok(StateSpace::new(self.states.labels.clone(), self.states.values.clone())?)
    }

    /// Weight matrix rows before validation.
    pub fn network_rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(match &self.network {
            NetworkSection::Explicit { matrix } => matrix.clone(),
            other => self.build_topology(other)?.rows(),
        })
    }

    fn build_topology(&self, section: &NetworkSection) -> Result<Network> {
        let (topology, n, seed) = match section {
            NetworkSection::Full { n } => (Topology::Full, *n, 0),
            NetworkSection::RandomStronglyConnected { n, seed } => {
                (Topology::RandomStronglyConnected, *n, *seed)
            }
            NetworkSection::Ring { n } => (Topology::Ring, *n, 0),
            NetworkSection::Explicit { matrix } => {
                (Topology::Explicit(matrix.clone()), matrix.len(), 0)
            }
        };
        Ok(generate(&topology, n, seed)?)
    }

    pub fn network(&self) -> Result<Network> {
        self.build_topology(&self.network)
    }

    pub fn models(&self) -> Result<(LikelihoodModel, TrueModel)> {
        match &self.likelihoods {
            LikelihoodSection::Gaussian {
                means,
                sigma,
                true_means,
            } => {
                let truth = match (true_means, &self.states.values) {
                    (Some(t), _) => t.clone(),
                    (None, Some(v)) => v.clone(),
                    (None, None) => {
                        return Err(CliError::schema(
                            "$.likelihoods.true_means",
                            "required when states.values is absent",
                        ))
                    }
                };
                Ok((
                    LikelihoodModel::gaussian(means.clone(), *sigma)?,
                    TrueModel::gaussian(truth, *sigma)?,
                ))
            }
            LikelihoodSection::Finite {
                masses,
                true_masses,
            } => Ok((
                LikelihoodModel::finite(masses.clone())?,
                TrueModel::finite(true_masses.clone())?,
            )),
        }
    }

    /// The engine configuration; runs every engine validator.
    pub fn resolve(&self) -> Result<SimConfig> {
        let (models, true_model) = self.models()?;
        let cfg = SimConfig {
            states: self.state_space()?,
            network: self.network()?,
            models,
            true_model,
            truth: self.truth.clone(),
            strategies: self.strategies.clone(),
            horizon: self.run.horizon,
            replications: self.run.replications,
            seed: self.run.seed,
            record: RecordOptions {
                trajectories: self.run.record_trajectories,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn burn_in(&self) -> usize {
        self.run
            .burn_in
            .unwrap_or_else(|| default_burn_in(self.run.horizon))
    }

    pub fn sweep_spec(&self, threads: Option<usize>) -> Result<SweepSpec> {
        let sweep = self
            .sweep
            .as_ref()
            .ok_or_else(|| CliError::schema("$.sweep", "section required for the sweep command"))?;
        Ok(SweepSpec {
            alpha_grid: sweep.alpha_grid.clone(),
            sigma_list: sweep.sigma_list.clone(),
            strategies: self.strategies.clone(),
            burn_in: Some(self.burn_in()),
            threads,
        })
    }

    /// Noise level of the base configuration, if gaussian.
    pub fn base_sigma(&self) -> Option<f64> {
        match &self.likelihoods {
            LikelihoodSection::Gaussian { sigma, .. } => Some(*sigma),
            LikelihoodSection::Finite { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "states": {"labels": ["a", "b"], "values": [0.0, 1.0]},
        "network": {"topology": "full", "n": 2},
        "likelihoods": {"kind": "gaussian", "means": [[0.0, 1.0], [0.0, 1.0]], "sigma": 1.0},
        "truth": {"kind": "constant", "state": 0},
        "strategies": [{"kind": "alpha-hmm", "alpha": 0.1}],
        "run": {"horizon": 10, "seed": 1}
    }"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ConfigFile::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.run.replications, 1);
        let sim = cfg.resolve().unwrap();
        assert_eq!(sim.network.n_agents(), 2);
        assert_eq!(cfg.burn_in(), 1);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ConfigFile::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ConfigFile::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = MINIMAL.replace(r#""seed": 1}"#, r#""seed": 1, "speed": 2}"#);
        match ConfigFile::from_json(&text).unwrap_err() {
            CliError::Schema { path, message } => {
                assert_eq!(path, "$.run.speed");
                assert!(message.contains("speed"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_strategy_field_rejected() {
        let text = MINIMAL.replace(r#""alpha": 0.1"#, r#""alpha": 0.1, "beta": 2"#);
        let err = ConfigFile::from_json(&text).unwrap_err();
        assert!(matches!(err, CliError::Schema { .. }), "{err}");
        assert!(err.to_string().contains("strategies"), "{err}");
    }

    #[test]
    fn zero_horizon_rejected() {
        let text = MINIMAL.replace(r#""horizon": 10"#, r#""horizon": 0"#);
        let err = ConfigFile::from_json(&text).unwrap_err();
        assert_eq!(err.to_string(), "$.run.horizon: must be >= 1");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn empty_alpha_grid_rejected() {
        let text = MINIMAL.replace(
            r#""run": {"horizon": 10, "seed": 1}"#,
            r#""run": {"horizon": 10, "seed": 1}, "sweep": {"alpha_grid": []}"#,
        );
        let err = ConfigFile::from_json(&text).unwrap_err();
        assert_eq!(err.to_string(), "$.sweep.alpha_grid: must be non-empty");
    }

    #[test]
    fn seed_override_applies() {
        let cfg = ConfigFile::from_json(MINIMAL).unwrap().with_seed(Some(99));
        assert_eq!(cfg.resolve().unwrap().seed, 99);
    }
}
