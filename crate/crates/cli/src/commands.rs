//! The `validate`, `run`, `sweep` and `analyze` commands.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dhmm_core::dynamics::{
    solve_fixed_point_default, system_contraction_certificate, theorem2_bound, ContractionReport,
    ErrorBoundReport, ReferenceSystem,
};
use dhmm_core::model::{bound_c, identifiability, IdentifiabilityIssue, IdentifiabilityTable};
use dhmm_core::network;
use dhmm_core::sim::{self, estimate_error_probability, SweepCell, TruthProcess};
use dhmm_core::{LikelihoodModel, Strategy};
use ndarray::Array2;
use serde::Serialize;

use crate::config::{ConfigFile, NetworkSection};
use crate::error::{CliError, Result};
use crate::format::{csv_line, sig12};

/// Samples drawn for the contraction certificate in `analyze`.
pub const CONTRACTION_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub lines: Vec<String>,
    pub passed: bool,
}

impl ValidationReport {
    fn ok(&mut self, line: String) {
        self.lines.push(format!("ok       {line}"));
    }

    fn fail(&mut self, line: String) {
        self.passed = false;
        self.lines.push(format!("FAIL     {line}"));
    }

    fn warn(&mut self, line: String) {
        self.lines.push(format!("warning  {line}"));
    }

    fn info(&mut self, line: String) {
        self.lines.push(format!("info     {line}"));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            let _ = writeln!(out, "{l}");
        }
        let _ = writeln!(out, "result   {}", if self.passed { "pass" } else { "fail" });
        out
    }
}

/// States the truth process can occupy.
fn candidate_true_states(truth: &TruthProcess, m: usize) -> Vec<usize> {
    match truth {
        TruthProcess::Constant { state } => vec![*state],
        _ => (0..m).collect(),
    }
}

/// Network, identifiability and likelihood-ratio checks. Never writes files.
pub fn validate(cfg: &ConfigFile) -> Result<ValidationReport> {
    let mut report = ValidationReport {
        lines: Vec::new(),
        passed: true,
    };

    let rows = match &cfg.network {
        NetworkSection::Explicit { matrix } => matrix.clone(),
        _ => cfg.network_rows()?,
    };
    match network::validate(&rows) {
        Ok(diag) if diag.passes() => report.ok(format!(
            "network: {} agents, nonnegative, left-stochastic, strongly connected, self-loop present",
            rows.len()
        )),
        Ok(diag) => {
            for f in diag.failures() {
                report.fail(format!("network: {f}"));
            }
        }
        Err(e) => report.fail(format!("network: {e}")),
    }

    let states = cfg.state_space()?;
    let labels = states.labels().to_vec();
    let (models, true_model) = cfg.models()?;
    let gaussian = matches!(models, LikelihoodModel::Gaussian { .. });

    for t in candidate_true_states(&cfg.truth, states.len()) {
        let table = identifiability(&true_model, &models, t)?;
        let mut separated = true;
        for issue in table.issues() {
            match issue {
                IdentifiabilityIssue::Indistinguishable { true_state, state } => {
                    separated = false;
                    report.fail(format!(
                        "identifiability: no agent separates {} from true state {}",
                        labels[state], labels[true_state]
                    ));
                }
                IdentifiabilityIssue::NegativeEntry { agent, state, value } => {
                    report.warn(format!(
                        "identifiability: agent {} favours {} over true state {} (d = {})",
                        agent + 1,
                        labels[state],
                        labels[t],
                        sig12(value)
                    ));
                }
            }
        }
        if separated {
            report.ok(format!("identifiability: every wrong state separated when truth is {}", labels[t]));
        }
        if !gaussian {
            let c = bound_c(&true_model, &models, &table)?;
            report.info(format!("bounded log-likelihood ratio: C = {} when truth is {}", sig12(c), labels[t]));
        }
    }
    if gaussian {
        report.info("bounded log-likelihood ratio: not applicable (unbounded likelihood)".into());
    }

    match cfg.resolve() {
        Ok(_) => report.ok("configuration accepted by the simulation engine".into()),
        Err(e) => report.fail(format!("configuration: {e}")),
    }
    Ok(report)
}

/// Creates `dir` and checks that a file can be written there.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let probe = dir.join(".dhmm-write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    burn_in: usize,
    config: &'a ConfigFile,
    outputs: Vec<&'static str>,
}

fn write_manifest(
    dir: &Path,
    command: &'static str,
    cfg: &ConfigFile,
    outputs: Vec<&'static str>,
) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: "dhmm",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.run.seed,
        burn_in: cfg.burn_in(),
        config: cfg,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Encode(e.to_string()))?;
    text.push('\n');
    write_file(dir, "manifest.json", &text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub result: sim::SimResult,
}

/// Executes the configured run and writes `summary.csv`, optionally
/// `trajectories.csv`, and `manifest.json`.
pub fn run(cfg: &ConfigFile, out_dir: &Path) -> Result<RunOutput> {
    ensure_writable(out_dir)?;
    let sim_cfg = cfg.resolve()?;
    let result = sim::run(&sim_cfg)?;
    let burn_in = cfg.burn_in();

    let mut summary = csv_line(&[
        "strategy", "params", "agent", "accuracy", "error_prob", "horizon", "replications", "seed",
    ].map(String::from));
    for out in &result.outcomes {
        let error_prob = estimate_error_probability(out, burn_in)?;
        for (k, acc) in out.accuracy.iter().enumerate() {
            summary.push_str(&csv_line(&[
                out.strategy.kind().to_string(),
                out.strategy.param_label(),
                (k + 1).to_string(),
                sig12(*acc),
                sig12(error_prob),
                cfg.run.horizon.to_string(),
                cfg.run.replications.to_string(),
                cfg.run.seed.to_string(),
            ]));
        }
    }
    let mut files = vec![write_file(out_dir, "summary.csv", &summary)?];
    let mut outputs = vec!["summary.csv"];

    if cfg.run.record_trajectories {
        let labels = sim_cfg.states.labels();
        let m = labels.len();
        let n = sim_cfg.network.n_agents();
        let mut header: Vec<String> = ["strategy", "params", "step", "agent", "true_state"].map(String::from).to_vec();
        header.extend(labels.iter().cloned());
        let mut text = csv_line(&header);
        for out in &result.outcomes {
            let Some(tr) = &out.trajectory else { continue };
            for (i, truth) in tr.truth.iter().enumerate() {
                for k in 0..n {
                    let mut row = vec![
                        out.strategy.kind().to_string(),
                        out.strategy.param_label(),
                        (i + 1).to_string(),
                        (k + 1).to_string(),
                        labels[*truth].clone(),
                    ];
                    let base = (i * n + k) * m;
                    row.extend(tr.beliefs[base..base + m].iter().map(|v| sig12(*v)));
                    text.push_str(&csv_line(&row));
                }
            }
        }
        files.push(write_file(out_dir, "trajectories.csv", &text)?);
        outputs.push("trajectories.csv");
    }
    outputs.push("manifest.json");
    files.push(write_manifest(out_dir, "run", cfg, outputs)?);
    Ok(RunOutput { files, result })
}

/// Stable label for a configured strategy, independent of the swept value.
fn sweep_label(s: &Strategy) -> String {
    match s {
        Strategy::Generalized { delta2, .. } => format!("generalized(delta2={delta2})"),
        other => other.kind().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub files: Vec<PathBuf>,
    pub cells: usize,
    pub failed: usize,
}

/// Executes the sweep and writes `sweep.csv`, `failures.csv` and
/// `manifest.json`.
pub fn sweep(cfg: &ConfigFile, out_dir: &Path, threads: Option<usize>) -> Result<SweepOutput> {
    ensure_writable(out_dir)?;
    let base = cfg.resolve()?;
    let spec = cfg.sweep_spec(threads)?;
    let cells = sim::sweep(&base, &spec)?;
    // Cells are produced strategy-major; recover the configured strategy.
    let per_strategy = cells.len() / spec.strategies.len();
    let label_of = |cell: &SweepCell| sweep_label(&spec.strategies[cell.index / per_strategy]);
    let sigma_of = |cell: &SweepCell| cell.sigma.or(cfg.base_sigma());
    let sigma_text = |s: Option<f64>| s.map(sig12).unwrap_or_default();

    struct Row {
        label: String,
        sigma: Option<f64>,
        alpha: f64,
        agent: usize,
        accuracy: f64,
        error_prob: f64,
        seed: u64,
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for cell in &cells {
        match &cell.outcome {
            Ok(summary) => {
                for (k, acc) in summary.accuracy.iter().enumerate() {
                    rows.push(Row {
                        label: label_of(cell),
                        sigma: sigma_of(cell),
                        alpha: cell.alpha,
                        agent: k + 1,
                        accuracy: *acc,
                        error_prob: summary.error_prob,
                        seed: cell.seed,
                    });
                }
            }
            Err(msg) => failures.push((label_of(cell), sigma_of(cell), cell.alpha, cell.seed, msg.clone())),
        }
    }
    let cmp_sigma = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    };
    rows.sort_by(|a, b| {
        a.label
            .cmp(&b.label)
            .then_with(|| cmp_sigma(a.sigma, b.sigma))
            .then_with(|| a.alpha.total_cmp(&b.alpha))
            .then_with(|| a.agent.cmp(&b.agent))
    });
    failures.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| cmp_sigma(a.1, b.1))
            .then_with(|| a.2.total_cmp(&b.2))
            .then(Ordering::Equal)
    });

    let mut text = csv_line(&[
        "strategy", "alpha", "sigma", "agent", "accuracy", "error_prob", "horizon", "seed",
    ].map(String::from));
    for r in &rows {
        text.push_str(&csv_line(&[
            r.label.clone(),
            sig12(r.alpha),
            sigma_text(r.sigma),
            r.agent.to_string(),
            sig12(r.accuracy),
            sig12(r.error_prob),
            cfg.run.horizon.to_string(),
            r.seed.to_string(),
        ]));
    }
    let mut fail_text = csv_line(&["strategy", "alpha", "sigma", "seed", "error"].map(String::from));
    for (label, sigma, alpha, seed, msg) in &failures {
        fail_text.push_str(&csv_line(&[
            label.clone(),
            sig12(*alpha),
            sigma_text(*sigma),
            seed.to_string(),
            msg.clone(),
        ]));
    }
    let files = vec![
        write_file(out_dir, "sweep.csv", &text)?,
        write_file(out_dir, "failures.csv", &fail_text)?,
        write_manifest(out_dir, "sweep", cfg, vec!["sweep.csv", "failures.csv", "manifest.json"])?,
    ];
    Ok(SweepOutput {
        files,
        cells: cells.len(),
        failed: failures.len(),
    })
}

fn matrix(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSummary {
    pub x_inf: Vec<Vec<f64>>,
    pub x_bar_inf: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaAnalysis {
    pub alpha: f64,
    pub neighborhood_identifiability: Vec<Vec<f64>>,
    pub fixed_point: FixedPointSummary,
    /// `−Σ_ℓ a_{ℓk} d_ℓ(θ_m) − x̂^∞_k(θ_m)` per agent and wrong state.
    pub fixed_point_margins: Vec<Vec<f64>>,
    pub margins_positive: bool,
    pub contraction: ContractionReport,
    /// `None` when the log-likelihood ratio is unbounded.
    pub error_bound: Option<ErrorBoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub true_state: String,
    pub wrong_states: Vec<String>,
    pub identifiability: IdentifiabilityTable,
    pub warnings: Vec<String>,
    /// `None` when the log-likelihood ratio is unbounded.
    pub c: Option<f64>,
    pub c_note: Option<String>,
    pub analyses: Vec<AlphaAnalysis>,
}

/// Steady-state analysis of every alpha-HMM strategy in the configuration.
pub fn analyze_report(cfg: &ConfigFile) -> Result<AnalysisReport> {
    let true_state = match cfg.truth {
        TruthProcess::Constant { state } => state,
        _ => {
            return Err(CliError::Validation(
                "analysis assumes a fixed true state; use a constant truth process".into(),
            ))
        }
    };
    let states = cfg.state_space()?;
    let labels = states.labels();
    let (models, true_model) = cfg.models()?;
    let net = cfg.network()?;
    let table = identifiability(&true_model, &models, true_state)?;
    let mut warnings = Vec::new();
    let mut unseparated = Vec::new();
    for issue in table.issues() {
        match issue {
            IdentifiabilityIssue::Indistinguishable { state, .. } => unseparated.push(labels[state].clone()),
            IdentifiabilityIssue::NegativeEntry { agent, state, value } => warnings.push(format!(
                "agent {} favours {} over the true state (d = {})",
                agent + 1,
                labels[state],
                sig12(value)
            )),
        }
    }
    if !unseparated.is_empty() {
        return Err(CliError::Validation(format!(
            "global identifiability fails: no agent separates {} from true state {}",
            unseparated.join(", "),
            labels[true_state]
        )));
    }
    let alphas: Vec<f64> = cfg
        .strategies
        .iter()
        .filter_map(|s| match s {
            Strategy::AlphaHmm { alpha } => Some(*alpha),
            _ => None,
        })
        .collect();
    if alphas.is_empty() {
        return Err(CliError::Validation(
            "analysis needs at least one alpha-hmm strategy".into(),
        ));
    }
    let (c, c_note) = match bound_c(&true_model, &models, &table) {
        Ok(c) => (Some(c), None),
        Err(dhmm_core::Error::UnsupportedModel(msg)) => (None, Some(msg)),
        Err(e) => return Err(e.into()),
    };

    let mut analyses = Vec::new();
    for alpha in alphas {
        let system = ReferenceSystem::new(net.clone(), &table, alpha)?;
        let fp = solve_fixed_point_default(&system)?;
        let contraction = system_contraction_certificate(&system, CONTRACTION_SAMPLES, cfg.run.seed)?;
        let error_bound = c.map(|c| theorem2_bound(&system, c)).transpose()?;
        analyses.push(AlphaAnalysis {
            alpha,
            neighborhood_identifiability: matrix(&system.neighborhood_identifiability()),
            margins_positive: fp.bound_holds(),
            fixed_point_margins: matrix(&fp.margins),
            fixed_point: FixedPointSummary {
                x_inf: matrix(&fp.x_inf),
                x_bar_inf: fp.x_bar_inf,
                iterations: fp.iterations,
                residual: fp.residual,
            },
            contraction,
            error_bound,
        });
    }
    Ok(AnalysisReport {
        true_state: labels[true_state].clone(),
        wrong_states: table.wrong_states.iter().map(|&s| labels[s].clone()).collect(),
        identifiability: table,
        warnings,
        c,
        c_note,
        analyses,
    })
}

/// Writes `analysis.json` and `manifest.json`.
pub fn analyze(cfg: &ConfigFile, out_dir: &Path) -> Result<(AnalysisReport, Vec<PathBuf>)> {
    ensure_writable(out_dir)?;
    let report = analyze_report(cfg)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Encode(e.to_string()))?;
    text.push('\n');
    let files = vec![
        write_file(out_dir, "analysis.json", &text)?,
        write_manifest(out_dir, "analyze", cfg, vec!["analysis.json", "manifest.json"])?,
    ];
    Ok((report, files))
}
