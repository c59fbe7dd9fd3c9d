//! The experiment commands. Each writes its CSV table and a JSON summary into
//! an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use lrmc_core::env::{NoisyRewards, RewardModel};
use lrmc_core::harness::{
    collect_sweep, explore_sweep_jobs, gap_sweep_jobs, run_episode, EnvSpec, Job, PolicySpec, SweepAxis, SweepPoint,
};
use lrmc_core::matcomp::{estimate, CompletionConfig, RegularizerScale};
use lrmc_core::policies::{EtcMode, PolicyReport};
use lrmc_core::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig};
use crate::matrix_csv::{load_matrix_csv, write_matrix_csv};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(#[from] lrmc_core::Error),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Write { path: path.to_path_buf(), source }
}

/// Runs `jobs` on the rayon pool; totals come back in job order.
pub fn run_jobs_parallel(jobs: &[Job]) -> lrmc_core::Result<Vec<f64>> {
    jobs.par_iter().map(|j| j.run().map(|t| t.total)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub total_regret: f64,
    /// Policy parameters actually used, including derived ones.
    pub report: PolicyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub config: ExperimentConfig,
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub runs: Vec<RunSummary>,
    #[serde(default)]
    pub points: Vec<SweepPoint>,
    pub files: Vec<String>,
}

impl Summary {
    fn write(&self, dir: &Path) -> Result<(), CommandError> {
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self).expect("summaries serialize");
        fs::write(&path, text + "\n").map_err(write_err(&path))
    }
}

fn prepare(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(write_err(dir))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), CommandError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CommandError::Write { path: path.to_path_buf(), source: e.into() })?;
    }
    let bytes = w.into_inner().map_err(|e| CommandError::Write { path: path.to_path_buf(), source: e.into_error() })?;
    fs::write(path, bytes).map_err(write_err(path))
}

#[derive(Serialize)]
struct RoundRow<'a> {
    round: usize,
    per_round_regret: f64,
    cumulative_regret: f64,
    policy: &'a str,
    seed: u64,
}

#[derive(Serialize)]
struct RoundRowRealized<'a> {
    round: usize,
    per_round_regret: f64,
    cumulative_regret: f64,
    policy: &'a str,
    seed: u64,
    realized_regret: f64,
}

/// One episode per seed of `config.policy`; writes `per_round.csv`.
pub fn simulate(config: &ExperimentConfig, out: &Path) -> Result<Summary, CommandError> {
    let policy = config.policy_spec(&config.policy)?;
    let run = config.run_spec(policy.clone())?;
    let seeds: Vec<u64> = run.seeds().collect();
    let outcomes = seeds
        .par_iter()
        .map(|&seed| {
            let model = run.env.build(seed)?;
            run_episode(&model, &policy, run.horizon, seed, false)
        })
        .collect::<lrmc_core::Result<Vec<_>>>()?;
    prepare(out)?;
    let label = policy.label();
    let path = out.join("per_round.csv");
    let rows = seeds.iter().zip(&outcomes).flat_map(|(&seed, o)| {
        let t = &o.trace;
        (0..t.horizon()).map(move |k| (k, seed, t))
    });
    if config.realized_column {
        write_csv(
            &path,
            rows.map(|(k, seed, t)| RoundRowRealized {
                round: k + 1,
                per_round_regret: t.per_round[k],
                cumulative_regret: t.cumulative[k],
                policy: &label,
                seed,
                realized_regret: t.realized_per_round[k],
            }),
        )?;
    } else {
        write_csv(
            &path,
            rows.map(|(k, seed, t)| RoundRow {
                round: k + 1,
                per_round_regret: t.per_round[k],
                cumulative_regret: t.cumulative[k],
                policy: &label,
                seed,
            }),
        )?;
    }
    let summary = Summary {
        command: "simulate".into(),
        config: config.clone(),
        policies: vec![policy],
        runs: seeds
            .iter()
            .zip(outcomes)
            .map(|(&seed, o)| RunSummary { policy: label.clone(), seed, total_regret: o.trace.total, report: o.report })
            .collect(),
        points: Vec::new(),
        files: vec!["per_round.csv".into()],
    };
    summary.write(out)?;
    Ok(summary)
}

#[derive(Serialize)]
struct GapRow<'a> {
    gap: f64,
    policy: &'a str,
    mean_regret: f64,
    std_regret: Option<f64>,
    runs: usize,
}

/// Every policy of `config.policies` at every `gap_grid` value on paired
/// seeds; writes `sweep_gap.csv`.
pub fn sweep_gap(config: &ExperimentConfig, out: &Path) -> Result<Summary, CommandError> {
    if config.gap_grid.is_empty() {
        return Err(ConfigError::Invalid { key: "gap_grid", reason: "must not be empty".into() }.into());
    }
    if config.gap_grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(ConfigError::Invalid { key: "gap_grid", reason: "values must be positive".into() }.into());
    }
    if config.policies.is_empty() {
        return Err(ConfigError::Invalid { key: "policies", reason: "must not be empty".into() }.into());
    }
    let policies = config.policies.iter().map(|p| config.policy_spec(p)).collect::<Result<Vec<_>, _>>()?;
    let base = config.run_spec(policies[0].clone())?;
    if matches!(base.env, EnvSpec::Model(_)) {
        return Err(ConfigError::Invalid { key: "csv_path", reason: "sweep-gap needs the synthetic model".into() }.into());
    }
    let jobs = gap_sweep_jobs(&base, &config.gap_grid, &policies)?;
    let totals = run_jobs_parallel(&jobs)?;
    let result = collect_sweep(SweepAxis::Gap, &jobs, &totals)?;
    prepare(out)?;
    write_csv(
        &out.join("sweep_gap.csv"),
        result.points.iter().map(|p| GapRow { gap: p.x, policy: &p.policy, mean_regret: p.mean, std_regret: p.std, runs: p.runs }),
    )?;
    let summary = Summary {
        command: "sweep-gap".into(),
        config: config.clone(),
        policies,
        runs: Vec::new(),
        points: result.points,
        files: vec!["sweep_gap.csv".into()],
    };
    summary.write(out)?;
    Ok(summary)
}

#[derive(Serialize)]
struct ExploreRow {
    exploration_m: usize,
    gap: Option<f64>,
    mean_regret: f64,
    std_regret: Option<f64>,
    runs: usize,
}

/// Fixed-exploration ETC over `m_grid`; writes `sweep_explore.csv`. The gap
/// column is empty for CSV models.
pub fn sweep_explore(config: &ExperimentConfig, out: &Path) -> Result<Summary, CommandError> {
    let name = config.policy.split(':').next().unwrap_or("");
    if name != "etc" {
        return Err(ConfigError::Invalid { key: "policy", reason: format!("sweep-explore runs ETC only, got `{}`", config.policy) }.into());
    }
    if config.m_grid.is_empty() {
        return Err(ConfigError::Invalid { key: "m_grid", reason: "must not be empty".into() }.into());
    }
    let etc = match config.policy_spec(&format!("etc:{}", config.m_grid[0]))? {
        PolicySpec::Etc(c) => c,
        _ => unreachable!("etc labels build ETC"),
    };
    let base = config.run_spec(PolicySpec::Etc(etc.clone()))?;
    let jobs = explore_sweep_jobs(&base, &config.m_grid, &etc)?;
    let totals = run_jobs_parallel(&jobs)?;
    let result = collect_sweep(SweepAxis::ExplorationM, &jobs, &totals)?;
    let gap = matches!(base.env, EnvSpec::Rank1Gap { .. }).then_some(config.gap);
    prepare(out)?;
    write_csv(
        &out.join("sweep_explore.csv"),
        result.points.iter().map(|p| ExploreRow {
            exploration_m: p.x as usize,
            gap,
            mean_regret: p.mean,
            std_regret: p.std,
            runs: p.runs,
        }),
    )?;
    let policies = config
        .m_grid
        .iter()
        .map(|&m| PolicySpec::Etc(lrmc_core::policies::EtcConfig { mode: EtcMode::FixedExploration, fixed_m: Some(m), ..etc.clone() }))
        .collect();
    let summary = Summary {
        command: "sweep-explore".into(),
        config: config.clone(),
        policies,
        runs: Vec::new(),
        points: result.points,
        files: vec!["sweep_explore.csv".into()],
    };
    summary.write(out)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub rows: usize,
    pub cols: usize,
    pub p: f64,
    pub s: usize,
    pub max_abs_error: f64,
    pub rmse: f64,
    pub rounds_used: usize,
    pub rounds_per_pass: usize,
    /// `lambda` of every block.
    pub regularizers: Vec<f64>,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionSummary {
    pub command: String,
    pub config: ExperimentConfig,
    pub solver: CompletionConfig,
    pub report: CompletionReport,
    pub files: Vec<String>,
}

/// Completion of the CSV matrix from one noisy estimation call.
pub fn complete_model(model: &RewardModel, config: &ExperimentConfig) -> Result<(CompletionConfig, CompletionReport, lrmc_core::DMatrix<f64>), CommandError> {
    let mut solver = CompletionConfig {
        max_iterations: config.solver_max_iterations,
        rel_tolerance: config.solver_rel_tolerance,
        continuation: config.continuation,
        ..CompletionConfig::default()
    };
    if let Some(p) = config.partition {
        solver.partition = p;
    }
    match (config.lambda, config.lambda_fraction) {
        (Some(l), _) => solver.regularizer = l,
        (None, f) => {
            solver.regularizer = f.unwrap_or(0.5);
            solver.regularizer_scale = RegularizerScale::SpectralFraction;
        }
    }
    let users: Vec<usize> = (0..model.num_users()).collect();
    let items: Vec<usize> = (0..model.num_items()).collect();
    let mut source = NoisyRewards::new(model, RngStream::derive(config.seed, 0x6e6f_6973));
    let mut rng = RngStream::derive(config.seed, 0x636f_6d70);
    let outcome = estimate(&mut source, &users, &items, config.p, config.s, config.observation_mode, &solver, &mut rng)?;
    let est = &outcome.estimate;
    let diff = &est.estimate - model.expected_rewards();
    let report = CompletionReport {
        rows: diff.nrows(),
        cols: diff.ncols(),
        p: config.p,
        s: config.s,
        max_abs_error: diff.amax(),
        rmse: (diff.norm_squared() / diff.len() as f64).sqrt(),
        rounds_used: outcome.rounds_used,
        rounds_per_pass: outcome.rounds_per_pass,
        regularizers: est.regularizers.clone(),
        converged: est.converged.iter().all(|&c| c),
        degenerate: est.degenerate,
    };
    Ok((solver, report, outcome.estimate.estimate))
}

/// Offline completion of `csv_path`; writes `estimate.csv` and `summary.json`.
pub fn complete(config: &ExperimentConfig, out: &Path) -> Result<CompletionSummary, CommandError> {
    let path = config
        .csv_path
        .as_ref()
        .ok_or(ConfigError::Invalid { key: "csv_path", reason: "complete needs a matrix file".into() })?;
    let model = load_matrix_csv(path, config.sigma2).map_err(ConfigError::from)?.with_noise_kind(config.noise_kind());
    let (solver, report, matrix) = complete_model(&model, config)?;
    prepare(out)?;
    let est_path = out.join("estimate.csv");
    write_matrix_csv(&est_path, &matrix).map_err(write_err(&est_path))?;
    let summary = CompletionSummary {
        command: "complete".into(),
        config: config.clone(),
        solver,
        report,
        files: vec!["estimate.csv".into()],
    };
    let json = out.join("summary.json");
    fs::write(&json, serde_json::to_string_pretty(&summary).expect("summaries serialize") + "\n").map_err(write_err(&json))?;
    Ok(summary)
}
