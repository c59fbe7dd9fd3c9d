//! Episodes, expected-regret accounting, seed averaging and sweeps.
//!
//! Regret is always computed from the true expected rewards: recommending
//! item `j` to user `u` costs `max_t P_ut - P_uj`, and a round's regret is
//! the mean of that over users.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{coherence, NoiseKind, RewardModel};
use crate::math::{self, mean_std};
use crate::matcomp::Recommendation;
use crate::policies::{
    EtcConfig, EtcMode, EtcPolicy, FixedItemPolicy, KnownParams, OctalConfig, OctalPolicy, OraclePolicy, Policy,
    PolicyReport, UcbPolicy,
};
use crate::{Error, Result, RngStream};

const POLICY_STREAM: u64 = 0x706f_6c69;
const NOISE_STREAM: u64 = 0x6e6f_6973;

/// Default number of seeds per configuration.
pub const DEFAULT_REPETITIONS: usize = 10;

/// Where an episode's reward model comes from.
#[derive(Clone, Debug)]
pub enum EnvSpec {
    /// A fresh synthetic rank-1 model per seed.
    Rank1Gap { num_users: usize, num_items: usize, gap: f64, noise_variance: f64, noise_kind: NoiseKind },
    /// One fixed model; seeds only change the noise and the policy.
    Model(Arc<RewardModel>),
}

impl EnvSpec {
    pub fn build(&self, seed: u64) -> Result<Arc<RewardModel>> {
        match self {
            EnvSpec::Rank1Gap { num_users, num_items, gap, noise_variance, noise_kind } => Ok(Arc::new(
                RewardModel::rank1_gap(*num_users, *num_items, *gap, *noise_variance, seed)?.with_noise_kind(*noise_kind),
            )),
            EnvSpec::Model(m) => Ok(m.clone()),
        }
    }

    pub fn with_gap(&self, new_gap: f64) -> Result<EnvSpec> {
        match self {
            EnvSpec::Rank1Gap { num_users, num_items, noise_variance, noise_kind, .. } => Ok(EnvSpec::Rank1Gap {
                num_users: *num_users,
                num_items: *num_items,
                gap: new_gap,
                noise_variance: *noise_variance,
                noise_kind: *noise_kind,
            }),
            EnvSpec::Model(_) => Err(Error::invalid("env", "the gap can only be varied on synthetic rank-1 models")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum PolicySpec {
    Etc(EtcConfig),
    Octal(OctalConfig),
    Ucb { exploration_coefficient: f64 },
    Oracle,
    Fixed { item: usize },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Etc(c) => match (c.mode, c.fixed_m) {
                (EtcMode::FixedExploration, Some(m)) => alloc::format!("etc:{m}"),
                _ => "etc".into(),
            },
            PolicySpec::Octal(c) if c.small_m_variant => "octal_small_m".into(),
            PolicySpec::Octal(_) => "octal".into(),
            PolicySpec::Ucb { .. } => "ucb".into(),
            PolicySpec::Oracle => "oracle".into(),
            PolicySpec::Fixed { item } => alloc::format!("fixed:{item}"),
        }
    }

    /// Instantiates the policy; known model quantities left unset are
    /// filled in from `model`.
    pub fn build(&self, model: &RewardModel, horizon: usize, rng: RngStream) -> Result<Box<dyn Policy>> {
        let (m, n) = (model.num_users(), model.num_items());
        Ok(match self {
            PolicySpec::Etc(c) => {
                let mut c = c.clone();
                c.known = fill_known(c.known, model);
                Box::new(EtcPolicy::new(c, m, n, horizon, rng)?)
            }
            PolicySpec::Octal(c) => {
                let mut c = c.clone();
                c.known = fill_known(c.known, model);
                Box::new(OctalPolicy::new(c, m, n, horizon, rng)?)
            }
            PolicySpec::Ucb { exploration_coefficient } => Box::new(UcbPolicy::new(m, n, *exploration_coefficient, horizon)?),
            PolicySpec::Oracle => Box::new(OraclePolicy::new(model, horizon)),
            PolicySpec::Fixed { item } => Box::new(FixedItemPolicy::new(*item, m, n, horizon)?),
        })
    }
}

/// `sigma`, rank, incoherence and scale of `model`, wherever `known` is unset.
pub fn fill_known(known: KnownParams, model: &RewardModel) -> KnownParams {
    KnownParams {
        sigma: known.sigma.or(Some(math::sqrt(model.noise_variance_proxy()))),
        rank: known.rank.or(Some(model.rank())),
        mu: known.mu.or_else(|| {
            let mu = coherence(model.left_singular_vectors()).max(coherence(model.right_singular_vectors()));
            Some(mu.max(1.0))
        }),
        max_abs_reward: known.max_abs_reward.or(Some(model.max_abs_reward())),
    }
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub env: EnvSpec,
    pub policy: PolicySpec,
    pub horizon: usize,
    pub seed: u64,
    pub repetitions: usize,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions", "must be at least 1"));
        }
        Ok(())
    }

    /// Seeds of the repetitions: `seed, seed + 1, ...`.
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repetitions as u64).map(move |k| self.seed.wrapping_add(k))
    }
}

/// Expected regret of every round of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub per_round: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub total: f64,
    /// Regret against the realized noisy rewards, for diagnostics only.
    pub realized_per_round: Vec<f64>,
}

impl RegretTrace {
    pub fn from_per_round(per_round: Vec<f64>, realized_per_round: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(per_round.len());
        let mut acc = 0.0;
        for r in &per_round {
            acc += r;
            cumulative.push(acc);
        }
        RegretTrace { total: acc, per_round, cumulative, realized_per_round }
    }

    pub fn horizon(&self) -> usize {
        self.per_round.len()
    }

    /// Mean per-round regret over `rounds` (clamped to the horizon).
    pub fn mean_over(&self, rounds: core::ops::Range<usize>) -> f64 {
        let end = rounds.end.min(self.per_round.len());
        let slice = &self.per_round[rounds.start.min(end)..end];
        if slice.is_empty() {
            0.0
        } else {
            slice.iter().sum::<f64>() / slice.len() as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub trace: RegretTrace,
    /// Every recommendation, if requested.
    pub log: Vec<Recommendation>,
    pub report: PolicyReport,
    pub policy_name: String,
}

/// Drives `policy` for `horizon` rounds against `model`, drawing noise from
/// the stream derived from `seed`.
pub fn run_policy(
    model: &RewardModel,
    policy: &mut dyn Policy,
    horizon: usize,
    seed: u64,
    keep_log: bool,
) -> Result<EpisodeOutcome> {
    let (m, n) = (model.num_users(), model.num_items());
    if policy.num_users() != m {
        return Err(Error::ShapeMismatch { context: "policy users", expected: (m, 1), found: (policy.num_users(), 1) });
    }
    let mut noise = RngStream::derive(seed, NOISE_STREAM);
    let best: Vec<f64> = (0..m).map(|u| model.best_reward(u)).collect();
    let mut per_round = Vec::with_capacity(horizon);
    let mut realized = Vec::with_capacity(horizon);
    let mut log = Vec::with_capacity(if keep_log { horizon * m } else { 0 });
    let mut rewards = alloc::vec![0.0; m];
    let at = |round: usize| move |e: Error| Error::AtRound { round, source: Box::new(e) };
    for t in 0..horizon {
        let rec = policy.next_recommendations(t).map_err(at(t))?;
        if rec.len() != m {
            return Err(at(t)(Error::ShapeMismatch { context: "recommendations", expected: (m, 1), found: (rec.len(), 1) }));
        }
        let (mut expected, mut observed) = (0.0, 0.0);
        for (u, &j) in rec.iter().enumerate() {
            if j >= n {
                return Err(at(t)(Error::IndexOutOfRange { what: "recommended item", index: j, bound: n }));
            }
            rewards[u] = model.sample_reward(u, j, &mut noise).map_err(at(t))?;
            expected += best[u] - model.expected_reward(u, j);
            observed += best[u] - rewards[u];
            if keep_log {
                log.push(Recommendation { round: t, user: u, item: j });
            }
        }
        per_round.push(expected / m as f64);
        realized.push(observed / m as f64);
        policy.observe(t, &rewards).map_err(at(t))?;
    }
    Ok(EpisodeOutcome {
        trace: RegretTrace::from_per_round(per_round, realized),
        log,
        report: policy.report(),
        policy_name: policy.name(),
    })
}

/// One episode of `spec` on `model` with the policy stream derived from `seed`.
pub fn run_episode(model: &RewardModel, spec: &PolicySpec, horizon: usize, seed: u64, keep_log: bool) -> Result<EpisodeOutcome> {
    let mut policy = spec.build(model, horizon, RngStream::derive(seed, POLICY_STREAM))?;
    run_policy(model, policy.as_mut(), horizon, seed, keep_log)
}

/// Pointwise mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedTrace {
    pub mean_per_round: Vec<f64>,
    /// Absent with a single run.
    pub std_per_round: Option<Vec<f64>>,
    pub mean_total: f64,
    pub std_total: Option<f64>,
    pub runs: usize,
}

pub fn average_runs(traces: &[RegretTrace]) -> Result<AveragedTrace> {
    let first = traces.first().ok_or_else(|| Error::invalid("traces", "need at least one run"))?;
    let horizon = first.horizon();
    if let Some(bad) = traces.iter().find(|t| t.horizon() != horizon) {
        return Err(Error::ShapeMismatch { context: "trace horizons", expected: (horizon, 1), found: (bad.horizon(), 1) });
    }
    let mut mean_per_round = Vec::with_capacity(horizon);
    let mut std_per_round = Vec::with_capacity(horizon);
    let mut column = alloc::vec![0.0; traces.len()];
    for t in 0..horizon {
        for (c, tr) in column.iter_mut().zip(traces) {
            *c = tr.per_round[t];
        }
        let (mean, std) = mean_std(&column);
        mean_per_round.push(mean);
        std_per_round.push(std.unwrap_or(0.0));
    }
    let totals: Vec<f64> = traces.iter().map(|t| t.total).collect();
    let (mean_total, std_total) = mean_std(&totals);
    Ok(AveragedTrace {
        mean_per_round,
        std_per_round: (traces.len() >= 2).then_some(std_per_round),
        mean_total,
        std_total,
        runs: traces.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `Gap / 2` of the synthetic rank-1 model.
    Gap,
    /// Exploration rounds of fixed-exploration ETC.
    ExplorationM,
    RoundIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub policy: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Mean of `policy` at `x`.
    pub fn mean(&self, x: f64, policy: &str) -> Option<f64> {
        self.points.iter().find(|p| p.x == x && p.policy == policy).map(|p| p.mean)
    }
}

/// One episode of a sweep.
#[derive(Clone, Debug)]
pub struct Job {
    pub point: usize,
    pub x: f64,
    pub policy_index: usize,
    pub policy: PolicySpec,
    pub env: EnvSpec,
    pub horizon: usize,
    pub seed: u64,
}

impl Job {
    pub fn run(&self) -> Result<RegretTrace> {
        let model = self.env.build(self.seed)?;
        Ok(run_episode(&model, &self.policy, self.horizon, self.seed, false)?.trace)
    }
}

/// Jobs over `Gap/2` values. Every policy sees the same seeds, hence the
/// same models, at every grid point.
pub fn gap_sweep_jobs(base: &RunSpec, half_gaps: &[f64], policies: &[PolicySpec]) -> Result<Vec<Job>> {
    base.validate()?;
    if half_gaps.is_empty() {
        return Err(Error::invalid("grid", "must not be empty"));
    }
    let mut jobs = Vec::new();
    for (point, &h) in half_gaps.iter().enumerate() {
        let env = base.env.with_gap(2.0 * h)?;
        for (k, policy) in policies.iter().enumerate() {
            for seed in base.seeds() {
                jobs.push(Job { point, x: h, policy_index: k, policy: policy.clone(), env: env.clone(), horizon: base.horizon, seed });
            }
        }
    }
    Ok(jobs)
}

/// Jobs over the exploration length of fixed-exploration ETC built from `etc`.
pub fn explore_sweep_jobs(base: &RunSpec, grid: &[usize], etc: &EtcConfig) -> Result<Vec<Job>> {
    base.validate()?;
    if grid.is_empty() {
        return Err(Error::invalid("grid", "must not be empty"));
    }
    let mut jobs = Vec::new();
    for (point, &m) in grid.iter().enumerate() {
        let policy = PolicySpec::Etc(EtcConfig { mode: EtcMode::FixedExploration, fixed_m: Some(m), ..etc.clone() });
        for seed in base.seeds() {
            jobs.push(Job { point, x: m as f64, policy_index: 0, policy: policy.clone(), env: base.env.clone(), horizon: base.horizon, seed });
        }
    }
    Ok(jobs)
}

/// Aggregates job totals (in job order) into per-point, per-policy means,
/// ordered by grid point then policy.
pub fn collect_sweep(axis: SweepAxis, jobs: &[Job], totals: &[f64]) -> Result<SweepResult> {
    if jobs.len() != totals.len() {
        return Err(Error::ShapeMismatch { context: "sweep totals", expected: (jobs.len(), 1), found: (totals.len(), 1) });
    }
    let mut keys: Vec<(usize, usize)> = jobs.iter().map(|j| (j.point, j.policy_index)).collect();
    keys.sort_unstable();
    keys.dedup();
    let points = keys
        .into_iter()
        .map(|(point, k)| {
            let members: Vec<usize> = (0..jobs.len()).filter(|&i| jobs[i].point == point && jobs[i].policy_index == k).collect();
            let values: Vec<f64> = members.iter().map(|&i| totals[i]).collect();
            let (mean, std) = mean_std(&values);
            let job = &jobs[members[0]];
            SweepPoint { x: job.x, policy: job.policy.label(), mean, std, runs: values.len() }
        })
        .collect();
    Ok(SweepResult { axis, points })
}

/// Runs `jobs` one after another.
pub fn run_jobs(jobs: &[Job]) -> Result<Vec<f64>> {
    jobs.iter().map(|j| j.run().map(|t| t.total)).collect()
}

/// Per-round means of several policies' averaged traces.
pub fn round_sweep(labelled: &[(String, AveragedTrace)]) -> SweepResult {
    let mut points = Vec::new();
    for (label, avg) in labelled {
        for (t, &mean) in avg.mean_per_round.iter().enumerate() {
            points.push(SweepPoint {
                x: (t + 1) as f64,
                policy: label.clone(),
                mean,
                std: avg.std_per_round.as_ref().map(|s| s[t]),
                runs: avg.runs,
            });
        }
    }
    SweepResult { axis: SweepAxis::RoundIndex, points }
}
