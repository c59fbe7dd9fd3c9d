//! Phased elimination over two user clusters of a rank-1 reward matrix.
//!
//! Each phase estimates the unlabelled users on all items and each cluster on
//! its surviving items, labels users whose estimated reward spread is large,
//! splits the labelled users by their good items and shrinks every cluster's
//! item set to the items most of its users consider good.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::joint::{JointPass, MaskPlan, PadGroup, Task};
use super::{row_argmax, KnownParams, Policy, PolicyReport, Protocol, RegularizerRule};
use crate::matcomp::{default_repetitions, median_of_estimates, sampling_probability, CompletionConfig, CompletionEstimate, ObservationMode};
use crate::math::{self, argmax};
use crate::{DMatrix, Error, Result, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Theory,
    #[default]
    Practical,
}

/// Spread a user's estimated rewards must exceed to be labelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelThreshold {
    /// `2 a Delta`.
    #[default]
    TwoA,
    /// `(2 a + 1) Delta`.
    TwoAPlusOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OctalConfig {
    pub a: f64,
    /// `C` in the sampling rate.
    pub c_sampling: f64,
    /// `c` in the repetition count.
    pub c_repetition: f64,
    /// `C'` in the theory threshold.
    pub c_delta: f64,
    pub regularizer: RegularizerRule,
    /// Odd `f`; `None` picks `max(3, odd ceil(log MNT))` under the theory
    /// round schedule and 1 under the practical one.
    pub repetitions: Option<usize>,
    pub delta_schedule: Schedule,
    pub round_schedule: Schedule,
    pub small_m_variant: bool,
    pub label_threshold: LabelThreshold,
    /// Clusters of at most `min_cluster_scale * M / sqrt(T)` users are merged
    /// back into the unlabelled set.
    pub min_cluster_scale: f64,
    pub robust_fraction: f64,
    pub known: KnownParams,
    pub observation_mode: ObservationMode,
    pub solver: CompletionConfig,
}

impl Default for OctalConfig {
    fn default() -> Self {
        OctalConfig {
            a: 7.0,
            c_sampling: 1.0,
            c_repetition: 1.0,
            c_delta: 1.0,
            regularizer: RegularizerRule::SpectralFraction { fraction: 0.85 },
            repetitions: None,
            delta_schedule: Schedule::Practical,
            round_schedule: Schedule::Practical,
            small_m_variant: false,
            label_threshold: LabelThreshold::TwoA,
            min_cluster_scale: 1.0,
            robust_fraction: 2.0 / 3.0,
            known: KnownParams::default(),
            observation_mode: ObservationMode::Strict,
            solver: CompletionConfig { partition: false, ..CompletionConfig::default() },
        }
    }
}

impl OctalConfig {
    pub fn practical() -> Self {
        Self::default()
    }

    pub fn theory(known: KnownParams) -> Self {
        OctalConfig {
            regularizer: RegularizerRule::Scaled { c_lambda: 1.0 },
            delta_schedule: Schedule::Theory,
            round_schedule: Schedule::Theory,
            robust_fraction: 1.0,
            known,
            solver: CompletionConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.regularizer.validate()?;
        for (name, v) in [("a", self.a), ("c_sampling", self.c_sampling), ("c_repetition", self.c_repetition), ("c_delta", self.c_delta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.min_cluster_scale >= 0.0) {
            return Err(Error::invalid("min_cluster_scale", "must be nonnegative"));
        }
        if !(self.robust_fraction > 0.0 && self.robust_fraction <= 1.0) {
            return Err(Error::invalid("robust_fraction", "must lie in (0, 1]"));
        }
        if let Some(f) = self.repetitions {
            if f == 0 || f % 2 == 0 {
                return Err(Error::invalid("repetitions", "must be odd and positive"));
            }
        }
        if self.delta_schedule == Schedule::Theory {
            self.known.sigma()?;
            self.known.mu()?;
            self.known.max_abs_reward()?;
        }
        if self.round_schedule == Schedule::Theory {
            self.known.sigma()?;
            self.known.mu()?;
        }
        Ok(())
    }

    fn label_threshold(&self, delta: f64) -> f64 {
        match self.label_threshold {
            LabelThreshold::TwoA => 2.0 * self.a * delta,
            LabelThreshold::TwoAPlusOne => (2.0 * self.a + 1.0) * delta,
        }
    }

    fn resolved_repetitions(&self, m: usize, n: usize, horizon: usize) -> usize {
        match (self.repetitions, self.round_schedule) {
            (Some(f), _) => f,
            (None, Schedule::Theory) => default_repetitions(m, n, horizon),
            (None, Schedule::Practical) => 1,
        }
    }
}

/// Bookkeeping of one phase: the user partition, the clusters' item sets
/// and every labelled user's good items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: usize,
    pub delta: f64,
    pub unlabelled: Vec<usize>,
    pub cluster1: Vec<usize>,
    pub cluster2: Vec<usize>,
    pub items1: Vec<usize>,
    pub items2: Vec<usize>,
    pub per_user_good: BTreeMap<usize, Vec<usize>>,
    pub rounds_this_phase: usize,
}

impl PhaseState {
    pub fn initial(num_users: usize, num_items: usize, small_m: bool) -> Self {
        PhaseState {
            phase: 1,
            delta: 0.0,
            unlabelled: (0..num_users).collect(),
            cluster1: Vec::new(),
            cluster2: Vec::new(),
            items1: if small_m { (0..num_items).collect() } else { Vec::new() },
            items2: Vec::new(),
            per_user_good: BTreeMap::new(),
            rounds_this_phase: 0,
        }
    }

    /// The three user sets partition `[M]` and the item sets lie in `[N]`.
    pub fn check_invariants(&self, num_users: usize, num_items: usize) -> Result<()> {
        let mut seen = alloc::vec![false; num_users];
        for &u in self.unlabelled.iter().chain(&self.cluster1).chain(&self.cluster2) {
            if u >= num_users || core::mem::replace(&mut seen[u], true) {
                return Err(Error::Schedule(alloc::format!("phase {}: user {u} misplaced", self.phase)));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Schedule(alloc::format!("phase {}: users missing from the partition", self.phase)));
        }
        if self.items1.iter().chain(&self.items2).any(|&j| j >= num_items) {
            return Err(Error::Schedule(alloc::format!("phase {}: item out of range", self.phase)));
        }
        Ok(())
    }

    pub fn is_labelled(&self, user: usize) -> bool {
        self.cluster1.contains(&user) || self.cluster2.contains(&user)
    }
}

/// Entrywise-median estimates of one phase, each `M x N` and zero outside
/// its sub-problem.
#[derive(Clone, Debug, Default)]
pub struct PhaseEstimates {
    /// Unlabelled users on all items.
    pub unlabelled: Option<DMatrix<f64>>,
    /// Cluster `i` (with the unlabelled users in the small-M variant) on `items_i`.
    pub cluster1: Option<DMatrix<f64>>,
    pub cluster2: Option<DMatrix<f64>>,
}

impl PhaseEstimates {
    fn max_abs(&self) -> f64 {
        [&self.unlabelled, &self.cluster1, &self.cluster2]
            .into_iter()
            .flatten()
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }
}

/// Threshold of phase `phase` and whether the theory value was zero and the
/// practical schedule was used instead.
///
/// Theory: `C' 2^-l min(||P||, sigma sqrt(mu) / log N)`. Practical:
/// `||Q0||_inf / 8^(l+1)` with `Q0` the phase-1 estimate.
pub fn octal_delta(phase: usize, config: &OctalConfig, num_items: usize, scale_estimate: Option<f64>) -> Result<(f64, bool)> {
    if phase == 0 {
        return Err(Error::invalid("phase", "phases start at 1"));
    }
    let practical = || {
        scale_estimate
            .map(|s| s / math::powf(8.0, (phase + 1) as f64))
            .ok_or_else(|| Error::Schedule("practical threshold needs the phase-1 estimate".into()))
    };
    match config.delta_schedule {
        Schedule::Practical => Ok((practical()?, false)),
        Schedule::Theory => {
            let k = &config.known;
            let noise = k.sigma()? * math::sqrt(k.mu()?) / math::ln(num_items.max(2) as f64);
            let d = config.c_delta * math::powf(2.0, -(phase as f64)) * k.max_abs_reward()?.min(noise);
            if d > 0.0 {
                Ok((d, false))
            } else {
                Ok((practical()?, true))
            }
        }
    }
}

/// `m_l = 10 + 2^l`.
pub fn octal_practical_rounds(phase: usize) -> usize {
    10usize.saturating_add(1usize.checked_shl(phase as u32).unwrap_or(usize::MAX))
}

/// Items `j` with `q_j + delta > max q`, always including the argmax.
fn good_items(values: &[(usize, f64)], delta: f64) -> Vec<usize> {
    let Some(best) = argmax(values.iter().map(|v| v.1)) else {
        return Vec::new();
    };
    let max = values[best].1;
    let mut out: Vec<usize> = values.iter().filter(|v| v.1 + delta > max).map(|v| v.0).collect();
    if !out.contains(&values[best].0) {
        out.push(values[best].0);
    }
    out.sort_unstable();
    out
}

fn spread(values: &[(usize, f64)]) -> f64 {
    let max = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Items present in at least `fraction` of `sets`; if none, the single item
/// present in the most sets (lowest index on ties). With no sets at all
/// every item qualifies vacuously.
fn robust_intersection(sets: &[&Vec<usize>], fraction: f64, num_items: usize) -> Vec<usize> {
    if sets.is_empty() {
        return (0..num_items).collect();
    }
    let mut counts = alloc::vec![0usize; num_items];
    for set in sets {
        for &j in set.iter() {
            counts[j] += 1;
        }
    }
    let need = fraction * sets.len() as f64 - 1e-9;
    let out: Vec<usize> = (0..num_items).filter(|&j| counts[j] > 0 && counts[j] as f64 >= need).collect();
    if !out.is_empty() {
        return out;
    }
    let best = argmax(counts.iter().map(|&c| c as f64)).unwrap_or(0);
    alloc::vec![best]
}

fn row_values(est: &DMatrix<f64>, user: usize, items: &[usize]) -> Vec<(usize, f64)> {
    items.iter().map(|&j| (j, est[(user, j)])).collect()
}

/// Labels users, splits them into two clusters and shrinks the clusters'
/// item sets, producing the state of the next phase.
pub fn label_and_split(
    estimates: &PhaseEstimates,
    state: &PhaseState,
    delta: f64,
    config: &OctalConfig,
    num_users: usize,
    num_items: usize,
    horizon: usize,
) -> Result<PhaseState> {
    let threshold = config.label_threshold(delta);
    let all_items: Vec<usize> = (0..num_items).collect();
    fn need<'a>(m: &'a Option<DMatrix<f64>>, what: &'static str) -> Result<&'a DMatrix<f64>> {
        m.as_ref().ok_or_else(|| Error::Schedule(alloc::format!("missing {what} estimate")))
    }
    let mut unlabelled = Vec::new();
    let mut good: BTreeMap<usize, Vec<usize>> = BTreeMap::new();

    if !state.unlabelled.is_empty() {
        let mut sources: Vec<(&DMatrix<f64>, &[usize])> = Vec::new();
        if config.small_m_variant {
            if !state.items1.is_empty() {
                sources.push((need(&estimates.cluster1, "first cluster")?, &state.items1));
            }
            if !state.items2.is_empty() {
                sources.push((need(&estimates.cluster2, "second cluster")?, &state.items2));
            }
        } else {
            sources.push((need(&estimates.unlabelled, "unlabelled")?, &all_items));
        }
        for &u in &state.unlabelled {
            let values: Vec<(usize, f64)> = sources.iter().flat_map(|(est, items)| row_values(est, u, items)).collect();
            if spread(&values) > threshold {
                good.insert(u, good_items(&values, delta));
            } else {
                unlabelled.push(u);
            }
        }
    }
    for (users, items, est, what) in [
        (&state.cluster1, &state.items1, &estimates.cluster1, "first cluster"),
        (&state.cluster2, &state.items2, &estimates.cluster2, "second cluster"),
    ] {
        if users.is_empty() {
            continue;
        }
        let est = need(est, what)?;
        for &u in users {
            good.insert(u, good_items(&row_values(est, u, items), delta));
        }
    }

    let mut next = PhaseState {
        phase: state.phase + 1,
        delta,
        unlabelled: Vec::new(),
        cluster1: Vec::new(),
        cluster2: Vec::new(),
        items1: Vec::new(),
        items2: Vec::new(),
        per_user_good: BTreeMap::new(),
        rounds_this_phase: 0,
    };
    // The pivot is the lowest-index previously clustered user, else the
    // lowest-index newly labelled one.
    let pivot = state.cluster1.iter().chain(&state.cluster2).min().copied().or_else(|| good.keys().next().copied());
    if let Some(pivot_good) = pivot.map(|v| good[&v].clone()) {
        for (&u, t) in &good {
            if t.iter().any(|j| pivot_good.binary_search(j).is_ok()) {
                next.cluster1.push(u);
            } else {
                next.cluster2.push(u);
            }
        }
        let sets = |users: &[usize]| -> Vec<&Vec<usize>> { users.iter().map(|u| &good[u]).collect() };
        next.items1 = robust_intersection(&sets(&next.cluster1), config.robust_fraction, num_items);
        next.items2 = robust_intersection(&sets(&next.cluster2), config.robust_fraction, num_items);
        if !config.small_m_variant {
            let limit = config.min_cluster_scale * num_users as f64 / math::sqrt(horizon.max(1) as f64);
            for (users, items) in [(&mut next.cluster1, &mut next.items1), (&mut next.cluster2, &mut next.items2)] {
                if users.len() as f64 <= limit || users.is_empty() {
                    unlabelled.append(users);
                    items.clear();
                }
            }
        } else if next.cluster2.is_empty() {
            next.items2 = all_items.clone();
        }
    } else if config.small_m_variant {
        next.items1 = state.items1.clone();
        next.items2 = state.items2.clone();
    }
    unlabelled.sort_unstable();
    next.unlabelled = unlabelled;
    for u in next.cluster1.iter().chain(&next.cluster2) {
        next.per_user_good.insert(*u, good[u].clone());
    }
    next.check_invariants(num_users, num_items)?;
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubProblemKind {
    Unlabelled,
    Cluster1,
    Cluster2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubProblemRecord {
    pub kind: SubProblemKind,
    pub num_users: usize,
    pub num_items: usize,
    /// Effective sampling rate of the first pass.
    pub p: f64,
    /// Repetitions `s` of the first pass.
    pub s: usize,
    /// Rounds of the first pass.
    pub rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub start_round: usize,
    /// Rounds played in the phase (fewer than planned if the horizon cut it).
    pub rounds: usize,
    pub delta: Option<f64>,
    pub delta_fell_back: bool,
    pub sub_problems: Vec<SubProblemRecord>,
    pub completed: bool,
    pub unlabelled_after: Option<usize>,
    pub cluster_sizes_after: Option<(usize, usize)>,
    pub item_set_sizes_after: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OctalReport {
    pub small_m_variant: bool,
    pub repetitions: usize,
    pub min_cluster_threshold: f64,
    pub phases: Vec<PhaseRecord>,
}

/// One block of rounds inside a phase pass: some sub-problems plus users
/// padded from their own item set.
#[derive(Clone, Debug)]
struct SegmentSpec {
    tasks: Vec<(SubProblemKind, Vec<usize>, Vec<usize>)>,
    pads: Vec<PadGroup>,
}

#[derive(Debug)]
struct PhaseRun {
    segments: Vec<SegmentSpec>,
    /// Index into `segments` over all passes.
    next_segment: usize,
    active: Option<(JointPass, Vec<SubProblemKind>)>,
    estimates: BTreeMap<u8, Vec<CompletionEstimate>>,
    record: PhaseRecord,
}

fn kind_key(k: SubProblemKind) -> u8 {
    k as u8
}

/// OCTAL and its small-M variant behind the round protocol.
#[derive(Debug)]
pub struct OctalPolicy {
    config: OctalConfig,
    num_users: usize,
    num_items: usize,
    horizon: usize,
    repetitions: usize,
    min_cluster_threshold: f64,
    protocol: Protocol,
    rng: RngStream,
    state: PhaseState,
    history: Vec<PhaseState>,
    scale: Option<f64>,
    run: Option<PhaseRun>,
    /// Each user's best item under the latest estimate covering it.
    fallback: Vec<usize>,
    terminal: bool,
    phases: Vec<PhaseRecord>,
}

impl OctalPolicy {
    pub fn new(config: OctalConfig, num_users: usize, num_items: usize, horizon: usize, rng: RngStream) -> Result<Self> {
        config.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::invalid("shape", "need at least one user and one item"));
        }
        let repetitions = config.resolved_repetitions(num_users, num_items, horizon);
        let state = PhaseState::initial(num_users, num_items, config.small_m_variant);
        Ok(OctalPolicy {
            min_cluster_threshold: config.min_cluster_scale * num_users as f64 / math::sqrt(horizon.max(1) as f64),
            config,
            num_users,
            num_items,
            horizon,
            repetitions,
            protocol: Protocol::new(num_users, horizon),
            rng,
            history: alloc::vec![state.clone()],
            state,
            scale: None,
            run: None,
            fallback: alloc::vec![0; num_users],
            terminal: false,
            phases: Vec::new(),
        })
    }

    /// States at the start of every phase so far, the current one last.
    pub fn history(&self) -> &[PhaseState] {
        &self.history
    }

    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    pub fn phases(&self) -> &[PhaseRecord] {
        &self.phases
    }

    fn segment_specs(&self) -> Vec<SegmentSpec> {
        let s = &self.state;
        let all: Vec<usize> = (0..self.num_items).collect();
        if !self.config.small_m_variant {
            let mut tasks = Vec::new();
            if !s.unlabelled.is_empty() {
                tasks.push((SubProblemKind::Unlabelled, s.unlabelled.clone(), all));
            }
            if !s.cluster1.is_empty() {
                tasks.push((SubProblemKind::Cluster1, s.cluster1.clone(), s.items1.clone()));
            }
            if !s.cluster2.is_empty() {
                tasks.push((SubProblemKind::Cluster2, s.cluster2.clone(), s.items2.clone()));
            }
            return if tasks.is_empty() { Vec::new() } else { alloc::vec![SegmentSpec { tasks, pads: Vec::new() }] };
        }
        let mut out = Vec::new();
        let stages = [
            (SubProblemKind::Cluster1, &s.cluster1, &s.items1, &s.cluster2, &s.items2),
            (SubProblemKind::Cluster2, &s.cluster2, &s.items2, &s.cluster1, &s.items1),
        ];
        for (kind, members, items, others, other_items) in stages {
            let mut users: Vec<usize> = members.iter().chain(&s.unlabelled).copied().collect();
            users.sort_unstable();
            if items.is_empty() || users.is_empty() {
                continue;
            }
            let pads = if others.is_empty() {
                Vec::new()
            } else {
                alloc::vec![PadGroup { users: others.clone(), items: other_items.clone() }]
            };
            out.push(SegmentSpec { tasks: alloc::vec![(kind, users, items.clone())], pads });
        }
        out
    }

    fn mask_plan(&self, users: usize, items: usize) -> MaskPlan {
        let phase = self.state.phase;
        match self.config.round_schedule {
            Schedule::Practical => MaskPlan::PerRow { rounds: octal_practical_rounds(phase) },
            Schedule::Theory => {
                let d2 = users.min(items);
                let p = if d2 < 2 { 1.0 } else { sampling_probability(self.config.known.mu.unwrap_or(1.0), d2, self.config.c_sampling) };
                let delta = octal_delta(phase, &self.config, self.num_items, self.scale).map(|d| d.0).unwrap_or(0.0);
                let sigma = self.config.known.sigma.unwrap_or(0.0);
                let mu = self.config.known.mu.unwrap_or(1.0);
                let s = if delta > 0.0 {
                    let r = self.config.c_repetition * sigma * math::sqrt(mu) / (delta * math::ln(d2.max(2) as f64));
                    (math::ceil(r * r) as usize).max(1)
                } else {
                    1
                };
                MaskPlan::Bernoulli { p, repetitions: s }
            }
        }
    }

    fn start_phase(&mut self) {
        let segments = self.segment_specs();
        if segments.is_empty() {
            self.terminal = true;
            return;
        }
        self.run = Some(PhaseRun {
            segments,
            next_segment: 0,
            active: None,
            estimates: BTreeMap::new(),
            record: PhaseRecord {
                phase: self.state.phase,
                start_round: self.protocol.rounds_done(),
                rounds: 0,
                delta: None,
                delta_fell_back: false,
                sub_problems: Vec::new(),
                completed: false,
                unlabelled_after: None,
                cluster_sizes_after: None,
                item_set_sizes_after: None,
            },
        });
    }

    fn start_segment(&mut self) -> Result<bool> {
        let run = self.run.as_ref().expect("phase running");
        let total = run.segments.len() * self.repetitions;
        if run.next_segment >= total {
            return Ok(false);
        }
        let spec = run.segments[run.next_segment % run.segments.len()].clone();
        let first_pass = run.next_segment < run.segments.len();
        let mut tasks = Vec::new();
        let mut kinds = Vec::new();
        let mut records = Vec::new();
        for (kind, users, items) in &spec.tasks {
            let plan = self.mask_plan(users.len(), items.len());
            let task = Task::new(users, items, plan, &mut self.rng)?;
            records.push(SubProblemRecord {
                kind: *kind,
                num_users: users.len(),
                num_items: items.len(),
                p: task.p,
                s: task.repetitions,
                rounds: task.rounds,
            });
            tasks.push(task);
            kinds.push(*kind);
        }
        let pass = JointPass::new(self.num_users, tasks, spec.pads, self.config.observation_mode)?;
        let run = self.run.as_mut().expect("phase running");
        if first_pass {
            run.record.sub_problems.extend(records);
        }
        run.next_segment += 1;
        run.active = Some((pass, kinds));
        Ok(true)
    }

    fn finish_segment(&mut self) -> Result<()> {
        let run = self.run.as_mut().expect("phase running");
        let (pass, kinds) = run.active.take().expect("active segment");
        for (task, kind) in pass.tasks.iter().zip(kinds) {
            let d2 = task.users().len().min(task.items().len());
            let cfg = self.config.regularizer.resolve(&self.config.solver, &self.config.known, d2, task.p)?;
            let est = task.complete(self.num_users, self.num_items, &cfg, &mut self.rng)?;
            run.estimates.entry(kind_key(kind)).or_default().push(est);
        }
        Ok(())
    }

    fn finish_phase(&mut self) -> Result<()> {
        let mut run = self.run.take().expect("phase running");
        let mut medians = PhaseEstimates::default();
        for (key, list) in &run.estimates {
            let m = median_of_estimates(list)?.estimate;
            match *key {
                0 => medians.unlabelled = Some(m),
                1 => medians.cluster1 = Some(m),
                _ => medians.cluster2 = Some(m),
            }
        }
        if self.scale.is_none() {
            self.scale = Some(medians.max_abs());
        }
        self.update_fallback(&medians);
        let (delta, fell_back) = octal_delta(self.state.phase, &self.config, self.num_items, self.scale)?;
        let mut next = label_and_split(&medians, &self.state, delta, &self.config, self.num_users, self.num_items, self.horizon)?;
        run.record.delta = Some(delta);
        run.record.delta_fell_back = fell_back;
        run.record.completed = true;
        run.record.unlabelled_after = Some(next.unlabelled.len());
        run.record.cluster_sizes_after = Some((next.cluster1.len(), next.cluster2.len()));
        run.record.item_set_sizes_after = Some((next.items1.len(), next.items2.len()));
        self.state.rounds_this_phase = run.record.rounds;
        self.state.delta = delta;
        if let Some(last) = self.history.last_mut() {
            *last = self.state.clone();
        }
        self.phases.push(run.record);
        next.delta = 0.0;
        self.history.push(next.clone());
        self.state = next;
        Ok(())
    }

    fn update_fallback(&mut self, medians: &PhaseEstimates) {
        let s = &self.state;
        let all: Vec<usize> = (0..self.num_items).collect();
        if let Some(est) = &medians.unlabelled {
            for &u in &s.unlabelled {
                self.fallback[u] = row_argmax(est, u, &all);
            }
        }
        for (users, items, est) in [(&s.cluster1, &s.items1, &medians.cluster1), (&s.cluster2, &s.items2, &medians.cluster2)] {
            if let Some(est) = est {
                for &u in users {
                    self.fallback[u] = row_argmax(est, u, items);
                }
            }
        }
        if self.config.small_m_variant {
            for &u in &s.unlabelled {
                let mut values = Vec::new();
                if let Some(e) = &medians.cluster1 {
                    values.extend(row_values(e, u, &s.items1));
                }
                if let Some(e) = &medians.cluster2 {
                    values.extend(row_values(e, u, &s.items2));
                }
                if let Some(k) = argmax(values.iter().map(|v| v.1)) {
                    self.fallback[u] = values[k].0;
                }
            }
        }
    }

    /// Makes sure an unfinished segment is active, finishing segments and
    /// phases as needed.
    fn advance(&mut self) -> Result<()> {
        loop {
            if self.terminal {
                return Ok(());
            }
            if self.run.is_none() {
                self.start_phase();
                continue;
            }
            let run = self.run.as_ref().expect("phase running");
            match &run.active {
                Some((pass, _)) if !pass.is_done() => return Ok(()),
                Some(_) => self.finish_segment()?,
                None => {
                    if !self.start_segment()? {
                        self.finish_phase()?;
                    }
                }
            }
        }
    }
}

impl Policy for OctalPolicy {
    fn name(&self) -> String {
        if self.config.small_m_variant { "octal_small_m".into() } else { "octal".into() }
    }

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn next_recommendations(&mut self, round: usize) -> Result<Vec<usize>> {
        self.protocol.begin(round)?;
        self.advance()?;
        if self.terminal {
            return Ok(self.fallback.clone());
        }
        let run = self.run.as_mut().expect("phase running");
        let (pass, _) = run.active.as_mut().expect("active segment");
        Ok(pass.recommend(&mut self.rng))
    }

    fn observe(&mut self, round: usize, rewards: &[f64]) -> Result<()> {
        self.protocol.end(round, rewards)?;
        if let Some(run) = self.run.as_mut() {
            if let Some((pass, _)) = run.active.as_mut() {
                pass.observe(rewards);
                run.record.rounds += 1;
            }
        }
        if !self.protocol.finished() {
            self.advance()?;
        } else if let Some(run) = &self.run {
            self.phases.push(run.record.clone());
        }
        Ok(())
    }

    fn finished(&self) -> bool {
        self.protocol.finished()
    }

    fn report(&self) -> PolicyReport {
        PolicyReport::Octal(OctalReport {
            small_m_variant: self.config.small_m_variant,
            repetitions: self.repetitions,
            min_cluster_threshold: self.min_cluster_threshold,
            phases: self.phases.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OctalConfig {
        OctalConfig::practical()
    }

    #[test]
    fn practical_schedules() {
        assert_eq!(octal_practical_rounds(3), 18);
        assert_eq!(octal_practical_rounds(1), 12);
        let (d, fell) = octal_delta(1, &cfg(), 10, Some(0.5)).unwrap();
        assert_eq!(d, 0.0078125);
        assert!(!fell);
        assert!(octal_delta(1, &cfg(), 10, None).is_err());
    }

    #[test]
    fn theory_delta_halves_and_falls_back() {
        let known = KnownParams { sigma: Some(0.3), rank: Some(1), mu: Some(1.0), max_abs_reward: Some(0.5) };
        let c = OctalConfig::theory(known);
        let a = octal_delta(2, &c, 150, None).unwrap().0;
        let b = octal_delta(3, &c, 150, None).unwrap().0;
        assert_eq!(a, 2.0 * b);
        let zero = OctalConfig::theory(KnownParams { sigma: Some(0.0), ..known });
        let (d, fell) = octal_delta(1, &zero, 150, Some(0.5)).unwrap();
        assert!(fell);
        assert_eq!(d, 0.5 / 64.0);
    }

    #[test]
    fn constant_rows_label_nobody() {
        let state = PhaseState::initial(4, 5, false);
        let est = PhaseEstimates { unlabelled: Some(DMatrix::from_element(4, 5, 0.3)), ..Default::default() };
        let next = label_and_split(&est, &state, 0.01, &cfg(), 4, 5, 100).unwrap();
        assert_eq!(next.unlabelled, state.unlabelled);
        assert!(next.cluster1.is_empty() && next.cluster2.is_empty());
    }

    #[test]
    fn singleton_cluster_merged_back() {
        // Users 0..3 like item 0, user 3 likes item 4.
        let mut q = DMatrix::zeros(4, 5);
        for u in 0..3 {
            q[(u, 0)] = 1.0;
        }
        q[(3, 4)] = 1.0;
        let state = PhaseState::initial(4, 5, false);
        let est = PhaseEstimates { unlabelled: Some(q), ..Default::default() };
        let next = label_and_split(&est, &state, 0.01, &cfg(), 4, 5, 100).unwrap();
        // Threshold M / sqrt(T) = 0.4: no merge.
        assert_eq!(next.cluster1, vec![0, 1, 2]);
        assert_eq!(next.cluster2, vec![3]);
        assert_eq!(next.items1, vec![0]);
        assert_eq!(next.items2, vec![4]);
        // Threshold 3.16: both merge.
        let c = OctalConfig { min_cluster_scale: 25.0, ..cfg() };
        let next = label_and_split(&est, &state, 0.01, &c, 4, 5, 1000).unwrap();
        assert_eq!(next.unlabelled, vec![0, 1, 2, 3]);
        // Threshold 1: only the singleton merges.
        let c = OctalConfig { min_cluster_scale: 2.5, ..cfg() };
        let next = label_and_split(&est, &state, 0.01, &c, 4, 5, 100).unwrap();
        assert_eq!(next.unlabelled, vec![3]);
        assert_eq!(next.cluster1, vec![0, 1, 2]);
    }

    #[test]
    fn robust_intersection_rules() {
        let a = vec![1, 2];
        let b = vec![2, 3];
        let c = vec![2, 4];
        assert_eq!(robust_intersection(&[&a, &b, &c], 2.0 / 3.0, 5), vec![2]);
        let d = vec![0];
        assert_eq!(robust_intersection(&[&a, &d, &d], 1.0, 5), vec![0]);
        assert_eq!(robust_intersection(&[&a, &b], 1.0, 5), vec![2]);
        assert_eq!(robust_intersection(&[], 1.0, 3), vec![0, 1, 2]);
    }

    #[test]
    fn good_items_include_argmax_when_delta_zero() {
        assert_eq!(good_items(&[(3, 0.1), (5, 0.2)], 0.0), vec![5]);
        assert_eq!(good_items(&[(3, 0.1), (5, 0.2)], 0.2), vec![3, 5]);
    }

    #[test]
    fn raising_a_never_shrinks_unlabelled() {
        let mut q = DMatrix::zeros(6, 4);
        for u in 0..6 {
            q[(u, u % 4)] = 0.1 * (u + 1) as f64;
        }
        let state = PhaseState::initial(6, 4, false);
        let est = PhaseEstimates { unlabelled: Some(q), ..Default::default() };
        let mut last = 0;
        for a in [1.0, 2.0, 4.0, 8.0, 16.0] {
            let c = OctalConfig { a, min_cluster_scale: 0.0, ..cfg() };
            let next = label_and_split(&est, &state, 0.01, &c, 6, 4, 100).unwrap();
            assert!(next.unlabelled.len() >= last);
            last = next.unlabelled.len();
        }
    }
}
