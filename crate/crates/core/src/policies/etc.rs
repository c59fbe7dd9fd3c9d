use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::joint::{JointPass, MaskPlan, Task};
use super::{row_argmax, KnownParams, Policy, PolicyReport, Protocol, RegularizerRule};
use crate::matcomp::{default_repetitions, median_of_estimates, sampling_probability, CompletionConfig, CompletionEstimate, ObservationMode};
use crate::math::{self, ceil};
use crate::{Error, Result, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtcMode {
    /// Sampling rate and repetitions from the known model quantities.
    #[default]
    Theory,
    /// A fixed exploration length split over the median passes.
    FixedExploration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtcConfig {
    pub mode: EtcMode,
    /// Odd number `f` of independent estimates; `None` picks
    /// `max(3, odd ceil(log MNT))` in theory mode and 1 otherwise.
    pub repetitions: Option<usize>,
    pub fixed_m: Option<usize>,
    /// `C` in the sampling rate.
    pub c_sampling: f64,
    pub regularizer: RegularizerRule,
    pub known: KnownParams,
    pub observation_mode: ObservationMode,
    pub solver: CompletionConfig,
}

impl Default for EtcConfig {
    fn default() -> Self {
        EtcConfig {
            mode: EtcMode::Theory,
            repetitions: None,
            fixed_m: None,
            c_sampling: 1.0,
            regularizer: RegularizerRule::Scaled { c_lambda: 1.0 },
            known: KnownParams::default(),
            observation_mode: ObservationMode::Strict,
            solver: CompletionConfig::default(),
        }
    }
}

impl EtcConfig {
    pub fn theory(known: KnownParams) -> Self {
        EtcConfig { known, ..Default::default() }
    }

    /// `m` exploration rounds in a single pass.
    pub fn fixed(m: usize) -> Self {
        EtcConfig {
            mode: EtcMode::FixedExploration,
            repetitions: Some(1),
            fixed_m: Some(m),
            regularizer: RegularizerRule::default(),
            solver: CompletionConfig { partition: false, ..CompletionConfig::default() },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.regularizer.validate()?;
        if let Some(f) = self.repetitions {
            if f == 0 || f % 2 == 0 {
                return Err(Error::invalid("repetitions", "must be odd and positive"));
            }
        }
        if !(self.c_sampling > 0.0) {
            return Err(Error::invalid("c_sampling", "must be positive"));
        }
        match self.mode {
            EtcMode::Theory => {
                self.known.sigma()?;
                self.known.rank()?;
                self.known.mu()?;
                self.known.max_abs_reward()?;
            }
            EtcMode::FixedExploration => {
                let m = self.fixed_m.ok_or_else(|| Error::invalid("fixed_m", "required in fixed exploration mode"))?;
                if m < self.repetitions.unwrap_or(1) {
                    return Err(Error::invalid("fixed_m", "must be at least the number of repetitions"));
                }
            }
        }
        Ok(())
    }

    fn resolved_repetitions(&self, m: usize, n: usize, horizon: usize) -> usize {
        match (self.repetitions, self.mode) {
            (Some(f), _) => f,
            (None, EtcMode::Theory) => default_repetitions(m, n, horizon),
            (None, EtcMode::FixedExploration) => 1,
        }
    }
}

/// Exploration parameters derived from the known model quantities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtcDerivedParams {
    pub v: f64,
    pub p: f64,
    pub s: usize,
    /// `C_lambda sigma sqrt(d2 p)`, absent when the rule does not use it.
    pub lambda: Option<f64>,
    pub d2: usize,
    /// `v <= p`: a single repetition already meets the target.
    pub edge_case: bool,
}

/// `v = (N ||P||)^(-2/3) (T sigma r / sqrt(d2) sqrt(mu³ log d2))^(2/3)`,
/// `p = C mu² log³(d2) / d2` and `s = ceil(v / p)`.
pub fn derive_etc_params(config: &EtcConfig, num_users: usize, num_items: usize, horizon: usize) -> Result<EtcDerivedParams> {
    let k = &config.known;
    let (sigma, rank, mu, scale) = (k.sigma()?, k.rank()?, k.mu()?, k.max_abs_reward()?);
    let d2 = num_users.min(num_items);
    if d2 < 2 {
        return Err(Error::invalid("d2", "min(M, N) must be at least 2"));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid("max_abs_reward", "must be positive"));
    }
    let d = d2 as f64;
    let inner = horizon as f64 * sigma * rank as f64 / math::sqrt(d) * math::sqrt(mu * mu * mu * math::ln(d));
    let v = math::powf(num_items as f64 * scale, -2.0 / 3.0) * math::powf(inner, 2.0 / 3.0);
    let p = sampling_probability(mu, d2, config.c_sampling);
    let edge_case = v <= p;
    let s = if edge_case { 1 } else { ceil(v / p) as usize };
    let lambda = match config.regularizer {
        RegularizerRule::Scaled { c_lambda } => Some(crate::matcomp::scaled_regularizer(c_lambda, sigma, d2, p)),
        RegularizerRule::Fixed { value } => Some(value),
        RegularizerRule::SpectralFraction { .. } => None,
    };
    Ok(EtcDerivedParams { v, p, s, lambda, d2, edge_case })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtcReport {
    pub mode: EtcMode,
    pub repetitions: usize,
    pub derived: Option<EtcDerivedParams>,
    /// Rounds spent in each completed or started pass.
    pub pass_rounds: Vec<usize>,
    /// `lambda` of every block of every finished pass.
    pub pass_regularizers: Vec<Vec<f64>>,
    pub degenerate_passes: usize,
    pub exploration_rounds: usize,
    /// First commit round, if exploration finished within the horizon.
    pub commit_round: Option<usize>,
}

/// Called with the pass index and the freshly completed estimate of that
/// pass, before it enters the median.
pub type PassHook = Box<dyn FnMut(usize, &mut CompletionEstimate) + Send>;

/// Explore with `f` independent estimation passes, take their entrywise
/// median, then recommend each user's estimated best item forever.
pub struct EtcPolicy {
    config: EtcConfig,
    num_users: usize,
    num_items: usize,
    repetitions: usize,
    derived: Option<EtcDerivedParams>,
    protocol: Protocol,
    rng: RngStream,
    pass: Option<JointPass>,
    estimates: Vec<CompletionEstimate>,
    committed: Option<Vec<usize>>,
    hook: Option<PassHook>,
    report: EtcReport,
}

impl core::fmt::Debug for EtcPolicy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("EtcPolicy").field("config", &self.config).field("report", &self.report).finish_non_exhaustive()
    }
}

impl EtcPolicy {
    pub fn new(config: EtcConfig, num_users: usize, num_items: usize, horizon: usize, rng: RngStream) -> Result<Self> {
        config.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::invalid("shape", "need at least one user and one item"));
        }
        let derived = match config.mode {
            EtcMode::Theory => Some(derive_etc_params(&config, num_users, num_items, horizon)?),
            EtcMode::FixedExploration => None,
        };
        let repetitions = config.resolved_repetitions(num_users, num_items, horizon);
        Ok(EtcPolicy {
            report: EtcReport {
                mode: config.mode,
                repetitions,
                derived,
                pass_rounds: Vec::new(),
                pass_regularizers: Vec::new(),
                degenerate_passes: 0,
                exploration_rounds: 0,
                commit_round: None,
            },
            config,
            num_users,
            num_items,
            repetitions,
            derived,
            protocol: Protocol::new(num_users, horizon),
            rng,
            pass: None,
            estimates: Vec::new(),
            committed: None,
            hook: None,
        })
    }

    pub fn with_pass_hook(mut self, hook: PassHook) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn derived(&self) -> Option<&EtcDerivedParams> {
        self.derived.as_ref()
    }

    pub fn committed(&self) -> Option<&[usize]> {
        self.committed.as_deref()
    }

    /// The median estimate is kept only through the committed items; this
    /// returns the estimates of the finished passes.
    pub fn pass_estimates(&self) -> &[CompletionEstimate] {
        &self.estimates
    }

    fn pass_rounds(&self, pass: usize) -> usize {
        let m = self.config.fixed_m.unwrap_or(0);
        m / self.repetitions + usize::from(pass < m % self.repetitions)
    }

    fn start_pass(&mut self) -> Result<()> {
        let users: Vec<usize> = (0..self.num_users).collect();
        let items: Vec<usize> = (0..self.num_items).collect();
        let plan = match self.derived {
            Some(d) => MaskPlan::Bernoulli { p: d.p, repetitions: d.s },
            None => MaskPlan::PerRow { rounds: self.pass_rounds(self.estimates.len()) },
        };
        let task = Task::new(&users, &items, plan, &mut self.rng)?;
        self.report.pass_rounds.push(task.rounds);
        self.pass = Some(JointPass::new(self.num_users, alloc::vec![task], Vec::new(), self.config.observation_mode)?);
        Ok(())
    }

    fn finish_pass(&mut self) -> Result<()> {
        let pass = self.pass.take().ok_or_else(|| Error::Protocol("no pass to finish".into()))?;
        let task = &pass.tasks[0];
        let d2 = self.num_users.min(self.num_items);
        let cfg = self.config.regularizer.resolve(&self.config.solver, &self.config.known, d2, task.p)?;
        let mut est = task.complete(self.num_users, self.num_items, &cfg, &mut self.rng)?;
        if est.degenerate {
            self.report.degenerate_passes += 1;
        }
        if let Some(hook) = self.hook.as_mut() {
            hook(self.estimates.len(), &mut est);
        }
        self.report.pass_regularizers.push(est.regularizers.clone());
        self.estimates.push(est);
        Ok(())
    }

    fn commit(&mut self) -> Result<()> {
        let median = median_of_estimates(&self.estimates)?;
        let items: Vec<usize> = (0..self.num_items).collect();
        self.committed = Some((0..self.num_users).map(|u| row_argmax(&median.estimate, u, &items)).collect());
        self.report.commit_round = Some(self.protocol.rounds_done());
        Ok(())
    }

    /// Moves past finished (or empty) passes until there is a round to play
    /// or the policy has committed.
    fn advance(&mut self) -> Result<()> {
        loop {
            if self.committed.is_some() {
                return Ok(());
            }
            match &self.pass {
                Some(p) if !p.is_done() => return Ok(()),
                Some(_) => self.finish_pass()?,
                None => {}
            }
            if self.estimates.len() == self.repetitions {
                self.commit()?;
            } else if self.pass.is_none() {
                self.start_pass()?;
            }
        }
    }
}

impl Policy for EtcPolicy {
    fn name(&self) -> String {
        match (self.config.mode, self.config.fixed_m) {
            (EtcMode::FixedExploration, Some(m)) => alloc::format!("etc:{m}"),
            _ => "etc".into(),
        }
    }

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn next_recommendations(&mut self, round: usize) -> Result<Vec<usize>> {
        self.protocol.begin(round)?;
        self.advance()?;
        if let Some(c) = &self.committed {
            return Ok(c.clone());
        }
        let pass = self.pass.as_mut().ok_or_else(|| Error::Protocol("no active pass".into()))?;
        Ok(pass.recommend(&mut self.rng))
    }

    fn observe(&mut self, round: usize, rewards: &[f64]) -> Result<()> {
        self.protocol.end(round, rewards)?;
        if self.committed.is_none() {
            if let Some(pass) = self.pass.as_mut() {
                pass.observe(rewards);
                self.report.exploration_rounds += 1;
            }
            if self.pass.as_ref().is_some_and(|p| p.is_done()) && !self.protocol.finished() {
                self.advance()?;
            }
        }
        Ok(())
    }

    fn finished(&self) -> bool {
        self.protocol.finished()
    }

    fn report(&self) -> PolicyReport {
        PolicyReport::Etc(self.report.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known() -> KnownParams {
        KnownParams { sigma: Some(0.1f64.sqrt()), rank: Some(1), mu: Some(1.0), max_abs_reward: Some(0.5) }
    }

    #[test]
    fn doubling_horizon_scales_v() {
        let cfg = EtcConfig::theory(known());
        let a = derive_etc_params(&cfg, 100, 150, 1000).unwrap();
        let b = derive_etc_params(&cfg, 100, 150, 2000).unwrap();
        assert!((b.v / a.v - 2f64.powf(2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn reference_setup_values() {
        let cfg = EtcConfig::theory(known());
        let d = derive_etc_params(&cfg, 100, 150, 1000).unwrap();
        assert_eq!(d.d2, 100);
        let l = 100f64.ln();
        assert!((d.p - l * l * l / 100.0).abs() < 1e-12);
        let inner = 1000.0 * 0.1f64.sqrt() / 10.0 * l.sqrt();
        let v = (150.0 * 0.5f64).powf(-2.0 / 3.0) * inner.powf(2.0 / 3.0);
        assert!((d.v - v).abs() < 1e-12);
        assert_eq!(d.s, (v / d.p).ceil().max(1.0) as usize);
        assert!((d.lambda.unwrap() - 0.1f64.sqrt() * (100.0 * d.p).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn small_horizon_hits_edge_case() {
        let d = derive_etc_params(&EtcConfig::theory(known()), 100, 150, 10).unwrap();
        assert!(d.edge_case);
        assert_eq!(d.s, 1);
    }

    #[test]
    fn missing_known_quantities() {
        assert!(EtcConfig::theory(KnownParams::default()).validate().is_err());
        assert!(EtcConfig { fixed_m: None, ..EtcConfig::fixed(3) }.validate().is_err());
        assert!(EtcConfig { repetitions: Some(2), ..EtcConfig::fixed(3) }.validate().is_err());
    }

    #[test]
    fn fixed_rounds_split_over_passes() {
        let cfg = EtcConfig { repetitions: Some(3), ..EtcConfig::fixed(10) };
        let p = EtcPolicy::new(cfg, 4, 5, 20, RngStream::from_seed(0)).unwrap();
        assert_eq!((0..3).map(|k| p.pass_rounds(k)).collect::<Vec<_>>(), vec![4, 3, 3]);
    }
}
