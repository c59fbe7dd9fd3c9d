//! Round-based recommendation policies.
//!
//! Every policy manages all `M` users. A round is one call to
//! [`Policy::next_recommendations`] followed by one call to
//! [`Policy::observe`] with the rewards of exactly those recommendations.

mod baseline;
mod etc;
mod joint;
mod octal;
mod ucb;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matcomp::{scaled_regularizer, CompletionConfig, RegularizerScale};
use crate::{Error, Result};

pub use baseline::{FixedItemPolicy, OraclePolicy};
pub use etc::{derive_etc_params, EtcConfig, EtcDerivedParams, EtcMode, EtcPolicy, EtcReport, PassHook};
pub use octal::{
    label_and_split, octal_delta, octal_practical_rounds, LabelThreshold, OctalConfig, OctalPolicy, OctalReport,
    PhaseEstimates, PhaseRecord, PhaseState, Schedule, SubProblemKind, SubProblemRecord,
};
pub use ucb::{UcbPolicy, UcbReport};

/// Model quantities a policy may treat as known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnownParams {
    pub sigma: Option<f64>,
    pub rank: Option<usize>,
    pub mu: Option<f64>,
    pub max_abs_reward: Option<f64>,
}

impl KnownParams {
    pub fn sigma(&self) -> Result<f64> {
        self.sigma.ok_or_else(|| Error::invalid("sigma", "required but not provided"))
    }

    pub fn rank(&self) -> Result<usize> {
        self.rank.ok_or_else(|| Error::invalid("rank", "required but not provided"))
    }

    pub fn mu(&self) -> Result<f64> {
        self.mu.ok_or_else(|| Error::invalid("mu", "required but not provided"))
    }

    pub fn max_abs_reward(&self) -> Result<f64> {
        self.max_abs_reward.ok_or_else(|| Error::invalid("max_abs_reward", "required but not provided"))
    }
}

/// How the nuclear-norm weight of each estimation call is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerRule {
    /// A fixed `lambda`.
    Fixed { value: f64 },
    /// `lambda = C_lambda sigma sqrt(d2 p)` with the known `sigma`.
    Scaled { c_lambda: f64 },
    /// `lambda` as a fraction of the spectral norm of each zero-filled block.
    SpectralFraction { fraction: f64 },
}

impl Default for RegularizerRule {
    fn default() -> Self {
        RegularizerRule::SpectralFraction { fraction: 0.5 }
    }
}

impl RegularizerRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerRule::Fixed { value } if !(value >= 0.0 && value.is_finite()) => {
                Err(Error::invalid("lambda", "must be a nonnegative finite number"))
            }
            RegularizerRule::Scaled { c_lambda } if !(c_lambda >= 0.0 && c_lambda.is_finite()) => {
                Err(Error::invalid("c_lambda", "must be a nonnegative finite number"))
            }
            RegularizerRule::SpectralFraction { fraction } if !(0.0..1.0).contains(&fraction) => {
                Err(Error::invalid("lambda_fraction", "must lie in [0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// Solver settings for a sub-problem with smaller side `d2` and
    /// effective sampling rate `p`.
    pub fn resolve(&self, base: &CompletionConfig, known: &KnownParams, d2: usize, p: f64) -> Result<CompletionConfig> {
        let mut cfg = base.clone();
        match *self {
            RegularizerRule::Fixed { value } => {
                cfg.regularizer = value;
                cfg.regularizer_scale = RegularizerScale::Absolute;
            }
            RegularizerRule::Scaled { c_lambda } => {
                cfg.regularizer = scaled_regularizer(c_lambda, known.sigma()?, d2, p);
                cfg.regularizer_scale = RegularizerScale::Absolute;
            }
            RegularizerRule::SpectralFraction { fraction } => {
                cfg.regularizer = fraction;
                cfg.regularizer_scale = RegularizerScale::SpectralFraction;
            }
        }
        Ok(cfg)
    }
}

/// Summary of what a policy did, for logs and JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicyReport {
    Etc(EtcReport),
    Octal(OctalReport),
    Ucb(UcbReport),
    Oracle,
    Fixed { item: usize },
}

/// The round protocol every policy follows.
pub trait Policy {
    fn name(&self) -> String;
    fn num_users(&self) -> usize;
    /// One item per user for round `round` (0-based, consecutive).
    fn next_recommendations(&mut self, round: usize) -> Result<Vec<usize>>;
    /// Rewards of the recommendations of `round`, one per user.
    fn observe(&mut self, round: usize, rewards: &[f64]) -> Result<()>;
    /// The horizon has been reached.
    fn finished(&self) -> bool;
    fn report(&self) -> PolicyReport;
}

/// Enforces the alternation of recommendation and observation.
#[derive(Clone, Debug)]
pub(crate) struct Protocol {
    next_round: usize,
    awaiting: bool,
    horizon: usize,
    num_users: usize,
}

impl Protocol {
    pub fn new(num_users: usize, horizon: usize) -> Self {
        Protocol { next_round: 0, awaiting: false, horizon, num_users }
    }

    pub fn begin(&mut self, round: usize) -> Result<()> {
        if self.awaiting {
            return Err(Error::Protocol(alloc::format!("round {} was not observed", self.next_round)));
        }
        if round != self.next_round {
            return Err(Error::Protocol(alloc::format!("expected round {}, got {round}", self.next_round)));
        }
        if round >= self.horizon {
            return Err(Error::Protocol(alloc::format!("round {round} is past the horizon {}", self.horizon)));
        }
        self.awaiting = true;
        Ok(())
    }

    pub fn end(&mut self, round: usize, rewards: &[f64]) -> Result<()> {
        if !self.awaiting || round != self.next_round {
            return Err(Error::Protocol(alloc::format!("observation for round {round} without recommendations")));
        }
        if rewards.len() != self.num_users {
            return Err(Error::ShapeMismatch {
                context: "rewards",
                expected: (self.num_users, 1),
                found: (rewards.len(), 1),
            });
        }
        self.awaiting = false;
        self.next_round += 1;
        Ok(())
    }

    pub fn rounds_done(&self) -> usize {
        self.next_round
    }

    pub fn finished(&self) -> bool {
        self.next_round >= self.horizon
    }
}

/// Argmax of one row of `estimate` over `items`, lowest index first on ties.
pub(crate) fn row_argmax(estimate: &crate::DMatrix<f64>, user: usize, items: &[usize]) -> usize {
    let pos = crate::math::argmax(items.iter().map(|&j| estimate[(user, j)])).unwrap_or(0);
    items[pos]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_order() {
        let mut p = Protocol::new(2, 2);
        assert!(p.end(0, &[0.0, 0.0]).is_err());
        p.begin(0).unwrap();
        assert!(p.begin(0).is_err());
        assert!(p.end(0, &[0.0]).is_err());
        p.end(0, &[0.0, 0.0]).unwrap();
        assert!(p.begin(0).is_err());
        p.begin(1).unwrap();
        p.end(1, &[1.0, 1.0]).unwrap();
        assert!(p.finished());
        assert!(p.begin(2).is_err());
    }

    #[test]
    fn regularizer_rules() {
        let base = CompletionConfig::default();
        let known = KnownParams { sigma: Some(0.5), ..Default::default() };
        let cfg = RegularizerRule::Scaled { c_lambda: 2.0 }.resolve(&base, &known, 100, 0.25).unwrap();
        assert!((cfg.regularizer - 5.0).abs() < 1e-12);
        assert!(RegularizerRule::Scaled { c_lambda: 1.0 }.resolve(&base, &KnownParams::default(), 4, 1.0).is_err());
        let cfg = RegularizerRule::SpectralFraction { fraction: 0.3 }.resolve(&base, &known, 1, 1.0).unwrap();
        assert_eq!(cfg.regularizer_scale, RegularizerScale::SpectralFraction);
        assert!(RegularizerRule::SpectralFraction { fraction: 1.0 }.validate().is_err());
        assert!(RegularizerRule::Fixed { value: 5.0 }.validate().is_ok());
    }
}
