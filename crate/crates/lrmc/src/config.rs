//! The flat experiment configuration.
//!
//! One TOML table of scalar and array keys. Every key has a default, unknown
//! keys are rejected and `--set key=value` overrides are applied before
//! deserialization so they get the same checks as the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lrmc_core::env::NoiseKind;
use lrmc_core::harness::{EnvSpec, PolicySpec, RunSpec, DEFAULT_REPETITIONS};
use lrmc_core::matcomp::{CompletionConfig, ObservationMode};
use lrmc_core::policies::{EtcConfig, KnownParams, LabelThreshold, OctalConfig, RegularizerRule};
use serde::{Deserialize, Serialize};

use crate::matrix_csv::{load_matrix_csv, MatrixCsvError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error(transparent)]
    Matrix(#[from] MatrixCsvError),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Theory,
    #[default]
    Practical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// `Gap / 2`: item factors are uniform on `[-gap, gap]`.
    pub gap: f64,
    pub sigma2: f64,
    /// Defaults to gaussian when `sigma2 > 0`, else none.
    pub noise_kind: Option<NoiseKind>,
    /// Expected rewards from a dense CSV instead of the synthetic model.
    pub csv_path: Option<PathBuf>,

    /// Policy of `simulate`: etc, etc:<m>, octal, octal_small_m, ucb, oracle, fixed:<item>.
    pub policy: String,
    /// Policies compared by `sweep-gap`.
    pub policies: Vec<String>,
    pub schedule: ScheduleMode,
    /// Exploration rounds of `etc` in practical mode.
    pub etc_m: usize,
    /// Odd number of independent estimates per estimation call.
    pub median_repetitions: Option<usize>,
    pub c_sampling: f64,
    pub c_lambda: f64,
    /// Fixed nuclear-norm weight; overrides every other regularizer rule.
    pub lambda: Option<f64>,
    /// Weight as a fraction of the spectral norm of each zero-filled block.
    pub lambda_fraction: Option<f64>,
    /// Near-square block partitioning; the policy preset decides when unset.
    pub partition: Option<bool>,
    pub observation_mode: ObservationMode,
    pub solver_max_iterations: usize,
    pub solver_rel_tolerance: f64,
    pub continuation: bool,
    pub ucb_coefficient: f64,
    pub octal_a: f64,
    pub octal_c_repetition: f64,
    pub octal_c_delta: f64,
    pub octal_robust_fraction: Option<f64>,
    pub octal_min_cluster_scale: f64,
    pub octal_label_threshold: LabelThreshold,

    pub horizon: usize,
    pub seed: u64,
    /// Seeds per configuration: `seed, seed + 1, ...`.
    pub repetitions: usize,
    /// Values of `gap` for `sweep-gap`.
    pub gap_grid: Vec<f64>,
    /// Exploration lengths for `sweep-explore`.
    pub m_grid: Vec<usize>,
    /// Adds the realized-reward regret column to `simulate` output.
    pub realized_column: bool,

    /// Sampling rate of `complete`.
    pub p: f64,
    /// Passes of `complete`.
    pub s: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = CompletionConfig::default();
        ExperimentConfig {
            num_users: 100,
            num_items: 150,
            gap: 0.5,
            sigma2: 0.1,
            noise_kind: None,
            csv_path: None,
            policy: "octal".into(),
            policies: ["octal", "etc:5", "etc:15", "ucb"].map(String::from).to_vec(),
            schedule: ScheduleMode::Practical,
            etc_m: 15,
            median_repetitions: None,
            c_sampling: 1.0,
            c_lambda: 1.0,
            lambda: None,
            lambda_fraction: None,
            partition: None,
            observation_mode: ObservationMode::Strict,
            solver_max_iterations: solver.max_iterations,
            solver_rel_tolerance: solver.rel_tolerance,
            continuation: solver.continuation,
            ucb_coefficient: std::f64::consts::SQRT_2,
            octal_a: 7.0,
            octal_c_repetition: 1.0,
            octal_c_delta: 1.0,
            octal_robust_fraction: None,
            octal_min_cluster_scale: 1.0,
            octal_label_threshold: LabelThreshold::TwoA,
            horizon: 1000,
            seed: 0,
            repetitions: DEFAULT_REPETITIONS,
            gap_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            m_grid: vec![1, 5, 15, 25, 40, 50, 60, 70],
            realized_column: false,
            p: 0.5,
            s: 1,
        }
    }
}

/// Splits `key=value`; the value is read as a TOML value, or as a bare
/// string when it does not parse as one.
fn parse_override(item: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{item}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Parse(format!("override `{item}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

impl ExperimentConfig {
    /// The document `text` with `overrides` applied on top.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let (key, value) = parse_override(item)?;
            table.insert(key, value);
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("the configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.csv_path.is_none() {
            if self.num_users == 0 {
                return Err(invalid("num_users", "must be positive"));
            }
            if self.num_items < 2 {
                return Err(invalid("num_items", "must be at least 2"));
            }
        }
        if !(self.gap >= 0.0 && self.gap.is_finite()) {
            return Err(invalid("gap", "must be a nonnegative finite number"));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(invalid("sigma2", "must be a nonnegative finite number"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be positive"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        if let Some(f) = self.median_repetitions {
            if f == 0 || f % 2 == 0 {
                return Err(invalid("median_repetitions", "must be odd and positive"));
            }
        }
        if self.lambda.is_some() && self.lambda_fraction.is_some() {
            return Err(invalid("lambda", "set at most one of `lambda` and `lambda_fraction`"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(invalid("lambda", "must be a nonnegative finite number"));
            }
        }
        if let Some(f) = self.lambda_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(invalid("lambda_fraction", "must lie in [0, 1)"));
            }
        }
        if !(self.ucb_coefficient > 0.0 && self.ucb_coefficient.is_finite()) {
            return Err(invalid("ucb_coefficient", "must be positive"));
        }
        if let Some(r) = self.octal_robust_fraction {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid("octal_robust_fraction", "must lie in (0, 1]"));
            }
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(invalid("p", "must lie in (0, 1]"));
        }
        if self.s == 0 {
            return Err(invalid("s", "must be at least 1"));
        }
        self.policy_spec(&self.policy).map_err(|e| rekey(e, "policy"))?;
        for p in &self.policies {
            self.policy_spec(p).map_err(|e| rekey(e, "policies"))?;
        }
        Ok(())
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind.unwrap_or_else(|| NoiseKind::default_for(self.sigma2))
    }

    /// The synthetic model, or the CSV model when `csv_path` is set.
    pub fn env_spec(&self) -> Result<EnvSpec, ConfigError> {
        match &self.csv_path {
            Some(path) => {
                let model = load_matrix_csv(path, self.sigma2)?.with_noise_kind(self.noise_kind());
                Ok(EnvSpec::Model(Arc::new(model)))
            }
            None => Ok(EnvSpec::Rank1Gap {
                num_users: self.num_users,
                num_items: self.num_items,
                gap: 2.0 * self.gap,
                noise_variance: self.sigma2,
                noise_kind: self.noise_kind(),
            }),
        }
    }

    pub fn run_spec(&self, policy: PolicySpec) -> Result<RunSpec, ConfigError> {
        Ok(RunSpec { env: self.env_spec()?, policy, horizon: self.horizon, seed: self.seed, repetitions: self.repetitions })
    }

    fn regularizer(&self, preset: RegularizerRule) -> RegularizerRule {
        match (self.lambda, self.lambda_fraction) {
            (Some(value), _) => RegularizerRule::Fixed { value },
            (None, Some(fraction)) => RegularizerRule::SpectralFraction { fraction },
            (None, None) if self.schedule == ScheduleMode::Theory => RegularizerRule::Scaled { c_lambda: self.c_lambda },
            (None, None) => preset,
        }
    }

    fn solver(&self, preset: &CompletionConfig) -> CompletionConfig {
        CompletionConfig {
            max_iterations: self.solver_max_iterations,
            rel_tolerance: self.solver_rel_tolerance,
            continuation: self.continuation,
            partition: self.partition.unwrap_or(preset.partition),
            ..preset.clone()
        }
    }

    fn etc(&self, fixed_m: Option<usize>) -> EtcConfig {
        let preset = match fixed_m {
            Some(m) => EtcConfig::fixed(m),
            None => EtcConfig::theory(KnownParams::default()),
        };
        EtcConfig {
            repetitions: self.median_repetitions.or(preset.repetitions),
            c_sampling: self.c_sampling,
            regularizer: self.regularizer(preset.regularizer),
            observation_mode: self.observation_mode,
            solver: self.solver(&preset.solver),
            ..preset
        }
    }

    fn octal(&self, small_m: bool) -> OctalConfig {
        let preset = match self.schedule {
            ScheduleMode::Theory => OctalConfig::theory(KnownParams::default()),
            ScheduleMode::Practical => OctalConfig::practical(),
        };
        OctalConfig {
            a: self.octal_a,
            c_sampling: self.c_sampling,
            c_repetition: self.octal_c_repetition,
            c_delta: self.octal_c_delta,
            regularizer: self.regularizer(preset.regularizer),
            repetitions: self.median_repetitions.or(preset.repetitions),
            small_m_variant: small_m,
            label_threshold: self.octal_label_threshold,
            min_cluster_scale: self.octal_min_cluster_scale,
            robust_fraction: self.octal_robust_fraction.unwrap_or(preset.robust_fraction),
            observation_mode: self.observation_mode,
            solver: self.solver(&preset.solver),
            ..preset
        }
    }

    /// The policy named by `label`.
    pub fn policy_spec(&self, label: &str) -> Result<PolicySpec, ConfigError> {
        let (name, arg) = match label.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (label, None),
        };
        let number = |what: &'static str| -> Result<usize, ConfigError> {
            arg.and_then(|a| a.parse().ok()).ok_or_else(|| invalid(what, format!("`{label}` needs a nonnegative integer after `:`")))
        };
        let spec = match (name, arg) {
            ("etc", None) => match self.schedule {
                ScheduleMode::Theory => PolicySpec::Etc(self.etc(None)),
                ScheduleMode::Practical => PolicySpec::Etc(self.etc(Some(self.etc_m))),
            },
            ("etc", Some(_)) => PolicySpec::Etc(self.etc(Some(number("policy")?))),
            ("octal", None) => PolicySpec::Octal(self.octal(false)),
            ("octal_small_m", None) => PolicySpec::Octal(self.octal(true)),
            ("ucb", None) => PolicySpec::Ucb { exploration_coefficient: self.ucb_coefficient },
            ("oracle", None) => PolicySpec::Oracle,
            ("fixed", Some(_)) => PolicySpec::Fixed { item: number("policy")? },
            _ => return Err(invalid("policy", format!("unknown policy `{label}`"))),
        };
        match &spec {
            PolicySpec::Etc(c) => c.validate(),
            PolicySpec::Octal(c) => c.validate(),
            _ => Ok(()),
        }
        .map_err(|e| ConfigError::Parse(format!("policy `{label}`: {e}")))?;
        Ok(spec)
    }
}

fn rekey(e: ConfigError, key: &'static str) -> ConfigError {
    match e {
        ConfigError::Invalid { reason, .. } => ConfigError::Invalid { key, reason },
        other => other,
    }
}
