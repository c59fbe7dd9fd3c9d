//! Parameter-setting rules that tie sampling rate and repetitions to a
//! target entrywise accuracy.

use serde::{Deserialize, Serialize};

use crate::math::{self, ceil_odd};
use crate::{Error, Result};

/// `(p, s)` returned by [`theory_params`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub p: f64,
    pub s: usize,
    /// `s` before the ceiling.
    pub s_unrounded: f64,
    /// The requested accuracy exceeds `||P||_inf`, outside the regime where
    /// the noise condition is implied.
    pub accuracy_exceeds_scale: bool,
}

/// `p = C mu² log³(d2) / d2`, clamped to `(0, 1]`.
pub fn sampling_probability(mu: f64, d2: usize, c_sampling: f64) -> f64 {
    let d = d2.max(2) as f64;
    let l = math::ln(d);
    (c_sampling * mu * mu * l * l * l / d).clamp(f64::MIN_POSITIVE, 1.0)
}

/// `p = C mu² log³(d2) / d2` and `s = ceil((c sigma r sqrt(mu) / (eta log d2))²)`.
#[allow(clippy::too_many_arguments)]
pub fn theory_params(
    target_accuracy: f64,
    sigma: f64,
    rank: usize,
    mu: f64,
    d2: usize,
    c_sampling: f64,
    c_repetition: f64,
    max_abs_reward: Option<f64>,
) -> Result<TheoryParams> {
    if !(target_accuracy > 0.0) {
        return Err(Error::invalid("target_accuracy", "must be positive"));
    }
    if d2 < 2 {
        return Err(Error::invalid("d2", "must be at least 2"));
    }
    if !(sigma >= 0.0) || !(mu > 0.0) {
        return Err(Error::invalid("sigma/mu", "sigma must be nonnegative and mu positive"));
    }
    let p = sampling_probability(mu, d2, c_sampling);
    let ratio = c_repetition * sigma * rank as f64 * math::sqrt(mu) / (target_accuracy * math::ln(d2 as f64));
    let s_unrounded = ratio * ratio;
    let s = (math::ceil(s_unrounded) as usize).max(1);
    Ok(TheoryParams {
        p,
        s,
        s_unrounded,
        accuracy_exceeds_scale: max_abs_reward.is_some_and(|scale| target_accuracy > scale),
    })
}

/// `lambda = C_lambda sigma sqrt(d2 p)`.
pub fn scaled_regularizer(c_lambda: f64, sigma: f64, d2: usize, p: f64) -> f64 {
    c_lambda * sigma * math::sqrt(d2 as f64 * p)
}

/// Odd number of median repetitions `ceil(log(M N / delta))`.
pub fn median_repetitions(num_users: usize, num_items: usize, failure_budget: f64) -> usize {
    ceil_odd(math::ln(num_users as f64 * num_items as f64 / failure_budget))
}

/// `max(3, ceil(log(M N T)))` rounded up to odd.
pub fn default_repetitions(num_users: usize, num_items: usize, horizon: usize) -> usize {
    ceil_odd(math::ln(num_users as f64 * num_items as f64 * horizon.max(1) as f64)).max(3)
}

/// Round bound `s (N p + sqrt(N p log(M / delta)))` of one estimation call,
/// without the unspecified constant.
pub fn analytic_round_bound(num_users: usize, num_items: usize, p: f64, s: usize, failure_budget: f64) -> f64 {
    let np = num_items as f64 * p;
    s as f64 * (np + math::sqrt(np * math::ln(num_users as f64 / failure_budget)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_accuracy_gives_single_repetition() {
        let (sigma, r, mu, d2) = (0.3, 1, 1.0f64, 100usize);
        let eta = sigma * r as f64 * mu.sqrt() / (d2 as f64).ln();
        let tp = theory_params(eta, sigma, r, mu, d2, 1.0, 1.0, None).unwrap();
        assert_eq!(tp.s, 1);
    }

    #[test]
    fn halving_accuracy_quadruples_repetitions() {
        let a = theory_params(0.01, 0.3, 1, 1.0, 100, 1.0, 1.0, None).unwrap();
        let b = theory_params(0.005, 0.3, 1, 1.0, 100, 1.0, 1.0, None).unwrap();
        assert!((b.s_unrounded / a.s_unrounded - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_formula_at_d2_100() {
        let tp = theory_params(0.1, 0.3, 1, 1.0, 100, 1.0, 1.0, Some(0.5)).unwrap();
        let expected = 100f64.ln().powi(3) / 100.0;
        assert!((tp.p - expected).abs() < 1e-15);
        assert!((tp.p - 0.977).abs() < 1e-3);
        assert!(!tp.accuracy_exceeds_scale);
        assert_eq!(sampling_probability(1.0, 10_000, 100.0), 1.0);
    }

    #[test]
    fn accuracy_above_scale_is_flagged() {
        let tp = theory_params(1.0, 0.3, 1, 1.0, 100, 1.0, 1.0, Some(0.5)).unwrap();
        assert!(tp.accuracy_exceeds_scale);
        assert!(theory_params(0.0, 0.3, 1, 1.0, 100, 1.0, 1.0, None).is_err());
        assert!(theory_params(0.1, 0.3, 1, 1.0, 1, 1.0, 1.0, None).is_err());
    }

    #[test]
    fn repetition_counts_are_odd() {
        assert_eq!(default_repetitions(100, 150, 1000), 17);
        assert_eq!(default_repetitions(2, 2, 1), 3);
        assert_eq!(median_repetitions(100, 150, 0.05) % 2, 1);
    }
}
