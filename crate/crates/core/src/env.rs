//! Ground-truth reward models and the noisy observation model.
//!
//! A [`RewardModel`] holds the hidden expected-reward matrix `P = U Vᵀ`
//! together with its spectral diagnostics. Models are immutable once built
//! and can be shared freely between simulation workers; randomness only
//! enters through the [`RngStream`] handed to [`RewardModel::sample_reward`].

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{self, argmax, argmin};
use crate::{Error, Result, RngStream};

/// Relative singular-value cutoff used to decide numerical rank.
pub const NUMERICAL_RANK_TOLERANCE: f64 = 1e-8;

/// Subsets are enumerated exhaustively for local incoherence up to this length.
pub const EXHAUSTIVE_SUBSET_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// Uniform on `[-sqrt(3 s2), +sqrt(3 s2)]`, which has variance `s2`.
    BoundedUniform,
    None,
}

impl NoiseKind {
    pub fn default_for(noise_variance_proxy: f64) -> Self {
        if noise_variance_proxy > 0.0 {
            NoiseKind::Gaussian
        } else {
            NoiseKind::None
        }
    }
}

/// Sign clusters and extreme items of a rank-1 model `P = u vᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rank1Structure {
    /// Users with `u_i >= 0`.
    pub cluster_pos: Vec<usize>,
    /// Users with `u_i < 0`.
    pub cluster_neg: Vec<usize>,
    /// `argmax_t v_t`, lowest index on ties.
    pub best_item_pos: usize,
    /// `argmin_t v_t`, lowest index on ties.
    pub best_item_neg: usize,
    /// `max(|v_max / v_min|, |v_min / v_max|)`; infinite when one extreme is 0.
    pub item_extreme_ratio: f64,
}

impl Rank1Structure {
    fn from_factors(u: &[f64], v: &[f64]) -> Self {
        let (cluster_pos, cluster_neg) = (0..u.len()).partition(|&i| u[i] >= 0.0);
        let best_item_pos = argmax(v.iter().copied()).unwrap_or(0);
        let best_item_neg = argmin(v.iter().copied()).unwrap_or(0);
        let (hi, lo) = (v[best_item_pos], v[best_item_neg]);
        let item_extreme_ratio = if hi == 0.0 || lo == 0.0 {
            f64::INFINITY
        } else {
            math::abs(hi / lo).max(math::abs(lo / hi))
        };
        Rank1Structure { cluster_pos, cluster_neg, best_item_pos, best_item_neg, item_extreme_ratio }
    }

    /// True sign class of `user`: `true` for the nonnegative cluster.
    pub fn is_positive(&self, user: usize) -> bool {
        self.cluster_pos.binary_search(&user).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncoherenceReport {
    /// `(M / r) max_i ||Ū_i||²` of the left singular factor.
    pub mu_left: f64,
    /// `(N / r) max_j ||V̄_j||²` of the right singular factor.
    pub mu_right: f64,
    /// Smallest `mu` for which the leading left singular vector passes the
    /// local check on every subset of size at least `alpha * M`.
    pub local_mu: f64,
    pub alpha: f64,
    /// Whether the leading left singular vector is `(alpha, mu_left)`-locally incoherent.
    pub local_holds: bool,
}

#[derive(Clone, Debug)]
pub struct RewardModel {
    expected_rewards: DMatrix<f64>,
    rank: usize,
    user_factors: DMatrix<f64>,
    item_factors: DMatrix<f64>,
    singular_values: Vec<f64>,
    left_singular: DMatrix<f64>,
    right_singular: DMatrix<f64>,
    condition_number: f64,
    rank_deficient: bool,
    noise_variance_proxy: f64,
    noise_kind: NoiseKind,
    rank1: Option<Rank1Structure>,
    row_best: Vec<f64>,
}

impl RewardModel {
    /// Synthetic rank-1 model: `u_i` uniform on `{+1, -1}`, `v_j` uniform on
    /// `[-gap/2, +gap/2]`.
    ///
    /// The item draws are stored as offsets `w_j - 1/2` and multiplied by
    /// `gap`, so models sharing a seed differ only by an exact rescaling of
    /// the item factors.
    pub fn rank1_gap(
        num_users: usize,
        num_items: usize,
        gap: f64,
        noise_variance_proxy: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_users < 1 {
            return Err(Error::invalid("num_users", "must be at least 1"));
        }
        if num_items < 2 {
            return Err(Error::invalid("num_items", "must be at least 2"));
        }
        if !(gap > 0.0) || !gap.is_finite() {
            return Err(Error::invalid("gap", "must be a positive finite number"));
        }
        check_variance(noise_variance_proxy)?;
        let mut rng = RngStream::from_seed(seed);
        let u: Vec<f64> =
            (0..num_users).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let v: Vec<f64> = (0..num_items).map(|_| gap * (rng.random::<f64>() - 0.5)).collect();
        Self::from_factors(
            DMatrix::from_column_slice(num_users, 1, &u),
            DMatrix::from_column_slice(num_items, 1, &v),
            noise_variance_proxy,
        )
    }

    /// Rank-`r` model from explicit factors (`M x r` and `N x r`).
    ///
    /// A factor pair whose product has numerical rank below `r` is accepted
    /// and reported through [`RewardModel::rank_deficient`].
    pub fn from_factors(
        user_factors: DMatrix<f64>,
        item_factors: DMatrix<f64>,
        noise_variance_proxy: f64,
    ) -> Result<Self> {
        let rank = user_factors.ncols();
        if rank == 0 || item_factors.ncols() != rank {
            return Err(Error::ShapeMismatch {
                context: "factor ranks",
                expected: (item_factors.nrows(), rank),
                found: (item_factors.nrows(), item_factors.ncols()),
            });
        }
        let (m, n) = (user_factors.nrows(), item_factors.nrows());
        if m == 0 || n == 0 {
            return Err(Error::invalid("factors", "need at least one user and one item"));
        }
        if rank > m.min(n) {
            return Err(Error::invalid("rank", "must not exceed min(num_users, num_items)"));
        }
        check_variance(noise_variance_proxy)?;
        let expected = &user_factors * item_factors.transpose();
        let spectrum = Spectrum::of(&expected, rank)?;
        let rank1 = (rank == 1).then(|| {
            Rank1Structure::from_factors(user_factors.column(0).as_slice(), item_factors.column(0).as_slice())
        });
        Ok(Self::assemble(expected, rank, user_factors, item_factors, spectrum, noise_variance_proxy, rank1))
    }

    /// Model from a dense expected-reward matrix. The rank is the numerical
    /// rank at relative tolerance [`NUMERICAL_RANK_TOLERANCE`]; the stored
    /// factors are the truncated SVD `U = Ū Σ`, `V = V̄`.
    pub fn from_dense(expected: DMatrix<f64>, noise_variance_proxy: f64) -> Result<Self> {
        let (m, n) = expected.shape();
        if m == 0 || n == 0 {
            return Err(Error::invalid("matrix", "must be nonempty"));
        }
        if expected.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix", "entries must be finite"));
        }
        check_variance(noise_variance_proxy)?;
        let full = Spectrum::of(&expected, m.min(n))?;
        let top = full.values.first().copied().unwrap_or(0.0);
        let numerical = full.values.iter().filter(|&&s| s > NUMERICAL_RANK_TOLERANCE * top).count();
        let rank = numerical.max(1);
        let spectrum = full.truncate(rank);
        let mut user_factors = spectrum.left.clone();
        for (k, s) in spectrum.values.iter().enumerate() {
            user_factors.column_mut(k).scale_mut(*s);
        }
        let item_factors = spectrum.right.clone();
        let rank1 = (numerical == 1).then(|| {
            Rank1Structure::from_factors(user_factors.column(0).as_slice(), item_factors.column(0).as_slice())
        });
        Ok(Self::assemble(expected, rank, user_factors, item_factors, spectrum, noise_variance_proxy, rank1))
    }

    fn assemble(
        expected_rewards: DMatrix<f64>,
        rank: usize,
        user_factors: DMatrix<f64>,
        item_factors: DMatrix<f64>,
        spectrum: Spectrum,
        noise_variance_proxy: f64,
        rank1: Option<Rank1Structure>,
    ) -> Self {
        let top = spectrum.values.first().copied().unwrap_or(0.0);
        let last = spectrum.values.last().copied().unwrap_or(0.0);
        let rank_deficient = !(last > NUMERICAL_RANK_TOLERANCE * top) || top == 0.0;
        let condition_number = if last > 0.0 { top / last } else { f64::INFINITY };
        let row_best = expected_rewards
            .row_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        RewardModel {
            expected_rewards,
            rank,
            user_factors,
            item_factors,
            singular_values: spectrum.values,
            left_singular: spectrum.left,
            right_singular: spectrum.right,
            condition_number,
            rank_deficient,
            noise_variance_proxy,
            noise_kind: NoiseKind::default_for(noise_variance_proxy),
            rank1,
            row_best,
        }
    }

    /// Same model with a different noise distribution.
    pub fn with_noise_kind(mut self, kind: NoiseKind) -> Self {
        self.noise_kind = kind;
        self
    }

    pub fn num_users(&self) -> usize {
        self.expected_rewards.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.expected_rewards.ncols()
    }

    pub fn expected_rewards(&self) -> &DMatrix<f64> {
        &self.expected_rewards
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn user_factors(&self) -> &DMatrix<f64> {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &DMatrix<f64> {
        &self.item_factors
    }

    /// Leading `r` singular values, nonincreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn left_singular_vectors(&self) -> &DMatrix<f64> {
        &self.left_singular
    }

    pub fn right_singular_vectors(&self) -> &DMatrix<f64> {
        &self.right_singular
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    /// Set when the product of the factors has numerical rank below `rank()`.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn noise_variance_proxy(&self) -> f64 {
        self.noise_variance_proxy
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind
    }

    /// Cluster structure, present only for rank-1 models.
    pub fn rank1(&self) -> Option<&Rank1Structure> {
        self.rank1.as_ref()
    }

    /// `||P||_inf`, the largest absolute expected reward.
    pub fn max_abs_reward(&self) -> f64 {
        self.expected_rewards.iter().fold(0.0, |m, x| m.max(math::abs(*x)))
    }

    pub fn expected_reward(&self, user: usize, item: usize) -> f64 {
        self.expected_rewards[(user, item)]
    }

    /// `mu*_u = max_j P[u, j]`.
    pub fn best_reward(&self, user: usize) -> f64 {
        self.row_best[user]
    }

    /// `argmax_j P[u, j]` with lowest-index tie-breaking.
    pub fn best_item(&self, user: usize) -> usize {
        argmax(self.expected_rewards.row(user).iter().copied()).unwrap_or(0)
    }

    /// One noisy reward `P[user, item] + E`.
    pub fn sample_reward(&self, user: usize, item: usize, rng: &mut RngStream) -> Result<f64> {
        if user >= self.num_users() {
            return Err(Error::IndexOutOfRange { what: "user", index: user, bound: self.num_users() });
        }
        if item >= self.num_items() {
            return Err(Error::IndexOutOfRange { what: "item", index: item, bound: self.num_items() });
        }
        Ok(self.expected_rewards[(user, item)] + self.draw_noise(rng))
    }

    fn draw_noise(&self, rng: &mut RngStream) -> f64 {
        let s2 = self.noise_variance_proxy;
        match self.noise_kind {
            NoiseKind::None => 0.0,
            _ if s2 == 0.0 => 0.0,
            NoiseKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                math::sqrt(s2) * z
            }
            NoiseKind::BoundedUniform => {
                let half = math::sqrt(3.0 * s2);
                rng.random_range(-half..=half)
            }
        }
    }

    /// Global and local incoherence diagnostics of the singular factors.
    pub fn incoherence_report(&self, alpha: f64) -> IncoherenceReport {
        let mu_left = coherence(&self.left_singular);
        let mu_right = coherence(&self.right_singular);
        let leading: Vec<f64> = self.left_singular.column(0).iter().copied().collect();
        let local_mu = local_coherence(&leading, alpha);
        IncoherenceReport {
            mu_left,
            mu_right,
            local_mu,
            alpha,
            local_holds: local_mu <= mu_left * (1.0 + 1e-9),
        }
    }
}

/// A noisy view of a model that serves rewards from its own random stream.
pub struct NoisyRewards<'a> {
    pub model: &'a RewardModel,
    pub rng: RngStream,
}

impl<'a> NoisyRewards<'a> {
    pub fn new(model: &'a RewardModel, rng: RngStream) -> Self {
        NoisyRewards { model, rng }
    }
}

/// Anything that returns a reward for recommending `item` to `user`.
pub trait RewardSource {
    fn num_users(&self) -> usize;
    fn num_items(&self) -> usize;
    fn observe(&mut self, user: usize, item: usize) -> Result<f64>;
}

impl RewardSource for NoisyRewards<'_> {
    fn num_users(&self) -> usize {
        self.model.num_users()
    }

    fn num_items(&self) -> usize {
        self.model.num_items()
    }

    fn observe(&mut self, user: usize, item: usize) -> Result<f64> {
        self.model.sample_reward(user, item, &mut self.rng)
    }
}

fn check_variance(s2: f64) -> Result<()> {
    if !(s2 >= 0.0) || !s2.is_finite() {
        return Err(Error::invalid("noise_variance_proxy", "must be a nonnegative finite number"));
    }
    Ok(())
}

struct Spectrum {
    values: Vec<f64>,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl Spectrum {
    /// Leading `r` singular triplets, sorted by decreasing singular value.
    fn of(matrix: &DMatrix<f64>, r: usize) -> Result<Self> {
        let svd = crate::linalg::svd(matrix)?;
        let k = r.min(svd.values.len());
        let values = svd.values[..k].to_vec();
        let left = svd.u.columns(0, k).into_owned();
        let right = svd.v_t.rows(0, k).transpose();
        Ok(Spectrum { values, left, right })
    }

    fn truncate(mut self, r: usize) -> Self {
        self.values.truncate(r);
        self.left = self.left.columns(0, r).into_owned();
        self.right = self.right.columns(0, r).into_owned();
        self
    }
}

/// Incoherence `(d / r) max_i ||F_i||²` of a `d x r` factor.
pub fn coherence(factor: &DMatrix<f64>) -> f64 {
    let (d, r) = factor.shape();
    if d == 0 || r == 0 {
        return 0.0;
    }
    let max_row = factor.row_iter().map(|row| row.norm_squared()).fold(0.0, f64::max);
    d as f64 / r as f64 * max_row
}

/// Smallest `mu` such that `||v_S||_inf <= sqrt(mu / |S|) ||v_S||_2` for all
/// subsets `S` with `|S| >= alpha * len(v)`.
///
/// Exhaustive for vectors of length at most [`EXHAUSTIVE_SUBSET_LIMIT`];
/// longer vectors use [`local_coherence_sorted`], which attains the same
/// supremum in closed form.
pub fn local_coherence(v: &[f64], alpha: f64) -> f64 {
    if v.len() <= EXHAUSTIVE_SUBSET_LIMIT {
        local_coherence_exhaustive(v, alpha)
    } else {
        local_coherence_sorted(v, alpha)
    }
}

fn min_subset_size(len: usize, alpha: f64) -> usize {
    (math::ceil(alpha.clamp(0.0, 1.0) * len as f64) as usize).max(1)
}

/// Subset enumeration over all `2^len` subsets.
pub fn local_coherence_exhaustive(v: &[f64], alpha: f64) -> f64 {
    let len = v.len();
    assert!(len < 64, "exhaustive enumeration is limited to short vectors");
    let k_min = min_subset_size(len, alpha);
    let mut worst = 0.0f64;
    for mask in 1u64..(1u64 << len) {
        let k = mask.count_ones() as usize;
        if k < k_min {
            continue;
        }
        let (mut peak, mut energy) = (0.0f64, 0.0f64);
        for (i, x) in v.iter().enumerate() {
            if mask >> i & 1 == 1 {
                peak = peak.max(x * x);
                energy += x * x;
            }
        }
        if energy > 0.0 {
            worst = worst.max(k as f64 * peak / energy);
        }
    }
    worst
}

/// Closed form of the local coherence supremum.
///
/// For a fixed subset size `k` the ratio `k max² / sum²` is maximized by the
/// largest-magnitude entry together with the `k - 1` smallest-magnitude
/// entries.
pub fn local_coherence_sorted(v: &[f64], alpha: f64) -> f64 {
    let len = v.len();
    if len == 0 {
        return 0.0;
    }
    let mut sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    sq.sort_by(f64::total_cmp);
    let peak = sq[len - 1];
    if peak == 0.0 {
        return 0.0;
    }
    let k_min = min_subset_size(len, alpha);
    let mut prefix = 0.0;
    let mut worst = 0.0f64;
    for k in 1..=len {
        if k >= 2 {
            prefix += sq[k - 2];
        }
        if k >= k_min {
            worst = worst.max(k as f64 * peak / (peak + prefix));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank1_gap_bounds_and_clusters() {
        let model = RewardModel::rank1_gap(100, 150, 1.0, 0.1, 7).unwrap();
        assert!(model.expected_rewards().iter().all(|x| x.abs() <= 0.5));
        let r1 = model.rank1().unwrap();
        let mut all: Vec<usize> = r1.cluster_pos.iter().chain(&r1.cluster_neg).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        for &u in &r1.cluster_pos {
            assert_eq!(model.best_item(u), r1.best_item_pos);
        }
        for &u in &r1.cluster_neg {
            assert_eq!(model.best_item(u), r1.best_item_neg);
        }
        assert_eq!(model.noise_kind(), NoiseKind::Gaussian);
        assert_eq!(model.rank(), 1);
    }

    #[test]
    fn rank1_gap_rejects_bad_input() {
        assert!(RewardModel::rank1_gap(3, 4, 0.0, 0.1, 1).is_err());
        assert!(RewardModel::rank1_gap(3, 4, -1.0, 0.1, 1).is_err());
        assert!(RewardModel::rank1_gap(3, 1, 1.0, 0.1, 1).is_err());
        assert!(RewardModel::rank1_gap(0, 4, 1.0, 0.1, 1).is_err());
        assert!(RewardModel::rank1_gap(3, 4, 1.0, -0.1, 1).is_err());
    }

    #[test]
    fn two_by_two_signs() {
        let model = RewardModel::from_factors(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DMatrix::from_column_slice(2, 1, &[0.9, -0.3]),
            0.0,
        )
        .unwrap();
        let r1 = model.rank1().unwrap();
        assert_eq!(r1.best_item_pos, 0);
        assert_eq!(r1.best_item_neg, 1);
        assert_eq!(model.best_item(0), 0);
        assert_eq!(model.best_item(1), 1);
        assert!((r1.item_extreme_ratio - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_argmax_matches_sign() {
        for seed in 0..20 {
            let model = RewardModel::rank1_gap(1, 3, 1.0, 0.0, seed).unwrap();
            let r1 = model.rank1().unwrap();
            let expected =
                if model.user_factors()[(0, 0)] > 0.0 { r1.best_item_pos } else { r1.best_item_neg };
            assert_eq!(model.best_item(0), expected);
        }
    }

    #[test]
    fn gap_rescale_is_exact() {
        let a = RewardModel::rank1_gap(10, 12, 0.7, 0.1, 99).unwrap();
        let b = RewardModel::rank1_gap(10, 12, 1.4, 0.1, 99).unwrap();
        assert_eq!(a.user_factors(), b.user_factors());
        for (x, y) in a.item_factors().iter().zip(b.item_factors().iter()) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn identity_factors() {
        let model =
            RewardModel::from_factors(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(model.expected_rewards(), &DMatrix::<f64>::identity(2, 2));
        assert!((model.singular_values()[0] - 1.0).abs() < 1e-12);
        assert!((model.singular_values()[1] - 1.0).abs() < 1e-12);
        assert!((model.condition_number() - 1.0).abs() < 1e-12);
        assert!(model.rank1().is_none());
    }

    #[test]
    fn analytic_rank1_svd() {
        let model = RewardModel::from_factors(
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            0.0,
        )
        .unwrap();
        assert_eq!(model.expected_rewards(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]));
        assert!((model.singular_values()[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(model.rank(), 1);
    }

    #[test]
    fn rank_deficiency_is_flagged_not_rejected() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let model = RewardModel::from_factors(u, v, 0.0).unwrap();
        assert!(model.rank_deficient());
    }

    #[test]
    fn factor_shape_errors() {
        let err = RewardModel::from_factors(DMatrix::zeros(3, 2), DMatrix::zeros(4, 1), 0.0);
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
        let err = RewardModel::from_factors(DMatrix::zeros(1, 2), DMatrix::zeros(4, 2), 0.0);
        assert!(err.is_err());
    }

    #[test]
    fn noiseless_sample_is_exact() {
        let p = DMatrix::from_row_slice(1, 2, &[0.3, 0.1]);
        let model = RewardModel::from_dense(p, 0.0).unwrap();
        let mut rng = RngStream::from_seed(1);
        assert_eq!(model.sample_reward(0, 0, &mut rng).unwrap(), 0.3);
        assert!(matches!(model.sample_reward(1, 0, &mut rng), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(model.sample_reward(0, 2, &mut rng), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn dense_rank_detection() {
        let m = RewardModel::from_dense(DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(m.rank(), 2);
        assert!(m.rank1().is_none());
        let m = RewardModel::from_dense(DMatrix::from_row_slice(2, 3, &[1., 2., 3., 2., 4., 6.]), 0.0)
            .unwrap();
        assert_eq!(m.rank(), 1);
        assert!(m.rank1().is_some());
        let diff = m.expected_rewards() - m.user_factors() * m.item_factors().transpose();
        assert!(diff.amax() < 1e-10);
    }

    #[test]
    fn coherence_extremes() {
        let m = 8;
        let flat = DMatrix::from_element(m, 1, 1.0 / (m as f64).sqrt());
        assert!((coherence(&flat) - 1.0).abs() < 1e-12);
        let mut spike = DMatrix::zeros(m, 1);
        spike[(0, 0)] = 1.0;
        assert!((coherence(&spike) - 8.0).abs() < 1e-12);

        let model = RewardModel::from_factors(spike, DMatrix::from_element(3, 1, 1.0), 0.0).unwrap();
        assert!((model.incoherence_report(0.5).mu_left - 8.0).abs() < 1e-9);
    }

    #[test]
    fn sign_vector_is_locally_incoherent() {
        let m = 8;
        let s = 1.0 / (m as f64).sqrt();
        let v: Vec<f64> = (0..m).map(|i| if i % 3 == 0 { -s } else { s }).collect();
        assert!((local_coherence(&v, 0.5) - 1.0).abs() < 1e-12);
        let model = RewardModel::from_factors(
            DMatrix::from_column_slice(m, 1, &v),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
            0.0,
        )
        .unwrap();
        let report = model.incoherence_report(0.5);
        assert!((report.mu_left - 1.0).abs() < 1e-9);
        assert!((report.local_mu - 1.0).abs() < 1e-9);
        assert!(report.local_holds);
    }

    #[test]
    fn sorted_form_matches_enumeration() {
        let mut rng = RngStream::from_seed(5);
        for len in 1..=12 {
            for _ in 0..5 {
                let v: Vec<f64> = (0..len).map(|_| rng.random::<f64>() - 0.3).collect();
                for alpha in [0.0, 0.25, 0.5, 1.0] {
                    let a = local_coherence_exhaustive(&v, alpha);
                    let b = local_coherence_sorted(&v, alpha);
                    assert!((a - b).abs() < 1e-12 * a.max(1.0), "len {len} alpha {alpha}: {a} vs {b}");
                }
            }
        }
        assert_eq!(local_coherence_sorted(&[0.0; 4], 0.5), 0.0);
    }
}
