use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::{Error, Result, RngStream};

/// A sampled index set over `user_set x item_set`.
///
/// Rows are stored per user position as sorted local item positions, so
/// `entries ⊆ user_set × item_set` holds by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask {
    user_set: Vec<usize>,
    item_set: Vec<usize>,
    rows: Vec<Vec<usize>>,
    sampling_probability: f64,
}

impl ObservationMask {
    /// Builds a mask from explicit per-user rows of local item positions.
    pub fn from_rows(
        user_set: Vec<usize>,
        item_set: Vec<usize>,
        mut rows: Vec<Vec<usize>>,
        sampling_probability: f64,
    ) -> Result<Self> {
        if rows.len() != user_set.len() {
            return Err(Error::ShapeMismatch {
                context: "mask rows",
                expected: (user_set.len(), item_set.len()),
                found: (rows.len(), item_set.len()),
            });
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last >= item_set.len() {
                    return Err(Error::IndexOutOfRange { what: "mask item", index: last, bound: item_set.len() });
                }
            }
        }
        Ok(ObservationMask { user_set, item_set, rows, sampling_probability })
    }

    /// Every pair of `user_set x item_set`.
    pub fn full(user_set: Vec<usize>, item_set: Vec<usize>) -> Self {
        let all: Vec<usize> = (0..item_set.len()).collect();
        let rows = alloc::vec![all; user_set.len()];
        ObservationMask { user_set, item_set, rows, sampling_probability: 1.0 }
    }

    pub fn user_set(&self) -> &[usize] {
        &self.user_set
    }

    pub fn item_set(&self) -> &[usize] {
        &self.item_set
    }

    pub fn sampling_probability(&self) -> f64 {
        self.sampling_probability
    }

    /// Local item positions sampled for the user at position `user_pos`.
    pub fn row(&self, user_pos: usize) -> &[usize] {
        &self.rows[user_pos]
    }

    /// `b = max_u |{j : (u, j) ∈ Ω}|`.
    pub fn row_max_count(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries as global `(user, item)` pairs.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(move |(u, row)| row.iter().map(move |&j| (self.user_set[u], self.item_set[j])))
    }
}

fn check_sets(user_set: &[usize], item_set: &[usize]) -> Result<()> {
    if user_set.is_empty() {
        return Err(Error::invalid("user_set", "must be nonempty"));
    }
    if item_set.is_empty() {
        return Err(Error::invalid("item_set", "must be nonempty"));
    }
    Ok(())
}

/// Includes each pair of `user_set x item_set` independently with probability `p`.
pub fn sample_mask(
    user_set: &[usize],
    item_set: &[usize],
    p: f64,
    rng: &mut RngStream,
) -> Result<ObservationMask> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("p", "sampling probability must lie in (0, 1]"));
    }
    check_sets(user_set, item_set)?;
    let rows = user_set
        .iter()
        .map(|_| (0..item_set.len()).filter(|_| p >= 1.0 || rng.random_bool(p)).collect())
        .collect();
    Ok(ObservationMask {
        user_set: user_set.to_vec(),
        item_set: item_set.to_vec(),
        rows,
        sampling_probability: p,
    })
}

/// Gives each user exactly `min(count, |item_set|)` distinct items, uniformly
/// at random. Used by fixed-length exploration schedules.
pub fn sample_mask_per_row(
    user_set: &[usize],
    item_set: &[usize],
    count: usize,
    rng: &mut RngStream,
) -> Result<ObservationMask> {
    check_sets(user_set, item_set)?;
    let n = item_set.len();
    let k = count.min(n);
    let rows = user_set.iter().map(|_| index::sample(rng, n, k).into_vec()).collect();
    ObservationMask::from_rows(user_set.to_vec(), item_set.to_vec(), rows, k as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn full_sampling_takes_everything() {
        let mut rng = RngStream::from_seed(0);
        let mask = sample_mask(&range(3), &range(4), 1.0, &mut rng).unwrap();
        assert_eq!(mask.len(), 12);
        assert_eq!(mask.row_max_count(), 4);
    }

    #[test]
    fn tiny_probability_gives_empty_mask() {
        let mut rng = RngStream::from_seed(0);
        let mask = sample_mask(&range(2), &range(2), 1e-9, &mut rng).unwrap();
        assert!(mask.is_empty());
        assert_eq!(mask.row_max_count(), 0);
    }

    #[test]
    fn probability_range_is_checked() {
        let mut rng = RngStream::from_seed(0);
        assert!(sample_mask(&range(2), &range(2), 0.0, &mut rng).is_err());
        assert!(sample_mask(&range(2), &range(2), 1.5, &mut rng).is_err());
        assert!(sample_mask(&[], &range(2), 0.5, &mut rng).is_err());
    }

    #[test]
    fn binomial_mask_size() {
        // |Ω| ~ Binomial(MN, p); the mean over trials must sit well inside 3 sd.
        let mut rng = RngStream::from_seed(11);
        let (m, n, p) = (100usize, 150usize, 0.5);
        let trials = 200;
        let total: usize =
            (0..trials).map(|_| sample_mask(&range(m), &range(n), p, &mut rng).unwrap().len()).sum();
        let mean = total as f64 / trials as f64;
        let sd = ((m * n) as f64 * p * (1.0 - p)).sqrt();
        assert!((mean - 7500.0).abs() <= 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn per_row_mask_has_exact_counts() {
        let mut rng = RngStream::from_seed(4);
        let mask = sample_mask_per_row(&[3, 5], &range(10), 4, &mut rng).unwrap();
        assert!(mask.rows.iter().all(|r| r.len() == 4));
        assert!((mask.sampling_probability() - 0.4).abs() < 1e-15);
        let mask = sample_mask_per_row(&[0], &range(3), 9, &mut rng).unwrap();
        assert_eq!(mask.row(0), &[0, 1, 2]);
    }

    #[test]
    fn entries_are_global_pairs() {
        let mask = ObservationMask::from_rows(vec![7, 9], vec![2, 4, 6], vec![vec![2, 0], vec![1]], 0.5)
            .unwrap();
        let e: Vec<_> = mask.entries().collect();
        assert_eq!(e, vec![(7, 2), (7, 6), (9, 4)]);
        assert!(ObservationMask::from_rows(vec![0], vec![1], vec![vec![1]], 1.0).is_err());
    }
}
