use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ObservationMask;
use crate::env::RewardSource;
use crate::{Error, Result, RngStream};

/// Which observations feed the completion problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Only indices of the sampled mask are averaged.
    #[default]
    Strict,
    /// Filler and padding recommendations are averaged too.
    AllObserved,
}

/// One planned recommendation for one user in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    /// Position of the item in the schedule's item set.
    pub item_pos: usize,
    /// Whether the pair belongs to the mask.
    pub masked: bool,
}

impl Slot {
    pub fn counts(&self, mode: ObservationMode) -> bool {
        self.masked || mode == ObservationMode::AllObserved
    }
}

/// A logged recommendation (global indices, round relative to the schedule start).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub round: usize,
    pub user: usize,
    pub item: usize,
}

/// Round-by-round recommendations that visit every masked index once per pass.
///
/// Each pass lasts `rounds_per_pass` rounds. A user whose masked items are
/// exhausted within a pass receives uniformly random filler items from the
/// item set. A trailing partial pass covers the leftover rounds.
#[derive(Clone, Debug)]
pub struct ExplorationSchedule {
    user_set: Vec<usize>,
    item_set: Vec<usize>,
    rounds: Vec<Vec<Slot>>,
    rounds_per_pass: usize,
}

impl ExplorationSchedule {
    pub fn new(
        mask: &ObservationMask,
        total_rounds: usize,
        rounds_per_pass: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let n_items = mask.item_set().len();
        if n_items == 0 {
            return Err(Error::Schedule("empty item set".into()));
        }
        let b = mask.row_max_count();
        if rounds_per_pass < b {
            return Err(Error::Schedule(alloc::format!(
                "rounds_per_pass {rounds_per_pass} cannot fit a row of {b} masked items"
            )));
        }
        if rounds_per_pass == 0 && total_rounds > 0 {
            return Err(Error::Schedule("rounds_per_pass must be positive".into()));
        }
        let n_users = mask.user_set().len();
        let mut rounds: Vec<Vec<Slot>> = Vec::with_capacity(total_rounds);
        let mut order: Vec<usize> = Vec::new();
        let mut pass_start = 0;
        while pass_start < total_rounds {
            let pass_len = rounds_per_pass.min(total_rounds - pass_start);
            let mut pass: Vec<Vec<Slot>> = (0..pass_len).map(|_| Vec::with_capacity(n_users)).collect();
            for u in 0..n_users {
                order.clear();
                order.extend_from_slice(mask.row(u));
                order.shuffle(rng);
                for (t, round) in pass.iter_mut().enumerate() {
                    let slot = match order.get(t) {
                        Some(&item_pos) => Slot { item_pos, masked: true },
                        None => Slot { item_pos: rng.random_range(0..n_items), masked: false },
                    };
                    round.push(slot);
                }
            }
            rounds.extend(pass);
            pass_start += pass_len;
        }
        Ok(ExplorationSchedule {
            user_set: mask.user_set().to_vec(),
            item_set: mask.item_set().to_vec(),
            rounds,
            rounds_per_pass,
        })
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn rounds_per_pass(&self) -> usize {
        self.rounds_per_pass
    }

    pub fn user_set(&self) -> &[usize] {
        &self.user_set
    }

    pub fn item_set(&self) -> &[usize] {
        &self.item_set
    }

    pub fn slot(&self, round: usize, user_pos: usize) -> Slot {
        self.rounds[round][user_pos]
    }

    /// Global item recommended to the user at `user_pos` in `round`.
    pub fn item(&self, round: usize, user_pos: usize) -> usize {
        self.item_set[self.rounds[round][user_pos].item_pos]
    }
}

/// Running sums and counts of observed rewards over `user_set x item_set`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationAccumulator {
    user_set: Vec<usize>,
    item_set: Vec<usize>,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl ObservationAccumulator {
    pub fn new(user_set: Vec<usize>, item_set: Vec<usize>) -> Self {
        let cells = user_set.len() * item_set.len();
        ObservationAccumulator { user_set, item_set, sums: alloc::vec![0.0; cells], counts: alloc::vec![0; cells] }
    }

    pub fn user_set(&self) -> &[usize] {
        &self.user_set
    }

    pub fn item_set(&self) -> &[usize] {
        &self.item_set
    }

    fn cell(&self, user_pos: usize, item_pos: usize) -> usize {
        user_pos * self.item_set.len() + item_pos
    }

    pub fn record(&mut self, user_pos: usize, item_pos: usize, value: f64) {
        let c = self.cell(user_pos, item_pos);
        self.sums[c] += value;
        self.counts[c] += 1;
    }

    pub fn count(&self, user_pos: usize, item_pos: usize) -> u32 {
        self.counts[self.cell(user_pos, item_pos)]
    }

    pub fn sum(&self, user_pos: usize, item_pos: usize) -> f64 {
        self.sums[self.cell(user_pos, item_pos)]
    }

    /// `Z_uj`, the average of the recorded rewards, if any were recorded.
    pub fn average(&self, user_pos: usize, item_pos: usize) -> Option<f64> {
        let c = self.cell(user_pos, item_pos);
        (self.counts[c] > 0).then(|| self.sums[c] / self.counts[c] as f64)
    }

    /// All averaged cells as `(user_pos, item_pos, Z)`.
    pub fn averaged(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.item_set.len().max(1);
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(k, &c)| (k / n, k % n, self.sums[k] / c as f64))
    }

    pub fn num_observed(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Records one round of `schedule` given the rewards of its users (by position).
    pub fn record_round(
        &mut self,
        schedule: &ExplorationSchedule,
        round: usize,
        rewards: impl Fn(usize) -> f64,
        mode: ObservationMode,
    ) {
        for u in 0..schedule.user_set.len() {
            let slot = schedule.slot(round, u);
            if slot.counts(mode) {
                self.record(u, slot.item_pos, rewards(u));
            }
        }
    }
}

/// Output of [`collect_rounds`].
#[derive(Clone, Debug)]
pub struct Collected {
    pub accumulator: ObservationAccumulator,
    pub log: Vec<Recommendation>,
    pub rounds: usize,
}

/// Runs `total_rounds` rounds of masked exploration against `source` and
/// averages the masked observations.
pub fn collect_rounds(
    source: &mut dyn RewardSource,
    mask: &ObservationMask,
    total_rounds: usize,
    rounds_per_pass: usize,
    mode: ObservationMode,
    rng: &mut RngStream,
) -> Result<Collected> {
    let schedule = ExplorationSchedule::new(mask, total_rounds, rounds_per_pass, rng)?;
    let mut accumulator = ObservationAccumulator::new(mask.user_set().to_vec(), mask.item_set().to_vec());
    let users = mask.user_set().len();
    let mut log = Vec::with_capacity(total_rounds * users);
    let mut rewards = alloc::vec![0.0; users];
    for t in 0..schedule.len() {
        for (u, &user) in schedule.user_set().iter().enumerate() {
            let item = schedule.item(t, u);
            rewards[u] = source.observe(user, item)?;
            log.push(Recommendation { round: t, user, item });
        }
        accumulator.record_round(&schedule, t, |u| rewards[u], mode);
    }
    Ok(Collected { accumulator, log, rounds: schedule.len() })
}
