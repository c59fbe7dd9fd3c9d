//! Several masked exploration schedules (plus padded bystanders) run side by
//! side over a common number of rounds.

use alloc::vec::Vec;

use rand::Rng;

use crate::matcomp::{
    complete, sample_mask, sample_mask_per_row, CompletionConfig, CompletionEstimate, ExplorationSchedule,
    ObservationAccumulator, ObservationMask, ObservationMode,
};
use crate::{Error, Result, RngStream};

/// How the mask of one sub-problem is drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum MaskPlan {
    /// Exactly `min(rounds, |V|)` items per user, spread over `rounds` rounds.
    PerRow { rounds: usize },
    /// Bernoulli(`p`) mask observed over `s` passes of `b` rounds.
    Bernoulli { p: f64, repetitions: usize },
}

/// One sub-problem of a joint pass.
#[derive(Clone, Debug)]
pub(crate) struct Task {
    schedule: ExplorationSchedule,
    accumulator: ObservationAccumulator,
    /// Effective sampling rate of the mask.
    pub p: f64,
    /// Rounds of the schedule.
    pub rounds: usize,
    pub repetitions: usize,
    pub degenerate: bool,
}

impl Task {
    pub fn new(users: &[usize], items: &[usize], plan: MaskPlan, rng: &mut RngStream) -> Result<Task> {
        if users.is_empty() || items.is_empty() {
            return Err(Error::Schedule("sub-problem with an empty user or item set".into()));
        }
        let (mask, rounds, b, s, p) = match plan {
            MaskPlan::PerRow { rounds } => {
                let b = rounds.min(items.len());
                let mask = sample_mask_per_row(users, items, b, rng)?;
                let s = if b == 0 { 0 } else { rounds.div_ceil(b) };
                (mask, rounds, b, s, b as f64 / items.len() as f64)
            }
            MaskPlan::Bernoulli { p, repetitions } => {
                let mut mask = sample_mask(users, items, p, rng)?;
                if mask.row_max_count() == 0 {
                    mask = sample_mask(users, items, p, rng)?;
                }
                let b = mask.row_max_count();
                (mask, b * repetitions, b, repetitions, p)
            }
        };
        Self::from_mask(&mask, rounds, b, s, p, rng)
    }

    fn from_mask(mask: &ObservationMask, rounds: usize, b: usize, s: usize, p: f64, rng: &mut RngStream) -> Result<Task> {
        let schedule = ExplorationSchedule::new(mask, rounds, b.max(1), rng)?;
        Ok(Task {
            accumulator: ObservationAccumulator::new(mask.user_set().to_vec(), mask.item_set().to_vec()),
            schedule,
            p,
            rounds,
            repetitions: s,
            degenerate: b == 0,
        })
    }

    pub fn users(&self) -> &[usize] {
        self.schedule.user_set()
    }

    pub fn items(&self) -> &[usize] {
        self.schedule.item_set()
    }

    /// Completes the collected observations into an `M x N` estimate.
    pub fn complete(
        &self,
        num_users: usize,
        num_items: usize,
        config: &CompletionConfig,
        rng: &mut RngStream,
    ) -> Result<CompletionEstimate> {
        if self.degenerate {
            return Ok(CompletionEstimate::zeros(num_users, num_items));
        }
        complete(&self.accumulator, num_users, num_items, config, rng)
    }
}

/// Users recommended uniformly random items from `items`.
#[derive(Clone, Debug)]
pub(crate) struct PadGroup {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct JointPass {
    pub tasks: Vec<Task>,
    pads: Vec<PadGroup>,
    length: usize,
    cursor: usize,
    mode: ObservationMode,
    current: Vec<usize>,
}

impl JointPass {
    /// Every one of the `num_users` users must belong to exactly one task or
    /// pad group. The pass lasts as long as its longest task; shorter tasks
    /// pad with random items from their own item set.
    pub fn new(num_users: usize, tasks: Vec<Task>, pads: Vec<PadGroup>, mode: ObservationMode) -> Result<Self> {
        let mut covered = alloc::vec![false; num_users];
        let task_users = tasks.iter().flat_map(|t| t.users().iter());
        let pad_users = pads.iter().flat_map(|p| p.users.iter());
        for &u in task_users.chain(pad_users) {
            if u >= num_users {
                return Err(Error::IndexOutOfRange { what: "user", index: u, bound: num_users });
            }
            if core::mem::replace(&mut covered[u], true) {
                return Err(Error::Schedule(alloc::format!("user {u} assigned twice in one pass")));
            }
        }
        if let Some(u) = covered.iter().position(|c| !c) {
            return Err(Error::Schedule(alloc::format!("user {u} has no recommendations in the pass")));
        }
        if pads.iter().any(|p| p.items.is_empty() && !p.users.is_empty()) {
            return Err(Error::Schedule("pad group without items".into()));
        }
        let length = tasks.iter().map(|t| t.rounds).max().unwrap_or(0);
        Ok(JointPass { tasks, pads, length, cursor: 0, mode, current: alloc::vec![0; num_users] })
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.length
    }

    /// Recommendations for the current round of the pass.
    pub fn recommend(&mut self, rng: &mut RngStream) -> Vec<usize> {
        let t = self.cursor;
        for task in &self.tasks {
            let items = task.items();
            for (pos, &u) in task.users().iter().enumerate() {
                self.current[u] = if t < task.rounds {
                    task.schedule.item(t, pos)
                } else {
                    items[rng.random_range(0..items.len())]
                };
            }
        }
        for pad in &self.pads {
            for &u in &pad.users {
                self.current[u] = pad.items[rng.random_range(0..pad.items.len())];
            }
        }
        self.current.clone()
    }

    pub fn observe(&mut self, rewards: &[f64]) {
        let t = self.cursor;
        for task in &mut self.tasks {
            if t < task.rounds {
                let users = task.schedule.user_set();
                task.accumulator.record_round(&task.schedule, t, |pos| rewards[users[pos]], self.mode);
            }
        }
        self.cursor += 1;
    }
}
