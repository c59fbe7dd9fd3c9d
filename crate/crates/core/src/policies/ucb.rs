use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyReport, Protocol};
use crate::math::{self, argmax};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UcbReport {
    pub exploration_coefficient: f64,
}

/// Independent UCB per user over all items.
///
/// Round `t` (1-based) first plays item `t - 1` for `t <= N`, then the item
/// maximizing `mean + c sqrt(ln t / n)`, lowest index first on ties.
#[derive(Clone, Debug)]
pub struct UcbPolicy {
    num_users: usize,
    num_items: usize,
    coefficient: f64,
    counts: Vec<u32>,
    means: Vec<f64>,
    last: Vec<usize>,
    protocol: Protocol,
}

impl UcbPolicy {
    pub fn new(num_users: usize, num_items: usize, coefficient: f64, horizon: usize) -> Result<Self> {
        if !(coefficient > 0.0 && coefficient.is_finite()) {
            return Err(Error::invalid("ucb_coefficient", "must be positive"));
        }
        if num_items == 0 {
            return Err(Error::invalid("num_items", "must be positive"));
        }
        Ok(UcbPolicy {
            num_users,
            num_items,
            coefficient,
            counts: alloc::vec![0; num_users * num_items],
            means: alloc::vec![0.0; num_users * num_items],
            last: alloc::vec![0; num_users],
            protocol: Protocol::new(num_users, horizon),
        })
    }

    pub fn count(&self, user: usize, item: usize) -> u32 {
        self.counts[user * self.num_items + item]
    }

    pub fn mean(&self, user: usize, item: usize) -> f64 {
        self.means[user * self.num_items + item]
    }
}

impl Policy for UcbPolicy {
    fn name(&self) -> String {
        "ucb".into()
    }

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn next_recommendations(&mut self, round: usize) -> Result<Vec<usize>> {
        self.protocol.begin(round)?;
        if round < self.num_items {
            self.last.fill(round);
            return Ok(self.last.clone());
        }
        let log_t = math::ln((round + 1) as f64);
        let n = self.num_items;
        for u in 0..self.num_users {
            let row = u * n..(u + 1) * n;
            let scores = self.means[row.clone()]
                .iter()
                .zip(&self.counts[row])
                .map(|(&m, &c)| m + self.coefficient * math::sqrt(log_t / c as f64));
            self.last[u] = argmax(scores).unwrap_or(0);
        }
        Ok(self.last.clone())
    }

    fn observe(&mut self, round: usize, rewards: &[f64]) -> Result<()> {
        self.protocol.end(round, rewards)?;
        for (u, (&item, &r)) in self.last.iter().zip(rewards).enumerate() {
            let k = u * self.num_items + item;
            self.counts[k] += 1;
            self.means[k] += (r - self.means[k]) / self.counts[k] as f64;
        }
        Ok(())
    }

    fn finished(&self) -> bool {
        self.protocol.finished()
    }

    fn report(&self) -> PolicyReport {
        PolicyReport::Ucb(UcbReport { exploration_coefficient: self.coefficient })
    }
}
