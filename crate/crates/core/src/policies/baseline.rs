use alloc::string::String;
use alloc::vec::Vec;

use super::{Policy, PolicyReport, Protocol};
use crate::env::RewardModel;
use crate::{Error, Result};

/// Always recommends each user's true best item.
#[derive(Clone, Debug)]
pub struct OraclePolicy {
    best: Vec<usize>,
    protocol: Protocol,
}

impl OraclePolicy {
    pub fn new(model: &RewardModel, horizon: usize) -> Self {
        let best: Vec<usize> = (0..model.num_users()).map(|u| model.best_item(u)).collect();
        OraclePolicy { protocol: Protocol::new(best.len(), horizon), best }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn num_users(&self) -> usize {
        self.best.len()
    }

    fn next_recommendations(&mut self, round: usize) -> Result<Vec<usize>> {
        self.protocol.begin(round)?;
        Ok(self.best.clone())
    }

    fn observe(&mut self, round: usize, rewards: &[f64]) -> Result<()> {
        self.protocol.end(round, rewards)
    }

    fn finished(&self) -> bool {
        self.protocol.finished()
    }

    fn report(&self) -> PolicyReport {
        PolicyReport::Oracle
    }
}

/// Recommends the same item to every user in every round.
#[derive(Clone, Debug)]
pub struct FixedItemPolicy {
    item: usize,
    num_users: usize,
    protocol: Protocol,
}

impl FixedItemPolicy {
    pub fn new(item: usize, num_users: usize, num_items: usize, horizon: usize) -> Result<Self> {
        if item >= num_items {
            return Err(Error::IndexOutOfRange { what: "item", index: item, bound: num_items });
        }
        Ok(FixedItemPolicy { item, num_users, protocol: Protocol::new(num_users, horizon) })
    }
}

impl Policy for FixedItemPolicy {
    fn name(&self) -> String {
        alloc::format!("fixed:{}", self.item)
    }

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn next_recommendations(&mut self, round: usize) -> Result<Vec<usize>> {
        self.protocol.begin(round)?;
        Ok(alloc::vec![self.item; self.num_users])
    }

    fn observe(&mut self, round: usize, rewards: &[f64]) -> Result<()> {
        self.protocol.end(round, rewards)
    }

    fn finished(&self) -> bool {
        self.protocol.finished()
    }

    fn report(&self) -> PolicyReport {
        PolicyReport::Fixed { item: self.item }
    }
}
