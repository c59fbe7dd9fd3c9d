use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionAxis {
    Items,
    Users,
}

/// Random split of the longer axis into `ceil(long / short)` groups so
/// each block is roughly square.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPartition {
    pub axis: PartitionAxis,
    pub num_blocks: usize,
    /// Block id of every position along the partitioned axis.
    pub assignment: Vec<usize>,
}

impl BlockPartition {
    /// Positions along the partitioned axis, grouped by block. Blocks may be empty.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = alloc::vec![Vec::new(); self.num_blocks];
        for (pos, &b) in self.assignment.iter().enumerate() {
            out[b].push(pos);
        }
        out
    }
}

/// Each index on the longer axis independently picks a block uniformly at random.
pub fn partition_near_square(num_users: usize, num_items: usize, rng: &mut RngStream) -> BlockPartition {
    let (axis, long, short) = if num_users <= num_items {
        (PartitionAxis::Items, num_items, num_users)
    } else {
        (PartitionAxis::Users, num_users, num_items)
    };
    let num_blocks = if short == 0 { 1 } else { long.div_ceil(short) };
    let assignment = if num_blocks == 1 {
        alloc::vec![0; long]
    } else {
        (0..long).map(|_| rng.random_range(0..num_blocks)).collect()
    };
    BlockPartition { axis, num_blocks, assignment }
}

/// The whole matrix as one block.
pub fn single_block(num_users: usize, num_items: usize) -> BlockPartition {
    let (axis, long) =
        if num_users <= num_items { (PartitionAxis::Items, num_items) } else { (PartitionAxis::Users, num_users) };
    BlockPartition { axis, num_blocks: 1, assignment: alloc::vec![0; long] }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_matrix_splits_items() {
        let mut rng = RngStream::from_seed(1);
        let p = partition_near_square(100, 150, &mut rng);
        assert_eq!(p.axis, PartitionAxis::Items);
        assert_eq!(p.num_blocks, 2);
        assert_eq!(p.assignment.len(), 150);
    }

    #[test]
    fn square_matrix_is_one_block() {
        let mut rng = RngStream::from_seed(1);
        let p = partition_near_square(5, 5, &mut rng);
        assert_eq!(p.num_blocks, 1);
        assert_eq!(p.blocks(), vec![(0..5).collect::<Vec<_>>()]);
    }

    #[test]
    fn tall_matrix_splits_users() {
        let mut rng = RngStream::from_seed(1);
        let p = partition_near_square(300, 100, &mut rng);
        assert_eq!(p.axis, PartitionAxis::Users);
        assert_eq!(p.num_blocks, 3);
        let blocks = p.blocks();
        assert_eq!(blocks.iter().map(Vec::len).sum::<usize>(), 300);
        let mut seen: Vec<usize> = blocks.concat();
        seen.sort();
        assert_eq!(seen, (0..300).collect::<Vec<_>>());
    }
}
