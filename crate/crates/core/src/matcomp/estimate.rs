use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{
    analytic_round_bound, collect_rounds, partition_near_square, sample_mask, single_block, solve_block, BlockObservations,
    CompletionConfig, ObservationAccumulator, ObservationMode, PartitionAxis, Recommendation,
};
use crate::env::RewardSource;
use crate::math::median_odd;
use crate::{Error, Result, RngStream};

/// An `M x N` estimate assembled from per-block solves. Entries outside the
/// estimated `user_set x item_set` are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionEstimate {
    pub estimate: DMatrix<f64>,
    pub per_block_objective: Vec<f64>,
    pub iterations_used: Vec<usize>,
    pub converged: Vec<bool>,
    /// `lambda` used on each block.
    pub regularizers: Vec<f64>,
    /// No observations were available; the estimate is all zero.
    pub degenerate: bool,
}

impl CompletionEstimate {
    pub fn zeros(num_users: usize, num_items: usize) -> Self {
        CompletionEstimate {
            estimate: DMatrix::zeros(num_users, num_items),
            per_block_objective: Vec::new(),
            iterations_used: Vec::new(),
            converged: Vec::new(),
            regularizers: Vec::new(),
            degenerate: true,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.estimate.amax()
    }
}

/// Solves the completion problem for the observations in `accumulator` and
/// embeds the result into an `num_users x num_items` matrix.
///
/// When either side has fewer than two indices there is nothing to complete:
/// observed cells keep their averages and unobserved cells take the mean of
/// their row's observed cells.
pub fn complete(
    accumulator: &ObservationAccumulator,
    num_users: usize,
    num_items: usize,
    config: &CompletionConfig,
    rng: &mut RngStream,
) -> Result<CompletionEstimate> {
    config.validate()?;
    let users = accumulator.user_set();
    let items = accumulator.item_set();
    if let Some(&u) = users.iter().find(|&&u| u >= num_users) {
        return Err(Error::IndexOutOfRange { what: "user", index: u, bound: num_users });
    }
    if let Some(&j) = items.iter().find(|&&j| j >= num_items) {
        return Err(Error::IndexOutOfRange { what: "item", index: j, bound: num_items });
    }
    let mut out = CompletionEstimate::zeros(num_users, num_items);
    if users.is_empty() || items.is_empty() {
        return Ok(out);
    }
    out.degenerate = accumulator.num_observed() == 0;
    if out.degenerate {
        return Ok(out);
    }

    if users.len() < 2 || items.len() < 2 {
        direct_average(accumulator, &mut out.estimate);
        return Ok(out);
    }

    let partition = if config.partition {
        partition_near_square(users.len(), items.len(), rng)
    } else {
        single_block(users.len(), items.len())
    };
    let blocks = partition.blocks();
    // Position of every index on the partitioned axis inside its block.
    let mut local = alloc::vec![0usize; partition.assignment.len()];
    for block in &blocks {
        for (k, &pos) in block.iter().enumerate() {
            local[pos] = k;
        }
    }
    let mut data: Vec<BlockObservations> = blocks
        .iter()
        .map(|b| match partition.axis {
            PartitionAxis::Items => BlockObservations::new(users.len(), b.len()),
            PartitionAxis::Users => BlockObservations::new(b.len(), items.len()),
        })
        .collect();
    for (u, j, z) in accumulator.averaged() {
        match partition.axis {
            PartitionAxis::Items => data[partition.assignment[j]].push(u, local[j], z),
            PartitionAxis::Users => data[partition.assignment[u]].push(local[u], j, z),
        }
    }
    for (block, obs) in blocks.iter().zip(&data) {
        if block.is_empty() {
            continue;
        }
        let sol = solve_block(obs, config)?;
        for r in 0..obs.rows {
            for c in 0..obs.cols {
                let (u, j) = match partition.axis {
                    PartitionAxis::Items => (r, block[c]),
                    PartitionAxis::Users => (block[r], c),
                };
                out.estimate[(users[u], items[j])] = sol.matrix[(r, c)];
            }
        }
        out.per_block_objective.push(sol.objective);
        out.iterations_used.push(sol.iterations);
        out.converged.push(sol.converged);
        out.regularizers.push(sol.regularizer);
    }
    Ok(out)
}

fn direct_average(acc: &ObservationAccumulator, target: &mut DMatrix<f64>) {
    let (users, items) = (acc.user_set(), acc.item_set());
    for (u, &user) in users.iter().enumerate() {
        let observed: Vec<f64> = (0..items.len()).filter_map(|j| acc.average(u, j)).collect();
        let fill = if observed.is_empty() { 0.0 } else { observed.iter().sum::<f64>() / observed.len() as f64 };
        for (j, &item) in items.iter().enumerate() {
            target[(user, item)] = acc.average(u, j).unwrap_or(fill);
        }
    }
}

/// Output of [`estimate`].
#[derive(Clone, Debug)]
pub struct EstimateOutcome {
    pub estimate: CompletionEstimate,
    pub log: Vec<Recommendation>,
    /// `b * s`, the rounds actually spent.
    pub rounds_used: usize,
    /// `b`, the largest number of masked items of any user.
    pub rounds_per_pass: usize,
    /// Round bound `s (N p + sqrt(N p log(M / delta)))` for comparison.
    pub analytic_round_bound: f64,
}

/// One full estimation call: mask at rate `p`, `s` passes of `b` rounds,
/// block-wise completion. The regularizer is `config.regularizer`.
///
/// An empty mask is resampled once; if it is still empty the zero estimate
/// is returned with its degenerate flag set.
#[allow(clippy::too_many_arguments)]
pub fn estimate(
    source: &mut dyn RewardSource,
    user_set: &[usize],
    item_set: &[usize],
    p: f64,
    repetitions: usize,
    mode: ObservationMode,
    config: &CompletionConfig,
    rng: &mut RngStream,
) -> Result<EstimateOutcome> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions", "must be at least 1"));
    }
    let (m, n) = (source.num_users(), source.num_items());
    let mut mask = sample_mask(user_set, item_set, p, rng)?;
    if mask.row_max_count() == 0 {
        mask = sample_mask(user_set, item_set, p, rng)?;
    }
    let b = mask.row_max_count();
    let bound = analytic_round_bound(user_set.len(), item_set.len(), p, repetitions, config.failure_budget);
    if b == 0 {
        return Ok(EstimateOutcome {
            estimate: CompletionEstimate::zeros(m, n),
            log: Vec::new(),
            rounds_used: 0,
            rounds_per_pass: 0,
            analytic_round_bound: bound,
        });
    }
    let collected = collect_rounds(source, &mask, b * repetitions, b, mode, rng)?;
    let estimate = complete(&collected.accumulator, m, n, config, rng)?;
    Ok(EstimateOutcome {
        estimate,
        log: collected.log,
        rounds_used: collected.rounds,
        rounds_per_pass: b,
        analytic_round_bound: bound,
    })
}

/// Entrywise median of an odd number of estimates of identical shape.
pub fn median_of_estimates(estimates: &[CompletionEstimate]) -> Result<CompletionEstimate> {
    let f = estimates.len();
    if f == 0 || f.is_multiple_of(2) {
        return Err(Error::invalid("estimates", "need an odd, nonzero number of estimates"));
    }
    let shape = estimates[0].estimate.shape();
    if let Some(bad) = estimates.iter().find(|e| e.estimate.shape() != shape) {
        return Err(Error::ShapeMismatch { context: "median of estimates", expected: shape, found: bad.estimate.shape() });
    }
    let mut buf = alloc::vec![0.0; f];
    let estimate = DMatrix::from_fn(shape.0, shape.1, |i, j| {
        for (slot, e) in buf.iter_mut().zip(estimates) {
            *slot = e.estimate[(i, j)];
        }
        median_odd(&mut buf)
    });
    Ok(CompletionEstimate {
        estimate,
        per_block_objective: estimates.iter().flat_map(|e| e.per_block_objective.iter().copied()).collect(),
        iterations_used: estimates.iter().flat_map(|e| e.iterations_used.iter().copied()).collect(),
        converged: estimates.iter().flat_map(|e| e.converged.iter().copied()).collect(),
        regularizers: estimates.iter().flat_map(|e| e.regularizers.iter().copied()).collect(),
        degenerate: estimates.iter().all(|e| e.degenerate),
    })
}
