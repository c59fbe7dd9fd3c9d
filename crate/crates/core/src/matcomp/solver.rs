//! Proximal gradient for nuclear-norm regularized least squares on one block:
//!
//! ```text
//! min_Q  1/2 sum_{(i,j) observed} (Q_ij - Z_ij)^2 + lambda ||Q||_*
//! ```
//!
//! The data term has Lipschitz constant 1, so the default unit step gives a
//! monotone objective. The regularizer is approached through a short
//! continuation path (warm-started solves at geometrically decreasing
//! `lambda`) before the final solve at the requested value; the reported
//! objective trace belongs to that final solve.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::svt::{shrink_gram, spectral_norm};
use crate::{Error, Result};

/// Settings of the per-block convex solve and of the completion targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionConfig {
    /// `lambda`.
    pub regularizer: f64,
    pub max_iterations: usize,
    /// Stop once the relative objective decrease falls below this.
    pub rel_tolerance: f64,
    pub step_size: f64,
    /// Target entrywise accuracy `eta`, when known.
    pub target_accuracy: Option<f64>,
    /// Failure budget `delta`; sets the number of median repetitions.
    pub failure_budget: f64,
    /// Warm-start from larger regularizers before the final solve.
    pub continuation: bool,
    /// Interpretation of `regularizer`.
    pub regularizer_scale: RegularizerScale,
    /// Split rectangular problems into near-square blocks.
    pub partition: bool,
}

/// How `regularizer` becomes the `lambda` of one block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerScale {
    /// `lambda = regularizer`.
    #[default]
    Absolute,
    /// `lambda = regularizer * ||zero-filled block||_op`, so `regularizer` is a
    /// fraction in `[0, 1)` of the smallest value that zeroes the block.
    SpectralFraction,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            regularizer: 1.0,
            max_iterations: 5000,
            rel_tolerance: 1e-7,
            step_size: 1.0,
            target_accuracy: None,
            failure_budget: 0.05,
            continuation: true,
            regularizer_scale: RegularizerScale::Absolute,
            partition: true,
        }
    }
}

impl CompletionConfig {
    pub fn with_regularizer(mut self, lambda: f64) -> Self {
        self.regularizer = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularizer >= 0.0) || !self.regularizer.is_finite() {
            return Err(Error::invalid("regularizer", "must be a nonnegative finite number"));
        }
        if self.regularizer_scale == RegularizerScale::SpectralFraction && self.regularizer >= 1.0 {
            return Err(Error::invalid("regularizer", "a spectral fraction must lie in [0, 1)"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::invalid("rel_tolerance", "must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size < 2.0) {
            return Err(Error::invalid("step_size", "must lie in (0, 2)"));
        }
        if let Some(eta) = self.target_accuracy {
            if !(eta > 0.0) {
                return Err(Error::invalid("target_accuracy", "must be positive"));
            }
        }
        if !(self.failure_budget > 0.0 && self.failure_budget < 1.0) {
            return Err(Error::invalid("failure_budget", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Averaged observations of one `rows x cols` block, as local `(i, j, Z_ij)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockObservations {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl BlockObservations {
    pub fn new(rows: usize, cols: usize) -> Self {
        BlockObservations { rows, cols, entries: Vec::new() }
    }

    /// Fully observed block.
    pub fn dense(z: &DMatrix<f64>) -> Self {
        let mut b = Self::new(z.nrows(), z.ncols());
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                b.entries.push((i, j, z[(i, j)]));
            }
        }
        b
    }

    pub fn push(&mut self, row: usize, col: usize, z: f64) {
        self.entries.push((row, col, z));
    }

    /// Zero-filled data matrix.
    pub fn zero_filled(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.rows, self.cols);
        for &(i, j, z) in &self.entries {
            y[(i, j)] = z;
        }
        y
    }

    pub fn loss(&self, q: &DMatrix<f64>) -> f64 {
        0.5 * self.entries.iter().map(|&(i, j, z)| (q[(i, j)] - z) * (q[(i, j)] - z)).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSolution {
    pub matrix: DMatrix<f64>,
    /// Final objective at the requested regularizer.
    pub objective: f64,
    /// Iterations across the continuation path and the final solve.
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration of the final solve.
    pub objective_trace: Vec<f64>,
    /// The `lambda` actually used.
    pub regularizer: f64,
}

const CONTINUATION_FACTOR: f64 = 0.25;
const CONTINUATION_FLOOR: f64 = 1e-6;
const STAGE_TOLERANCE: f64 = 1e-4;
const STAGE_MAX_ITERATIONS: usize = 300;

/// Approximate minimizer of the block objective.
///
/// An empty block returns the zero matrix, which minimizes the objective
/// when nothing is observed.
pub fn solve_block(block: &BlockObservations, config: &CompletionConfig) -> Result<BlockSolution> {
    config.validate()?;
    for &(i, j, z) in &block.entries {
        if i >= block.rows || j >= block.cols {
            return Err(Error::IndexOutOfRange { what: "block entry", index: i.max(j), bound: block.rows.max(block.cols) });
        }
        if !z.is_finite() {
            return Err(Error::invalid("observations", "must be finite"));
        }
    }
    let mut q = DMatrix::zeros(block.rows, block.cols);
    if block.entries.is_empty() || block.rows == 0 || block.cols == 0 {
        return Ok(BlockSolution { matrix: q, objective: 0.0, iterations: 0, converged: true, objective_trace: Vec::new(), regularizer: 0.0 });
    }
    let lambda_max = spectral_norm(&block.zero_filled())?;
    let lambda = match config.regularizer_scale {
        RegularizerScale::Absolute => config.regularizer,
        RegularizerScale::SpectralFraction => config.regularizer * lambda_max,
    };
    let mut nuclear = 0.0;
    let mut iterations = 0;

    if config.continuation {
        let stop = lambda.max(CONTINUATION_FLOOR * lambda_max);
        let mut stage = lambda_max * CONTINUATION_FACTOR;
        while stage > stop {
            let run = ista(block, &mut q, &mut nuclear, stage, config.step_size, STAGE_TOLERANCE.max(config.rel_tolerance), STAGE_MAX_ITERATIONS, false);
            iterations += run.iterations;
            stage *= CONTINUATION_FACTOR;
        }
    }
    let run = ista(block, &mut q, &mut nuclear, lambda, config.step_size, config.rel_tolerance, config.max_iterations, true);
    iterations += run.iterations;
    Ok(BlockSolution {
        objective: block.loss(&q) + lambda * nuclear,
        matrix: q,
        iterations,
        converged: run.converged,
        objective_trace: run.trace,
        regularizer: lambda,
    })
}

struct Run {
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn ista(
    block: &BlockObservations,
    q: &mut DMatrix<f64>,
    nuclear: &mut f64,
    lambda: f64,
    step: f64,
    tolerance: f64,
    max_iterations: usize,
    keep_trace: bool,
) -> Run {
    let mut previous = block.loss(q) + lambda * *nuclear;
    let mut trace = Vec::new();
    for it in 1..=max_iterations {
        let mut y = q.clone();
        for &(i, j, z) in &block.entries {
            y[(i, j)] -= step * (y[(i, j)] - z);
        }
        let shrunk = shrink_gram(&y, step * lambda);
        *q = shrunk.matrix;
        *nuclear = shrunk.nuclear_norm;
        let objective = block.loss(q) + lambda * *nuclear;
        if keep_trace {
            trace.push(objective);
        }
        if step <= 1.0 {
            debug_assert!(
                objective <= previous * (1.0 + 1e-9) + 1e-12,
                "objective increased: {previous} -> {objective}"
            );
        }
        let decrease = previous - objective;
        if decrease <= tolerance * previous.abs().max(f64::MIN_POSITIVE) {
            return Run { iterations: it, converged: true, trace };
        }
        previous = objective;
    }
    Run { iterations: max_iterations, converged: false, trace }
}
