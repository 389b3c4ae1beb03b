//! Block coordinate descent for the coupled model.
//!
//! One outer iteration updates the subject factors (exact joint least
//! squares), then the voxel factors (quasi-Newton on the penalized problem),
//! then the time factors (exact per-dataset least squares). A block update
//! that would raise the cost, which can only happen through rounding, is
//! discarded.

pub mod lbfgs;
mod updates;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{cost, identifiability_check, CoupledDataset, Dims, IdentifiabilityStatus, PartitionedFactors, Ranks, SolverConfig};
use crate::tensor::FactorMatrix;

pub use updates::{update_subjects, update_times, update_voxels, update_voxels_quasi_newton, voxel_gradient, QnSettings, UpdateInfo};

/// Guards the relative stopping test against division by zero.
const REL_EPS: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub theta: PartitionedFactors,
    /// Cost before the first iteration followed by the cost after each one.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Voxel updates whose line search stalled.
    pub stalls: usize,
    /// Updates that needed the ridge fallback.
    pub ridge_events: usize,
}

impl SolveResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace holds the initial cost")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Subjects,
    Voxels,
    Times,
}

/// Reported after every block update.
#[derive(Debug)]
pub struct BlockEvent<'a> {
    pub iteration: usize,
    pub block: Block,
    pub theta: &'a PartitionedFactors,
    pub cost_before: f64,
    pub cost_after: f64,
    /// The update was discarded because it raised the cost.
    pub reverted: bool,
}

/// Random starting point: i.i.d. standard normal entries from a ChaCha8
/// stream seeded with `seed`, each column scaled to unit norm.
pub fn init_random(dims: &Dims, ranks: &Ranks, seed: u64) -> PartitionedFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| -> FactorMatrix {
        let mut m = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
        }
        m
    };
    let r = ranks.shared;
    let s_shared = draw(dims.subjects, r);
    let v_shared = draw(dims.voxels, r);
    let mut theta = PartitionedFactors {
        s_shared,
        v_shared,
        s_distinct: Vec::new(),
        v_distinct: Vec::new(),
        t_shared: Vec::new(),
        t_distinct: Vec::new(),
    };
    for (&t, &l) in dims.times.iter().zip(&ranks.distinct) {
        theta.s_distinct.push(draw(dims.subjects, l));
        theta.v_distinct.push(draw(dims.voxels, l));
        theta.t_shared.push(draw(t, r));
        theta.t_distinct.push(draw(t, l));
    }
    theta
}

pub fn bcd_solve(data: &CoupledDataset, config: &SolverConfig) -> Result<SolveResult> {
    config.validate()?;
    config.ranks.check_dims(&data.dims())?;
    let init = init_random(&data.dims(), &config.ranks, config.seed);
    bcd_solve_from(data, config, init, |_| {})
}

/// Runs the solver from `init`, calling `observe` after each block update.
pub fn bcd_solve_from<F>(data: &CoupledDataset, config: &SolverConfig, init: PartitionedFactors, mut observe: F) -> Result<SolveResult>
where
    F: FnMut(&BlockEvent<'_>),
{
    config.validate()?;
    let dims = data.dims();
    init.validate(&dims, &config.ranks)?;
    for verdict in identifiability_check(&dims, &config.ranks) {
        if verdict.status == IdentifiabilityStatus::Fail {
            warn!(
                "dataset {}: {} components exceed the generic uniqueness bound {:.2}",
                verdict.dataset, verdict.components, verdict.bound
            );
        }
    }

    let qn = QnSettings {
        memory: config.qn_memory,
        max_inner: config.qn_max_inner,
    };
    let lambda = config.lambda;
    let mut theta = init;
    let mut current = finite_cost(&theta, data, lambda, 0)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut stalls = 0;
    let mut ridge_events = 0;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let start = current;
        for block in [Block::Subjects, Block::Voxels, Block::Times] {
            let before = theta.clone();
            let info = match block {
                Block::Subjects => update_subjects(&mut theta, data),
                Block::Voxels => update_voxels(&mut theta, data, lambda, &qn),
                Block::Times => update_times(&mut theta, data),
            };
            stalls += info.stalled as usize;
            ridge_events += info.ridged as usize;
            let after = finite_cost(&theta, data, lambda, iterations)?;
            let reverted = after > current;
            let cost_after = if reverted {
                theta = before;
                current
            } else {
                after
            };
            observe(&BlockEvent {
                iteration: iterations,
                block,
                theta: &theta,
                cost_before: current,
                cost_after,
                reverted,
            });
            current = cost_after;
        }
        trace.push(current);
        debug!("iteration {iterations}: J = {current:.6e}");
        if (start - current).abs() / start.max(REL_EPS) < config.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(SolveResult {
        theta,
        cost_trace: trace,
        iterations,
        converged,
        seed: config.seed,
        stalls,
        ridge_events,
    })
}

fn finite_cost(theta: &PartitionedFactors, data: &CoupledDataset, lambda: f64, iteration: usize) -> Result<f64> {
    let c = cost(theta, data, lambda)?;
    if !c.is_finite() {
        return Err(Error::NonFinite(format!("cost became {c} at iteration {iteration}")));
    }
    Ok(c)
}

#[cfg(test)]
mod tests;
