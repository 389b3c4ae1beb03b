//! Multi-start solving and selection of the most reproducible run.
//!
//! Two solutions are compared dataset by dataset: components are matched by
//! a linear assignment on the sum of the absolute cosines between their
//! subject, voxel and time columns, and the pseudo-distance is minus the sum
//! of the matched totals. Identical solutions reach `−sum_k 3 (R + L_k)`.

mod assignment;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::model::{CoupledDataset, PartitionedFactors, Ranks, SolverConfig};
use crate::solver::{bcd_solve, SolveResult};
use crate::tensor::FactorMatrix;

pub use assignment::{assignment_value, solve_assignment};

/// How factor columns are normalized before taking inner products.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Per-column cosine similarity.
    #[default]
    Column,
    /// Inner products divided by the product of whole-matrix Frobenius norms.
    Matrix,
}

/// How a run's pseudo-distances to the other runs are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Median,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport {
    /// `permutations[k][r]` is the component of the second run matched to
    /// component `r` of the first.
    pub permutations: Vec<Vec<usize>>,
    /// Matched similarity of each component of the first run, per dataset.
    pub contributions: Vec<Vec<f64>>,
    pub dataset_totals: Vec<f64>,
    pub pdistance: f64,
    /// Column pairs whose cosine was undefined because a column was zero.
    pub zero_norm_pairs: usize,
}

/// `|aᵀb| / (‖a‖ ‖b‖)`, or 0 when either column is zero.
///
/// Computed as `|aᵀb| / sqrt(‖a‖² ‖b‖²)` so that a column compared with
/// itself gives exactly 1.
fn abs_cosine(a: &FactorMatrix, ca: usize, b: &FactorMatrix, cb: usize, scale: Option<f64>) -> Option<f64> {
    let x = a.column(ca);
    let y = b.column(cb);
    let dot = x.dot(&y).abs();
    let denom = match scale {
        Some(s) => s,
        None => (x.norm_squared() * y.norm_squared()).sqrt(),
    };
    if denom == 0.0 {
        return None;
    }
    Some((dot / denom).min(1.0))
}

fn similarity_matrix(a: [&FactorMatrix; 3], b: [&FactorMatrix; 3], norm: Normalization, zero_pairs: &mut usize) -> Vec<Vec<f64>> {
    let n = a[0].ncols();
    let scales: [Option<f64>; 3] = std::array::from_fn(|m| match norm {
        Normalization::Column => None,
        Normalization::Matrix => Some((a[m].norm_squared() * b[m].norm_squared()).sqrt()),
    });
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    (0..3)
                        .map(|m| {
                            abs_cosine(a[m], r, b[m], c, scales[m]).unwrap_or_else(|| {
                                *zero_pairs += 1;
                                0.0
                            })
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Pseudo-distance between two solutions with matching ranks and dims.
pub fn pdistance(a: &PartitionedFactors, b: &PartitionedFactors) -> Result<MatchReport> {
    pdistance_with(a, b, Normalization::Column)
}

pub fn pdistance_with(a: &PartitionedFactors, b: &PartitionedFactors, norm: Normalization) -> Result<MatchReport> {
    if a.ranks() != b.ranks() || a.dims() != b.dims() {
        return Err(mismatch("runs differ in ranks or dimensions"));
    }
    let mut zero_norm_pairs = 0;
    let mut permutations = Vec::with_capacity(a.datasets());
    let mut contributions = Vec::with_capacity(a.datasets());
    let mut dataset_totals = Vec::with_capacity(a.datasets());
    for k in 0..a.datasets() {
        let (sa, va, ta) = a.assemble(k)?;
        let (sb, vb, tb) = b.assemble(k)?;
        let sim = similarity_matrix([&sa, &va, &ta], [&sb, &vb, &tb], norm, &mut zero_norm_pairs);
        let perm = solve_assignment(&sim)?;
        dataset_totals.push(assignment_value(&sim, &perm));
        contributions.push(perm.iter().enumerate().map(|(r, &c)| sim[r][c]).collect());
        permutations.push(perm);
    }
    if zero_norm_pairs > 0 {
        warn!("{zero_norm_pairs} cosine terms involved a zero column and count as 0");
    }
    let mut totals = dataset_totals.clone();
    totals.sort_by(f64::total_cmp);
    let pdistance = -totals.iter().sum::<f64>();
    Ok(MatchReport {
        permutations,
        contributions,
        dataset_totals,
        pdistance,
        zero_norm_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub message: String,
}

/// Solutions of the same problem from different random starts.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSet {
    /// Successful runs in seed order.
    pub runs: Vec<SolveResult>,
    pub failures: Vec<RunFailure>,
}

impl RunSet {
    pub fn new(runs: Vec<SolveResult>) -> Result<Self> {
        if let Some(first) = runs.first() {
            let (ranks, dims) = (first.theta.ranks(), first.theta.dims());
            if runs.iter().any(|r| r.theta.ranks() != ranks || r.theta.dims() != dims) {
                return Err(mismatch("all runs in a set must share ranks and dimensions"));
            }
        }
        Ok(Self { runs, failures: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Runs the solver from seeds `config.seed + 0 .. config.seed + n - 1`.
///
/// `jobs` bounds the worker threads (`None` uses the global rayon pool).
/// Each run is sequential and seeded independently, so the result does not
/// depend on `jobs`.
pub fn multi_start(data: &CoupledDataset, config: &SolverConfig, n: usize, jobs: Option<usize>) -> Result<RunSet> {
    if n == 0 {
        return Err(invalid("multi-start needs at least one run"));
    }
    config.validate()?;
    let seeds: Vec<u64> = (0..n as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let solve = |seed: u64| {
        let mut cfg = config.clone();
        cfg.seed = seed;
        (seed, bcd_solve(data, &cfg))
    };
    let outcomes: Vec<(u64, Result<SolveResult>)> = match jobs {
        Some(1) => seeds.into_iter().map(solve).collect(),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(|| seeds.into_par_iter().map(solve).collect()),
        None => seeds.into_par_iter().map(solve).collect(),
    };

    let mut runs = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => runs.push(r),
            // Argument errors are not per-run failures.
            Err(e @ (Error::InvalidArgument(_) | Error::DimensionMismatch(_))) => return Err(e),
            Err(e) => {
                warn!("run with seed {seed} failed: {e}");
                failures.push(RunFailure { seed, message: e.to_string() });
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::AllRunsFailed(n));
    }
    Ok(RunSet { runs, failures })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectionOptions {
    pub normalization: Normalization,
    pub aggregation: Aggregation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Index into `RunSet::runs`.
    pub index: usize,
    pub seed: u64,
    /// Aggregated pseudo-distance of every run to the others (lower is more
    /// reproducible).
    pub scores: Vec<f64>,
    /// Symmetric pairwise pseudo-distances; the diagonal holds each run's
    /// self-distance.
    pub pairwise: Vec<Vec<f64>>,
}

pub fn pairwise_pdistances(runs: &[SolveResult], norm: Normalization) -> Result<Vec<Vec<f64>>> {
    let n = runs.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pdistance_with(&runs[i].theta, &runs[j].theta, norm).map(|m| m.pdistance))
        .collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[i][j] = v;
        out[j][i] = v;
    }
    Ok(out)
}

/// The run most similar to all the others. Ties on the aggregated score go
/// to the lower final cost, then to the lower seed.
pub fn select_most_reproducible(runs: &RunSet, opts: SelectionOptions) -> Result<Selection> {
    if runs.runs.is_empty() {
        return Err(Error::AllRunsFailed(runs.failures.len()));
    }
    let pairwise = pairwise_pdistances(&runs.runs, opts.normalization)?;
    let n = runs.runs.len();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| pairwise[i][j]).collect();
            others.sort_by(f64::total_cmp);
            match opts.aggregation {
                Aggregation::Sum => others.iter().sum(),
                Aggregation::Median => median_sorted(&others),
            }
        })
        .collect();
    let index = (0..n)
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(runs.runs[a].final_cost().total_cmp(&runs.runs[b].final_cost()))
                .then(runs.runs[a].seed.cmp(&runs.runs[b].seed))
        })
        .expect("non-empty");
    Ok(Selection {
        index,
        seed: runs.runs[index].seed,
        scores,
        pairwise,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// One configuration of a rank/penalty sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ranks: Ranks,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ranks: Ranks,
    pub lambda: f64,
    /// Mean pairwise pseudo-distance divided by `sum_k 3 (R + L_k)`, in
    /// `[−1, 0]`; lower is more reproducible.
    pub score: Option<f64>,
    pub runs_ok: usize,
    pub runs_failed: usize,
    /// Final cost of the most reproducible run.
    pub selected_cost: Option<f64>,
    pub error: Option<String>,
}

/// Scores every grid point by the reproducibility of `n_sweep` random
/// starts. Rows come back sorted by score; failed points go last.
pub fn rank_sweep(data: &CoupledDataset, grid: &[SweepPoint], base: &SolverConfig, n_sweep: usize, jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(invalid("sweep grid is empty"));
    }
    let mut rows: Vec<SweepRow> = grid
        .iter()
        .map(|point| {
            let mut row = SweepRow {
                ranks: point.ranks.clone(),
                lambda: point.lambda,
                score: None,
                runs_ok: 0,
                runs_failed: 0,
                selected_cost: None,
                error: None,
            };
            match sweep_point(data, point, base, n_sweep, jobs) {
                Ok((score, ok, failed, cost)) => {
                    row.score = Some(score);
                    row.runs_ok = ok;
                    row.runs_failed = failed;
                    row.selected_cost = Some(cost);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    rows.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(rows)
}

fn sweep_point(data: &CoupledDataset, point: &SweepPoint, base: &SolverConfig, n: usize, jobs: Option<usize>) -> Result<(f64, usize, usize, f64)> {
    if n < 2 {
        return Err(invalid("a reproducibility score needs at least two runs"));
    }
    let mut cfg = base.clone();
    cfg.ranks = point.ranks.clone();
    cfg.lambda = point.lambda;
    let set = multi_start(data, &cfg, n, jobs)?;
    if set.runs.len() < 2 {
        return Err(invalid("fewer than two runs succeeded"));
    }
    let sel = select_most_reproducible(&set, SelectionOptions::default())?;
    let m = set.runs.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += sel.pairwise[i][j];
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    let score = total / pairs / cfg.ranks.max_similarity();
    Ok((score, m, set.failures.len(), set.runs[sel.index].final_cost()))
}
