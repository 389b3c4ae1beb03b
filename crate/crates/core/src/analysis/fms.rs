use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::model::PartitionedFactors;
use crate::reproducibility::solve_assignment;
use crate::tensor::FactorMatrix;

/// Factor match scores of an estimate against ground truth. Scores are
/// listed in the order of the true components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmsReport {
    /// Shared components, scored with the time factors of all datasets
    /// stacked into one column.
    pub shared: Vec<f64>,
    /// Distinct components of each dataset.
    pub distinct: Vec<Vec<f64>>,
    pub shared_mean: Option<f64>,
    pub distinct_means: Vec<Option<f64>>,
    /// Mean over every component of every block.
    pub mean: Option<f64>,
}

impl FmsReport {
    /// Smallest block mean; `None` when there are no components at all.
    pub fn min_block_mean(&self) -> Option<f64> {
        std::iter::once(self.shared_mean)
            .chain(self.distinct_means.iter().copied())
            .flatten()
            .reduce(f64::min)
    }
}

fn abs_cos(a: &FactorMatrix, i: usize, b: &FactorMatrix, j: usize) -> f64 {
    let (x, y) = (a.column(i), b.column(j));
    let den = (x.norm_squared() * y.norm_squared()).sqrt();
    if den > 0.0 {
        (x.dot(&y).abs() / den).min(1.0)
    } else {
        0.0
    }
}

// Matches the columns of `truth` to those of `est` maximizing the summed
// product of per-mode cosines and returns the matched products.
fn match_block(truth: [&FactorMatrix; 3], est: [&FactorMatrix; 3]) -> Result<Vec<f64>> {
    let n = truth[0].ncols();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (0..3).map(|m| abs_cos(truth[m], i, est[m], j)).product()).collect())
        .collect();
    let perm = solve_assignment(&sim)?;
    Ok(perm.iter().enumerate().map(|(i, &j)| sim[i][j]).collect())
}

fn stack_rows(blocks: &[FactorMatrix]) -> FactorMatrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = FactorMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Scores each true component by the product of the absolute cosines to
/// its matched estimated component in the subject, voxel and time modes.
/// Insensitive to permutation, sign and scale of the estimated columns.
pub fn factor_match_score(est: &PartitionedFactors, truth: &PartitionedFactors) -> Result<FmsReport> {
    let dims = truth.dims();
    let ranks = truth.ranks();
    est.validate(&dims, &ranks)
        .map_err(|e| mismatch(format!("estimate does not match the truth: {e}")))?;

    let t_truth = stack_rows(&truth.t_shared);
    let t_est = stack_rows(&est.t_shared);
    let shared = match_block(
        [&truth.s_shared, &truth.v_shared, &t_truth],
        [&est.s_shared, &est.v_shared, &t_est],
    )?;
    let distinct = (0..truth.datasets())
        .map(|k| {
            match_block(
                [&truth.s_distinct[k], &truth.v_distinct[k], &truth.t_distinct[k]],
                [&est.s_distinct[k], &est.v_distinct[k], &est.t_distinct[k]],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = shared.iter().chain(distinct.iter().flatten()).copied().collect();
    Ok(FmsReport {
        shared_mean: mean(&shared),
        distinct_means: distinct.iter().map(|d| mean(d)).collect(),
        mean: mean(&all),
        shared,
        distinct,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{Dims, Ranks};
    use crate::solver::init_random;

    fn setup() -> (Dims, Ranks) {
        (Dims { subjects: 8, voxels: 10, times: vec![3, 4] }, Ranks::new(2, vec![1, 3]).unwrap())
    }

    #[test]
    fn exact_estimate_scores_one() {
        let (dims, ranks) = setup();
        let truth = init_random(&dims, &ranks, 1);
        let r = factor_match_score(&truth, &truth).unwrap();
        assert!(r.shared.iter().chain(r.distinct.iter().flatten()).all(|&s| (s - 1.0).abs() < 1e-12));
        assert!((r.min_block_mean().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_permutation_sign_and_scale() {
        let (dims, ranks) = setup();
        let truth = init_random(&dims, &ranks, 2);
        let est = init_random(&dims, &ranks, 3);
        let base = factor_match_score(&est, &truth).unwrap();

        let mut moved = est.clone();
        moved.s_shared.swap_columns(0, 1);
        moved.v_shared.swap_columns(0, 1);
        for t in &mut moved.t_shared {
            t.swap_columns(0, 1);
        }
        moved.v_shared.column_mut(1).scale_mut(-4.0);
        moved.s_distinct[1].swap_columns(0, 2);
        moved.v_distinct[1].swap_columns(0, 2);
        moved.t_distinct[1].swap_columns(0, 2);
        moved.t_distinct[1].column_mut(0).scale_mut(0.1);
        let r = factor_match_score(&moved, &truth).unwrap();
        assert!((r.mean.unwrap() - base.mean.unwrap()).abs() < 1e-12);
        for (a, b) in r.shared.iter().zip(&base.shared) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_estimate_scores_zero() {
        let dims = Dims { subjects: 4, voxels: 4, times: vec![4] };
        let ranks = Ranks::new(1, vec![1]).unwrap();
        let e = |i: usize| DMatrix::from_fn(4, 1, move |r, _| (r == i) as u8 as f64);
        let mut a = PartitionedFactors::zeros(&dims, &ranks);
        let mut b = a.clone();
        for (th, off) in [(&mut a, 0), (&mut b, 2)] {
            th.s_shared = e(off);
            th.v_shared = e(off);
            th.t_shared[0] = e(off);
            th.s_distinct[0] = e(off + 1);
            th.v_distinct[0] = e(off + 1);
            th.t_distinct[0] = e(off + 1);
        }
        let r = factor_match_score(&b, &a).unwrap();
        assert_eq!(r.mean, Some(0.0));
    }

    #[test]
    fn rank_mismatch_is_an_error() {
        let (dims, ranks) = setup();
        let truth = init_random(&dims, &ranks, 4);
        let est = init_random(&dims, &Ranks::new(1, vec![2, 3]).unwrap(), 4);
        assert!(factor_match_score(&est, &truth).is_err());
    }

    #[test]
    fn empty_shared_block_has_no_mean() {
        let dims = Dims { subjects: 5, voxels: 5, times: vec![2] };
        let ranks = Ranks::new(0, vec![2]).unwrap();
        let truth = init_random(&dims, &ranks, 5);
        let r = factor_match_score(&truth, &truth).unwrap();
        assert_eq!(r.shared_mean, None);
        assert!((r.mean.unwrap() - 1.0).abs() < 1e-12);
    }
}
