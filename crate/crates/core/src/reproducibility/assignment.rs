//! Dense linear assignment (Hungarian algorithm, shortest augmenting path
//! with potentials), O(n³).

use crate::error::{invalid, Error, Result};

/// Permutation `p` maximizing `sum_i sim[i][p[i]]` for a square matrix.
pub fn solve_assignment(sim: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = sim.len();
    if let Some((i, row)) = sim.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(invalid(format!("assignment matrix is not square: row {i} has {} entries, expected {n}", row.len())));
    }
    if sim.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment matrix".into()));
    }
    Ok(minimize_cost(n, |i, j| -sim[i][j]))
}

fn minimize_cost(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    // 1-based with a virtual column 0, as in the classical formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Sum of the matched entries, added in ascending order so that the same
/// multiset of values always gives the same total.
pub fn assignment_value(sim: &[Vec<f64>], perm: &[usize]) -> f64 {
    let mut vals: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| sim[i][j]).collect();
    vals.sort_by(f64::total_cmp);
    vals.iter().sum()
}
