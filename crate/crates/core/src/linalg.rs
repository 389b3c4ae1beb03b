//! Small dense linear-algebra helpers on top of nalgebra.

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Solves `X G = M` for symmetric positive (semi)definite `G`, i.e. returns
/// `M G⁻¹`. When the Cholesky factorization fails a ridge of
/// `1e-10 * trace(G) / n` is added and a warning is logged; the second
/// element of the result reports whether that happened.
pub fn solve_normal_equations(g: &DMatrix<f64>, m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = g.nrows();
    debug_assert_eq!(g.ncols(), n);
    debug_assert_eq!(m.ncols(), n);
    if n == 0 {
        return (DMatrix::zeros(m.nrows(), 0), false);
    }
    let rhs = m.transpose();
    if let Some(chol) = Cholesky::new(g.clone()) {
        let x = chol.solve(&rhs);
        if x.iter().all(|v| v.is_finite()) {
            return (x.transpose(), false);
        }
    }
    let ridge = (1e-10 * g.trace() / n as f64).max(f64::MIN_POSITIVE);
    warn!("singular {n}x{n} normal matrix, adding ridge {ridge:.3e}");
    let mut reg = g.clone();
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    let x = match Cholesky::new(reg.clone()) {
        Some(chol) => chol.solve(&rhs),
        // Indefinite through rounding: fall back to a symmetric pseudo-inverse.
        None => pseudo_inverse_sym(&reg) * rhs,
    };
    (x.transpose(), true)
}

fn pseudo_inverse_sym(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = max * 1e-12;
    let inv = eig.eigenvalues.map(|l| if l > tol { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Leading left singular subspace of the column-wise concatenation
/// `[X₁ X₂ ...]` of `blocks` (all with the same row count).
#[derive(Clone, Debug)]
pub struct LeftSingular {
    /// `m x d`, orthonormal columns, largest-magnitude entry of each column
    /// positive.
    pub vectors: DMatrix<f64>,
    /// Singular values matching the columns (0 for padded columns).
    pub values: Vec<f64>,
    /// Number of columns that had to be filled from the orthogonal complement.
    pub padded: usize,
}

pub fn leading_left_singular(blocks: &[&DMatrix<f64>], d: usize) -> LeftSingular {
    let m = blocks[0].nrows();
    let n: usize = blocks.iter().map(|b| b.ncols()).sum();
    assert!(d <= m, "cannot take {d} singular vectors of a {m}-row matrix");

    let (mut vectors, values, padded) = if m <= n {
        let mut g = DMatrix::zeros(m, m);
        for b in blocks {
            g += *b * b.transpose();
        }
        let eig = SymmetricEigen::new(g);
        let order = descending_order(eig.eigenvalues.as_slice());
        let top = order.first().map(|&i| eig.eigenvalues[i].max(0.0)).unwrap_or(0.0);
        let tol = top * 1e-14;
        let mut u = DMatrix::zeros(m, d);
        let mut values = Vec::with_capacity(d);
        let mut padded = 0;
        for (c, &idx) in order.iter().take(d).enumerate() {
            u.set_column(c, &eig.eigenvectors.column(idx));
            let l = eig.eigenvalues[idx];
            if l > tol && l > 0.0 {
                values.push(l.sqrt());
            } else {
                values.push(0.0);
                padded += 1;
            }
        }
        (u, values, padded)
    } else {
        let x = concat_columns(blocks);
        let eig = SymmetricEigen::new(x.tr_mul(&x));
        let order = descending_order(eig.eigenvalues.as_slice());
        let top = order.first().map(|&i| eig.eigenvalues[i].max(0.0)).unwrap_or(0.0);
        let tol = top * 1e-14;
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(d);
        let mut values = Vec::with_capacity(d);
        for &idx in order.iter().take(d) {
            let l = eig.eigenvalues[idx];
            if !(l > tol && l > 0.0) {
                break;
            }
            let sigma = l.sqrt();
            cols.push(&x * eig.eigenvectors.column(idx) / sigma);
            values.push(sigma);
        }
        let found = cols.len();
        let u = complete_orthonormal(cols, m, d);
        values.resize(d, 0.0);
        (u, values, d - found)
    };
    if padded > 0 {
        warn!("requested {d} singular vectors but the matrix has numerical rank {}; padding with the orthogonal complement", d - padded);
    }
    fix_signs(&mut vectors);
    LeftSingular { vectors, values, padded }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

pub(crate) fn concat_columns(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let m = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let n: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(m, n);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Re-orthonormalizes `cols` (modified Gram-Schmidt, two passes) and extends
/// them to `d` columns with standard basis directions from the complement.
pub(crate) fn complete_orthonormal(cols: Vec<DVector<f64>>, m: usize, d: usize) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let push = |mut v: DVector<f64>, basis: &mut Vec<DVector<f64>>| -> bool {
        let start = v.norm();
        for _ in 0..2 {
            for q in basis.iter() {
                let p = q.dot(&v);
                v.axpy(-p, q, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 * start.max(1e-300) && n > 0.0 {
            basis.push(v / n);
            true
        } else {
            false
        }
    };
    for c in cols {
        if basis.len() == d {
            break;
        }
        push(c, &mut basis);
    }
    let mut e = 0;
    while basis.len() < d && e < m {
        push(DVector::from_fn(m, |i, _| if i == e { 1.0 } else { 0.0 }), &mut basis);
        e += 1;
    }
    let mut out = DMatrix::zeros(m, d);
    for (c, v) in basis.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn fix_signs(u: &mut DMatrix<f64>) {
    for mut col in u.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}
