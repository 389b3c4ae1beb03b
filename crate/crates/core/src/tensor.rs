//! Dense order-3 tensors and the multilinear kernels built on them.
//!
//! Element `(i, j, k)` of an `I x J x K` tensor lives at offset
//! `i + I*j + I*J*k` (first index fastest). Unfoldings follow the convention
//! in which the mode-1 unfolding of `[[A, B, C]]` is `A (C ⊙ B)ᵀ`:
//!
//! | mode | shape          | column of element `(i, j, k)` |
//! |------|----------------|-------------------------------|
//! | 1    | `I x (J*K)`    | `j + J*k`                     |
//! | 2    | `J x (I*K)`    | `i + I*k`                     |
//! | 3    | `K x (I*J)`    | `i + I*j`                     |

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Error, Result};

/// Dense real matrix; a CP component is one column.
pub type FactorMatrix = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(mismatch(format!(
                "tensor {:?} needs {} values, got {}",
                dims,
                len,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry at offset {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    // Kernels that are known to produce finite output skip the scan.
    pub(crate) fn from_raw(dims: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    /// Frontal slice `k` as an `I x J` matrix.
    pub fn frontal_slice(&self, k: usize) -> DMatrix<f64> {
        let [i, j, _] = self.dims;
        DMatrix::from_column_slice(i, j, &self.data[k * i * j..(k + 1) * i * j])
    }

    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        unfold(self, mode)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        frobenius_norm_sq(self)
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(mismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor3::from_raw(self.dims, data))
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(mismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor3::from_raw(self.dims, data))
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(invalid(format!("tensor dims must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_mode(mode: usize) -> Result<()> {
    if !(1..=3).contains(&mode) {
        return Err(invalid(format!("mode must be 1, 2 or 3, got {mode}")));
    }
    Ok(())
}

/// Mode-`mode` unfolding (modes are 1-based).
pub fn unfold(t: &Tensor3, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(mode)?;
    let [ni, nj, nk] = t.dims;
    let m = match mode {
        // The storage order already is the mode-1 unfolding, column-major.
        1 => DMatrix::from_column_slice(ni, nj * nk, &t.data),
        2 => DMatrix::from_fn(nj, ni * nk, |j, col| {
            let (i, k) = (col % ni, col / ni);
            t.get(i, j, k)
        }),
        _ => DMatrix::from_fn(nk, ni * nj, |k, col| {
            let (i, j) = (col % ni, col / ni);
            t.get(i, j, k)
        }),
    };
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &DMatrix<f64>, mode: usize, dims: [usize; 3]) -> Result<Tensor3> {
    check_mode(mode)?;
    check_dims(dims)?;
    let [ni, nj, nk] = dims;
    let expected = match mode {
        1 => (ni, nj * nk),
        2 => (nj, ni * nk),
        _ => (nk, ni * nj),
    };
    if m.shape() != expected {
        return Err(mismatch(format!(
            "mode-{mode} unfolding of {dims:?} must be {expected:?}, got {:?}",
            m.shape()
        )));
    }
    Tensor3::from_fn(dims, |i, j, k| match mode {
        1 => m[(i, j + nj * k)],
        2 => m[(j, i + ni * k)],
        _ => m[(k, i + ni * j)],
    })
}

/// Column-wise Kronecker product: row `j + B.rows * i` of column `r` is
/// `A[i, r] * B[j, r]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(invalid(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    Ok(DMatrix::from_fn(ra * rb, a.ncols(), |row, r| {
        a[(row / rb, r)] * b[(row % rb, r)]
    }))
}

/// CP model `[[A, B, C]]` with a common number of components.
#[derive(Clone, Debug, PartialEq)]
pub struct CpModel {
    pub a: FactorMatrix,
    pub b: FactorMatrix,
    pub c: FactorMatrix,
}

impl CpModel {
    pub fn new(a: FactorMatrix, b: FactorMatrix, c: FactorMatrix) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
            return Err(mismatch(format!(
                "CP factors have {}, {} and {} columns",
                a.ncols(),
                b.ncols(),
                c.ncols()
            )));
        }
        if a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(invalid("CP factors need at least one row"));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("CP factor {name}")));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a.nrows(), self.b.nrows(), self.c.nrows()]
    }

    pub fn reconstruct(&self) -> Tensor3 {
        cp_reconstruct(self)
    }
}

pub fn cp_reconstruct(m: &CpModel) -> Tensor3 {
    reconstruct_factors(&m.a, &m.b, &m.c)
}

/// `sum_r a_r ∘ b_r ∘ c_r` without packaging the factors in a [`CpModel`].
/// Callers guarantee equal column counts.
pub(crate) fn reconstruct_factors(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Tensor3 {
    let dims = [a.nrows(), b.nrows(), c.nrows()];
    let mut data = vec![0.0; dims[0] * dims[1] * dims[2]];
    add_reconstruction(&mut data, a, b, c);
    Tensor3::from_raw(dims, data)
}

pub(crate) fn add_reconstruction(data: &mut [f64], a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) {
    let (ni, nj, nk) = (a.nrows(), b.nrows(), c.nrows());
    debug_assert_eq!(data.len(), ni * nj * nk);
    for r in 0..a.ncols() {
        let ar = a.column(r);
        for k in 0..nk {
            let ck = c[(k, r)];
            if ck == 0.0 {
                continue;
            }
            for j in 0..nj {
                let w = ck * b[(j, r)];
                let base = ni * (j + nj * k);
                for (dst, &av) in data[base..base + ni].iter_mut().zip(ar.iter()) {
                    *dst += av * w;
                }
            }
        }
    }
}

pub fn frobenius_norm_sq(t: &Tensor3) -> f64 {
    t.data.iter().map(|v| v * v).sum()
}

/// Matricized tensor times Khatri-Rao product: the mode-`mode` unfolding
/// multiplied by the Khatri-Rao product of the other two factors, computed
/// without materializing either. For mode 1 this is `X₍₁₎ (C ⊙ B)`.
pub(crate) fn mttkrp(t: &Tensor3, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, mode: usize) -> DMatrix<f64> {
    let [ni, nj, nk] = t.dims;
    let rank = match mode {
        1 => b.ncols(),
        2 => a.ncols(),
        _ => a.ncols(),
    };
    match mode {
        1 => {
            let mut out = DMatrix::zeros(ni, rank);
            for r in 0..rank {
                for k in 0..nk {
                    let ck = c[(k, r)];
                    for j in 0..nj {
                        let w = ck * b[(j, r)];
                        let base = ni * (j + nj * k);
                        let fiber = &t.data[base..base + ni];
                        let mut col = out.column_mut(r);
                        for (dst, &y) in col.iter_mut().zip(fiber) {
                            *dst += y * w;
                        }
                    }
                }
            }
            out
        }
        2 => {
            let mut out = DMatrix::zeros(nj, rank);
            for r in 0..rank {
                let ar = a.column(r);
                for k in 0..nk {
                    let ck = c[(k, r)];
                    for j in 0..nj {
                        let base = ni * (j + nj * k);
                        let fiber = &t.data[base..base + ni];
                        let dot: f64 = fiber.iter().zip(ar.iter()).map(|(y, a)| y * a).sum();
                        out[(j, r)] += dot * ck;
                    }
                }
            }
            out
        }
        _ => {
            let mut out = DMatrix::zeros(nk, rank);
            for r in 0..rank {
                let ar = a.column(r);
                for k in 0..nk {
                    let mut acc = 0.0;
                    for j in 0..nj {
                        let base = ni * (j + nj * k);
                        let fiber = &t.data[base..base + ni];
                        let dot: f64 = fiber.iter().zip(ar.iter()).map(|(y, a)| y * a).sum();
                        acc += dot * b[(j, r)];
                    }
                    out[(k, r)] = acc;
                }
            }
            out
        }
    }
}

/// `(XᵀX) ∘ (YᵀY)`, the Gram matrix of `X ⊙ Y` (and of `Y ⊙ X`).
pub(crate) fn hadamard_gram(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let gx = x.tr_mul(x);
    let gy = y.tr_mul(y);
    gx.component_mul(&gy)
}
