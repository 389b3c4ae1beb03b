//! Truncated-SVD compression of the subject and voxel modes.
//!
//! One basis per mode is shared by all datasets, since the shared factors
//! have to live in a single compressed space. Solving on the compressed data
//! and expanding afterwards optimizes the same cost up to a constant.

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Result};
use crate::linalg::leading_left_singular;
use crate::model::{CoupledDataset, PartitionedFactors};
use crate::tensor::{FactorMatrix, Tensor3};

const ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionBasis {
    /// `S x d1`, orthonormal columns.
    pub u_subject: FactorMatrix,
    /// `V x d2`, orthonormal columns.
    pub u_voxel: FactorMatrix,
}

impl CompressionBasis {
    pub fn new(u_subject: FactorMatrix, u_voxel: FactorMatrix) -> Result<Self> {
        for (name, u) in [("subject", &u_subject), ("voxel", &u_voxel)] {
            if u.ncols() == 0 || u.ncols() > u.nrows() {
                return Err(invalid(format!("{name} basis is {}x{}", u.nrows(), u.ncols())));
            }
            let err = (u.tr_mul(u) - DMatrix::identity(u.ncols(), u.ncols())).abs().max();
            if !(err <= ORTHO_TOL) {
                return Err(invalid(format!("{name} basis is not orthonormal (error {err:.2e})")));
            }
        }
        Ok(Self { u_subject, u_voxel })
    }

    /// Full-size identity bases; compression with them is a no-op.
    pub fn identity(subjects: usize, voxels: usize) -> Self {
        Self {
            u_subject: DMatrix::identity(subjects, subjects),
            u_voxel: DMatrix::identity(voxels, voxels),
        }
    }

    pub fn d1(&self) -> usize {
        self.u_subject.ncols()
    }

    pub fn d2(&self) -> usize {
        self.u_voxel.ncols()
    }

    pub fn subjects(&self) -> usize {
        self.u_subject.nrows()
    }

    pub fn voxels(&self) -> usize {
        self.u_voxel.nrows()
    }
}

/// Fits both bases from the leading left singular vectors of the stacked
/// unfoldings. The concatenated frontal slices `[X_1 X_2 ...]` are a column
/// permutation of the mode-1 unfoldings and so have the same left singular
/// vectors; the transposed slices play the same role for mode 2.
pub fn fit_basis(data: &CoupledDataset, d1: usize, d2: usize) -> Result<CompressionBasis> {
    let (s, v) = (data.subjects(), data.voxels());
    if d1 == 0 || d1 > s {
        return Err(invalid(format!("subject dimension {d1} must be in 1..={s}")));
    }
    if d2 == 0 || d2 > v {
        return Err(invalid(format!("voxel dimension {d2} must be in 1..={v}")));
    }
    let slices: Vec<DMatrix<f64>> = data
        .tensors()
        .iter()
        .flat_map(|t| (0..t.dims()[2]).map(move |k| t.frontal_slice(k)))
        .collect();
    let refs: Vec<&DMatrix<f64>> = slices.iter().collect();
    let u_subject = leading_left_singular(&refs, d1).vectors;
    let transposed: Vec<DMatrix<f64>> = slices.iter().map(|x| x.transpose()).collect();
    drop(slices);
    let refs: Vec<&DMatrix<f64>> = transposed.iter().collect();
    let u_voxel = leading_left_singular(&refs, d2).vectors;
    Ok(CompressionBasis { u_subject, u_voxel })
}

fn check_data(data: &CoupledDataset, rows_s: usize, rows_v: usize) -> Result<()> {
    if data.subjects() != rows_s || data.voxels() != rows_v {
        return Err(mismatch(format!(
            "data is {}x{} in the subject/voxel modes but the basis expects {rows_s}x{rows_v}",
            data.subjects(),
            data.voxels()
        )));
    }
    Ok(())
}

/// `Y_k ×₁ U_subjectᵀ ×₂ U_voxelᵀ` for every dataset.
pub fn compress(data: &CoupledDataset, basis: &CompressionBasis) -> Result<CoupledDataset> {
    check_data(data, basis.subjects(), basis.voxels())?;
    let (us, uv) = (&basis.u_subject, &basis.u_voxel);
    map_slices(data, [basis.d1(), basis.d2()], |x| us.tr_mul(&(x * uv)))
}

/// `Ỹ_k ×₁ U_subject ×₂ U_voxel`: maps compressed data back to full size.
pub fn decompress(data: &CoupledDataset, basis: &CompressionBasis) -> Result<CoupledDataset> {
    check_data(data, basis.d1(), basis.d2())?;
    let (us, uv) = (&basis.u_subject, &basis.u_voxel);
    map_slices(data, [basis.subjects(), basis.voxels()], |x| us * x * uv.transpose())
}

fn map_slices(
    data: &CoupledDataset,
    size: [usize; 2],
    f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<CoupledDataset> {
    let tensors = data
        .tensors()
        .iter()
        .map(|t| {
            let depth = t.dims()[2];
            let mut out = Vec::with_capacity(size[0] * size[1] * depth);
            for k in 0..depth {
                out.extend_from_slice(f(&t.frontal_slice(k)).as_slice());
            }
            Tensor3::from_raw([size[0], size[1], depth], out)
        })
        .collect();
    CoupledDataset::new(tensors)
}

/// Left-multiplies every subject factor by `U_subject` and every voxel
/// factor by `U_voxel`; time factors are untouched.
pub fn expand_factors(theta: &PartitionedFactors, basis: &CompressionBasis) -> Result<PartitionedFactors> {
    map_factors(theta, basis, true)
}

/// Inverse of [`expand_factors`] for factors lying in the basis span:
/// left-multiplies by the transposed bases.
pub fn project_factors(theta: &PartitionedFactors, basis: &CompressionBasis) -> Result<PartitionedFactors> {
    map_factors(theta, basis, false)
}

fn map_factors(theta: &PartitionedFactors, basis: &CompressionBasis, expand: bool) -> Result<PartitionedFactors> {
    let (us, uv) = (&basis.u_subject, &basis.u_voxel);
    let f = |u: &FactorMatrix, m: &FactorMatrix| if expand { u * m } else { u.tr_mul(m) };
    let (want_s, want_v) = if expand { (basis.d1(), basis.d2()) } else { (basis.subjects(), basis.voxels()) };
    let bad_s = std::iter::once(&theta.s_shared).chain(&theta.s_distinct).any(|m| m.nrows() != want_s);
    let bad_v = std::iter::once(&theta.v_shared).chain(&theta.v_distinct).any(|m| m.nrows() != want_v);
    if bad_s || bad_v {
        return Err(mismatch(format!(
            "factors have {}x{} subject/voxel rows, basis expects {want_s}x{want_v}",
            theta.s_shared.nrows(),
            theta.v_shared.nrows()
        )));
    }
    Ok(PartitionedFactors {
        s_shared: f(us, &theta.s_shared),
        v_shared: f(uv, &theta.v_shared),
        s_distinct: theta.s_distinct.iter().map(|m| f(us, m)).collect(),
        v_distinct: theta.v_distinct.iter().map(|m| f(uv, m)).collect(),
        t_shared: theta.t_shared.clone(),
        t_distinct: theta.t_distinct.clone(),
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{coherence_penalty, cost, Dims, Ranks};

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_data(s: usize, v: usize, times: &[usize], rng: &mut ChaCha8Rng) -> CoupledDataset {
        CoupledDataset::new(
            times
                .iter()
                .map(|&t| Tensor3::from_fn([s, v, t], |_, _, _| rng.random_range(-1.0..1.0)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn orthonormal(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        random_matrix(r, c, rng).qr().q()
    }

    // Y_k = G_k ×₁ A ×₂ B with G_k random: multilinear rank (d1, d2, ·).
    fn low_rank_data(s: usize, v: usize, d1: usize, d2: usize, times: &[usize], rng: &mut ChaCha8Rng) -> CoupledDataset {
        let a = random_matrix(s, d1, rng);
        let b = random_matrix(v, d2, rng);
        let core = random_data(d1, d2, times, rng);
        let basis = CompressionBasis { u_subject: a, u_voxel: b };
        decompress(&core, &basis).unwrap()
    }

    fn assert_orthonormal(u: &DMatrix<f64>) {
        let n = u.ncols();
        assert!((u.tr_mul(u) - DMatrix::identity(n, n)).abs().max() < 1e-10);
    }

    fn max_rel(a: &CoupledDataset, b: &CoupledDataset) -> f64 {
        a.tensors()
            .iter()
            .zip(b.tensors())
            .map(|(x, y)| x.sub(y).unwrap().frobenius_norm_sq().sqrt() / x.frobenius_norm_sq().sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn low_rank_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (s, v, d1, d2) in [(12, 15, 3, 4), (9, 40, 5, 30), (30, 8, 7, 2)] {
            let data = low_rank_data(s, v, d1, d2, &[2, 3, 1], &mut rng);
            let basis = fit_basis(&data, d1, d2).unwrap();
            assert_orthonormal(&basis.u_subject);
            assert_orthonormal(&basis.u_voxel);
            let back = decompress(&compress(&data, &basis).unwrap(), &basis).unwrap();
            assert!(max_rel(&data, &back) < 1e-8);
        }
    }

    #[test]
    fn full_dimension_bases_are_square_and_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_data(6, 5, &[4, 3], &mut rng);
        let basis = fit_basis(&data, 6, 5).unwrap();
        assert_eq!(basis.u_subject.shape(), (6, 6));
        assert_eq!(basis.u_voxel.shape(), (5, 5));
        assert_orthonormal(&basis.u_subject);
        assert_orthonormal(&basis.u_voxel);
        let c = compress(&data, &basis).unwrap();
        for (x, y) in data.tensors().iter().zip(c.tensors()) {
            assert!((x.frobenius_norm_sq() - y.frobenius_norm_sq()).abs() < 1e-10 * x.frobenius_norm_sq());
        }
        assert!(max_rel(&data, &decompress(&c, &basis).unwrap()) < 1e-12);
    }

    #[test]
    fn identity_basis_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_data(4, 6, &[3, 2], &mut rng);
        let basis = CompressionBasis::identity(4, 6);
        assert_eq!(compress(&data, &basis).unwrap(), data);

        let dims = data.dims();
        let ranks = Ranks::new(1, vec![2, 1]).unwrap();
        let theta = crate::solver::init_random(&dims, &ranks, 5);
        assert_eq!(expand_factors(&theta, &basis).unwrap(), theta);
    }

    #[test]
    fn aligned_rank_one_tensor_hits_a_single_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let us = orthonormal(7, 3, &mut rng);
        let uv = orthonormal(9, 4, &mut rng);
        let (a, b) = (us.column(1).into_owned(), uv.column(2).into_owned());
        let c = [2.0, -1.0];
        let t = Tensor3::from_fn([7, 9, 2], |i, j, k| a[i] * b[j] * c[k]).unwrap();
        let data = CoupledDataset::new(vec![t]).unwrap();
        let basis = CompressionBasis::new(us, uv).unwrap();
        let small = compress(&data, &basis).unwrap();
        let y = small.tensor(0);
        for k in 0..2 {
            for j in 0..4 {
                for i in 0..3 {
                    let want = if (i, j) == (1, 2) { c[k] } else { 0.0 };
                    assert!((y.get(i, j, k) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn compression_matches_explicit_mode_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_data(6, 8, &[3, 2], &mut rng);
        let basis = CompressionBasis::new(orthonormal(6, 4, &mut rng), orthonormal(8, 3, &mut rng)).unwrap();
        let got = compress(&data, &basis).unwrap();
        for (y, g) in data.tensors().iter().zip(got.tensors()) {
            let [_, _, t] = y.dims();
            for k in 0..t {
                for q in 0..3 {
                    for p in 0..4 {
                        let mut acc = 0.0;
                        for i in 0..6 {
                            for j in 0..8 {
                                acc += basis.u_subject[(i, p)] * basis.u_voxel[(j, q)] * y.get(i, j, k);
                            }
                        }
                        assert!((g.get(p, q, k) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn compression_never_increases_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let data = random_data(8, 10, &[2, 2], &mut rng);
            let basis = fit_basis(&data, 3, 4).unwrap();
            let c = compress(&data, &basis).unwrap();
            for (x, y) in data.tensors().iter().zip(c.tensors()) {
                assert!(y.frobenius_norm_sq() <= x.frobenius_norm_sq() * (1.0 + 1e-12));
                assert!(y.frobenius_norm_sq() < x.frobenius_norm_sq() * 0.99);
            }
        }
    }

    #[test]
    fn expansion_costs_add_the_complement_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_data(9, 11, &[3, 2, 4], &mut rng);
        let basis = fit_basis(&data, 4, 5).unwrap();
        let small = compress(&data, &basis).unwrap();
        let ranks = Ranks::new(2, vec![1, 2, 1]).unwrap();
        let theta = crate::solver::init_random(&small.dims(), &ranks, 11);
        let big = expand_factors(&theta, &basis).unwrap();
        let lost: f64 = data
            .tensors()
            .iter()
            .zip(small.tensors())
            .map(|(x, y)| x.frobenius_norm_sq() - y.frobenius_norm_sq())
            .sum();
        let full = cost(&big, &data, 0.0).unwrap();
        let reduced = cost(&theta, &small, 0.0).unwrap();
        assert!((full - (reduced + lost)).abs() < 1e-10 * full);

        for k in 0..3 {
            let a = coherence_penalty(&theta.assembled_voxels(k));
            let b = coherence_penalty(&big.assembled_voxels(k));
            assert!((a - b).abs() < 1e-9);
        }
        let back = project_factors(&big, &basis).unwrap();
        assert!((&back.v_shared - &theta.v_shared).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_data_gets_padded_orthonormal_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = low_rank_data(10, 12, 2, 2, &[2], &mut rng);
        let basis = fit_basis(&data, 5, 6).unwrap();
        assert_orthonormal(&basis.u_subject);
        assert_orthonormal(&basis.u_voxel);
        let back = decompress(&compress(&data, &basis).unwrap(), &basis).unwrap();
        assert!(max_rel(&data, &back) < 1e-8);
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_data(4, 5, &[2], &mut rng);
        assert!(fit_basis(&data, 5, 2).is_err());
        assert!(fit_basis(&data, 2, 0).is_err());
        let basis = CompressionBasis::identity(5, 5);
        assert!(compress(&data, &basis).is_err());
        let dims = Dims { subjects: 3, voxels: 5, times: vec![2] };
        let theta = PartitionedFactors::zeros(&dims, &Ranks::new(1, vec![1]).unwrap());
        assert!(expand_factors(&theta, &basis).is_err());
        assert!(CompressionBasis::new(DMatrix::from_element(3, 2, 1.0), DMatrix::identity(2, 2)).is_err());
    }
}
