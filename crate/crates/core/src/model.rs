//! The coupled model: `K` datasets `Y_k (S x V x T_k)` each following a CP
//! model whose first `R` subject and voxel columns are common to all
//! datasets, followed by `L_k` dataset-specific columns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::tensor::{add_reconstruction, frobenius_norm_sq, reconstruct_factors, FactorMatrix, Tensor3};

/// Mode sizes of a coupled dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub subjects: usize,
    pub voxels: usize,
    pub times: Vec<usize>,
}

impl Dims {
    pub fn datasets(&self) -> usize {
        self.times.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledDataset {
    tensors: Vec<Tensor3>,
}

impl CoupledDataset {
    pub fn new(tensors: Vec<Tensor3>) -> Result<Self> {
        let first = tensors.first().ok_or_else(|| invalid("a coupled dataset needs at least one tensor"))?;
        let [s, v, _] = first.dims();
        for (k, t) in tensors.iter().enumerate() {
            let [ts, tv, _] = t.dims();
            if ts != s || tv != v {
                return Err(mismatch(format!(
                    "dataset {k} is {ts}x{tv} in the subject/voxel modes, dataset 0 is {s}x{v}"
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn tensors(&self) -> &[Tensor3] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> &Tensor3 {
        &self.tensors[k]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn subjects(&self) -> usize {
        self.tensors[0].dims()[0]
    }

    pub fn voxels(&self) -> usize {
        self.tensors[0].dims()[1]
    }

    pub fn dims(&self) -> Dims {
        Dims {
            subjects: self.subjects(),
            voxels: self.voxels(),
            times: self.tensors.iter().map(|t| t.dims()[2]).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors.iter().map(frobenius_norm_sq).sum()
    }
}

/// Shared rank `R` and per-dataset distinct ranks `L_k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranks {
    pub shared: usize,
    pub distinct: Vec<usize>,
}

impl Ranks {
    pub fn new(shared: usize, distinct: Vec<usize>) -> Result<Self> {
        let r = Self { shared, distinct };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.distinct.is_empty() {
            return Err(invalid("ranks need one distinct rank per dataset"));
        }
        if let Some(k) = self.distinct.iter().position(|&l| self.shared + l == 0) {
            return Err(invalid(format!("dataset {k} has no components (R + L_k = 0)")));
        }
        Ok(())
    }

    pub fn datasets(&self) -> usize {
        self.distinct.len()
    }

    /// `R + L_k`.
    pub fn total(&self, k: usize) -> usize {
        self.shared + self.distinct[k]
    }

    /// `R + sum_k L_k`, the size of the joint subject/voxel unknown.
    pub fn joint(&self) -> usize {
        self.shared + self.distinct.iter().sum::<usize>()
    }

    /// `sum_k 3 (R + L_k)`, the largest attainable matched similarity.
    pub fn max_similarity(&self) -> f64 {
        (0..self.datasets()).map(|k| 3.0 * self.total(k) as f64).sum()
    }

    /// Checks that there is one distinct rank per dataset.
    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        self.validate()?;
        if self.datasets() != dims.datasets() {
            return Err(mismatch(format!(
                "{} distinct ranks for {} datasets",
                self.datasets(),
                dims.datasets()
            )));
        }
        Ok(())
    }
}

/// The full parameter set: shared subject/voxel blocks, per-dataset distinct
/// blocks and per-dataset time factors.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedFactors {
    /// `S x R`
    pub s_shared: FactorMatrix,
    /// `V x R`
    pub v_shared: FactorMatrix,
    /// `S x L_k`
    pub s_distinct: Vec<FactorMatrix>,
    /// `V x L_k`
    pub v_distinct: Vec<FactorMatrix>,
    /// `T_k x R`
    pub t_shared: Vec<FactorMatrix>,
    /// `T_k x L_k`
    pub t_distinct: Vec<FactorMatrix>,
}

impl PartitionedFactors {
    pub fn zeros(dims: &Dims, ranks: &Ranks) -> Self {
        let r = ranks.shared;
        Self {
            s_shared: DMatrix::zeros(dims.subjects, r),
            v_shared: DMatrix::zeros(dims.voxels, r),
            s_distinct: ranks.distinct.iter().map(|&l| DMatrix::zeros(dims.subjects, l)).collect(),
            v_distinct: ranks.distinct.iter().map(|&l| DMatrix::zeros(dims.voxels, l)).collect(),
            t_shared: dims.times.iter().map(|&t| DMatrix::zeros(t, r)).collect(),
            t_distinct: dims
                .times
                .iter()
                .zip(&ranks.distinct)
                .map(|(&t, &l)| DMatrix::zeros(t, l))
                .collect(),
        }
    }

    pub fn datasets(&self) -> usize {
        self.s_distinct.len()
    }

    pub fn ranks(&self) -> Ranks {
        Ranks {
            shared: self.s_shared.ncols(),
            distinct: self.s_distinct.iter().map(|m| m.ncols()).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            subjects: self.s_shared.nrows(),
            voxels: self.v_shared.nrows(),
            times: self.t_shared.iter().map(|m| m.nrows()).collect(),
        }
    }

    /// Checks every block against `dims`/`ranks` and for finite entries.
    pub fn validate(&self, dims: &Dims, ranks: &Ranks) -> Result<()> {
        ranks.check_dims(dims)?;
        let k = dims.datasets();
        if self.s_distinct.len() != k
            || self.v_distinct.len() != k
            || self.t_shared.len() != k
            || self.t_distinct.len() != k
        {
            return Err(mismatch(format!("factors for {} datasets, expected {k}", self.s_distinct.len())));
        }
        let r = ranks.shared;
        let expect = |name: String, m: &FactorMatrix, shape: (usize, usize)| -> Result<()> {
            if m.shape() != shape {
                return Err(mismatch(format!("{name} is {:?}, expected {shape:?}", m.shape())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
            Ok(())
        };
        expect("S shared".into(), &self.s_shared, (dims.subjects, r))?;
        expect("V shared".into(), &self.v_shared, (dims.voxels, r))?;
        for kk in 0..k {
            let l = ranks.distinct[kk];
            let t = dims.times[kk];
            expect(format!("S distinct {kk}"), &self.s_distinct[kk], (dims.subjects, l))?;
            expect(format!("V distinct {kk}"), &self.v_distinct[kk], (dims.voxels, l))?;
            expect(format!("T shared {kk}"), &self.t_shared[kk], (t, r))?;
            expect(format!("T distinct {kk}"), &self.t_distinct[kk], (t, l))?;
        }
        Ok(())
    }

    /// `(S_k, V_k, T_k)` with the shared block first.
    pub fn assemble(&self, k: usize) -> Result<(FactorMatrix, FactorMatrix, FactorMatrix)> {
        if k >= self.datasets() {
            return Err(Error::IndexOutOfRange { index: k, len: self.datasets() });
        }
        Ok((
            hcat(&self.s_shared, &self.s_distinct[k]),
            hcat(&self.v_shared, &self.v_distinct[k]),
            hcat(&self.t_shared[k], &self.t_distinct[k]),
        ))
    }

    pub fn assembled_subjects(&self, k: usize) -> FactorMatrix {
        hcat(&self.s_shared, &self.s_distinct[k])
    }

    pub fn assembled_voxels(&self, k: usize) -> FactorMatrix {
        hcat(&self.v_shared, &self.v_distinct[k])
    }

    pub fn assembled_times(&self, k: usize) -> FactorMatrix {
        hcat(&self.t_shared[k], &self.t_distinct[k])
    }

    /// `P_k = [[S^p, V^p, T_k^p]]`.
    pub fn shared_part(&self, k: usize) -> Result<Tensor3> {
        self.check_index(k)?;
        let dims = self.dims();
        if self.s_shared.ncols() == 0 {
            return Tensor3::zeros([dims.subjects, dims.voxels, dims.times[k]]);
        }
        Ok(reconstruct_factors(&self.s_shared, &self.v_shared, &self.t_shared[k]))
    }

    /// `D_k = [[S_k^d, V_k^d, T_k^d]]`.
    pub fn distinct_part(&self, k: usize) -> Result<Tensor3> {
        self.check_index(k)?;
        let dims = self.dims();
        if self.s_distinct[k].ncols() == 0 {
            return Tensor3::zeros([dims.subjects, dims.voxels, dims.times[k]]);
        }
        Ok(reconstruct_factors(&self.s_distinct[k], &self.v_distinct[k], &self.t_distinct[k]))
    }

    /// `[[S_k, V_k, T_k]]`.
    pub fn reconstruct(&self, k: usize) -> Result<Tensor3> {
        self.check_index(k)?;
        let dims = self.dims();
        let shape = [dims.subjects, dims.voxels, dims.times[k]];
        let mut data = vec![0.0; shape[0] * shape[1] * shape[2]];
        add_reconstruction(&mut data, &self.s_shared, &self.v_shared, &self.t_shared[k]);
        add_reconstruction(&mut data, &self.s_distinct[k], &self.v_distinct[k], &self.t_distinct[k]);
        Ok(Tensor3::from_raw(shape, data))
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.datasets() {
            return Err(Error::IndexOutOfRange { index: k, len: self.datasets() });
        }
        Ok(())
    }
}

pub(crate) fn hcat(a: &FactorMatrix, b: &FactorMatrix) -> FactorMatrix {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Solver settings. Field defaults are the ones `SolverConfig::new` uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub ranks: Ranks,
    /// Weight of the spatial coherence penalty.
    pub lambda: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "defaults::qn_memory")]
    pub qn_memory: usize,
    #[serde(default = "defaults::qn_max_inner")]
    pub qn_max_inner: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Default solver settings.
pub mod defaults {
    pub fn max_iters() -> usize {
        500
    }
    pub fn rel_tol() -> f64 {
        1e-8
    }
    pub fn qn_memory() -> usize {
        10
    }
    pub fn qn_max_inner() -> usize {
        30
    }
}

impl SolverConfig {
    pub fn new(ranks: Ranks, lambda: f64) -> Self {
        Self {
            ranks,
            lambda,
            max_iters: defaults::max_iters(),
            rel_tol: defaults::rel_tol(),
            qn_memory: defaults::qn_memory(),
            qn_max_inner: defaults::qn_max_inner(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ranks.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.rel_tol > 0.0) {
            return Err(invalid(format!("rel_tol must be > 0, got {}", self.rel_tol)));
        }
        if self.max_iters == 0 || self.qn_memory == 0 || self.qn_max_inner == 0 {
            return Err(invalid("max_iters, qn_memory and qn_max_inner must be positive"));
        }
        Ok(())
    }
}

/// Per-dataset terms of the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct CostBreakdown {
    /// `‖Y_k − [[S_k, V_k, T_k]]‖²_F`
    pub fit: Vec<f64>,
    /// `‖V_kᵀ V_k − I‖²_F`
    pub penalty: Vec<f64>,
    pub lambda: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.fit
            .iter()
            .zip(&self.penalty)
            .map(|(f, p)| f + self.lambda * p)
            .sum()
    }

    pub fn fit_total(&self) -> f64 {
        self.fit.iter().sum()
    }
}

pub fn cost_breakdown(theta: &PartitionedFactors, data: &CoupledDataset, lambda: f64) -> Result<CostBreakdown> {
    theta.validate(&data.dims(), &theta.ranks())?;
    let mut fit = Vec::with_capacity(data.len());
    let mut penalty = Vec::with_capacity(data.len());
    for (k, y) in data.tensors().iter().enumerate() {
        fit.push(residual_norm_sq(theta, y, k));
        penalty.push(coherence_penalty(&theta.assembled_voxels(k)));
    }
    Ok(CostBreakdown { fit, penalty, lambda })
}

/// `sum_k ‖Y_k − [[S_k, V_k, T_k]]‖²_F + λ ‖V_kᵀ V_k − I‖²_F`.
pub fn cost(theta: &PartitionedFactors, data: &CoupledDataset, lambda: f64) -> Result<f64> {
    Ok(cost_breakdown(theta, data, lambda)?.total())
}

pub(crate) fn residual_norm_sq(theta: &PartitionedFactors, y: &Tensor3, k: usize) -> f64 {
    let model = theta.reconstruct(k).expect("index checked by caller");
    y.data()
        .iter()
        .zip(model.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `‖VᵀV − I‖²_F`.
pub fn coherence_penalty(v: &FactorMatrix) -> f64 {
    let mut g = v.tr_mul(v);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm_squared()
}

/// `Y_k − [[S_k, V_k, T_k]]` for every dataset.
pub fn residual_tensors(theta: &PartitionedFactors, data: &CoupledDataset) -> Result<Vec<Tensor3>> {
    theta.validate(&data.dims(), &theta.ranks())?;
    data.tensors()
        .iter()
        .enumerate()
        .map(|(k, y)| y.sub(&theta.reconstruct(k)?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifiabilityStatus {
    Pass,
    Fail,
    /// The bound only covers `T_k <= S <= V`.
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityVerdict {
    pub dataset: usize,
    pub components: usize,
    /// `(T_k + 1)(S + 1) / 16`
    pub bound: f64,
    pub status: IdentifiabilityStatus,
}

/// Generic uniqueness check `R + L_k <= (T_k + 1)(S + 1) / 16` per dataset.
pub fn identifiability_check(dims: &Dims, ranks: &Ranks) -> Vec<IdentifiabilityVerdict> {
    dims.times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let components = ranks.shared + ranks.distinct.get(k).copied().unwrap_or(0);
            let bound = (t as f64 + 1.0) * (dims.subjects as f64 + 1.0) / 16.0;
            let status = if !(t <= dims.subjects && dims.subjects <= dims.voxels) || t == 0 {
                IdentifiabilityStatus::NotApplicable
            } else if components as f64 <= bound {
                IdentifiabilityStatus::Pass
            } else {
                IdentifiabilityStatus::Fail
            };
            IdentifiabilityVerdict { dataset: k, components, bound, status }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims { subjects: 6, voxels: 7, times: vec![2, 3] }
    }

    fn filled(dims: &Dims, ranks: &Ranks) -> PartitionedFactors {
        let mut th = PartitionedFactors::zeros(dims, ranks);
        let mut x = 0.3;
        let mut next = || {
            x = (x * 3.7 + 0.11) % 1.0;
            x - 0.5
        };
        th.s_shared.iter_mut().for_each(|v| *v = next());
        th.v_shared.iter_mut().for_each(|v| *v = next());
        for k in 0..dims.datasets() {
            th.s_distinct[k].iter_mut().for_each(|v| *v = next());
            th.v_distinct[k].iter_mut().for_each(|v| *v = next());
            th.t_shared[k].iter_mut().for_each(|v| *v = next());
            th.t_distinct[k].iter_mut().for_each(|v| *v = next());
        }
        th
    }

    #[test]
    fn assemble_column_counts() {
        let d = Dims { subjects: 9, voxels: 10, times: vec![3, 3, 3] };
        let r = Ranks::new(2, vec![5, 4, 4]).unwrap();
        let th = PartitionedFactors::zeros(&d, &r);
        let counts: Vec<_> = (0..3).map(|k| th.assemble(k).unwrap().0.ncols()).collect();
        assert_eq!(counts, vec![7, 6, 6]);
        assert!(matches!(th.assemble(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn assemble_degenerate_ranks() {
        let d = dims();
        let r0 = Ranks::new(0, vec![1, 2]).unwrap();
        let th = filled(&d, &r0);
        let (s, v, t) = th.assemble(1).unwrap();
        assert_eq!(s, th.s_distinct[1]);
        assert_eq!(v, th.v_distinct[1]);
        assert_eq!(t, th.t_distinct[1]);

        let full = filled(&d, &Ranks::new(2, vec![0, 0]).unwrap());
        for k in 0..2 {
            assert_eq!(full.assemble(k).unwrap().0, full.s_shared);
        }
    }

    #[test]
    fn ranks_reject_empty_datasets() {
        assert!(Ranks::new(0, vec![1, 0]).is_err());
        assert!(Ranks::new(0, vec![]).is_err());
    }

    #[test]
    fn zero_model_cost_is_data_energy() {
        let d = dims();
        let r = Ranks::new(1, vec![1, 2]).unwrap();
        let data = CoupledDataset::new(vec![
            Tensor3::from_fn([6, 7, 2], |i, j, k| (i + j + k) as f64).unwrap(),
            Tensor3::from_fn([6, 7, 3], |i, j, k| (i * j) as f64 - k as f64).unwrap(),
        ])
        .unwrap();
        let th = PartitionedFactors::zeros(&d, &r);
        let c = cost(&th, &data, 0.0).unwrap();
        assert_eq!(c, data.norm_sq());
    }

    #[test]
    fn exact_orthonormal_model_has_zero_cost() {
        let d = Dims { subjects: 4, voxels: 5, times: vec![2, 2] };
        let r = Ranks::new(1, vec![1, 1]).unwrap();
        let mut th = filled(&d, &r);
        // Orthonormal voxel columns e0, e1, e2.
        th.v_shared = DMatrix::from_fn(5, 1, |i, _| (i == 0) as u8 as f64);
        th.v_distinct[0] = DMatrix::from_fn(5, 1, |i, _| (i == 1) as u8 as f64);
        th.v_distinct[1] = DMatrix::from_fn(5, 1, |i, _| (i == 2) as u8 as f64);
        let data = CoupledDataset::new((0..2).map(|k| th.reconstruct(k).unwrap()).collect()).unwrap();
        for lambda in [0.0, 1.0, 1e6] {
            assert_eq!(cost(&th, &data, lambda).unwrap(), 0.0);
        }
        assert!(residual_tensors(&th, &data).unwrap().iter().all(|t| t.frobenius_norm_sq() == 0.0));
    }

    #[test]
    fn shared_part_is_zero_without_shared_rank() {
        let d = dims();
        let th = filled(&d, &Ranks::new(0, vec![2, 1]).unwrap());
        assert_eq!(th.shared_part(0).unwrap().frobenius_norm_sq(), 0.0);
    }

    #[test]
    fn shared_plus_distinct_is_reconstruction() {
        let d = dims();
        let th = filled(&d, &Ranks::new(1, vec![1, 2]).unwrap());
        for k in 0..2 {
            let sum = th.shared_part(k).unwrap().add(&th.distinct_part(k).unwrap()).unwrap();
            let full = th.reconstruct(k).unwrap();
            let diff = sum.sub(&full).unwrap();
            assert!(diff.data().iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn cost_rejects_mismatched_dims() {
        let th = PartitionedFactors::zeros(&dims(), &Ranks::new(1, vec![1, 1]).unwrap());
        let data = CoupledDataset::new(vec![Tensor3::zeros([6, 7, 2]).unwrap()]).unwrap();
        assert!(cost(&th, &data, 0.0).is_err());
    }

    #[test]
    fn identifiability_examples() {
        let r = Ranks::new(2, vec![5]).unwrap();
        let v = identifiability_check(&Dims { subjects: 271, voxels: 48546, times: vec![3] }, &r);
        assert_eq!(v[0].status, IdentifiabilityStatus::Pass);
        assert_eq!(v[0].bound, 68.0);

        let v = identifiability_check(&Dims { subjects: 3, voxels: 5, times: vec![1] }, &Ranks::new(1, vec![0]).unwrap());
        assert_eq!(v[0].bound, 0.5);
        assert_eq!(v[0].status, IdentifiabilityStatus::Fail);

        let v = identifiability_check(&Dims { subjects: 10, voxels: 5, times: vec![3] }, &Ranks::new(1, vec![0]).unwrap());
        assert_eq!(v[0].status, IdentifiabilityStatus::NotApplicable);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::new(Ranks::new(1, vec![1]).unwrap(), 1.0);
        assert!(c.validate().is_ok());
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        c.lambda = 0.0;
        c.rel_tol = 0.0;
        assert!(c.validate().is_err());
    }
}
