//! Block updates of the coordinate-descent solver.
//!
//! All three blocks share one structure. With the other two modes fixed, the
//! residual of dataset `k` in the updated mode is `Y_k,(n) − X_k W_kᵀ`, with
//! `W_k` the Khatri-Rao product of the fixed factors, so only the Gram
//! matrices `G_k = W_kᵀ W_k` (a Hadamard product of small Grams) and the
//! MTTKRP products `M_k = Y_k,(n) W_k` are needed.

use nalgebra::{DMatrix, DVector};

use crate::linalg::solve_normal_equations;
use crate::model::{CoupledDataset, PartitionedFactors};
use crate::solver::lbfgs::{self, LbfgsSettings};
use crate::tensor::{hadamard_gram, mttkrp, FactorMatrix};

/// Quasi-Newton settings for the voxel update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QnSettings {
    pub memory: usize,
    pub max_inner: usize,
}

impl Default for QnSettings {
    fn default() -> Self {
        Self { memory: 10, max_inner: 30 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateInfo {
    /// A normal matrix needed the ridge fallback.
    pub ridged: bool,
    /// The voxel line search failed before the inner budget was spent.
    pub stalled: bool,
    pub inner_iterations: usize,
}

/// Solves the least-squares problem in which the first `shared` columns of
/// every `X_k` are one common block: minimizes
/// `sum_k ‖Y_k − [X_shared, X_k] W_kᵀ‖²` given `G_k` and `M_k`.
fn coupled_least_squares(grams: &[DMatrix<f64>], rhs: &[DMatrix<f64>], shared: usize) -> (FactorMatrix, Vec<FactorMatrix>, bool) {
    let rows = rhs[0].nrows();
    let widths: Vec<usize> = grams.iter().map(|g| g.nrows() - shared).collect();
    let n = shared + widths.iter().sum::<usize>();
    let mut normal = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(rows, n);
    let mut offset = shared;
    for ((g, m), &l) in grams.iter().zip(rhs).zip(&widths) {
        let mut ss = normal.view_mut((0, 0), (shared, shared));
        ss += g.view((0, 0), (shared, shared));
        normal
            .view_mut((0, offset), (shared, l))
            .copy_from(&g.view((0, shared), (shared, l)));
        normal
            .view_mut((offset, 0), (l, shared))
            .copy_from(&g.view((shared, 0), (l, shared)));
        normal
            .view_mut((offset, offset), (l, l))
            .copy_from(&g.view((shared, shared), (l, l)));
        let mut bs = b.columns_mut(0, shared);
        bs += m.columns(0, shared);
        b.columns_mut(offset, l).copy_from(&m.columns(shared, l));
        offset += l;
    }
    let (x, ridged) = solve_normal_equations(&normal, &b);
    let shared_block = x.columns(0, shared).into_owned();
    let mut offset = shared;
    let distinct = widths
        .iter()
        .map(|&l| {
            let block = x.columns(offset, l).into_owned();
            offset += l;
            block
        })
        .collect();
    (shared_block, distinct, ridged)
}

/// Exact joint minimizer over `(S^p, S_1^d, ..., S_K^d)` with voxel and time
/// factors fixed.
pub fn update_subjects(theta: &mut PartitionedFactors, data: &CoupledDataset) -> UpdateInfo {
    let k = data.len();
    let mut grams = Vec::with_capacity(k);
    let mut rhs = Vec::with_capacity(k);
    for (kk, y) in data.tensors().iter().enumerate() {
        let (s, v, t) = theta.assemble(kk).expect("dataset index");
        grams.push(hadamard_gram(&v, &t));
        rhs.push(mttkrp(y, &s, &v, &t, 1));
    }
    let (shared, distinct, ridged) = coupled_least_squares(&grams, &rhs, theta.s_shared.ncols());
    theta.s_shared = shared;
    theta.s_distinct = distinct;
    UpdateInfo { ridged, ..Default::default() }
}

/// Independent exact least squares for each `T_k = [T_k^p, T_k^d]`.
pub fn update_times(theta: &mut PartitionedFactors, data: &CoupledDataset) -> UpdateInfo {
    let r = theta.s_shared.ncols();
    let mut ridged = false;
    for (kk, y) in data.tensors().iter().enumerate() {
        let (s, v, t) = theta.assemble(kk).expect("dataset index");
        let g = hadamard_gram(&s, &v);
        let m = mttkrp(y, &s, &v, &t, 3);
        let (tk, rg) = solve_normal_equations(&g, &m);
        ridged |= rg;
        let l = tk.ncols() - r;
        theta.t_shared[kk] = tk.columns(0, r).into_owned();
        theta.t_distinct[kk] = tk.columns(r, l).into_owned();
    }
    UpdateInfo { ridged, ..Default::default() }
}

/// The voxel subproblem with subject and time factors fixed, in expanded
/// quadratic form plus the quartic coherence penalty.
pub(crate) struct VoxelObjective {
    voxels: usize,
    shared: usize,
    widths: Vec<usize>,
    /// `Y_k,(2) W_k`
    rhs: Vec<DMatrix<f64>>,
    /// `W_kᵀ W_k`
    grams: Vec<DMatrix<f64>>,
    /// `‖Y_k‖²`
    energy: Vec<f64>,
    lambda: f64,
}

impl VoxelObjective {
    pub(crate) fn new(theta: &PartitionedFactors, data: &CoupledDataset, lambda: f64) -> Self {
        let mut rhs = Vec::with_capacity(data.len());
        let mut grams = Vec::with_capacity(data.len());
        let mut energy = Vec::with_capacity(data.len());
        for (kk, y) in data.tensors().iter().enumerate() {
            let (s, v, t) = theta.assemble(kk).expect("dataset index");
            grams.push(hadamard_gram(&s, &t));
            rhs.push(mttkrp(y, &s, &v, &t, 2));
            energy.push(y.frobenius_norm_sq());
        }
        Self {
            voxels: data.voxels(),
            shared: theta.v_shared.ncols(),
            widths: theta.v_distinct.iter().map(|m| m.ncols()).collect(),
            rhs,
            grams,
            energy,
            lambda,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.voxels * (self.shared + self.widths.iter().sum::<usize>())
    }

    /// Packs `(V^p, V_1^d, ..., V_K^d)` column-major into one vector.
    pub(crate) fn pack(&self, theta: &PartitionedFactors) -> DVector<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend_from_slice(theta.v_shared.as_slice());
        for m in &theta.v_distinct {
            x.extend_from_slice(m.as_slice());
        }
        DVector::from_vec(x)
    }

    pub(crate) fn unpack(&self, x: &DVector<f64>) -> (FactorMatrix, Vec<FactorMatrix>) {
        let v = self.voxels;
        let shared = DMatrix::from_column_slice(v, self.shared, &x.as_slice()[..v * self.shared]);
        let mut at = v * self.shared;
        let distinct = self
            .widths
            .iter()
            .map(|&l| {
                let m = DMatrix::from_column_slice(v, l, &x.as_slice()[at..at + v * l]);
                at += v * l;
                m
            })
            .collect();
        (shared, distinct)
    }

    /// Objective value and gradient `(∂/∂V^p, [∂/∂V_k^d])`.
    pub(crate) fn eval(&self, shared: &FactorMatrix, distinct: &[FactorMatrix]) -> (f64, FactorMatrix, Vec<FactorMatrix>) {
        let r = self.shared;
        let mut value = 0.0;
        let mut g_shared = DMatrix::zeros(self.voxels, r);
        let mut g_distinct = Vec::with_capacity(distinct.len());
        for (kk, vd) in distinct.iter().enumerate() {
            let vk = crate::model::hcat(shared, vd);
            let m = &self.rhs[kk];
            let vg = &vk * &self.grams[kk];
            let mut coh = vk.tr_mul(&vk);
            for i in 0..coh.nrows() {
                coh[(i, i)] -= 1.0;
            }
            value += self.energy[kk] - 2.0 * vk.dot(m) + vg.dot(&vk) + self.lambda * coh.norm_squared();
            // −2 (Y₍₂₎ − V Wᵀ) W + 4λ V (VᵀV − I)
            let mut grad = (vg - m) * 2.0;
            if self.lambda != 0.0 {
                grad += (&vk * &coh) * (4.0 * self.lambda);
            }
            g_shared += grad.columns(0, r);
            g_distinct.push(grad.columns(r, vd.ncols()).into_owned());
        }
        (value, g_shared, g_distinct)
    }

    fn eval_packed(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (s, d) = self.unpack(x);
        let (f, gs, gd) = self.eval(&s, &d);
        let mut g = Vec::with_capacity(self.len());
        g.extend_from_slice(gs.as_slice());
        for m in &gd {
            g.extend_from_slice(m.as_slice());
        }
        (f, DVector::from_vec(g))
    }

    /// Minimizer of the fit term alone (the `λ = 0` problem).
    fn least_squares(&self) -> (FactorMatrix, Vec<FactorMatrix>, bool) {
        coupled_least_squares(&self.grams, &self.rhs, self.shared)
    }
}

/// Gradient of the full cost with respect to `(V^p, [V_k^d])` at `theta`.
pub fn voxel_gradient(theta: &PartitionedFactors, data: &CoupledDataset, lambda: f64) -> (FactorMatrix, Vec<FactorMatrix>) {
    let obj = VoxelObjective::new(theta, data, lambda);
    let (_, gs, gd) = obj.eval(&theta.v_shared, &theta.v_distinct);
    (gs, gd)
}

/// Voxel block update. At `λ = 0` the problem is an ordinary coupled least
/// squares and is solved exactly; otherwise limited-memory quasi-Newton runs
/// from whichever of the current factors and the `λ = 0` solution scores
/// lower. The objective never increases.
pub fn update_voxels(theta: &mut PartitionedFactors, data: &CoupledDataset, lambda: f64, qn: &QnSettings) -> UpdateInfo {
    let obj = VoxelObjective::new(theta, data, lambda);
    let (ls_shared, ls_distinct, ridged) = obj.least_squares();
    if lambda == 0.0 {
        theta.v_shared = ls_shared;
        theta.v_distinct = ls_distinct;
        return UpdateInfo { ridged, ..Default::default() };
    }
    let current = obj.eval(&theta.v_shared, &theta.v_distinct).0;
    let ls_value = obj.eval(&ls_shared, &ls_distinct).0;
    if ls_value.is_finite() && ls_value < current {
        theta.v_shared = ls_shared;
        theta.v_distinct = ls_distinct;
    }
    let mut info = quasi_newton(&obj, theta, qn);
    info.ridged = ridged;
    info
}

/// Voxel block update by quasi-Newton only, starting from the current factors.
pub fn update_voxels_quasi_newton(theta: &mut PartitionedFactors, data: &CoupledDataset, lambda: f64, qn: &QnSettings) -> UpdateInfo {
    let obj = VoxelObjective::new(theta, data, lambda);
    quasi_newton(&obj, theta, qn)
}

fn quasi_newton(obj: &VoxelObjective, theta: &mut PartitionedFactors, qn: &QnSettings) -> UpdateInfo {
    if obj.len() == 0 {
        return UpdateInfo::default();
    }
    let settings = LbfgsSettings {
        memory: qn.memory,
        max_iters: qn.max_inner,
        ..Default::default()
    };
    let out = lbfgs::minimize(|x| obj.eval_packed(x), obj.pack(theta), &settings);
    let (shared, distinct) = obj.unpack(&out.x);
    theta.v_shared = shared;
    theta.v_distinct = distinct;
    UpdateInfo {
        ridged: false,
        stalled: out.stalled,
        inner_iterations: out.iterations,
    }
}
