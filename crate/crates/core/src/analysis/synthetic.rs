use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ttest::GroupLabels;
use crate::error::{invalid, Result};
use crate::model::{CoupledDataset, Dims, PartitionedFactors, Ranks};
use crate::tensor::{FactorMatrix, Tensor3};

/// Mean shift of selected shared subject columns between two groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEffect {
    /// Indices into the shared components.
    pub columns: Vec<usize>,
    /// Standardized mean difference (group 1 minus group 0).
    pub cohen_d: f64,
    /// Subjects `0..n0` form group 0, the remaining `n1` group 1.
    pub group_sizes: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dims: Dims,
    pub ranks: Ranks,
    /// `None` (or JSON `null`) for noiseless data.
    #[serde(default)]
    pub noise_snr_db: Option<f64>,
    /// Pairwise cosine between factor columns, in `[0, 1)`.
    #[serde(default)]
    pub collinearity: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub group_effect: Option<GroupEffect>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub data: CoupledDataset,
    pub truth: PartitionedFactors,
    /// Noise-free tensors.
    pub clean: CoupledDataset,
    pub labels: Option<GroupLabels>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.ranks.validate()?;
        self.ranks.check_dims(&self.dims)?;
        if self.dims.subjects == 0 || self.dims.voxels == 0 || self.dims.times.contains(&0) {
            return Err(invalid("all dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.collinearity) {
            return Err(invalid(format!("collinearity {} must be in [0, 1)", self.collinearity)));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(invalid("SNR must be finite; omit it for noiseless data"));
            }
        }
        let m = self.ranks.joint();
        for (name, n) in [("subject", self.dims.subjects), ("voxel", self.dims.voxels)] {
            if m > n {
                return Err(invalid(format!(
                    "{m} components cannot have controlled congruence in the {n}-dimensional {name} mode"
                )));
            }
        }
        if let Some(g) = &self.group_effect {
            if g.group_sizes[0] + g.group_sizes[1] != self.dims.subjects {
                return Err(invalid(format!(
                    "group sizes {:?} do not add up to {} subjects",
                    g.group_sizes, self.dims.subjects
                )));
            }
            if let Some(c) = g.columns.iter().find(|&&c| c >= self.ranks.shared) {
                return Err(invalid(format!("group effect column {c} is not a shared component")));
            }
            if !g.cohen_d.is_finite() {
                return Err(invalid("effect size must be finite"));
            }
        }
        Ok(())
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `n x m` unit-norm columns whose pairwise cosines all equal `rho`:
/// `Q Lᵀ` with `Q` orthonormal and `L Lᵀ = (1 − rho) I + rho 11ᵀ`.
fn congruent_columns(n: usize, m: usize, rho: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    debug_assert!(m <= n);
    if m == 0 {
        return DMatrix::zeros(n, 0);
    }
    let q = gaussian(n, m, rng).qr().q();
    let c = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho });
    let l = Cholesky::new(c).expect("congruence matrix is positive definite for rho < 1").l();
    q * l.transpose()
}

fn unit_columns(mut x: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in x.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    x
}

/// Draws ground-truth factors and data. Random draws happen in a fixed
/// order: subject factors, voxel factors, time factors per dataset, group
/// effect columns, then noise per dataset.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dims, ranks) = (&spec.dims, &spec.ranks);
    let (r, m) = (ranks.shared, ranks.joint());
    let rho = spec.collinearity;

    let mut s_all = congruent_columns(dims.subjects, m, rho, &mut rng);
    let v_all = congruent_columns(dims.voxels, m, rho, &mut rng);
    let t_all: Vec<FactorMatrix> = dims
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let cols = ranks.total(k);
            if cols <= t {
                congruent_columns(t, cols, rho, &mut rng)
            } else {
                unit_columns(gaussian(t, cols, &mut rng))
            }
        })
        .collect();

    let labels = match &spec.group_effect {
        Some(g) => {
            let labels = GroupLabels::blocks(g.group_sizes[0], g.group_sizes[1])?;
            for &c in &g.columns {
                let col = DMatrix::from_fn(dims.subjects, 1, |i, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + if labels.labels()[i] == 1 { g.cohen_d } else { 0.0 }
                });
                s_all.set_column(c, &unit_columns(col).column(0));
            }
            Some(labels)
        }
        None => None,
    };

    let mut truth = PartitionedFactors::zeros(dims, ranks);
    truth.s_shared = s_all.columns(0, r).into_owned();
    truth.v_shared = v_all.columns(0, r).into_owned();
    let mut at = r;
    for (k, t) in t_all.iter().enumerate() {
        let l = ranks.distinct[k];
        truth.s_distinct[k] = s_all.columns(at, l).into_owned();
        truth.v_distinct[k] = v_all.columns(at, l).into_owned();
        truth.t_shared[k] = t.columns(0, r).into_owned();
        truth.t_distinct[k] = t.columns(r, l).into_owned();
        at += l;
    }

    let clean: Vec<Tensor3> = (0..dims.datasets()).map(|k| truth.reconstruct(k)).collect::<Result<_>>()?;
    let noisy = match spec.noise_snr_db {
        None => clean.clone(),
        Some(snr) => clean
            .iter()
            .map(|x| {
                let noise: Vec<f64> = (0..x.data().len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let energy: f64 = noise.iter().map(|v| v * v).sum();
                let scale = (x.frobenius_norm_sq() / (energy * 10f64.powf(snr / 10.0))).sqrt();
                let data = x.data().iter().zip(&noise).map(|(a, e)| a + scale * e).collect();
                Tensor3::new(x.dims(), data)
            })
            .collect::<Result<_>>()?,
    };
    Ok(SyntheticData {
        data: CoupledDataset::new(noisy)?,
        truth,
        clean: CoupledDataset::new(clean)?,
        labels,
    })
}

/// `10 log10(‖clean‖² / ‖noisy − clean‖²)` pooled over datasets.
pub fn snr_db(clean: &CoupledDataset, noisy: &CoupledDataset) -> Result<f64> {
    let mut signal = 0.0;
    let mut noise = 0.0;
    for (c, n) in clean.tensors().iter().zip(noisy.tensors()) {
        signal += c.frobenius_norm_sq();
        noise += n.sub(c)?.frobenius_norm_sq();
    }
    Ok(10.0 * (signal / noise).log10())
}
