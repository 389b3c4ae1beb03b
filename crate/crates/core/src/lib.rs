//! Partially coupled canonical polyadic decomposition.
//!
//! `K` order-3 datasets `Y_k` (subjects x voxels x `T_k`) are factorized
//! jointly as `Y_k ≈ [[S_k, V_k, T_k]]` where the first `R` columns of
//! `S_k` and `V_k` are common to every dataset and the remaining `L_k`
//! columns belong to dataset `k` alone. The crate provides the model and
//! cost, a block-coordinate-descent solver, multi-start run selection by
//! reproducibility, SVD compression of the large modes, and the statistics
//! used to analyze a decomposition.

pub mod analysis;
pub mod compression;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod reproducibility;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{cost, CoupledDataset, Dims, PartitionedFactors, Ranks, SolverConfig};
pub use solver::{bcd_solve, init_random, SolveResult};
pub use tensor::{CpModel, FactorMatrix, Tensor3};
