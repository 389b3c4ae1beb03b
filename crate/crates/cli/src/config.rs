use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ccpd::reproducibility::{Aggregation, Normalization, SelectionOptions, SweepPoint};
use ccpd::{Ranks, SolverConfig};

use crate::cli::SolveArgs;

mod defaults {
    pub fn n_starts() -> usize {
        200
    }
    pub fn compress() -> bool {
        true
    }
    pub fn compress_dim() -> usize {
        30
    }
    pub fn n_sweep() -> usize {
        10
    }
}

/// Run configuration read from JSON. Every omitted field takes its default
/// and the resolved values are written back into output manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ranks: Ranks,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "ccpd::model::defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "ccpd::model::defaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "ccpd::model::defaults::qn_memory")]
    pub qn_memory: usize,
    #[serde(default = "ccpd::model::defaults::qn_max_inner")]
    pub qn_max_inner: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::n_starts")]
    pub n_starts: usize,
    #[serde(default = "defaults::compress")]
    pub compress: bool,
    #[serde(default = "defaults::compress_dim")]
    pub compress_dim: usize,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<SweepPoint>,
    #[serde(default = "defaults::n_sweep")]
    pub n_sweep: usize,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Applies command-line overrides and checks the result.
    pub fn resolve(mut self, args: &SolveArgs) -> Result<Self> {
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if args.no_compress {
            self.compress = false;
        }
        if let Some(d) = args.compress_dim {
            self.compress_dim = d;
        }
        if self.compress && self.compress_dim == 0 {
            bail!("compress_dim must be positive");
        }
        if self.n_starts == 0 {
            bail!("n_starts must be positive");
        }
        self.solver().validate()?;
        Ok(self)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            ranks: self.ranks.clone(),
            lambda: self.lambda,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            qn_memory: self.qn_memory,
            qn_max_inner: self.qn_max_inner,
            seed: self.seed,
        }
    }

    pub fn selection(&self) -> SelectionOptions {
        SelectionOptions { normalization: self.normalization, aggregation: self.aggregation }
    }
}
