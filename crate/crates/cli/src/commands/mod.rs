use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;

use ccpd::compression::{compress, fit_basis, CompressionBasis};
use ccpd::io::read_ct3;
use ccpd::CoupledDataset;

use crate::cli::Command;
use crate::config::RunConfig;
use crate::output::sha256_file;

pub mod decompose;
pub mod report;
pub mod simulate;
pub mod sweep;

pub const TOOL: &str = "ccpd";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Decompose(a) => decompose::run(&a),
        Command::Sweep(a) => sweep::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Report(a) => report::run(&a),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    /// File name only, so manifests do not depend on the working directory.
    pub file: String,
    pub sha256: String,
    pub dims: [usize; 3],
}

pub fn load_inputs(paths: &[PathBuf]) -> Result<(CoupledDataset, Vec<InputRecord>)> {
    let mut tensors = Vec::with_capacity(paths.len());
    let mut records = Vec::with_capacity(paths.len());
    for p in paths {
        let t = read_ct3(p).with_context(|| format!("reading {}", p.display()))?;
        records.push(InputRecord { file: file_name(p), sha256: sha256_file(p)?, dims: t.dims() });
        tensors.push(t);
    }
    let data = CoupledDataset::new(tensors).context("inputs must share subject and voxel dimensions")?;
    info!("loaded {} datasets, {} subjects x {} voxels", data.len(), data.subjects(), data.voxels());
    Ok((data, records))
}

pub fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressionRecord {
    pub applied: bool,
    pub d1: usize,
    pub d2: usize,
}

/// Compresses when configured and when it actually reduces a dimension.
pub fn maybe_compress(data: &CoupledDataset, cfg: &RunConfig) -> Result<(CoupledDataset, Option<CompressionBasis>, CompressionRecord)> {
    let (s, v) = (data.subjects(), data.voxels());
    let (d1, d2) = (cfg.compress_dim.min(s), cfg.compress_dim.min(v));
    if !cfg.compress || (d1 == s && d2 == v) {
        return Ok((data.clone(), None, CompressionRecord { applied: false, d1: s, d2: v }));
    }
    let basis = fit_basis(data, d1, d2)?;
    let reduced = compress(data, &basis)?;
    info!("compressed to {d1} x {d2}");
    Ok((reduced, Some(basis), CompressionRecord { applied: true, d1, d2 }))
}

/// Wall-clock phases, written apart from the deterministic artifacts.
#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub jobs: Option<usize>,
    pub phases: Vec<(String, f64)>,
    #[serde(skip)]
    last: Option<Instant>,
}

impl Timings {
    pub fn start(jobs: Option<usize>) -> Self {
        Self { jobs, phases: Vec::new(), last: Some(Instant::now()) }
    }

    pub fn lap(&mut self, phase: &str) {
        let now = Instant::now();
        let secs = self.last.map_or(0.0, |t| (now - t).as_secs_f64());
        self.phases.push((phase.to_string(), secs));
        self.last = Some(now);
    }
}
