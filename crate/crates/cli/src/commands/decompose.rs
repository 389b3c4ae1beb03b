use std::fmt::Write as _;

use anyhow::Result;
use log::info;
use serde::Serialize;

use ccpd::compression::expand_factors;
use ccpd::io::{cost_trace_csv, save_theta, write_cm2, ThetaManifest};
use ccpd::reproducibility::{multi_start, select_most_reproducible, RunFailure};
use ccpd::{cost, Dims};

use super::{load_inputs, maybe_compress, CompressionRecord, InputRecord, Timings, TOOL, VERSION};
use crate::cli::DecomposeArgs;
use crate::config::RunConfig;
use crate::output::{checksum_tree, prepare_dir, write_json, write_text, Artifact};

const ARTIFACTS: &[&str] =
    &["manifest.json", "timings.json", "theta", "basis", "runs", "cost_trace.csv", "pdistance.csv"];

#[derive(Serialize)]
struct RunsRecord<'a> {
    requested: usize,
    succeeded: usize,
    failed: &'a [RunFailure],
}

#[derive(Serialize)]
struct SelectionRecord {
    index: usize,
    seed: u64,
    score: f64,
    /// Objective of the selected run on the (possibly compressed) data it was fit to.
    solver_cost: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    inputs: &'a [InputRecord],
    dims: &'a Dims,
    compression: &'a CompressionRecord,
    runs: RunsRecord<'a>,
    selection: SelectionRecord,
    /// Objective of the selected factors on the original data.
    final_cost: f64,
    artifacts: Vec<Artifact>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    index: usize,
    seed: u64,
    iterations: usize,
    converged: bool,
    final_cost: f64,
    stalls: usize,
    ridge_events: usize,
    cost_trace: &'a [f64],
}

pub fn run(args: &DecomposeArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.solve.config)?.resolve(&args.solve)?;
    let out = &args.out.output;
    prepare_dir(out, ARTIFACTS, args.out.force)?;
    let mut timings = Timings::start(args.solve.jobs);

    let (data, inputs) = load_inputs(&args.inputs)?;
    let dims = data.dims();
    cfg.ranks.check_dims(&dims)?;
    timings.lap("load");

    let (work, basis, compression) = maybe_compress(&data, &cfg)?;
    timings.lap("compress");

    let solver = cfg.solver();
    let runs = multi_start(&work, &solver, cfg.n_starts, args.solve.jobs)?;
    info!("{} runs succeeded, {} failed", runs.len(), runs.failures.len());
    timings.lap("solve");

    let sel = select_most_reproducible(&runs, cfg.selection())?;
    let chosen = &runs.runs[sel.index];
    let theta = match &basis {
        Some(b) => expand_factors(&chosen.theta, b)?,
        None => chosen.theta.clone(),
    };
    let final_cost = cost(&theta, &data, cfg.lambda)?;
    timings.lap("select");

    save_theta(
        out.join("theta"),
        &theta,
        &ThetaManifest {
            datasets: data.len(),
            dims: dims.clone(),
            ranks: cfg.ranks.clone(),
            lambda: cfg.lambda,
            seed: chosen.seed,
            final_cost,
        },
    )?;
    if let Some(b) = &basis {
        let dir = out.join("basis");
        std::fs::create_dir_all(&dir)?;
        write_cm2(dir.join("u_subject.cm2"), &b.u_subject)?;
        write_cm2(dir.join("u_voxel.cm2"), &b.u_voxel)?;
    }
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    for (i, r) in runs.runs.iter().enumerate() {
        let rec = RunRecord {
            index: i,
            seed: r.seed,
            iterations: r.iterations,
            converged: r.converged,
            final_cost: r.final_cost(),
            stalls: r.stalls,
            ridge_events: r.ridge_events,
            cost_trace: &r.cost_trace,
        };
        write_json(&runs_dir.join(format!("run_{i:04}.json")), &rec)?;
    }
    write_text(&out.join("cost_trace.csv"), &cost_trace_csv(&chosen.cost_trace))?;
    write_text(&out.join("pdistance.csv"), &pdistance_csv(&runs.runs, &sel.scores, &sel.pairwise))?;

    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        command: "decompose",
        config: &cfg,
        inputs: &inputs,
        dims: &dims,
        compression: &compression,
        runs: RunsRecord { requested: cfg.n_starts, succeeded: runs.len(), failed: &runs.failures },
        selection: SelectionRecord {
            index: sel.index,
            seed: sel.seed,
            score: sel.scores[sel.index],
            solver_cost: chosen.final_cost(),
            iterations: chosen.iterations,
            converged: chosen.converged,
        },
        final_cost,
        artifacts: checksum_tree(out, &["manifest.json", "timings.json"])?,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    timings.lap("write");
    write_json(&out.join("timings.json"), &timings)?;
    info!("selected run {} (seed {}), cost {final_cost:e}", sel.index, sel.seed);
    Ok(())
}

fn pdistance_csv(runs: &[ccpd::SolveResult], scores: &[f64], pairwise: &[Vec<f64>]) -> String {
    let mut s = String::from("run,seed,score");
    for r in runs {
        let _ = write!(s, ",seed_{}", r.seed);
    }
    s.push('\n');
    for (i, r) in runs.iter().enumerate() {
        let _ = write!(s, "{i},{},{:e}", r.seed, scores[i]);
        for d in &pairwise[i] {
            let _ = write!(s, ",{d:e}");
        }
        s.push('\n');
    }
    s
}
