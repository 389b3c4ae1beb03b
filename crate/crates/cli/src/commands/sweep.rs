use std::fmt::Write as _;

use anyhow::{bail, Result};
use serde::Serialize;

use ccpd::reproducibility::{rank_sweep, SweepRow};

use super::{load_inputs, maybe_compress, CompressionRecord, InputRecord, Timings, TOOL, VERSION};
use crate::cli::SweepArgs;
use crate::config::RunConfig;
use crate::output::{prepare_dir, sha256_file, write_json, write_text, Artifact};

const ARTIFACTS: &[&str] = &["manifest.json", "timings.json", "sweep.csv"];

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    inputs: &'a [InputRecord],
    compression: &'a CompressionRecord,
    /// Rows ordered from most to least reproducible.
    rows: &'a [SweepRow],
    artifacts: Vec<Artifact>,
}

pub fn run(args: &SweepArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.solve.config)?.resolve(&args.solve)?;
    let Some(sweep) = cfg.sweep.clone() else {
        bail!("the configuration has no `sweep` section");
    };
    if sweep.grid.is_empty() {
        bail!("the sweep grid is empty");
    }
    if sweep.n_sweep == 0 {
        bail!("n_sweep must be positive");
    }
    let out = &args.out.output;
    prepare_dir(out, ARTIFACTS, args.out.force)?;
    let mut timings = Timings::start(args.solve.jobs);

    let (data, inputs) = load_inputs(&args.inputs)?;
    let (work, _, compression) = maybe_compress(&data, &cfg)?;
    timings.lap("prepare");

    let rows = rank_sweep(&work, &sweep.grid, &cfg.solver(), sweep.n_sweep, args.solve.jobs)?;
    timings.lap("sweep");

    let csv_path = out.join("sweep.csv");
    write_text(&csv_path, &sweep_csv(&rows))?;
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        command: "sweep",
        config: &cfg,
        inputs: &inputs,
        compression: &compression,
        rows: &rows,
        artifacts: vec![Artifact { path: "sweep.csv".into(), sha256: sha256_file(&csv_path)? }],
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    write_json(&out.join("timings.json"), &timings)?;
    if rows.iter().all(|r| r.score.is_none()) {
        bail!("every grid point failed; see {}", csv_path.display());
    }
    Ok(())
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("rank,shared,distinct,lambda,score,runs_ok,runs_failed,selected_cost,error\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
    for (i, r) in rows.iter().enumerate() {
        let distinct: Vec<String> = r.ranks.distinct.iter().map(|l| l.to_string()).collect();
        let error = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let _ = writeln!(
            s,
            "{},{},{},{:e},{},{},{},{},\"{}\"",
            i + 1,
            r.ranks.shared,
            distinct.join(";"),
            r.lambda,
            opt(r.score),
            r.runs_ok,
            r.runs_failed,
            opt(r.selected_cost),
            error
        );
    }
    s
}
