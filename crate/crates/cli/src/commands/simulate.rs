use anyhow::Result;
use serde::Serialize;

use ccpd::analysis::{generate_synthetic, snr_db, SyntheticSpec};
use ccpd::io::{save_theta, write_ct3, ThetaManifest};
use ccpd::cost;

use super::{TOOL, VERSION};
use crate::cli::SimulateArgs;
use crate::output::{checksum_tree, prepare_dir, write_json, write_text, Artifact};

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    spec: &'a SyntheticSpec,
    /// Data files in dataset order.
    datasets: Vec<String>,
    measured_snr_db: Option<f64>,
    artifacts: Vec<Artifact>,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let k = spec.dims.datasets();
    let mut artifacts: Vec<String> = (0..k).map(|i| format!("data_{i}.ct3")).collect();
    artifacts.extend(["truth", "labels.txt", "manifest.json"].map(String::from));
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    let out = &args.out.output;
    prepare_dir(out, &names, args.out.force)?;

    let sim = generate_synthetic(&spec)?;
    for (i, t) in sim.data.tensors().iter().enumerate() {
        write_ct3(out.join(format!("data_{i}.ct3")), t)?;
    }
    save_theta(
        out.join("truth"),
        &sim.truth,
        &ThetaManifest {
            datasets: k,
            dims: spec.dims.clone(),
            ranks: spec.ranks.clone(),
            lambda: 0.0,
            seed: spec.seed,
            final_cost: cost(&sim.truth, &sim.data, 0.0)?,
        },
    )?;
    if let Some(labels) = &sim.labels {
        let names = labels.names();
        let lines: String = labels.labels().iter().map(|&l| format!("{}\n", names[l as usize])).collect();
        write_text(&out.join("labels.txt"), &lines)?;
    }
    let measured_snr_db = match spec.noise_snr_db {
        Some(_) => Some(snr_db(&sim.clean, &sim.data)?),
        None => None,
    };
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        command: "simulate",
        spec: &spec,
        datasets: (0..k).map(|i| format!("data_{i}.ct3")).collect(),
        measured_snr_db,
        artifacts: checksum_tree(out, &["manifest.json"])?,
    };
    write_json(&out.join("manifest.json"), &manifest)
}
