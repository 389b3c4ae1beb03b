use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ccpd::analysis::{bonferroni, two_sample_ttest_with, zscore_threshold, GroupLabels, TTestKind, TTestResult};
use ccpd::io::{load_theta, write_cm2};
use ccpd::FactorMatrix;

use super::{TOOL, VERSION};
use crate::cli::ReportArgs;
use crate::output::{checksum_tree, prepare_dir, sha256_file, write_json, write_text, Artifact};

const ARTIFACTS: &[&str] = &["manifest.json", "ttest.csv", "maps"];

#[derive(Serialize)]
struct ComponentRecord {
    block: &'static str,
    dataset: Option<usize>,
    component: usize,
    #[serde(flatten)]
    test: TTestResult,
    p_bonferroni: f64,
    significant_bonferroni: bool,
    surviving_voxels: usize,
    constant_map: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    theta_manifest_sha256: String,
    labels_sha256: String,
    groups: [(&'a str, usize); 2],
    test: TTestKind,
    z_threshold: f64,
    tests: usize,
    components: &'a [ComponentRecord],
    artifacts: Vec<Artifact>,
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let theta_dir = args.run_dir.join("theta");
    let (theta, _) = load_theta(&theta_dir).with_context(|| format!("loading factors from {}", theta_dir.display()))?;
    let text = std::fs::read_to_string(&args.labels).with_context(|| format!("reading {}", args.labels.display()))?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != theta.s_shared.nrows() {
        bail!("{} labels for {} subjects", tokens.len(), theta.s_shared.nrows());
    }
    let labels = GroupLabels::from_tokens(&tokens)?;
    let kind = if args.pooled { TTestKind::Pooled } else { TTestKind::Welch };

    let out = &args.out.output;
    prepare_dir(out, ARTIFACTS, args.out.force)?;
    let maps = out.join("maps");
    std::fs::create_dir_all(&maps)?;

    let mut blocks: Vec<(&'static str, Option<usize>, &FactorMatrix, &FactorMatrix)> =
        vec![("shared", None, &theta.s_shared, &theta.v_shared)];
    for k in 0..theta.datasets() {
        blocks.push(("distinct", Some(k), &theta.s_distinct[k], &theta.v_distinct[k]));
    }
    let m: usize = blocks.iter().map(|b| b.2.ncols()).sum();

    let mut records = Vec::with_capacity(m);
    for &(block, dataset, s, v) in &blocks {
        let mut z = FactorMatrix::zeros(v.nrows(), v.ncols());
        let mut thr = z.clone();
        let mut directional = z.clone();
        for c in 0..s.ncols() {
            let col: Vec<f64> = s.column(c).iter().copied().collect();
            let test = two_sample_ttest_with(&col, &labels, kind)?;
            let map: Vec<f64> = v.column(c).iter().copied().collect();
            let zm = zscore_threshold(&map, args.z_thresh)?;
            let dir = if test.t < 0.0 { -1.0 } else { 1.0 };
            for (i, (&a, &b)) in zm.z.iter().zip(&zm.thresholded).enumerate() {
                z[(i, c)] = a;
                thr[(i, c)] = b;
                directional[(i, c)] = dir * b;
            }
            let p_bonferroni = bonferroni(test.p, m);
            records.push(ComponentRecord {
                block,
                dataset,
                component: c,
                test,
                p_bonferroni,
                significant_bonferroni: p_bonferroni < ccpd::analysis::SIGNIFICANCE,
                surviving_voxels: zm.surviving,
                constant_map: zm.constant,
            });
        }
        let stem = match dataset {
            Some(k) => format!("distinct_{k}"),
            None => "shared".to_string(),
        };
        write_cm2(maps.join(format!("{stem}_z.cm2")), &z)?;
        write_cm2(maps.join(format!("{stem}_thresholded.cm2")), &thr)?;
        write_cm2(maps.join(format!("{stem}_directional.cm2")), &directional)?;
    }

    write_text(&out.join("ttest.csv"), &ttest_csv(&records, labels.names()))?;
    let names = labels.names();
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        command: "report",
        theta_manifest_sha256: sha256_file(&theta_dir.join("manifest.json"))?,
        labels_sha256: sha256_file(&args.labels)?,
        groups: [(names[0].as_str(), labels.count(0)), (names[1].as_str(), labels.count(1))],
        test: kind,
        z_threshold: args.z_thresh,
        tests: m,
        components: &records,
        artifacts: checksum_tree(out, &["manifest.json"])?,
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn ttest_csv(records: &[ComponentRecord], names: &[String; 2]) -> String {
    let mut s = format!(
        "block,dataset,component,t,df,p,p_bonferroni,significant,significant_bonferroni,mean_{},mean_{},surviving_voxels\n",
        names[0], names[1]
    );
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{:e},{:e},{},{},{:e},{:e},{}",
            r.block,
            r.dataset.map_or(String::new(), |k| k.to_string()),
            r.component,
            r.test.t,
            r.test.df,
            r.test.p,
            r.p_bonferroni,
            r.test.significant,
            r.significant_bonferroni,
            r.test.mean0,
            r.test.mean1,
            r.surviving_voxels
        );
    }
    s
}
