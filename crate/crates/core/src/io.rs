//! Binary file formats and factor persistence.
//!
//! * CT3: the text line `CT3 <I> <J> <K>\n` followed by `I*J*K`
//!   little-endian `f64` values, first index fastest.
//! * CM2: the text line `CM2 <rows> <cols>\n` followed by `rows*cols`
//!   little-endian `f64` values in column-major order.
//!
//! A factor set is stored as a directory of CM2 files plus `manifest.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::model::{Dims, PartitionedFactors, Ranks};
use crate::tensor::{FactorMatrix, Tensor3};

const MAX_HEADER: u64 = 256;

fn format_err(kind: &'static str, msg: impl Into<String>) -> Error {
    Error::Format { kind, msg: msg.into() }
}

fn read_header<const N: usize>(r: &mut impl BufRead, magic: &'static str) -> Result<[usize; N]> {
    let mut line = Vec::new();
    r.take(MAX_HEADER).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(format_err(magic, "missing or overlong header line"));
    }
    let text = std::str::from_utf8(&line[..line.len() - 1]).map_err(|_| format_err(magic, "header is not UTF-8"))?;
    let mut parts = text.split(' ');
    if parts.next() != Some(magic) {
        return Err(format_err(magic, format!("expected magic `{magic}`, got `{text}`")));
    }
    let mut out = [0usize; N];
    for slot in out.iter_mut() {
        let tok = parts.next().ok_or_else(|| format_err(magic, format!("header `{text}` has too few fields")))?;
        *slot = tok.parse().map_err(|_| format_err(magic, format!("bad dimension `{tok}`")))?;
    }
    if parts.next().is_some() {
        return Err(format_err(magic, format!("header `{text}` has too many fields")));
    }
    Ok(out)
}

fn read_payload(r: &mut impl Read, count: usize, kind: &'static str) -> Result<Vec<f64>> {
    let bytes = count.checked_mul(8).ok_or_else(|| format_err(kind, "dimensions overflow"))?;
    let mut buf = Vec::new();
    // One extra byte detects trailing garbage without reading it all.
    r.take(bytes as u64 + 1).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return Err(format_err(
            kind,
            if buf.len() < bytes {
                format!("truncated payload: expected {bytes} bytes, got {}", buf.len())
            } else {
                "trailing bytes after payload".to_string()
            },
        ));
    }
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn write_payload(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ct3_from(r: impl Read) -> Result<Tensor3> {
    let mut r = BufReader::new(r);
    let dims = read_header::<3>(&mut r, "CT3")?;
    let count = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| format_err("CT3", "dimensions overflow"))?;
    let data = read_payload(&mut r, count, "CT3")?;
    Tensor3::new(dims, data)
}

pub fn write_ct3_to(w: impl Write, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(w);
    let [i, j, k] = t.dims();
    writeln!(w, "CT3 {i} {j} {k}")?;
    write_payload(&mut w, t.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_ct3(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_ct3_from(File::open(path)?)
}

pub fn write_ct3(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    write_ct3_to(File::create(path)?, t)
}

pub fn read_cm2_from(r: impl Read) -> Result<FactorMatrix> {
    let mut r = BufReader::new(r);
    let [rows, cols] = read_header::<2>(&mut r, "CM2")?;
    let count = rows.checked_mul(cols).ok_or_else(|| format_err("CM2", "dimensions overflow"))?;
    let data = read_payload(&mut r, count, "CM2")?;
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("matrix entry at offset {pos}")));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_cm2_to(w: impl Write, m: &FactorMatrix) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "CM2 {} {}", m.nrows(), m.ncols())?;
    write_payload(&mut w, m.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_cm2(path: impl AsRef<Path>) -> Result<FactorMatrix> {
    read_cm2_from(File::open(path)?)
}

pub fn write_cm2(path: impl AsRef<Path>, m: &FactorMatrix) -> Result<()> {
    write_cm2_to(File::create(path)?, m)
}

/// Metadata stored next to a saved factor set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaManifest {
    pub datasets: usize,
    pub dims: Dims,
    pub ranks: Ranks,
    pub lambda: f64,
    pub seed: u64,
    pub final_cost: f64,
}

fn theta_files(k: usize) -> Vec<String> {
    let mut names = vec!["s_shared.cm2".to_string(), "v_shared.cm2".to_string()];
    for i in 0..k {
        for block in ["s_distinct", "v_distinct", "t_shared", "t_distinct"] {
            names.push(format!("{block}_{i}.cm2"));
        }
    }
    names
}

fn theta_blocks(theta: &PartitionedFactors) -> Vec<&FactorMatrix> {
    let mut blocks = vec![&theta.s_shared, &theta.v_shared];
    for k in 0..theta.datasets() {
        blocks.extend([&theta.s_distinct[k], &theta.v_distinct[k], &theta.t_shared[k], &theta.t_distinct[k]]);
    }
    blocks
}

/// Writes `theta` into `dir` (created if needed). The manifest's dims and
/// ranks must describe `theta`.
pub fn save_theta(dir: impl AsRef<Path>, theta: &PartitionedFactors, manifest: &ThetaManifest) -> Result<()> {
    let dir = dir.as_ref();
    theta.validate(&manifest.dims, &manifest.ranks)?;
    if manifest.datasets != theta.datasets() {
        return Err(mismatch(format!("manifest lists {} datasets, factors have {}", manifest.datasets, theta.datasets())));
    }
    fs::create_dir_all(dir)?;
    for (name, m) in theta_files(theta.datasets()).iter().zip(theta_blocks(theta)) {
        write_cm2(dir.join(name), m)?;
    }
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_theta(dir: impl AsRef<Path>) -> Result<(PartitionedFactors, ThetaManifest)> {
    let dir = dir.as_ref();
    let manifest: ThetaManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    manifest.ranks.validate()?;
    let k = manifest.datasets;
    if k != manifest.dims.datasets() || k != manifest.ranks.datasets() {
        return Err(format_err("manifest", "dataset counts disagree"));
    }
    let mut blocks = theta_files(k)
        .into_iter()
        .map(|name| read_cm2(dir.join(name)))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let mut next = || blocks.next().expect("one block per file");
    let mut theta = PartitionedFactors {
        s_shared: next(),
        v_shared: next(),
        s_distinct: Vec::with_capacity(k),
        v_distinct: Vec::with_capacity(k),
        t_shared: Vec::with_capacity(k),
        t_distinct: Vec::with_capacity(k),
    };
    for _ in 0..k {
        theta.s_distinct.push(next());
        theta.v_distinct.push(next());
        theta.t_shared.push(next());
        theta.t_distinct.push(next());
    }
    theta.validate(&manifest.dims, &manifest.ranks)?;
    Ok((theta, manifest))
}

/// `iteration,cost` CSV with shortest round-trip float formatting.
pub fn cost_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("iteration,cost\n");
    for (i, c) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{c:e}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::init_random;

    #[test]
    fn ct3_round_trip_and_layout() {
        let t = Tensor3::from_fn([2, 3, 2], |i, j, k| (i + 10 * j + 100 * k) as f64 - 0.25).unwrap();
        let mut buf = Vec::new();
        write_ct3_to(&mut buf, &t).unwrap();
        assert!(buf.starts_with(b"CT3 2 3 2\n"));
        assert_eq!(buf.len(), 10 + 12 * 8);
        // Second stored value is element (1, 0, 0).
        assert_eq!(f64::from_le_bytes(buf[18..26].try_into().unwrap()), 0.75);
        assert_eq!(read_ct3_from(&buf[..]).unwrap(), t);
    }

    #[test]
    fn cm2_round_trip_is_column_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_cm2_to(&mut buf, &m).unwrap();
        assert!(buf.starts_with(b"CM2 2 3\n"));
        assert_eq!(f64::from_le_bytes(buf[8..16].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(buf[16..24].try_into().unwrap()), 4.0);
        assert_eq!(read_cm2_from(&buf[..]).unwrap(), m);

        let empty = DMatrix::<f64>::zeros(5, 0);
        let mut buf = Vec::new();
        write_cm2_to(&mut buf, &empty).unwrap();
        assert_eq!(read_cm2_from(&buf[..]).unwrap().shape(), (5, 0));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let t = Tensor3::from_fn([2, 2, 1], |i, j, _| (i * j) as f64).unwrap();
        let mut good = Vec::new();
        write_ct3_to(&mut good, &t).unwrap();

        let truncated = &good[..good.len() - 3];
        let mut trailing = good.clone();
        trailing.push(0);
        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        let cases: Vec<Vec<u8>> = vec![
            truncated.to_vec(),
            trailing,
            nan,
            b"CT2 2 2 1\n".to_vec(),
            b"CT3 2 2\n".to_vec(),
            b"CT3 2 2 1 1\n".to_vec(),
            b"CT3 2 x 1\n".to_vec(),
            b"CT3 0 2 1\n".to_vec(),
            b"CT3 2 2 1".to_vec(),
            b"CT3 99999999999 99999999999 99999999999\n".to_vec(),
            vec![b'C'; 1000],
        ];
        for case in cases {
            assert!(read_ct3_from(&case[..]).is_err(), "{:?}", String::from_utf8_lossy(&case[..case.len().min(20)]));
        }
        assert!(read_cm2_from(&b"CM2 1 1\n\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn theta_directory_round_trip() {
        let dims = Dims { subjects: 5, voxels: 4, times: vec![2, 3, 1] };
        let ranks = Ranks::new(1, vec![2, 0, 1]).unwrap();
        let theta = init_random(&dims, &ranks, 3);
        let manifest = ThetaManifest { datasets: 3, dims, ranks, lambda: 1e6, seed: 3, final_cost: 0.125 };
        let dir = tempfile::tempdir().unwrap();
        save_theta(dir.path(), &theta, &manifest).unwrap();
        let (back, m) = load_theta(dir.path()).unwrap();
        assert_eq!(back, theta);
        assert_eq!(m, manifest);

        fs::remove_file(dir.path().join("t_shared_1.cm2")).unwrap();
        assert!(load_theta(dir.path()).is_err());
    }

    #[test]
    fn cost_trace_csv_round_trips_values() {
        let trace = [10.0, 1.0 / 3.0, 1e-300];
        let csv = cost_trace_csv(&trace);
        let parsed: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(parsed, trace);
    }
}
