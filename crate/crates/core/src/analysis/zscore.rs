use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default `|z|` cut for spatial maps.
pub const DEFAULT_Z_THRESHOLD: f64 = 2.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZMap {
    /// Map centered and scaled to unit (population) variance.
    pub z: Vec<f64>,
    /// `z` with entries below the threshold in magnitude set to zero.
    pub thresholded: Vec<f64>,
    /// Sign of each surviving entry, 0 elsewhere.
    pub signs: Vec<i8>,
    pub surviving: usize,
    /// True when the input was constant and the output is all zeros.
    pub constant: bool,
}

/// Standardizes `map` with its mean and population standard deviation and
/// zeroes entries with `|z| < z_thresh`.
pub fn zscore_threshold(map: &[f64], z_thresh: f64) -> Result<ZMap> {
    if map.is_empty() {
        return Err(invalid("empty map"));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(invalid("map contains non-finite values"));
    }
    if !(z_thresh >= 0.0) {
        return Err(invalid(format!("threshold {z_thresh} must be non-negative")));
    }
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let sd = (map.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = map.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if !(sd > 1e-14 * scale) {
        warn!("constant map of length {}; thresholded output is all zeros", map.len());
        let zeros = vec![0.0; map.len()];
        return Ok(ZMap { z: zeros.clone(), thresholded: zeros, signs: vec![0; map.len()], surviving: 0, constant: true });
    }
    let z: Vec<f64> = map.iter().map(|x| (x - mean) / sd).collect();
    let thresholded: Vec<f64> = z.iter().map(|&v| if v.abs() >= z_thresh { v } else { 0.0 }).collect();
    let signs: Vec<i8> = thresholded.iter().map(|&v| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 }).collect();
    let surviving = signs.iter().filter(|&&s| s != 0).count();
    Ok(ZMap { z, thresholded, signs, surviving, constant: false })
}
