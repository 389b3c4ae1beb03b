//! Statistics on a finished decomposition and synthetic ground truth.

mod fms;
mod synthetic;
mod ttest;
mod zscore;

pub use fms::{factor_match_score, FmsReport};
pub use synthetic::{generate_synthetic, snr_db, GroupEffect, SyntheticData, SyntheticSpec};
pub use ttest::{bonferroni, two_sample_ttest, two_sample_ttest_with, GroupLabels, TTestKind, TTestResult, SIGNIFICANCE};
pub use zscore::{zscore_threshold, ZMap, DEFAULT_Z_THRESHOLD};
