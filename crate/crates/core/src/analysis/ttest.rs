use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, mismatch, Result};

/// Two-sided significance level used to flag components.
pub const SIGNIFICANCE: f64 = 0.05;

/// Assignment of each subject to group 0 or group 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    labels: Vec<u8>,
    names: [String; 2],
}

impl GroupLabels {
    /// `labels[i]` must be 0 or 1 and both groups must be non-empty.
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        Self::with_names(labels, ["group0".into(), "group1".into()])
    }

    pub fn with_names(labels: Vec<u8>, names: [String; 2]) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(invalid(format!("group label {bad} is not 0 or 1")));
        }
        let g = Self { labels, names };
        if g.count(0) == 0 || g.count(1) == 0 {
            return Err(invalid("both groups need at least one subject"));
        }
        Ok(g)
    }

    /// Builds labels from exactly two distinct tokens. The lexicographically
    /// smaller token becomes group 0.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut distinct: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(invalid(format!("expected exactly two group names, found {}", distinct.len())));
        }
        let labels = tokens.iter().map(|t| (t.as_ref() == distinct[1]) as u8).collect();
        Self::with_names(labels, [distinct[0].to_string(), distinct[1].to_string()])
    }

    /// Subjects `0..n0` in group 0 and the next `n1` in group 1.
    pub fn blocks(n0: usize, n1: usize) -> Result<Self> {
        Self::new(std::iter::repeat_n(0, n0).chain(std::iter::repeat_n(1, n1)).collect())
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn names(&self) -> &[String; 2] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, group: u8) -> usize {
        self.labels.iter().filter(|&&l| l == group).count()
    }

    /// Same subjects with the groups exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            labels: self.labels.iter().map(|l| 1 - l).collect(),
            names: [self.names[1].clone(), self.names[0].clone()],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Pooled variance, `n0 + n1 − 2` degrees of freedom.
    Pooled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// Positive when group 1 has the larger mean.
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub significant: bool,
    pub mean0: f64,
    pub mean1: f64,
}

pub fn two_sample_ttest(column: &[f64], labels: &GroupLabels) -> Result<TTestResult> {
    two_sample_ttest_with(column, labels, TTestKind::Welch)
}

pub fn two_sample_ttest_with(column: &[f64], labels: &GroupLabels, kind: TTestKind) -> Result<TTestResult> {
    if column.len() != labels.len() {
        return Err(mismatch(format!("{} values but {} labels", column.len(), labels.len())));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(invalid("t-test input contains non-finite values"));
    }
    let stats = |g: u8| {
        let xs: Vec<f64> = column.iter().zip(labels.labels()).filter(|(_, &l)| l == g).map(|(x, _)| *x).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (n0, n1) = (labels.count(0), labels.count(1));
    if n0 < 2 || n1 < 2 {
        return Err(invalid(format!("each group needs at least 2 subjects, got {n0} and {n1}")));
    }
    let (n0, m0, v0) = stats(0);
    let (n1, m1, v1) = stats(1);
    let diff = m1 - m0;

    let (se2, df) = match kind {
        TTestKind::Welch => {
            let (a, b) = (v0 / n0, v1 / n1);
            let se2 = a + b;
            let df = se2 * se2 / (a * a / (n0 - 1.0) + b * b / (n1 - 1.0));
            (se2, df)
        }
        TTestKind::Pooled => {
            let df = n0 + n1 - 2.0;
            let sp = ((n0 - 1.0) * v0 + (n1 - 1.0) * v1) / df;
            (sp * (1.0 / n0 + 1.0 / n1), df)
        }
    };

    let (t, df, p) = if se2 > 0.0 {
        let t = diff / se2.sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| invalid(format!("t distribution: {e}")))?;
        (t, df, (2.0 * dist.sf(t.abs())).min(1.0))
    } else if diff == 0.0 {
        (0.0, n0 + n1 - 2.0, 1.0)
    } else {
        (diff.signum() * f64::INFINITY, n0 + n1 - 2.0, 0.0)
    };
    Ok(TTestResult { t, df, p, significant: p < SIGNIFICANCE, mean0: m0, mean1: m1 })
}

/// Bonferroni-adjusted p-value for `m` tests.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    #[test]
    fn identical_groups_give_zero() {
        let labels = GroupLabels::blocks(3, 4).unwrap();
        let r = two_sample_ttest(&[2.0; 7], &labels).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(!r.significant);
        let r = two_sample_ttest(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 2.0], &labels).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_groups_are_significant() {
        let labels = GroupLabels::blocks(4, 4).unwrap();
        let j = 1e-12;
        let col = [0.0, j, -j, 0.0, 1.0, 1.0 + j, 1.0, 1.0 - j];
        let r = two_sample_ttest(&col, &labels).unwrap();
        assert!(r.t > 0.0 && r.p < 1e-6 && r.significant);
        let r = two_sample_ttest(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0], &labels).unwrap();
        assert_eq!((r.t, r.p), (f64::INFINITY, 0.0));
    }

    #[test]
    fn matches_hand_computed_welch() {
        // Group 0: 1,2,3,4 (mean 2.5, var 5/3); group 1: 2,4,6 (mean 4, var 4).
        let labels = GroupLabels::new(vec![0, 0, 0, 0, 1, 1, 1]).unwrap();
        let col = [1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0];
        let r = two_sample_ttest(&col, &labels).unwrap();
        let (a, b): (f64, f64) = (5.0 / 3.0 / 4.0, 4.0 / 3.0);
        assert!((r.t - 1.5 / (a + b).sqrt()).abs() < 1e-12);
        let df = (a + b).powi(2) / (a * a / 3.0 + b * b / 2.0);
        assert!((r.df - df).abs() < 1e-12);
        assert!(r.p > 0.05 && r.p < 1.0);

        let pooled = two_sample_ttest_with(&col, &labels, TTestKind::Pooled).unwrap();
        let sp: f64 = (3.0 * 5.0 / 3.0 + 2.0 * 4.0) / 5.0;
        assert!((pooled.t - 1.5 / (sp * (0.25 + 1.0 / 3.0)).sqrt()).abs() < 1e-12);
        assert_eq!(pooled.df, 5.0);
    }

    #[test]
    fn swapping_groups_negates_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let col: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = GroupLabels::blocks(12, 18).unwrap();
        let a = two_sample_ttest(&col, &labels).unwrap();
        let b = two_sample_ttest(&col, &labels.swapped()).unwrap();
        assert_eq!(a.t, -b.t);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn p_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let col: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = GroupLabels::blocks(10, 15).unwrap();
        let base = two_sample_ttest(&col, &labels).unwrap();
        for (a, b) in [(3.0, 1.0), (-0.5, 7.0), (1e4, -2.0)] {
            let moved: Vec<f64> = col.iter().map(|x| a * x + b).collect();
            let r = two_sample_ttest(&moved, &labels).unwrap();
            assert!((r.p - base.p).abs() < 1e-10);
            assert!((r.t - base.t * f64::signum(a)).abs() < 1e-8);
        }
    }

    #[test]
    fn agrees_with_permutation_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels = GroupLabels::blocks(15, 20).unwrap();
        for shift in [0.0, 0.4, 0.8] {
            let col: Vec<f64> = (0..35)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + if i >= 15 { shift } else { 0.0 }
                })
                .collect();
            let observed = two_sample_ttest(&col, &labels).unwrap();
            let mut perm = labels.labels().to_vec();
            let n = 20_000;
            let mut hits = 0;
            for _ in 0..n {
                perm.shuffle(&mut rng);
                let g = GroupLabels::new(perm.clone()).unwrap();
                if two_sample_ttest(&col, &g).unwrap().t.abs() >= observed.t.abs() {
                    hits += 1;
                }
            }
            let p_perm = hits as f64 / n as f64;
            assert!((p_perm - observed.p).abs() < 0.02, "{p_perm} vs {}", observed.p);
        }
    }

    #[test]
    fn label_contracts() {
        assert!(GroupLabels::new(vec![0, 0, 0]).is_err());
        assert!(GroupLabels::new(vec![0, 2]).is_err());
        let g = GroupLabels::from_tokens(&["SZ", "HC", "HC", "SZ"]).unwrap();
        assert_eq!(g.labels(), &[1, 0, 0, 1]);
        assert_eq!(g.names()[0], "HC");
        assert!(GroupLabels::from_tokens(&["a", "a"]).is_err());
        assert!(GroupLabels::from_tokens(&["a", "b", "c"]).is_err());
        let small = GroupLabels::blocks(1, 3).unwrap();
        assert!(two_sample_ttest(&[1.0, 2.0, 3.0, 4.0], &small).is_err());
        assert!(two_sample_ttest(&[1.0, 2.0], &GroupLabels::blocks(2, 2).unwrap()).is_err());
        assert_eq!(bonferroni(0.02, 10), 0.2);
        assert_eq!(bonferroni(0.2, 10), 1.0);
    }
}
