//! Decision-to-decision distance and the Gaussian kernel built on it.
//!
//! Distances are normalized Levenshtein over Unicode scalar values, computed
//! on trimmed action strings, case-sensitive. The normalized form is not a
//! metric (the triangle inequality can fail); only symmetry, identity and the
//! `[0, 1]` range are guaranteed.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Unit-cost edit distance between two char sequences.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// `lev(a, b) / max(|a|, |b|, 1)` on whitespace-trimmed inputs.
pub fn decision_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.trim().chars().collect();
    let b: Vec<char> = b.trim().chars().collect();
    let denom = a.len().max(b.len()).max(1);
    levenshtein(&a, &b) as f64 / denom as f64
}

/// `1 - decision_distance(a, b)`.
pub fn similarity(a: &str, b: &str) -> f64 {
    1.0 - decision_distance(a, b)
}

/// Kernel sharpness exponent; the estimators set it to the per-step sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelParams {
    tau: u32,
}

impl KernelParams {
    pub fn new(tau: u32) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Param("kernel tau must be >= 1".into()));
        }
        Ok(Self { tau })
    }

    pub fn tau(self) -> u32 {
        self.tau
    }
}

/// `ln K_tau(x) = -(tau/2) ln(2 pi) - tau x^2 / 2`.
pub fn log_gaussian_kernel(x: f64, params: KernelParams) -> f64 {
    let tau = f64::from(params.tau);
    -0.5 * tau * (2.0 * PI).ln() - 0.5 * tau * x * x
}

/// `K_tau(x) = ((2 pi)^(-1/2) exp(-x^2 / 2))^tau`.
pub fn gaussian_kernel(x: f64, tau: u32) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Input(format!("kernel argument must be >= 0, got {x}")));
    }
    Ok(log_gaussian_kernel(x, KernelParams::new(tau)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Full-matrix Wagner-Fischer, kept separate from the two-row version above.
    fn lev_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in m[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                m[i][j] = (m[i - 1][j] + 1)
                    .min(m[i][j - 1] + 1)
                    .min(m[i - 1][j - 1] + cost);
            }
        }
        m[a.len()][b.len()]
    }

    #[test]
    fn distance_examples() {
        assert_eq!(decision_distance("answer(220)", "answer(220)"), 0.0);
        assert_eq!(decision_distance("", "abc"), 1.0);
        assert_eq!(decision_distance("", ""), 0.0);
        assert_eq!(lev_oracle("ls /etc", "ls /usr"), 3);
        assert!((decision_distance("ls /etc", "ls /usr") - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn trims_but_keeps_case() {
        assert_eq!(decision_distance("  Search[A] ", "Search[A]"), 0.0);
        assert!(decision_distance("search[a]", "Search[A]") > 0.0);
    }

    #[test]
    fn counts_scalar_values_not_bytes() {
        assert_eq!(decision_distance("é", "e"), 1.0);
        assert_eq!(decision_distance("日本", "日本"), 0.0);
        assert!((decision_distance("日本語", "日本") - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_examples() {
        let k = gaussian_kernel(0.0, 1).unwrap();
        assert!((k - 0.398_942_280_401_432_7).abs() < 1e-15);
        let k = gaussian_kernel(0.0, 10).unwrap();
        assert!((k - (2.0 * PI).powi(-5)).abs() < 1e-18);
        assert!((k - 1.0212e-4).abs() < 1e-7);
        let k = gaussian_kernel(1.0, 2).unwrap();
        assert!((k - (-1.0f64).exp() / (2.0 * PI)).abs() < 1e-15);
        assert!((k - 0.058_549_8).abs() < 1e-7);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(gaussian_kernel(0.5, 0), Err(Error::Param(_))));
        assert!(matches!(gaussian_kernel(-0.1, 2), Err(Error::Input(_))));
        assert!(KernelParams::new(0).is_err());
    }

    proptest! {
        #[test]
        fn distance_matches_oracle(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
            let (ta, tb) = (a.trim(), b.trim());
            let denom = ta.chars().count().max(tb.chars().count()).max(1);
            let expect = lev_oracle(ta, tb) as f64 / denom as f64;
            prop_assert_eq!(decision_distance(&a, &b), expect);
        }

        #[test]
        fn distance_symmetric_identity_range(a in "\\PC{0,16}", b in "\\PC{0,16}") {
            let d = decision_distance(&a, &b);
            prop_assert_eq!(d, decision_distance(&b, &a));
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(decision_distance(&a, &a), 0.0);
        }

        #[test]
        fn kernel_power_law(x in 0.0f64..3.0, tau in 1u32..=20) {
            let k1 = gaussian_kernel(x, 1).unwrap();
            let kt = gaussian_kernel(x, tau).unwrap();
            prop_assert!((kt - k1.powi(tau as i32)).abs() <= 1e-12);
        }

        #[test]
        fn kernel_strictly_decreasing(x1 in 0.0f64..2.0, dx in 1e-6f64..1.0, tau in 1u32..=20) {
            let a = gaussian_kernel(x1, tau).unwrap();
            let b = gaussian_kernel(x1 + dx, tau).unwrap();
            prop_assert!(a > b);
        }
    }
}
