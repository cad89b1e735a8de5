//! Evaluation of uncertainty scores against correctness labels.
//!
//! Lower uncertainty is expected for correct answers. AUROC is the
//! Mann-Whitney statistic with ties counted as one half; AUARC averages the
//! accuracy of the retained set over the `n` rejection levels `0..n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub uncertainty: f64,
    pub correct: bool,
}

impl LabeledScore {
    pub fn new(uncertainty: f64, correct: bool) -> Self {
        Self {
            uncertainty,
            correct,
        }
    }
}

fn check_finite(items: &[LabeledScore]) -> Result<()> {
    match items.iter().position(|x| !x.uncertainty.is_finite()) {
        Some(i) => Err(Error::Input(format!("uncertainty at index {i} is not finite"))),
        None => Ok(()),
    }
}

pub fn auroc(items: &[LabeledScore]) -> Result<f64> {
    check_finite(items)?;
    let pos = items.iter().filter(|x| x.correct).count() as u64;
    let neg = items.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one correct and one incorrect item".into(),
        ));
    }
    let mut sorted: Vec<LabeledScore> = items.to_vec();
    sorted.sort_by(|a, b| a.uncertainty.total_cmp(&b.uncertainty));
    // Walk tie groups in ascending order. `twice` counts ordered pairs twice
    // and ties once, so the numerator stays an exact integer.
    let mut twice: u64 = 0;
    let mut incorrect_above = neg;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut c, mut w) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].uncertainty == sorted[i].uncertainty {
            if sorted[j].correct {
                c += 1;
            } else {
                w += 1;
            }
            j += 1;
        }
        incorrect_above -= w;
        twice += c * (2 * incorrect_above + w);
        i = j;
    }
    Ok(twice as f64 / (2 * pos * neg) as f64)
}

pub fn auarc(items: &[LabeledScore]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Input("AUARC of an empty list".into()));
    }
    check_finite(items)?;
    let mut sorted: Vec<&LabeledScore> = items.iter().collect();
    // stable: equal uncertainties keep input order
    sorted.sort_by(|a, b| a.uncertainty.total_cmp(&b.uncertainty));
    let n = sorted.len();
    let mut prefix_correct = Vec::with_capacity(n);
    let mut acc = 0usize;
    for x in &sorted {
        acc += usize::from(x.correct);
        prefix_correct.push(acc);
    }
    let total: f64 = (1..=n)
        .map(|kept| prefix_correct[kept - 1] as f64 / kept as f64)
        .sum();
    Ok(total / n as f64)
}

/// Index of the minimum uncertainty; ties go to the lowest index.
pub fn select_min_uncertainty(candidates: &[LabeledScore]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Input("no candidates to select from".into()));
    }
    check_finite(candidates)?;
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.uncertainty < candidates[best].uncertainty {
            best = i;
        }
    }
    Ok(best)
}

pub fn success_rate(items: &[LabeledScore]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Input("success rate of an empty list".into()));
    }
    Ok(items.iter().filter(|x| x.correct).count() as f64 / items.len() as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input("spearman needs two equal-length series of length >= 2".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("spearman of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
