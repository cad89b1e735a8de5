//! Intrinsic entropy, kernel-PMI extrinsic uncertainty and the step
//! length-normalized TDP score.
//!
//! For a TDP with steps `1..=T`:
//!
//! ```text
//! IU_t    = intrinsic entropy of step t's samples
//! PMI_i   = -ln sum_n K_N(d(y_i^(n), y_i^(k)))       (step i's own samples)
//! EU_t    = sum_{i<t} PMI_i                          (EU_1 = 0)
//! sigma_t = 1 + EU_t / max(IU_t, iu_floor)
//! total   = sum_t (IU_t + EU_t) / sum_t sigma_t
//! ```
//!
//! The per-task score averages `total` over TDPs whose final answer matches
//! the greedy answer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StepRecord, TaskRecord, TdpRecord};
use crate::textdist::decision_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IntrinsicMode {
    /// Predictive entropy: mean negated sequence log-probability.
    #[default]
    Pe,
    /// Length-normalized predictive entropy.
    LnPe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PmiMode {
    /// `-ln sum_n K_tau(d_n)`, including the kernel normalization constant.
    #[default]
    Faithful,
    /// `-ln (1/N) sum_n exp(-tau d_n^2 / 2)`; zero for a degenerate sample set.
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPolicy {
    pub iu_floor: f64,
}

impl Default for EpsilonPolicy {
    fn default() -> Self {
        Self { iu_floor: 1e-6 }
    }
}

impl EpsilonPolicy {
    pub fn new(iu_floor: f64) -> Result<Self> {
        if !(iu_floor > 0.0 && iu_floor.is_finite()) {
            return Err(Error::Param(format!("iu_floor must be > 0, got {iu_floor}")));
        }
        Ok(Self { iu_floor })
    }
}

/// Default normalized-distance threshold for matching a TDP answer to `y*`.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.3;

pub fn intrinsic_entropy(step: &StepRecord, mode: IntrinsicMode) -> Result<f64> {
    if step.samples.is_empty() {
        return Err(Error::Input("intrinsic entropy needs at least one sample".into()));
    }
    let n = step.samples.len() as f64;
    let sum: f64 = match mode {
        IntrinsicMode::Pe => step.samples.iter().map(|s| s.seq_logprob).sum(),
        IntrinsicMode::LnPe => step
            .samples
            .iter()
            .map(|s| s.seq_logprob / s.token_count().max(1) as f64)
            .sum(),
    };
    Ok((-sum / n).max(0.0))
}

/// Kernel PMI from the distances of every sample to the chosen one.
///
/// `distances` must include the chosen sample itself (distance 0).
pub fn pmi_from_distances(distances: &[f64], tau: u32, mode: PmiMode) -> Result<f64> {
    if distances.len() < 2 {
        return Err(Error::Input(
            "extrinsic uncertainty undefined for a single sample".into(),
        ));
    }
    if tau == 0 {
        return Err(Error::Param("kernel tau must be >= 1".into()));
    }
    let tau = f64::from(tau);
    // log-sum-exp of -tau d^2 / 2; the largest exponent is pulled out so the
    // sum never underflows.
    let exps: Vec<f64> = distances.iter().map(|d| -0.5 * tau * d * d).collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
    Ok(match mode {
        PmiMode::Faithful => 0.5 * tau * (2.0 * PI).ln() - lse,
        PmiMode::Calibrated => (distances.len() as f64).ln() - lse,
    })
}

/// Distances from every sample's action to the chosen sample's action.
pub fn chosen_distances(step: &StepRecord) -> Vec<f64> {
    let chosen = &step.chosen().action_text;
    step.samples
        .iter()
        .map(|s| decision_distance(&s.action_text, chosen))
        .collect()
}

pub fn pmi_step(step: &StepRecord, tau: u32, mode: PmiMode) -> Result<f64> {
    if step.samples.len() < 2 {
        return Err(Error::Input(
            "extrinsic uncertainty undefined for a single sample".into(),
        ));
    }
    pmi_from_distances(&chosen_distances(step), tau, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub per_step_iu: Vec<f64>,
    pub per_step_eu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda: f64,
    pub tdp_total_raw: f64,
    pub tdp_total_normalized: f64,
    pub iu_fraction: Vec<f64>,
    pub eu_fraction: Vec<f64>,
}

impl ScoreBreakdown {
    /// Assembles the breakdown from per-step IU and EU values.
    pub fn from_components(iu: Vec<f64>, eu: Vec<f64>, eps: EpsilonPolicy) -> Result<Self> {
        if iu.is_empty() || iu.len() != eu.len() {
            return Err(Error::Input(format!(
                "need matching non-empty IU/EU lists, got {} and {}",
                iu.len(),
                eu.len()
            )));
        }
        let sigma: Vec<f64> = iu
            .iter()
            .zip(&eu)
            .map(|(i, e)| 1.0 + e / i.max(eps.iu_floor))
            .collect();
        let lambda: f64 = sigma.iter().sum();
        let tdp_total_raw: f64 = iu.iter().zip(&eu).map(|(i, e)| i + e).sum();
        let (iu_fraction, eu_fraction) = iu
            .iter()
            .zip(&eu)
            .map(|(i, e)| {
                let total = i + e;
                if total == 0.0 {
                    (1.0, 0.0)
                } else {
                    let f = i / total;
                    (f, 1.0 - f)
                }
            })
            .unzip();
        Ok(Self {
            per_step_iu: iu,
            per_step_eu: eu,
            sigma,
            lambda,
            tdp_total_raw,
            tdp_total_normalized: tdp_total_raw / lambda,
            iu_fraction,
            eu_fraction,
        })
    }
}

/// Estimator settings shared by every UProp score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpropConfig {
    pub intrinsic: IntrinsicMode,
    pub pmi: PmiMode,
    pub eps: EpsilonPolicy,
}

pub fn score_tdp(tdp: &TdpRecord, cfg: &UpropConfig) -> Result<ScoreBreakdown> {
    if tdp.steps.is_empty() {
        return Err(Error::Input("cannot score an empty TDP".into()));
    }
    let iu = tdp
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| intrinsic_entropy(s, cfg.intrinsic).map_err(|e| Error::at_step(t + 1, e)))
        .collect::<Result<Vec<_>>>()?;
    let mut eu = Vec::with_capacity(tdp.steps.len());
    let mut cumulative = 0.0;
    for (t, step) in tdp.steps.iter().enumerate() {
        eu.push(cumulative);
        if t + 1 < tdp.steps.len() {
            let tau = step.samples.len() as u32;
            cumulative +=
                pmi_step(step, tau, cfg.pmi).map_err(|e| Error::at_step(t + 1, e))?;
        }
    }
    ScoreBreakdown::from_components(iu, eu, cfg.eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpropScore {
    pub score: f64,
    pub breakdowns: Vec<ScoreBreakdown>,
    /// Indices of TDPs whose final answer matched the greedy answer.
    pub matched: Vec<usize>,
    /// No TDP matched (or there was no greedy answer); the score is the mean over all TDPs.
    pub fallback: bool,
}

/// Answer filter used when averaging TDP totals into a task score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnswerFilter {
    /// Keep TDPs whose final answer is within this normalized distance of `y*`.
    Threshold(f64),
    Disabled,
}

impl Default for AnswerFilter {
    fn default() -> Self {
        AnswerFilter::Threshold(DEFAULT_MATCH_THRESHOLD)
    }
}

pub fn uprop_score(task: &TaskRecord, filter: AnswerFilter, cfg: &UpropConfig) -> Result<UpropScore> {
    if task.tdps.is_empty() {
        return Err(Error::Input(format!("task {} has no TDPs", task.task_id)));
    }
    let breakdowns = task
        .tdps
        .iter()
        .map(|t| score_tdp(t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let matched: Vec<usize> = match (filter, task.greedy_answer.as_deref()) {
        (AnswerFilter::Disabled, _) => (0..task.tdps.len()).collect(),
        (AnswerFilter::Threshold(th), Some(greedy)) => {
            if !(0.0..=1.0).contains(&th) {
                return Err(Error::Param(format!("match threshold {th} outside [0, 1]")));
            }
            task.tdps
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    t.final_answer
                        .as_deref()
                        .is_some_and(|a| decision_distance(a, greedy) <= th)
                })
                .map(|(i, _)| i)
                .collect()
        }
        (AnswerFilter::Threshold(_), None) => Vec::new(),
    };
    let fallback = matched.is_empty();
    let pool: Vec<usize> = if fallback {
        (0..breakdowns.len()).collect()
    } else {
        matched.clone()
    };
    let score =
        pool.iter().map(|&i| breakdowns[i].tdp_total_normalized).sum::<f64>() / pool.len() as f64;
    Ok(UpropScore {
        score,
        breakdowns,
        matched,
        fallback,
    })
}

/// Mean IU/EU fraction at one step index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepFraction {
    /// 1-based step index.
    pub step: usize,
    pub iu_fraction: f64,
    pub eu_fraction: f64,
    /// Number of TDPs long enough to reach this step.
    pub count: usize,
}

/// Per-step mean fractions over all TDPs that reach each step.
pub fn iu_eu_fractions<'a>(breakdowns: impl IntoIterator<Item = &'a ScoreBreakdown>) -> Vec<StepFraction> {
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for b in breakdowns {
        if sums.len() < b.iu_fraction.len() {
            sums.resize(b.iu_fraction.len(), (0.0, 0.0, 0));
        }
        for (t, (i, e)) in b.iu_fraction.iter().zip(&b.eu_fraction).enumerate() {
            sums[t].0 += i;
            sums[t].1 += e;
            sums[t].2 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(t, (i, e, c))| StepFraction {
            step: t + 1,
            iu_fraction: i / c as f64,
            eu_fraction: e / c as f64,
            count: c,
        })
        .collect()
}
