//! Exactly enumerable discrete decision processes.
//!
//! A [`ProcessTable`] lists, for every step and every history of earlier
//! decisions, the conditional distribution of the next decision. Small
//! alphabets keep full enumeration feasible, so every information quantity
//! (joint entropy, marginal and conditional step entropies, MI, per-history
//! PMI) can be computed exactly and compared against the sampled estimators.
//!
//! Histories are indexed in mixed radix with the first step most
//! significant: extending history `h` at step `t` by action `a` gives
//! `h * |A_t| + a`.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{score_tdp, UpropConfig};
use crate::model::{Decision, StepRecord, TdpRecord};
use crate::sampling::{choose_index, Selection};

pub const MAX_ALPHABET: usize = 6;
pub const ENUMERATION_LIMIT: u128 = 1_000_000;
const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessTable {
    alphabets: Vec<Vec<String>>,
    conditionals: Vec<Vec<Vec<f64>>>,
}

/// On-disk form: conditionals keyed by `|`-joined history strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessTableFile {
    pub horizon: usize,
    pub alphabets: Vec<Vec<String>>,
    pub conditionals: Vec<BTreeMap<String, Vec<f64>>>,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `KL(p || q)`; infinite when `p` puts mass where `q` has none.
fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyDecomposition {
    /// `H(y_t | x)` from the exact marginal.
    pub marginal_entropy: f64,
    /// `H(y_t | y_{1:t-1}, x)` averaged over histories.
    pub conditional_entropy: f64,
    /// `marginal_entropy - conditional_entropy`.
    pub mi_sum: f64,
}

impl ProcessTable {
    /// `conditionals[t][h]` is the distribution over `alphabets[t]` after history index `h`.
    pub fn new(alphabets: Vec<Vec<String>>, conditionals: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if alphabets.is_empty() {
            return Err(Error::validation("horizon", "must be >= 1"));
        }
        if alphabets.len() != conditionals.len() {
            return Err(Error::validation(
                "conditionals",
                format!("{} steps of conditionals for horizon {}", conditionals.len(), alphabets.len()),
            ));
        }
        let mut trajectories: u128 = 1;
        for (t, a) in alphabets.iter().enumerate() {
            if a.is_empty() || a.len() > MAX_ALPHABET {
                return Err(Error::validation(
                    format!("alphabets[{t}]"),
                    format!("size must be in 1..={MAX_ALPHABET}, got {}", a.len()),
                ));
            }
            for (i, s) in a.iter().enumerate() {
                if s.contains('|') {
                    return Err(Error::validation(format!("alphabets[{t}][{i}]"), "actions may not contain '|'"));
                }
                if a[..i].contains(s) {
                    return Err(Error::validation(format!("alphabets[{t}][{i}]"), format!("duplicate action {s:?}")));
                }
            }
            let histories = trajectories;
            if conditionals[t].len() as u128 != histories {
                return Err(Error::validation(
                    format!("conditionals[{t}]"),
                    format!("expected {histories} histories, got {}", conditionals[t].len()),
                ));
            }
            trajectories *= a.len() as u128;
            if trajectories > ENUMERATION_LIMIT {
                return Err(Error::Size {
                    trajectories,
                    limit: ENUMERATION_LIMIT,
                });
            }
        }
        let table = Self {
            alphabets,
            conditionals,
        };
        for t in 0..table.horizon() {
            for (h, p) in table.conditionals[t].iter().enumerate() {
                let field = format!("conditionals[{t}][{}]", table.history_key(t, h));
                if p.len() != table.alphabets[t].len() {
                    return Err(Error::validation(field, "length differs from alphabet"));
                }
                if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::validation(field, "entries must be finite and >= 0"));
                }
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > PROB_TOLERANCE {
                    return Err(Error::validation(field, format!("sums to {sum}, not 1")));
                }
            }
        }
        Ok(table)
    }

    pub fn horizon(&self) -> usize {
        self.alphabets.len()
    }

    pub fn alphabets(&self) -> &[Vec<String>] {
        &self.alphabets
    }

    /// Number of distinct histories before 0-based step `t`.
    pub fn history_count(&self, t: usize) -> usize {
        self.alphabets[..t].iter().map(Vec::len).product()
    }

    pub fn trajectory_count(&self) -> usize {
        self.history_count(self.horizon())
    }

    fn decode_history(&self, t: usize, mut h: usize) -> Vec<usize> {
        let mut out = vec![0; t];
        for i in (0..t).rev() {
            let k = self.alphabets[i].len();
            out[i] = h % k;
            h /= k;
        }
        out
    }

    fn history_key(&self, t: usize, h: usize) -> String {
        self.decode_history(t, h)
            .iter()
            .enumerate()
            .map(|(i, &a)| self.alphabets[i][a].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Maps action strings to the history index for the step after them.
    pub fn history_index<S: AsRef<str>>(&self, history: &[S]) -> Result<usize> {
        if history.len() >= self.horizon() {
            return Err(Error::Input(format!(
                "history of length {} leaves no step in horizon {}",
                history.len(),
                self.horizon()
            )));
        }
        let mut h = 0;
        for (i, s) in history.iter().enumerate() {
            let a = self.alphabets[i]
                .iter()
                .position(|x| x == s.as_ref())
                .ok_or_else(|| Error::Input(format!("{:?} is not an action at step {}", s.as_ref(), i + 1)))?;
            h = h * self.alphabets[i].len() + a;
        }
        Ok(h)
    }

    /// Conditional distribution at 0-based step `t` after history index `h`.
    pub fn conditional(&self, t: usize, h: usize) -> &[f64] {
        &self.conditionals[t][h]
    }

    /// Probabilities of every history before 0-based step `t`.
    pub fn history_probs(&self, t: usize) -> Vec<f64> {
        let mut probs = vec![1.0];
        for s in 0..t {
            let k = self.alphabets[s].len();
            let mut next = Vec::with_capacity(probs.len() * k);
            for (h, ph) in probs.iter().enumerate() {
                next.extend(self.conditionals[s][h].iter().map(|p| ph * p));
            }
            probs = next;
        }
        probs
    }

    /// Exact marginal `p(y_t | x)` at 0-based step `t`.
    pub fn marginal(&self, t: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.alphabets[t].len()];
        for (h, ph) in self.history_probs(t).iter().enumerate() {
            for (mi, p) in m.iter_mut().zip(&self.conditionals[t][h]) {
                *mi += ph * p;
            }
        }
        m
    }

    pub fn to_file(&self) -> ProcessTableFile {
        ProcessTableFile {
            horizon: self.horizon(),
            alphabets: self.alphabets.clone(),
            conditionals: (0..self.horizon())
                .map(|t| {
                    self.conditionals[t]
                        .iter()
                        .enumerate()
                        .map(|(h, p)| (self.history_key(t, h), p.clone()))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_file(file: ProcessTableFile) -> Result<Self> {
        if file.horizon != file.alphabets.len() {
            return Err(Error::validation(
                "horizon",
                format!("{} but {} alphabets given", file.horizon, file.alphabets.len()),
            ));
        }
        if file.conditionals.len() != file.horizon {
            return Err(Error::validation("conditionals", "one map per step is required"));
        }
        let mut conditionals = Vec::with_capacity(file.horizon);
        let mut count: u128 = 1;
        for (t, map) in file.conditionals.iter().enumerate() {
            if count > ENUMERATION_LIMIT {
                return Err(Error::Size {
                    trajectories: count,
                    limit: ENUMERATION_LIMIT,
                });
            }
            let mut rows = vec![None; count as usize];
            for (key, p) in map {
                let parts: Vec<&str> = if key.is_empty() { vec![] } else { key.split('|').collect() };
                if parts.len() != t {
                    return Err(Error::validation(
                        format!("conditionals[{t}][{key}]"),
                        format!("history must have {t} actions"),
                    ));
                }
                let mut h = 0usize;
                for (i, s) in parts.iter().enumerate() {
                    let a = file.alphabets[i].iter().position(|x| x == s).ok_or_else(|| {
                        Error::validation(format!("conditionals[{t}][{key}]"), format!("unknown action {s:?}"))
                    })?;
                    h = h * file.alphabets[i].len() + a;
                }
                rows[h] = Some(p.clone());
            }
            let rows = rows
                .into_iter()
                .enumerate()
                .map(|(h, r)| {
                    r.ok_or_else(|| {
                        let key = decode_key(&file.alphabets, t, h);
                        Error::validation(format!("conditionals[{t}][{key}]"), "history missing (table incomplete)")
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            conditionals.push(rows);
            count *= file.alphabets[t].len().max(1) as u128;
        }
        Self::new(file.alphabets, conditionals)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProcessTableFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: e.column(),
            message: format!("line {}: {e}", e.line()),
        })?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("table serializes")
    }
}

fn decode_key(alphabets: &[Vec<String>], t: usize, mut h: usize) -> String {
    let mut parts = vec![""; t];
    for i in (0..t).rev() {
        let k = alphabets[i].len();
        parts[i] = &alphabets[i][h % k];
        h /= k;
    }
    parts.join("|")
}

/// `H(P) = -sum p(traj) ln p(traj)` over every full trajectory.
pub fn exact_total_entropy(table: &ProcessTable) -> f64 {
    entropy(&table.history_probs(table.horizon()))
}

/// Marginal entropy, history-averaged conditional entropy and their difference at 1-based step `t`.
pub fn exact_entropy_decomposition(table: &ProcessTable, t: usize) -> Result<EntropyDecomposition> {
    let s = step_index(table, t)?;
    let hp = table.history_probs(s);
    let mut marginal = vec![0.0; table.alphabets[s].len()];
    let mut conditional_entropy = 0.0;
    for (h, ph) in hp.iter().enumerate() {
        let p = &table.conditionals[s][h];
        for (m, x) in marginal.iter_mut().zip(p) {
            *m += ph * x;
        }
        conditional_entropy += ph * entropy(p);
    }
    let marginal_entropy = entropy(&marginal);
    Ok(EntropyDecomposition {
        marginal_entropy,
        conditional_entropy,
        mi_sum: marginal_entropy - conditional_entropy,
    })
}

fn step_index(table: &ProcessTable, t: usize) -> Result<usize> {
    if t == 0 || t > table.horizon() {
        return Err(Error::Input(format!("step {t} outside 1..={}", table.horizon())));
    }
    Ok(t - 1)
}

/// `KL(p(y_t | h) || p(y_t | x))` for a realized history of action strings.
pub fn exact_pmi<S: AsRef<str>>(table: &ProcessTable, t: usize, history: &[S]) -> Result<f64> {
    let s = step_index(table, t)?;
    if history.len() != s {
        return Err(Error::Input(format!(
            "step {t} needs a history of {s} actions, got {}",
            history.len()
        )));
    }
    let h = table.history_index(history)?;
    Ok(kl(table.conditional(s, h), &table.marginal(s)))
}

/// Canonical observation for a decision history: `step=<next>` plus the actions so far.
pub fn encode_history<S: AsRef<str>>(history: &[S]) -> String {
    if history.is_empty() {
        return "step=1".into();
    }
    let joined: Vec<&str> = history.iter().map(AsRef::as_ref).collect();
    format!("step={}|{}", history.len() + 1, joined.join("|"))
}

/// A decision carrying the exact table log-probability as its single token.
pub fn oracle_decision(action: &str, p: f64) -> Decision {
    Decision::new(action, action, vec![p.ln()])
}

/// Draws `n` decisions from a conditional distribution.
pub fn draw_decisions<R: Rng + ?Sized>(
    alphabet: &[String],
    probs: &[f64],
    n: usize,
    rng: &mut R,
) -> Vec<Decision> {
    let dist = WeightedIndex::new(probs).expect("validated distribution");
    (0..n)
        .map(|_| {
            let a = dist.sample(rng);
            oracle_decision(&alphabet[a], probs[a])
        })
        .collect()
}

/// One TDP drawn from the table: `n` samples per step, one realized, until the horizon.
pub fn sample_tdp_exact<R: Rng + ?Sized>(
    table: &ProcessTable,
    n: usize,
    selection: Selection,
    rng: &mut R,
) -> Result<TdpRecord> {
    if n < 2 {
        return Err(Error::Input(format!("TDP sampling needs N >= 2, got {n}")));
    }
    let mut history: Vec<String> = Vec::with_capacity(table.horizon());
    let mut h = 0usize;
    let mut steps = Vec::with_capacity(table.horizon());
    for t in 0..table.horizon() {
        let probs = table.conditional(t, h);
        let samples = draw_decisions(&table.alphabets[t], probs, n, rng);
        let k = choose_index(&samples, selection, rng);
        let action = samples[k].action_text.clone();
        let a = table.alphabets[t].iter().position(|x| *x == action).expect("drawn from alphabet");
        h = h * table.alphabets[t].len() + a;
        history.push(action);
        steps.push(StepRecord {
            samples,
            chosen_index: k,
            observation: encode_history(&history),
        });
    }
    Ok(TdpRecord {
        steps,
        final_answer: history.last().cloned(),
        terminated: true,
        truncated: false,
    })
}

/// Per-TDP total using exact conditional entropies and exact PMI at the realized histories.
pub fn exact_pmi_total(table: &ProcessTable, tdp: &TdpRecord) -> Result<f64> {
    exact_path_total(table, tdp, true)
}

/// Per-TDP sum of exact conditional entropies only (chain-rule estimate of `H(P)`).
pub fn exact_intrinsic_total(table: &ProcessTable, tdp: &TdpRecord) -> Result<f64> {
    exact_path_total(table, tdp, false)
}

fn exact_path_total(table: &ProcessTable, tdp: &TdpRecord, with_pmi: bool) -> Result<f64> {
    if tdp.steps.len() != table.horizon() {
        return Err(Error::Input(format!(
            "TDP has {} steps, table horizon is {}",
            tdp.steps.len(),
            table.horizon()
        )));
    }
    let marginals: Vec<Vec<f64>> = (0..table.horizon()).map(|t| table.marginal(t)).collect();
    let mut h = 0usize;
    let mut total = 0.0;
    for (t, step) in tdp.steps.iter().enumerate() {
        let p = table.conditional(t, h);
        total += entropy(p);
        if with_pmi {
            total += kl(p, &marginals[t]);
        }
        let chosen = &step.chosen().action_text;
        let a = table.alphabets[t]
            .iter()
            .position(|x| x == chosen)
            .ok_or_else(|| Error::Input(format!("step {}: {chosen:?} not in alphabet", t + 1)))?;
        h = h * table.alphabets[t].len() + a;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorPath {
    /// Exact conditional entropies plus exact PMI.
    ExactPmi,
    /// Sampled PE plus kernel PMI (raw, un-normalized TDP totals).
    Kernel,
    /// Exact conditional entropies only.
    ExactIntrinsic,
}

impl EstimatorPath {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorPath::ExactPmi => "exact_pmi",
            EstimatorPath::Kernel => "kernel",
            EstimatorPath::ExactIntrinsic => "exact_intrinsic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub z: usize,
    pub path: EstimatorPath,
    pub mean: f64,
    pub std_err: f64,
    /// `|mean - H(P)| / H(P)`; `|mean|` when `H(P) = 0`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Exact joint entropy `H(P)`.
    pub exact_entropy: f64,
    /// `sum_t H(y_t | x)`, the expectation of the exact-PMI path.
    pub marginal_entropy_sum: f64,
    pub rows: Vec<ConvergenceRow>,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-Z RNG: one ChaCha stream per Z value so grid rows are independent.
pub fn experiment_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn convergence_experiment(
    table: &ProcessTable,
    z_grid: &[usize],
    n: usize,
    seed: u64,
    cfg: &UpropConfig,
) -> Result<ConvergenceReport> {
    let exact_entropy = exact_total_entropy(table);
    let marginal_entropy_sum = (1..=table.horizon())
        .map(|t| exact_entropy_decomposition(table, t).map(|d| d.marginal_entropy))
        .sum::<Result<f64>>()?;
    let rel = |m: f64| {
        if exact_entropy > 0.0 {
            (m - exact_entropy).abs() / exact_entropy
        } else {
            m.abs()
        }
    };
    let mut rows = Vec::new();
    for &z in z_grid {
        if z == 0 {
            return Err(Error::Param("Z must be positive".into()));
        }
        let mut rng = experiment_rng(seed, z as u64);
        let mut exact = Vec::with_capacity(z);
        let mut kernel = Vec::with_capacity(z);
        let mut intrinsic = Vec::with_capacity(z);
        for _ in 0..z {
            let tdp = sample_tdp_exact(table, n, Selection::Uniform, &mut rng)?;
            exact.push(exact_pmi_total(table, &tdp)?);
            intrinsic.push(exact_intrinsic_total(table, &tdp)?);
            kernel.push(score_tdp(&tdp, cfg)?.tdp_total_raw);
        }
        for (path, xs) in [
            (EstimatorPath::ExactPmi, &exact),
            (EstimatorPath::Kernel, &kernel),
            (EstimatorPath::ExactIntrinsic, &intrinsic),
        ] {
            let (mean, std_err) = mean_and_se(xs);
            rows.push(ConvergenceRow {
                z,
                path,
                mean,
                std_err,
                rel_error: rel(mean),
            });
        }
    }
    Ok(ConvergenceReport {
        exact_entropy,
        marginal_entropy_sum,
        rows,
    })
}

/// The two-step reference table: `y1` uniform over `{a, b}`,
/// `y2 | a = (0.9, 0.1)`, `y2 | b = (0.5, 0.5)`.
pub fn reference_table() -> ProcessTable {
    ProcessTable::new(
        vec![vec!["a".into(), "b".into()], vec!["c".into(), "d".into()]],
        vec![vec![vec![0.5, 0.5]], vec![vec![0.9, 0.1], vec![0.5, 0.5]]],
    )
    .expect("reference table is valid")
}

/// A family of two-step tables whose action strings are smooth by
/// construction: the two `alpha-*` actions are lexically close and have
/// close next-step distributions, `omega` is far on both counts. Member
/// `j` moves first-step mass from `alpha-0` towards the spread-out mixture.
pub fn smooth_family(members: usize) -> Vec<ProcessTable> {
    let alphabet1: Vec<String> = ["alpha-0", "alpha-1", "omega"].map(String::from).to_vec();
    let alphabet2: Vec<String> = ["stay", "switch"].map(String::from).to_vec();
    (0..members)
        .map(|j| {
            let spread = if members > 1 { j as f64 / (members - 1) as f64 } else { 0.0 };
            let p1 = vec![
                1.0 - spread + spread * 0.3,
                spread * 0.3,
                spread * 0.4,
            ];
            ProcessTable::new(
                vec![alphabet1.clone(), alphabet2.clone()],
                vec![
                    vec![p1],
                    vec![vec![0.9, 0.1], vec![0.85, 0.15], vec![0.1, 0.9]],
                ],
            )
            .expect("family member is valid")
        })
        .collect()
}

/// Mean kernel-path EU (summed over steps) across `z` sampled TDPs.
pub fn mean_kernel_eu(table: &ProcessTable, z: usize, n: usize, seed: u64, cfg: &UpropConfig) -> Result<f64> {
    let mut rng = experiment_rng(seed, 0);
    let mut total = 0.0;
    for _ in 0..z {
        let tdp = sample_tdp_exact(table, n, Selection::Uniform, &mut rng)?;
        total += score_tdp(&tdp, cfg)?.per_step_eu.iter().sum::<f64>();
    }
    Ok(total / z as f64)
}

/// Exact MI summed over steps.
pub fn exact_mi_total(table: &ProcessTable) -> Result<f64> {
    (1..=table.horizon())
        .map(|t| exact_entropy_decomposition(table, t).map(|d| d.mi_sum))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::PmiMode;

    fn h2(p: f64) -> f64 {
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }

    #[test]
    fn uniform_single_step() {
        let t = ProcessTable::new(vec![vec!["x".into(), "y".into()]], vec![vec![vec![0.5, 0.5]]]).unwrap();
        assert!((exact_total_entropy(&t) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn deterministic_second_step() {
        let t = ProcessTable::new(
            vec![vec!["x".into(), "y".into()], vec!["u".into(), "v".into()]],
            vec![vec![vec![0.3, 0.7]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
        )
        .unwrap();
        assert!((exact_total_entropy(&t) - h2(0.3)).abs() < 1e-15);
    }

    #[test]
    fn reference_values() {
        let t = reference_table();
        let expect = 2f64.ln() + 0.5 * h2(0.9) + 0.5 * h2(0.5);
        let h = exact_total_entropy(&t);
        assert!((h - expect).abs() < 1e-12);
        assert!((h - 1.202263).abs() < 1e-6);

        let d = exact_entropy_decomposition(&t, 2).unwrap();
        assert!((d.marginal_entropy - h2(0.7)).abs() < 1e-12);
        assert!((d.marginal_entropy - 0.610864).abs() < 1e-6);
        assert!((d.conditional_entropy - 0.509115).abs() < 1e-6);
        assert!((d.mi_sum - 0.101749).abs() < 1e-6);
        assert!((d.marginal_entropy - d.conditional_entropy - d.mi_sum).abs() < 1e-12);

        let pmi = exact_pmi(&t, 2, &["a"]).unwrap();
        let expect = 0.9 * (9.0f64 / 7.0).ln() + 0.1 * (1.0f64 / 3.0).ln();
        assert!((pmi - expect).abs() < 1e-12);
        assert!((pmi - 0.11632).abs() < 1e-5);
        assert_eq!(exact_pmi(&t, 1, &[] as &[&str]).unwrap(), 0.0);
    }

    #[test]
    fn independent_steps_have_zero_mi() {
        let t = ProcessTable::new(
            vec![vec!["x".into(), "y".into()], vec!["u".into(), "v".into(), "w".into()]],
            vec![vec![vec![0.2, 0.8]], vec![vec![0.1, 0.3, 0.6], vec![0.1, 0.3, 0.6]]],
        )
        .unwrap();
        assert!(exact_entropy_decomposition(&t, 2).unwrap().mi_sum.abs() < 1e-15);
        for h in ["x", "y"] {
            assert!(exact_pmi(&t, 2, &[h]).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_pmi_is_zero() {
        let t = ProcessTable::new(
            vec![vec!["x".into()], vec!["u".into(), "v".into()]],
            vec![vec![vec![1.0]], vec![vec![1.0, 0.0]]],
        )
        .unwrap();
        assert_eq!(exact_pmi(&t, 2, &["x"]).unwrap(), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let t = reference_table();
        assert!(exact_pmi(&t, 2, &["zz"]).is_err());
        assert!(exact_pmi(&t, 2, &[] as &[&str]).is_err());
        assert!(exact_pmi(&t, 3, &["a", "c"]).is_err());
        assert!(ProcessTable::new(vec![vec!["a".into()]], vec![vec![vec![0.9]]]).is_err());
        let big: Vec<Vec<String>> = (0..8).map(|_| (0..6).map(|i| i.to_string()).collect()).collect();
        let conds: Vec<Vec<Vec<f64>>> = (0..8)
            .map(|t| vec![vec![1.0 / 6.0; 6]; 6usize.pow(t as u32)])
            .collect();
        assert!(matches!(ProcessTable::new(big, conds), Err(Error::Size { .. })));
    }

    #[test]
    fn file_round_trip() {
        let t = reference_table();
        let json = t.to_json();
        assert!(json.contains("\"a\""));
        assert_eq!(ProcessTable::from_json(&json).unwrap(), t);
        let mut file = t.to_file();
        file.conditionals[1].remove("b");
        match ProcessTable::from_file(file) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "conditionals[1][b]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn deterministic_table_samples_identical() {
        let t = ProcessTable::new(
            vec![vec!["x".into(), "y".into()], vec!["u".into(), "v".into()]],
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.5, 0.5]]],
        )
        .unwrap();
        let mut rng = experiment_rng(3, 0);
        let tdp = sample_tdp_exact(&t, 5, Selection::Uniform, &mut rng).unwrap();
        assert!(tdp.steps[0].samples.iter().all(|d| d.action_text == "x"));
        assert!(tdp.steps[1].samples.iter().all(|d| d.action_text == "v"));
        assert_eq!(tdp.final_answer.as_deref(), Some("v"));
        assert_eq!(tdp.steps[1].observation, "step=3|x|v");
        assert!(tdp.validate("tdp").is_ok());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let t = reference_table();
        let a = sample_tdp_exact(&t, 10, Selection::Uniform, &mut experiment_rng(11, 0)).unwrap();
        let b = sample_tdp_exact(&t, 10, Selection::Uniform, &mut experiment_rng(11, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps[0].samples[0].seq_logprob, 0.5f64.ln());
        assert_eq!(a.steps[0].samples[0].token_count(), 1);
    }

    #[test]
    fn sample_frequencies_match_table() {
        let t = reference_table();
        let mut rng = experiment_rng(5, 0);
        let draws = 10_000;
        let mut first_a = 0usize;
        let (mut after_a, mut c_after_a) = (0usize, 0usize);
        for _ in 0..draws / 10 {
            let tdp = sample_tdp_exact(&t, 10, Selection::Uniform, &mut rng).unwrap();
            first_a += tdp.steps[0].samples.iter().filter(|d| d.action_text == "a").count();
            if tdp.steps[0].chosen().action_text == "a" {
                after_a += 10;
                c_after_a += tdp.steps[1].samples.iter().filter(|d| d.action_text == "c").count();
            }
        }
        let check = |count: usize, n: usize, p: f64| {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let f = count as f64 / n as f64;
            assert!((f - p).abs() < 3.0 * se, "freq {f} vs {p} (se {se})");
        };
        check(first_a, draws, 0.5);
        check(c_after_a, after_a, 0.9);
    }

    #[test]
    fn deterministic_table_converges_to_zero() {
        let t = ProcessTable::new(
            vec![vec!["x".into()], vec!["u".into(), "v".into()]],
            vec![vec![vec![1.0]], vec![vec![0.0, 1.0]]],
        )
        .unwrap();
        let cfg = UpropConfig {
            pmi: PmiMode::Calibrated,
            ..Default::default()
        };
        let r = convergence_experiment(&t, &[1, 10, 100], 4, 9, &cfg).unwrap();
        assert_eq!(r.exact_entropy, 0.0);
        for row in &r.rows {
            assert_eq!(row.mean, 0.0, "{row:?}");
        }
    }

    #[test]
    fn exact_pmi_path_targets_marginal_sum() {
        // E[cond entropy + PMI] is sum_t H(y_t | x); IU-only is unbiased for H(P).
        let t = reference_table();
        let r = convergence_experiment(&t, &[20_000], 2, 1, &UpropConfig::default()).unwrap();
        let exact = r.rows.iter().find(|x| x.path == EstimatorPath::ExactPmi).unwrap();
        let iu = r.rows.iter().find(|x| x.path == EstimatorPath::ExactIntrinsic).unwrap();
        assert!((exact.mean - r.marginal_entropy_sum).abs() < 3.0 * exact.std_err);
        assert!((iu.mean - r.exact_entropy).abs() < 3.0 * iu.std_err);
        let mi = exact_mi_total(&t).unwrap();
        assert!((r.marginal_entropy_sum - r.exact_entropy - mi).abs() < 1e-12);
    }

    #[test]
    fn family_mi_increases() {
        let fam = smooth_family(5);
        let mi: Vec<f64> = fam.iter().map(|t| exact_mi_total(t).unwrap()).collect();
        assert!(mi[0].abs() < 1e-15);
        assert!(mi.windows(2).all(|w| w[1] > w[0]), "{mi:?}");
    }
}
