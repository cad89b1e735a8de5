//! Single-step uncertainty baselines and the step aggregations that lift
//! them to whole TDPs.
//!
//! Similarity between samples is `1 - decision_distance` on action text;
//! semantic clusters come from a greedy single-link pass over that
//! similarity rather than an entailment model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StepRecord, TaskRecord};
use crate::textdist::{decision_distance, gaussian_kernel, similarity};

/// Default similarity threshold for clustering samples.
pub const DEFAULT_SIM_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineMethod {
    Ppl,
    Ls,
    Pe,
    Se,
    Deg,
    Sd,
    SentSar,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 7] = [
        BaselineMethod::Ppl,
        BaselineMethod::Ls,
        BaselineMethod::Pe,
        BaselineMethod::Se,
        BaselineMethod::Deg,
        BaselineMethod::Sd,
        BaselineMethod::SentSar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Ppl => "ppl",
            BaselineMethod::Ls => "ls",
            BaselineMethod::Pe => "pe",
            BaselineMethod::Se => "se",
            BaselineMethod::Deg => "deg",
            BaselineMethod::Sd => "sd",
            BaselineMethod::SentSar => "sentsar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
    }

    fn min_samples(self) -> usize {
        match self {
            BaselineMethod::Ls | BaselineMethod::Deg | BaselineMethod::Sd | BaselineMethod::SentSar => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AggregationMode {
    #[default]
    Avg,
    Rms,
}

impl AggregationMode {
    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::Avg => "avg",
            AggregationMode::Rms => "rms",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg" | "average" | "mean" => Some(AggregationMode::Avg),
            "rms" => Some(AggregationMode::Rms),
            _ => None,
        }
    }
}

/// Disjoint cover of sample indices; each cluster is sorted, and its first
/// element is the representative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterPartition {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

pub fn cluster_samples(step: &StepRecord, sim_threshold: f64) -> ClusterPartition {
    let max_dist = 1.0 - sim_threshold;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, s) in step.samples.iter().enumerate() {
        let home = clusters.iter_mut().find(|c| {
            decision_distance(&step.samples[c[0]].action_text, &s.action_text) <= max_dist
        });
        match home {
            Some(c) => c.push(i),
            None => clusters.push(vec![i]),
        }
    }
    ClusterPartition { clusters }
}

fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[allow(clippy::needless_range_loop)]
fn similarity_matrix(step: &StepRecord) -> Vec<Vec<f64>> {
    let n = step.samples.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = similarity(&step.samples[i].action_text, &step.samples[j].action_text);
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    m
}

pub fn baseline_step(method: BaselineMethod, step: &StepRecord, sim_threshold: f64) -> Result<f64> {
    let n = step.samples.len();
    if n < method.min_samples() {
        return Err(Error::Input(format!(
            "{} needs at least {} samples, got {n}",
            method.name(),
            method.min_samples()
        )));
    }
    let nf = n as f64;
    let seq: Vec<f64> = step.samples.iter().map(|s| s.seq_logprob).collect();
    let value = match method {
        BaselineMethod::Pe => (-seq.iter().sum::<f64>() / nf).max(0.0),
        BaselineMethod::Ppl => {
            step.samples
                .iter()
                .map(|s| (-s.seq_logprob / s.token_count().max(1) as f64).exp())
                .sum::<f64>()
                / nf
        }
        BaselineMethod::Ls => {
            let m = similarity_matrix(step);
            let pairs = n * (n - 1) / 2;
            let total: f64 = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| m[i][j]).sum();
            1.0 - total / pairs as f64
        }
        BaselineMethod::Deg => {
            let m = similarity_matrix(step);
            let total: f64 = m.iter().flatten().sum();
            1.0 - total / (nf * nf)
        }
        BaselineMethod::Se => {
            let part = cluster_samples(step, sim_threshold);
            let sum: f64 = part
                .clusters
                .iter()
                .map(|c| log_sum_exp(c.iter().map(|&i| seq[i])).min(0.0))
                .sum();
            -sum / part.len() as f64
        }
        BaselineMethod::Sd => {
            // weights relative to the most probable sample; the ratio is scale-free.
            let max = seq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let chosen = &step.chosen().action_text;
            let (mut num, mut den) = (0.0, 0.0);
            for (s, lp) in step.samples.iter().zip(&seq) {
                let w = (lp - max).exp();
                num += w * gaussian_kernel(decision_distance(&s.action_text, chosen), 1)?;
                den += w;
            }
            1.0 - num / den
        }
        BaselineMethod::SentSar => {
            let m = similarity_matrix(step);
            let sum: f64 = (0..n)
                .map(|i| {
                    log_sum_exp(
                        (0..n)
                            .filter(|&j| m[i][j] > 0.0)
                            .map(|j| seq[j] + m[i][j].ln()),
                    )
                })
                .sum();
            (-sum / nf).max(0.0)
        }
    };
    Ok(value)
}

pub fn aggregate_tdp(per_step: &[f64], mode: AggregationMode) -> Result<f64> {
    if per_step.is_empty() {
        return Err(Error::Input("cannot aggregate an empty step list".into()));
    }
    let n = per_step.len() as f64;
    Ok(match mode {
        AggregationMode::Avg => per_step.iter().sum::<f64>() / n,
        AggregationMode::Rms => (per_step.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
    })
}

pub fn baseline_task(
    task: &TaskRecord,
    method: BaselineMethod,
    agg: AggregationMode,
    sim_threshold: f64,
) -> Result<f64> {
    if task.tdps.is_empty() {
        return Err(Error::Input(format!("task {} has no TDPs", task.task_id)));
    }
    let mut total = 0.0;
    for tdp in &task.tdps {
        let per_step = tdp
            .steps
            .iter()
            .map(|s| baseline_step(method, s, sim_threshold))
            .collect::<Result<Vec<_>>>()?;
        total += aggregate_tdp(&per_step, agg)?;
    }
    Ok(total / task.tdps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Decision, GenConfig, TdpRecord};
    use proptest::prelude::*;

    fn step(actions: &[&str], seq: &[f64]) -> StepRecord {
        StepRecord {
            samples: actions
                .iter()
                .zip(seq)
                .map(|(a, s)| Decision::new(*a, *a, vec![*s]))
                .collect(),
            chosen_index: 0,
            observation: String::new(),
        }
    }

    #[test]
    fn clustering_examples() {
        let s = step(&["ls"; 3], &[-1.0; 3]);
        assert_eq!(cluster_samples(&s, 0.7).clusters, vec![vec![0, 1, 2]]);
        let s = step(&["Search[A]", "Search[A]", "Finish[B]"], &[-1.0; 3]);
        assert_eq!(cluster_samples(&s, 0.7).clusters, vec![vec![0, 1], vec![2]]);
        let s = step(&["x"], &[-1.0]);
        assert_eq!(cluster_samples(&s, 0.7).clusters, vec![vec![0]]);
    }

    #[test]
    fn pe_example() {
        let s = step(&["a", "b"], &[-1.0, -3.0]);
        assert!((baseline_step(BaselineMethod::Pe, &s, 0.7).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn se_example() {
        let s = step(&["Search[A]", "Search[A]", "Finish[B]"], &[-1.0, -1.0, -2.0]);
        let expect = -((2.0 * (-1.0f64).exp()).ln() + (-2.0f64).exp().ln()) / 2.0;
        let got = baseline_step(BaselineMethod::Se, &s, 0.7).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 1.15343).abs() < 1e-5);
    }

    #[test]
    fn se_clamps_cluster_mass() {
        // cluster probability 2 * e^-0.1 > 1 clamps to 1, contributing 0.
        let s = step(&["a", "a"], &[-0.1, -0.1]);
        assert_eq!(baseline_step(BaselineMethod::Se, &s, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn se_survives_underflow() {
        let s = step(&["a", "a", "zz"], &[-900.0, -900.0, -1000.0]);
        let v = baseline_step(BaselineMethod::Se, &s, 0.7).unwrap();
        let expect = -((-900.0 + 2f64.ln()) + -1000.0) / 2.0;
        assert!((v - expect).abs() < 1e-9);
        let v = baseline_step(BaselineMethod::SentSar, &s, 0.7).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn ls_deg_identical_are_zero() {
        let s = step(&["ls /etc"; 3], &[-1.0; 3]);
        assert_eq!(baseline_step(BaselineMethod::Ls, &s, 0.7).unwrap(), 0.0);
        assert_eq!(baseline_step(BaselineMethod::Deg, &s, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn ls_deg_by_hand() {
        // sim("ab","ab")=1, sim("ab","cd")=0
        let s = step(&["ab", "ab", "cd"], &[-1.0; 3]);
        let ls = baseline_step(BaselineMethod::Ls, &s, 0.7).unwrap();
        assert!((ls - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        let deg = baseline_step(BaselineMethod::Deg, &s, 0.7).unwrap();
        assert!((deg - (1.0 - 5.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn sd_and_sentsar_by_hand() {
        let s = step(&["ab", "cd"], &[-1.0, -2.0]);
        let (p0, p1) = ((-1.0f64).exp(), (-2.0f64).exp());
        let k0 = gaussian_kernel(0.0, 1).unwrap();
        let k1 = gaussian_kernel(1.0, 1).unwrap();
        let sd = baseline_step(BaselineMethod::Sd, &s, 0.7).unwrap();
        assert!((sd - (1.0 - (p0 * k0 + p1 * k1) / (p0 + p1))).abs() < 1e-12);
        // no similarity between the two, so each term is just ln p_i
        let sar = baseline_step(BaselineMethod::SentSar, &s, 0.7).unwrap();
        assert!((sar - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ppl_by_hand() {
        let s = StepRecord {
            samples: vec![Decision::new("a", "a", vec![-0.5, -1.5])],
            chosen_index: 0,
            observation: String::new(),
        };
        let v = baseline_step(BaselineMethod::Ppl, &s, 0.7).unwrap();
        assert!((v - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn pairwise_methods_reject_single_sample() {
        let s = step(&["a"], &[-1.0]);
        for m in [BaselineMethod::Ls, BaselineMethod::Deg, BaselineMethod::Sd, BaselineMethod::SentSar] {
            assert!(matches!(baseline_step(m, &s, 0.7), Err(Error::Input(_))), "{m:?}");
        }
        for m in [BaselineMethod::Ppl, BaselineMethod::Pe, BaselineMethod::Se] {
            assert!(baseline_step(m, &s, 0.7).is_ok());
        }
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_tdp(&[1.0, 2.0, 3.0], AggregationMode::Avg).unwrap(), 2.0);
        let rms = aggregate_tdp(&[1.0, 2.0, 3.0], AggregationMode::Rms).unwrap();
        assert!((rms - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((rms - 2.16025).abs() < 1e-5);
        assert!((aggregate_tdp(&[0.4; 3], AggregationMode::Avg).unwrap() - 0.4).abs() < 1e-15);
        assert!((aggregate_tdp(&[0.4; 3], AggregationMode::Rms).unwrap() - 0.4).abs() < 1e-15);
        assert!(aggregate_tdp(&[], AggregationMode::Avg).is_err());
    }

    fn task(tdps: Vec<TdpRecord>) -> TaskRecord {
        TaskRecord {
            task_id: "t".into(),
            instruction: String::new(),
            greedy_answer: None,
            correct: None,
            model_ref: "m".into(),
            gen_config: GenConfig::default(),
            tdps,
        }
    }

    fn tdp(steps: Vec<StepRecord>) -> TdpRecord {
        TdpRecord {
            steps,
            final_answer: None,
            terminated: false,
            truncated: true,
        }
    }

    #[test]
    fn task_level_mean() {
        let s = step(&["a", "b"], &[-1.0, -3.0]);
        let one = task(vec![tdp(vec![s.clone()])]);
        assert_eq!(
            baseline_task(&one, BaselineMethod::Pe, AggregationMode::Avg, 0.7).unwrap(),
            baseline_step(BaselineMethod::Pe, &s, 0.7).unwrap()
        );
        let two = task(vec![
            tdp(vec![step(&["a"], &[-1.0])]),
            tdp(vec![step(&["a"], &[-3.0])]),
        ]);
        assert_eq!(
            baseline_task(&two, BaselineMethod::Pe, AggregationMode::Rms, 0.7).unwrap(),
            2.0
        );
    }

    #[test]
    fn names_round_trip() {
        for m in BaselineMethod::ALL {
            assert_eq!(BaselineMethod::parse(m.name()), Some(m));
        }
        assert_eq!(BaselineMethod::parse("SentSAR"), Some(BaselineMethod::SentSar));
        assert_eq!(AggregationMode::parse("RMS"), Some(AggregationMode::Rms));
    }

    fn arb_step() -> impl Strategy<Value = StepRecord> {
        proptest::collection::vec(("[ab]{1,4}", -6.0f64..-0.01), 2..8).prop_map(|v| StepRecord {
            samples: v.into_iter().map(|(a, s)| Decision::new(a.clone(), a, vec![s])).collect(),
            chosen_index: 0,
            observation: String::new(),
        })
    }

    proptest! {
        #[test]
        fn ranges(s in arb_step()) {
            for m in [BaselineMethod::Deg, BaselineMethod::Ls, BaselineMethod::Sd] {
                let v = baseline_step(m, &s, 0.7).unwrap();
                prop_assert!((0.0..=1.0).contains(&v), "{m:?} = {v}");
            }
            for m in [BaselineMethod::Pe, BaselineMethod::Se, BaselineMethod::SentSar] {
                prop_assert!(baseline_step(m, &s, 0.7).unwrap() >= 0.0);
            }
            prop_assert!(baseline_step(BaselineMethod::Ppl, &s, 0.7).unwrap() >= 1.0);
        }

        #[test]
        fn se_singletons_equal_pe(seq in proptest::collection::vec(-6.0f64..-0.01, 1..8)) {
            // distinct single-letter actions never cluster at threshold 0.7
            let names: Vec<String> = (0..seq.len()).map(|i| char::from(b'a' + i as u8).to_string()).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let s = step(&refs, &seq);
            let se = baseline_step(BaselineMethod::Se, &s, 0.7).unwrap();
            let pe = baseline_step(BaselineMethod::Pe, &s, 0.7).unwrap();
            prop_assert!((se - pe).abs() < 1e-12);
        }

        #[test]
        fn avg_le_rms(xs in proptest::collection::vec(0.0f64..10.0, 1..10)) {
            let a = aggregate_tdp(&xs, AggregationMode::Avg).unwrap();
            let r = aggregate_tdp(&xs, AggregationMode::Rms).unwrap();
            prop_assert!(a <= r + 1e-12);
        }
    }
}
