//! Seeded synthetic benchmark with injected preceding-step spread.
//!
//! Every task draws a latent spread `s ~ U(0, 1)`. At step 1 each sample
//! leaves the main action with probability `s`, landing on a lexically
//! distant alternative. The greedy answer is wrong with probability
//! `base_error + error_slope * s`, and the log-probabilities of the later
//! steps drop as `s` grows. Step 1's own log-probabilities carry a
//! task-level level shift that is unrelated to correctness, the way a long
//! first reasoning block varies from task to task.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Decision, GenConfig, StepRecord, TaskRecord, TdpRecord};
use crate::orchestrator::task_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub tasks: usize,
    pub z: usize,
    pub n: usize,
    pub steps: usize,
    pub base_error: f64,
    pub error_slope: f64,
    /// Upper bound of step 1's task-level negative log-probability shift.
    pub first_step_shift: f64,
    /// Extra per-token negative log-probability at later steps, per unit of spread.
    pub later_spread_cost: f64,
    /// Additional cost on later steps of a TDP whose step-1 pick left the main action.
    pub off_path_cost: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            tasks: 200,
            z: 10,
            n: 10,
            steps: 3,
            base_error: 0.1,
            error_slope: 0.8,
            first_step_shift: 4.0,
            later_spread_cost: 1.0,
            off_path_cost: 0.5,
            seed: 0,
        }
    }
}

const TOKENS: usize = 4;

fn decision(action: String, nll: f64) -> Decision {
    let per = -nll / TOKENS as f64;
    Decision::new(action.clone(), action, vec![per; TOKENS])
}

fn alternative(rng: &mut ChaCha8Rng, step: usize) -> String {
    const LETTERS: &[u8] = b"qwxzjkvy";
    let tail: String = (0..6).map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char).collect();
    format!("{tail}-{step}")
}

fn main_action(step: usize) -> String {
    format!("proceed step {step}")
}

fn sample_tdp(cfg: &SyntheticConfig, spread: f64, shift: f64, answer: &str, wrong: bool, rng: &mut ChaCha8Rng) -> TdpRecord {
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut off_path = false;
    for t in 1..=cfg.steps {
        let samples: Vec<Decision> = (0..cfg.n)
            .map(|_| {
                let leave = t < cfg.steps && rng.random::<f64>() < spread;
                let action = if leave { alternative(rng, t) } else { main_action(t) };
                let noise: f64 = rng.random::<f64>() * 0.5;
                let nll = if t == 1 {
                    0.5 + shift + noise
                } else {
                    0.5 + cfg.later_spread_cost * spread + if off_path { cfg.off_path_cost } else { 0.0 } + noise
                };
                decision(action, nll)
            })
            .collect();
        let chosen_index = rng.random_range(0..cfg.n);
        if samples[chosen_index].action_text != main_action(t) {
            off_path = true;
        }
        steps.push(StepRecord {
            samples,
            chosen_index,
            observation: format!("observation {t}"),
        });
    }
    let stray = wrong && rng.random::<f64>() < 0.5;
    TdpRecord {
        steps,
        final_answer: Some(if stray { format!("unrelated {}", alternative(rng, 0)) } else { answer.to_string() }),
        terminated: true,
        truncated: false,
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<TaskRecord> {
    (0..cfg.tasks)
        .map(|i| {
            let mut rng = task_rng(cfg.seed, i);
            let spread: f64 = rng.random();
            let shift = rng.random::<f64>() * cfg.first_step_shift;
            let wrong = rng.random::<f64>() < (cfg.base_error + cfg.error_slope * spread).min(1.0);
            let answer = format!("answer {i}");
            let tdps = (0..cfg.z)
                .map(|_| sample_tdp(cfg, spread, shift, &answer, wrong, &mut rng))
                .collect();
            TaskRecord {
                task_id: format!("syn-{i:04}"),
                instruction: format!("synthetic task {i}"),
                greedy_answer: Some(answer),
                correct: Some(!wrong),
                model_ref: "synthetic".into(),
                gen_config: GenConfig {
                    n: cfg.n as u32,
                    z: cfg.z as u32,
                    max_steps: cfg.steps as u32,
                    seed: cfg.seed,
                    ..GenConfig::default()
                },
                tdps,
            }
        })
        .collect()
}
