//! Runs the sampling protocol: per step draw `N` decisions, realize one,
//! feed it to the environment; repeat until termination or `max_steps`.
//!
//! Each task also gets one greedy rollout whose final answer is graded.
//! All randomness for a task comes from a ChaCha stream keyed by the run
//! seed and the task's position, so results do not depend on scheduling.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{parse_action, Environment, DEFAULT_OBSERVATION_BUDGET};
use crate::error::{Error, Result};
use crate::model::{Decision, GenConfig, StepRecord, TaskRecord, TdpRecord};
use crate::oracle::{oracle_decision, draw_decisions, ProcessTable};
use crate::prompt::{build_messages, ChatMessage, TemplateId, Turn};
use crate::sampling::{choose_index, Selection};
use crate::textdist::decision_distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTask {
    pub task_id: String,
    pub instruction: String,
    #[serde(default)]
    pub gold: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnswerMatcher {
    #[default]
    Exact,
    Fuzzy {
        threshold: f64,
    },
    Contains,
}

impl AnswerMatcher {
    pub fn validate(&self) -> Result<()> {
        if let AnswerMatcher::Fuzzy { threshold } = self {
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::Param(format!("fuzzy threshold {threshold} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

pub fn grade_answer(pred: &str, gold: &str, matcher: AnswerMatcher) -> bool {
    match matcher {
        AnswerMatcher::Exact => fold(pred) == fold(gold),
        AnswerMatcher::Fuzzy { threshold } => decision_distance(pred, gold) <= threshold,
        AnswerMatcher::Contains => fold(pred).contains(&fold(gold)),
    }
}

/// Everything that shapes a run apart from the backend and environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub gen: GenConfig,
    #[serde(default)]
    pub template: TemplateId,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub matcher: AnswerMatcher,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_budget")]
    pub observation_budget: usize,
    #[serde(default)]
    pub model_ref: String,
}

fn default_concurrency() -> usize {
    1
}

fn default_budget() -> usize {
    DEFAULT_OBSERVATION_BUDGET
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            template: TemplateId::default(),
            selection: Selection::default(),
            matcher: AnswerMatcher::default(),
            concurrency: default_concurrency(),
            observation_budget: default_budget(),
            model_ref: String::new(),
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate("gen_config")?;
        if self.gen.n < 2 {
            return Err(Error::validation("gen_config.n", "TDP sampling needs N >= 2"));
        }
        if self.concurrency == 0 {
            return Err(Error::validation("concurrency", "must be >= 1"));
        }
        self.matcher.validate()
    }
}

/// What a backend sees when asked for the next decision.
pub struct StepContext<'a> {
    pub task_id: &'a str,
    pub instruction: &'a str,
    /// `action_text` of every realized decision so far.
    pub history: &'a [String],
    pub messages: Vec<ChatMessage>,
}

pub trait DecisionBackend: Sync {
    /// `n` decisions at `gen.temperature`.
    fn sample(&self, ctx: &StepContext<'_>, n: usize, gen: &GenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Decision>>;
    /// One deterministic (temperature 0) decision.
    fn greedy(&self, ctx: &StepContext<'_>, gen: &GenConfig) -> Result<Decision>;
}

/// Samples straight from process tables; decisions are bare action symbols.
pub struct OracleBackend {
    default_table: Arc<ProcessTable>,
    per_task: Arc<HashMap<String, Arc<ProcessTable>>>,
}

impl OracleBackend {
    pub fn new(default_table: Arc<ProcessTable>, per_task: Arc<HashMap<String, Arc<ProcessTable>>>) -> Self {
        Self {
            default_table,
            per_task,
        }
    }

    fn lookup<'a>(&'a self, ctx: &StepContext<'_>) -> Result<(&'a ProcessTable, usize, usize)> {
        let table = self.per_task.get(ctx.task_id).unwrap_or(&self.default_table);
        let t = ctx.history.len();
        if t >= table.horizon() {
            return Err(Error::Backend(format!("history exceeds table horizon {}", table.horizon())));
        }
        let h = table.history_index(ctx.history)?;
        Ok((table, t, h))
    }
}

impl DecisionBackend for OracleBackend {
    fn sample(&self, ctx: &StepContext<'_>, n: usize, _gen: &GenConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Decision>> {
        let (table, t, h) = self.lookup(ctx)?;
        Ok(draw_decisions(&table.alphabets()[t], table.conditional(t, h), n, rng))
    }

    fn greedy(&self, ctx: &StepContext<'_>, _gen: &GenConfig) -> Result<Decision> {
        let (table, t, h) = self.lookup(ctx)?;
        let p = table.conditional(t, h);
        let mut best = 0;
        for (i, x) in p.iter().enumerate() {
            if *x > p[best] {
                best = i;
            }
        }
        Ok(oracle_decision(&table.alphabets()[t][best], p[best]))
    }
}

/// Creates a fresh environment per episode.
pub trait EnvFactory: Sync {
    fn make(&self) -> Result<Box<dyn Environment>>;
}

impl<F> EnvFactory for F
where
    F: Fn() -> Result<Box<dyn Environment>> + Sync,
{
    fn make(&self) -> Result<Box<dyn Environment>> {
        self()
    }
}

enum Policy<'r> {
    Sample(&'r mut ChaCha8Rng),
    Greedy,
}

struct Episode {
    steps: Vec<StepRecord>,
    final_answer: Option<String>,
    terminated: bool,
}

fn rollout(
    settings: &RunSettings,
    backend: &dyn DecisionBackend,
    envs: &dyn EnvFactory,
    task: &PlanTask,
    mut policy: Policy<'_>,
) -> Result<Episode> {
    let mut env = envs.make()?;
    let initial = env.reset(&task.task_id)?;
    let n = settings.gen.n as usize;
    let mut turns: Vec<Turn> = Vec::new();
    let mut history: Vec<String> = Vec::new();
    let mut steps = Vec::new();
    for t in 0..settings.gen.max_steps as usize {
        let step = t + 1;
        let ctx = StepContext {
            task_id: &task.task_id,
            instruction: &task.instruction,
            history: &history,
            messages: build_messages(
                settings.template,
                &task.instruction,
                &initial.observation,
                &turns,
                settings.observation_budget,
            ),
        };
        let (samples, k) = match &mut policy {
            Policy::Sample(rng) => {
                let samples = backend
                    .sample(&ctx, n, &settings.gen, rng)
                    .map_err(|e| Error::at_step(step, e))?;
                if samples.len() != n {
                    return Err(Error::at_step(
                        step,
                        Error::Backend(format!("asked for {n} samples, got {}", samples.len())),
                    ));
                }
                let k = choose_index(&samples, settings.selection, rng);
                (samples, k)
            }
            Policy::Greedy => {
                let d = backend.greedy(&ctx, &settings.gen).map_err(|e| Error::at_step(step, e))?;
                (vec![d], 0)
            }
        };
        let action = parse_action(&samples[k].full_text);
        let resp = env.step(&action).map_err(|e| Error::at_step(step, e))?;
        turns.push(Turn {
            output: samples[k].full_text.clone(),
            observation: resp.observation.clone(),
        });
        history.push(samples[k].action_text.clone());
        steps.push(StepRecord {
            samples,
            chosen_index: k,
            observation: resp.observation,
        });
        if resp.terminated {
            return Ok(Episode {
                steps,
                final_answer: Some(resp.final_answer.unwrap_or_default()),
                terminated: true,
            });
        }
    }
    Ok(Episode {
        steps,
        final_answer: None,
        terminated: false,
    })
}

pub fn run_tdp(
    settings: &RunSettings,
    backend: &dyn DecisionBackend,
    envs: &dyn EnvFactory,
    task: &PlanTask,
    rng: &mut ChaCha8Rng,
) -> Result<TdpRecord> {
    let ep = rollout(settings, backend, envs, task, Policy::Sample(rng))?;
    Ok(TdpRecord {
        steps: ep.steps,
        final_answer: ep.final_answer,
        terminated: ep.terminated,
        truncated: !ep.terminated,
    })
}

/// Final answer of the greedy rollout; `None` when it never terminated.
pub fn greedy_answer(
    settings: &RunSettings,
    backend: &dyn DecisionBackend,
    envs: &dyn EnvFactory,
    task: &PlanTask,
) -> Result<Option<String>> {
    Ok(rollout(settings, backend, envs, task, Policy::Greedy)?.final_answer)
}

pub fn run_task(
    settings: &RunSettings,
    backend: &dyn DecisionBackend,
    envs: &dyn EnvFactory,
    task: &PlanTask,
    rng: &mut ChaCha8Rng,
) -> Result<TaskRecord> {
    let greedy = greedy_answer(settings, backend, envs, task)?;
    let correct = task.gold.as_ref().map(|gold| match &greedy {
        Some(pred) => grade_answer(pred, gold, settings.matcher),
        None => false,
    });
    let tdps = (0..settings.gen.z)
        .map(|_| run_tdp(settings, backend, envs, task, rng))
        .collect::<Result<Vec<_>>>()?;
    let record = TaskRecord {
        task_id: task.task_id.clone(),
        instruction: task.instruction.clone(),
        greedy_answer: greedy,
        correct,
        model_ref: settings.model_ref.clone(),
        gen_config: settings.gen.clone(),
        tdps,
    };
    record.validate()?;
    Ok(record)
}

pub fn task_rng(seed: u64, task_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_index as u64);
    rng
}

/// Runs every task, up to `settings.concurrency` at a time. Output order
/// follows `tasks`; the first failing task (by position) aborts the run.
pub fn run_plan(
    settings: &RunSettings,
    backend: &dyn DecisionBackend,
    envs: &dyn EnvFactory,
    tasks: &[PlanTask],
) -> Result<Vec<TaskRecord>> {
    settings.validate()?;
    let slots: Vec<Mutex<Option<Result<TaskRecord>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = settings.concurrency.min(tasks.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let mut rng = task_rng(settings.gen.seed, i);
                let r = run_task(settings, backend, envs, &tasks[i], &mut rng).map_err(|e| {
                    Error::Backend(format!("task {}: {e}", tasks[i].task_id))
                });
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every task ran"))
        .collect()
}
