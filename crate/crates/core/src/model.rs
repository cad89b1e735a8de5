//! Domain records for sampled decision processes and their JSON Lines form.
//!
//! A [`TaskRecord`] holds `Z` trajectory-dependent decision processes
//! ([`TdpRecord`]); each step of a TDP keeps all `N` sampled [`Decision`]s,
//! the index of the one that was realized, and the observation the
//! environment returned for it. All log-probabilities are natural logs.
//!
//! Serialization is canonical: field order is fixed by the struct layout and
//! floats are written with shortest round-trip precision, so
//! `serialize(deserialize(line)) == line` for every line this module emits.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Relative tolerance for `seq_logprob` against the sum of token log-probabilities.
pub const SEQ_LOGPROB_TOLERANCE: f64 = 1e-9;

/// One sampled model output at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action_text: String,
    pub full_text: String,
    pub token_logprobs: Vec<f64>,
    pub seq_logprob: f64,
}

impl Decision {
    /// Builds a decision whose `seq_logprob` is the sum of `token_logprobs`.
    pub fn new(
        action_text: impl Into<String>,
        full_text: impl Into<String>,
        token_logprobs: Vec<f64>,
    ) -> Self {
        let seq_logprob = token_logprobs.iter().sum();
        Self {
            action_text: action_text.into(),
            full_text: full_text.into(),
            token_logprobs,
            seq_logprob,
        }
    }

    pub fn token_count(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.token_logprobs.is_empty() {
            return Err(Error::validation(
                format!("{path}.token_logprobs"),
                "token_count must be positive",
            ));
        }
        for (i, lp) in self.token_logprobs.iter().enumerate() {
            if !lp.is_finite() || *lp > 0.0 {
                return Err(Error::validation(
                    format!("{path}.token_logprobs[{i}]"),
                    format!("log-probability must be finite and <= 0, got {lp}"),
                ));
            }
        }
        let sum: f64 = self.token_logprobs.iter().sum();
        let scale = sum.abs().max(1.0);
        if !self.seq_logprob.is_finite()
            || (self.seq_logprob - sum).abs() > SEQ_LOGPROB_TOLERANCE * scale
        {
            return Err(Error::validation(
                format!("{path}.seq_logprob"),
                format!(
                    "{} differs from sum of token_logprobs {} beyond tolerance {:e}",
                    self.seq_logprob, sum, SEQ_LOGPROB_TOLERANCE
                ),
            ));
        }
        Ok(())
    }
}

/// The `N` samples drawn at one step plus the realized one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub samples: Vec<Decision>,
    pub chosen_index: usize,
    pub observation: String,
}

impl StepRecord {
    pub fn chosen(&self) -> &Decision {
        &self.samples[self.chosen_index]
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::validation(
                format!("{path}.samples"),
                "at least one sample is required",
            ));
        }
        if self.chosen_index >= self.samples.len() {
            return Err(Error::validation(
                format!("{path}.chosen_index"),
                format!(
                    "{} out of range for {} samples",
                    self.chosen_index,
                    self.samples.len()
                ),
            ));
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.validate(&format!("{path}.samples[{i}]"))?;
        }
        Ok(())
    }
}

/// One trajectory-dependent decision process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdpRecord {
    pub steps: Vec<StepRecord>,
    pub final_answer: Option<String>,
    pub terminated: bool,
    pub truncated: bool,
}

impl TdpRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::validation(
                format!("{path}.steps"),
                "a TDP needs at least one step",
            ));
        }
        if self.terminated && self.truncated {
            return Err(Error::validation(
                format!("{path}.truncated"),
                "terminated and truncated are mutually exclusive",
            ));
        }
        if self.final_answer.is_some() != self.terminated {
            return Err(Error::validation(
                format!("{path}.final_answer"),
                "final_answer must be present exactly when terminated",
            ));
        }
        for (i, s) in self.steps.iter().enumerate() {
            s.validate(&format!("{path}.steps[{i}]"))?;
        }
        Ok(())
    }
}

/// Sampling configuration recorded alongside every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub temperature: f64,
    pub max_new_tokens: u32,
    /// Samples per step.
    pub n: u32,
    /// TDPs per task.
    pub z: u32,
    pub max_steps: u32,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            max_new_tokens: 512,
            n: 10,
            z: 10,
            max_steps: 15,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::validation(
                format!("{path}.temperature"),
                "must be finite and > 0",
            ));
        }
        for (name, v) in [
            ("max_new_tokens", self.max_new_tokens),
            ("n", self.n),
            ("z", self.z),
            ("max_steps", self.max_steps),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("{path}.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub instruction: String,
    pub greedy_answer: Option<String>,
    pub correct: Option<bool>,
    /// Opaque identifier of the model that produced the samples.
    pub model_ref: String,
    pub gen_config: GenConfig,
    pub tdps: Vec<TdpRecord>,
}

impl TaskRecord {
    pub fn validate(&self) -> Result<()> {
        self.gen_config.validate("gen_config")?;
        for (i, t) in self.tdps.iter().enumerate() {
            t.validate(&format!("tdps[{i}]"))?;
        }
        Ok(())
    }
}

/// Renders a validated task as one JSON Lines element (no trailing newline).
pub fn serialize_task(task: &TaskRecord) -> Result<Vec<u8>> {
    task.validate()?;
    serde_json::to_vec(task).map_err(|e| Error::Input(e.to_string()))
}

/// Whether unknown JSON fields are rejected while reading trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

/// Parses one JSON Lines element. A single trailing newline is accepted.
pub fn deserialize_task(line: &[u8], strictness: Strictness) -> Result<TaskRecord> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if let Some(pos) = line.iter().position(|&b| b == b'\n') {
        return Err(Error::Parse {
            offset: pos,
            message: "input must be a single line".into(),
        });
    }
    let value: Value = serde_json::from_slice(line).map_err(|e| Error::Parse {
        // single line, so the column is the byte position
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    if strictness == Strictness::Strict {
        check_known_fields(&value)?;
    }
    let task: TaskRecord = serde_json::from_value(value).map_err(|e| Error::Validation {
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    task.validate()?;
    Ok(task)
}

/// Reads every non-blank line of a JSON Lines document. Errors carry the
/// 1-based line number in the field path.
pub fn read_tasks(text: &str, strictness: Strictness) -> Result<Vec<TaskRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task = deserialize_task(line.as_bytes(), strictness).map_err(|e| match e {
            Error::Validation { field, message } => Error::Validation {
                field: format!("line {}: {field}", i + 1),
                message,
            },
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("line {}: {message}", i + 1),
            },
            other => other,
        })?;
        out.push(task);
    }
    Ok(out)
}

pub fn write_tasks(tasks: &[TaskRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for t in tasks {
        out.extend(serialize_task(t)?);
        out.push(b'\n');
    }
    Ok(out)
}

const TASK_KEYS: &[&str] = &[
    "task_id",
    "instruction",
    "greedy_answer",
    "correct",
    "model_ref",
    "gen_config",
    "tdps",
];
const GEN_KEYS: &[&str] = &["temperature", "max_new_tokens", "n", "z", "max_steps", "seed"];
const TDP_KEYS: &[&str] = &["steps", "final_answer", "terminated", "truncated"];
const STEP_KEYS: &[&str] = &["samples", "chosen_index", "observation"];
const DECISION_KEYS: &[&str] = &["action_text", "full_text", "token_logprobs", "seq_logprob"];

fn unknown_key(obj: &Value, allowed: &[&str], path: &str) -> Result<()> {
    if let Value::Object(map) = obj {
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            let field = if path.is_empty() {
                k.clone()
            } else {
                format!("{path}.{k}")
            };
            return Err(Error::validation(field, "unknown field (strict mode)"));
        }
    }
    Ok(())
}

fn check_known_fields(v: &Value) -> Result<()> {
    unknown_key(v, TASK_KEYS, "")?;
    if let Some(g) = v.get("gen_config") {
        unknown_key(g, GEN_KEYS, "gen_config")?;
    }
    let Some(Value::Array(tdps)) = v.get("tdps") else {
        return Ok(());
    };
    for (i, tdp) in tdps.iter().enumerate() {
        let tp = format!("tdps[{i}]");
        unknown_key(tdp, TDP_KEYS, &tp)?;
        let Some(Value::Array(steps)) = tdp.get("steps") else {
            continue;
        };
        for (j, step) in steps.iter().enumerate() {
            let sp = format!("{tp}.steps[{j}]");
            unknown_key(step, STEP_KEYS, &sp)?;
            let Some(Value::Array(samples)) = step.get("samples") else {
                continue;
            };
            for (k, d) in samples.iter().enumerate() {
                unknown_key(d, DECISION_KEYS, &format!("{sp}.samples[{k}]"))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decision(action: &str, lps: Vec<f64>) -> Decision {
        Decision::new(action, format!("Act: {action}"), lps)
    }

    fn minimal_task() -> TaskRecord {
        TaskRecord {
            task_id: "t0".into(),
            instruction: "count files".into(),
            greedy_answer: None,
            correct: None,
            model_ref: "mock".into(),
            gen_config: GenConfig::default(),
            tdps: vec![TdpRecord {
                steps: vec![StepRecord {
                    samples: vec![decision("answer(220)", vec![-0.5, -0.25])],
                    chosen_index: 0,
                    observation: String::new(),
                }],
                final_answer: Some("220".into()),
                terminated: true,
                truncated: false,
            }],
        }
    }

    #[test]
    fn minimal_round_trip() {
        let t = minimal_task();
        let line = serialize_task(&t).unwrap();
        let s = String::from_utf8(line.clone()).unwrap();
        assert!(s.contains("\"chosen_index\":0"));
        assert!(!s.contains('\n'));
        assert_eq!(deserialize_task(&line, Strictness::Strict).unwrap(), t);
    }

    #[test]
    fn absent_greedy_answer_is_null() {
        let s = String::from_utf8(serialize_task(&minimal_task()).unwrap()).unwrap();
        assert!(s.contains("\"greedy_answer\":null"));
        assert!(s.contains("\"correct\":null"));
    }

    #[test]
    fn field_order_is_fixed() {
        let s = String::from_utf8(serialize_task(&minimal_task()).unwrap()).unwrap();
        let pos = |k: &str| s.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("task_id") < pos("instruction"));
        assert!(pos("model_ref") < pos("gen_config"));
        assert!(pos("gen_config") < pos("tdps"));
        assert!(pos("action_text") < pos("full_text"));
        assert!(pos("token_logprobs") < pos("seq_logprob"));
        assert!(pos("max_new_tokens") < pos("n"));
    }

    #[test]
    fn chosen_index_at_len_rejected() {
        let mut t = minimal_task();
        t.tdps[0].steps[0].chosen_index = 1;
        let line = serde_json::to_vec(&t).unwrap();
        match deserialize_task(&line, Strictness::Strict) {
            Err(Error::Validation { field, .. }) => {
                assert_eq!(field, "tdps[0].steps[0].chosen_index")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn perturbed_seq_logprob_rejected() {
        let mut t = minimal_task();
        t.tdps[0].steps[0].samples[0].seq_logprob += 1e-3;
        let line = serde_json::to_vec(&t).unwrap();
        let err = deserialize_task(&line, Strictness::Strict).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("seq_logprob"), "{msg}");
        assert!(msg.contains("1e-9"), "{msg}");
    }

    #[test]
    fn malformed_json_reports_offset() {
        let err = deserialize_task(b"{\"task_id\": oops}", Strictness::Strict).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_strict_vs_lenient() {
        let mut v = serde_json::to_value(minimal_task()).unwrap();
        v["tdps"][0]["steps"][0]["samples"][0]["extra"] = Value::from(1);
        let line = serde_json::to_vec(&v).unwrap();
        match deserialize_task(&line, Strictness::Strict) {
            Err(Error::Validation { field, .. }) => {
                assert_eq!(field, "tdps[0].steps[0].samples[0].extra")
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            deserialize_task(&line, Strictness::Lenient).unwrap(),
            minimal_task()
        );
    }

    #[test]
    fn positive_logprob_rejected() {
        let mut t = minimal_task();
        t.tdps[0].steps[0].samples[0] = decision("x", vec![0.1]);
        assert!(matches!(
            serialize_task(&t),
            Err(Error::Validation { field, .. }) if field.ends_with("token_logprobs[0]")
        ));
    }

    #[test]
    fn terminated_requires_answer() {
        let mut t = minimal_task();
        t.tdps[0].final_answer = None;
        assert!(serialize_task(&t).is_err());
        t.tdps[0].terminated = false;
        t.tdps[0].truncated = true;
        assert!(serialize_task(&t).is_ok());
        t.tdps[0].terminated = true;
        t.tdps[0].final_answer = Some("x".into());
        assert!(matches!(
            serialize_task(&t),
            Err(Error::Validation { field, .. }) if field == "tdps[0].truncated"
        ));
    }

    #[test]
    fn multiline_input_rejected() {
        let mut line = serialize_task(&minimal_task()).unwrap();
        line.push(b'\n');
        assert!(deserialize_task(&line, Strictness::Strict).is_ok());
        line.extend_from_slice(b"{}");
        assert!(matches!(
            deserialize_task(&line, Strictness::Strict),
            Err(Error::Parse { .. })
        ));
    }
}
