//! Decision environments and action parsing.
//!
//! Every environment maps the realized decision of a step to a
//! deterministic observation. Actions are parsed from the model's full
//! output text; anything unrecognized is [`ActionKind::Malformed`] and
//! yields [`INVALID_ACTION`] without ending the episode.

mod oracle;
mod replay;
mod stdio;
mod wiki;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use oracle::OracleEnv;
pub use replay::ReplayEnv;
pub use stdio::StdioAdapterEnv;
pub use wiki::{load_corpus, Corpus, WikiCorpusEnv};

pub const INVALID_ACTION: &str = "Invalid action format.";
pub const DEFAULT_OBSERVATION_BUDGET: usize = 2048;
pub const TRUNCATION_MARK: &str = "[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Search,
    Lookup,
    Finish,
    Bash,
    Answer,
    Malformed,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Search => "search",
            ActionKind::Lookup => "lookup",
            ActionKind::Finish => "finish",
            ActionKind::Bash => "bash",
            ActionKind::Answer => "answer",
            ActionKind::Malformed => "malformed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ActionKind::Finish | ActionKind::Answer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAction {
    pub kind: ActionKind,
    pub payload: String,
    /// `Finish` spelled as `Act: finish` rather than `Finish[...]`.
    #[serde(skip)]
    bare_finish: bool,
}

impl ParsedAction {
    pub fn new(kind: ActionKind, payload: impl Into<String>) -> Self {
        Self {
            kind,
            payload: payload.into(),
            bare_finish: false,
        }
    }

    /// Canonical short form, used as a decision's `action_text`.
    pub fn render(&self) -> String {
        match self.kind {
            ActionKind::Search => format!("Search[{}]", self.payload),
            ActionKind::Lookup => format!("Lookup[{}]", self.payload),
            ActionKind::Finish if self.bare_finish || self.payload.is_empty() => "finish".into(),
            ActionKind::Finish => format!("Finish[{}]", self.payload),
            ActionKind::Answer => format!("answer({})", self.payload),
            ActionKind::Bash => self.payload.clone(),
            ActionKind::Malformed => self.payload.trim().to_string(),
        }
    }
}

/// Finds the closing delimiter matching the opener just before `s`.
fn balanced(s: &str, open: char, close: char) -> Option<usize> {
    let mut depth = 0usize;
    for (i, c) in s.char_indices() {
        if c == open {
            depth += 1;
        } else if c == close {
            if depth == 0 {
                return Some(i);
            }
            depth -= 1;
        }
    }
    None
}

fn parse_act(text: &str, lower: &str) -> Option<ParsedAction> {
    let mut from = 0;
    while let Some(rel) = lower[from..].find("act:") {
        let at = from + rel;
        from = at + 4;
        if at > 0 && lower.as_bytes()[at - 1].is_ascii_alphanumeric() {
            continue;
        }
        let rest_lower = lower[from..].trim_start();
        let start = lower.len() - rest_lower.len();
        if rest_lower.starts_with("bash") {
            let after = &text[start + 4..];
            let open = after.find("```")?;
            let body_start = open + 3 + after[open + 3..].find('\n').map(|i| i + 1)?;
            let close = after[body_start..].find("```")?;
            let body = after[body_start..body_start + close].trim_end_matches('\n');
            return Some(ParsedAction::new(ActionKind::Bash, body));
        }
        if rest_lower.starts_with("answer(") {
            let inner = &text[start + 7..];
            let end = balanced(inner, '(', ')')?;
            return Some(ParsedAction::new(ActionKind::Answer, inner[..end].trim()));
        }
        if rest_lower.starts_with("finish") {
            let mut a = ParsedAction::new(ActionKind::Finish, "");
            a.bare_finish = true;
            return Some(a);
        }
    }
    None
}

fn parse_bracket(text: &str, lower: &str) -> Option<ParsedAction> {
    let mut best: Option<(usize, ActionKind, usize)> = None;
    for (kw, kind) in [
        ("search[", ActionKind::Search),
        ("lookup[", ActionKind::Lookup),
        ("finish[", ActionKind::Finish),
    ] {
        let mut from = 0;
        while let Some(rel) = lower[from..].find(kw) {
            let at = from + rel;
            from = at + kw.len();
            if at > 0 && lower.as_bytes()[at - 1].is_ascii_alphanumeric() {
                continue;
            }
            if best.is_none_or(|(b, _, _)| at < b) {
                best = Some((at, kind, kw.len()));
            }
            break;
        }
    }
    let (at, kind, len) = best?;
    let inner = &text[at + len..];
    let end = balanced(inner, '[', ']')?;
    Some(ParsedAction::new(kind, inner[..end].trim()))
}

/// Recognizes the OS-style `Act:` forms and the ReAct bracket forms,
/// case-insensitively on keywords. Unrecognized text is `Malformed`.
pub fn parse_action(full_text: &str) -> ParsedAction {
    // ASCII lowering keeps byte offsets aligned with `full_text`.
    let lower = full_text.to_ascii_lowercase();
    parse_act(full_text, &lower)
        .or_else(|| parse_bracket(full_text, &lower))
        .unwrap_or_else(|| ParsedAction::new(ActionKind::Malformed, full_text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvResponse {
    pub observation: String,
    #[serde(default)]
    pub terminated: bool,
    #[serde(default)]
    pub final_answer: Option<String>,
}

impl EnvResponse {
    pub fn observe(observation: impl Into<String>) -> Self {
        Self {
            observation: observation.into(),
            terminated: false,
            final_answer: None,
        }
    }

    pub fn finish(observation: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            observation: observation.into(),
            terminated: true,
            final_answer: Some(answer.into()),
        }
    }

    pub fn invalid() -> Self {
        Self::observe(INVALID_ACTION)
    }

    pub fn validate(&self) -> Result<()> {
        if self.final_answer.is_some() && !self.terminated {
            return Err(Error::validation("final_answer", "present on a non-terminal response"));
        }
        Ok(())
    }
}

pub trait Environment: Send {
    fn reset(&mut self, task_id: &str) -> Result<EnvResponse>;
    fn step(&mut self, action: &ParsedAction) -> Result<EnvResponse>;
}

/// Optional restriction of the task ids an environment accepts.
#[derive(Debug, Clone, Default)]
pub struct TaskFilter(Option<Arc<BTreeSet<String>>>);

impl TaskFilter {
    pub fn any() -> Self {
        Self(None)
    }

    pub fn only<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(Some(Arc::new(ids.into_iter().map(Into::into).collect())))
    }

    pub fn check(&self, task_id: &str) -> Result<()> {
        match &self.0 {
            Some(ids) if !ids.contains(task_id) => Err(Error::NotFound(format!("unknown task id {task_id:?}"))),
            _ => Ok(()),
        }
    }
}

/// Cuts `observation` to at most `budget` bytes on a char boundary and marks the cut.
pub fn truncate_observation(observation: &str, budget: usize) -> String {
    if observation.len() <= budget {
        return observation.to_string();
    }
    let mut end = budget;
    while !observation.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}{TRUNCATION_MARK}", &observation[..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> (ActionKind, String) {
        let a = parse_action(text);
        (a.kind, a.payload)
    }

    #[test]
    fn parse_examples() {
        assert_eq!(p("Think: done.\nAct: answer(220)"), (ActionKind::Answer, "220".into()));
        assert_eq!(p("Action 3: Search[High Plains]"), (ActionKind::Search, "High Plains".into()));
        assert_eq!(p("I am not sure."), (ActionKind::Malformed, "I am not sure.".into()));
    }

    #[test]
    fn parse_variants() {
        assert_eq!(p("Thought: x\nAction 2: lookup[eastern sector]"), (ActionKind::Lookup, "eastern sector".into()));
        assert_eq!(p("Action 5: Finish[1,800 to 7,000 ft]"), (ActionKind::Finish, "1,800 to 7,000 ft".into()));
        assert_eq!(p("FINISH[yes]"), (ActionKind::Finish, "yes".into()));
        assert_eq!(p("Think: all set.\nAct: finish"), (ActionKind::Finish, String::new()));
        assert_eq!(p("act: ANSWER(f(x) = 2)"), (ActionKind::Answer, "f(x) = 2".into()));
        assert_eq!(
            p("Think: count.\n\nAct: bash\n\n```bash\nls /etc | wc -l\n```"),
            (ActionKind::Bash, "ls /etc | wc -l".into())
        );
        assert_eq!(p("Research[x]").0, ActionKind::Malformed);
        assert_eq!(p("Act: bash with no block").0, ActionKind::Malformed);
        assert_eq!(p("Search[unclosed").0, ActionKind::Malformed);
        // earliest action wins
        assert_eq!(p("Lookup[a] then Search[b]"), (ActionKind::Lookup, "a".into()));
    }

    #[test]
    fn render_forms() {
        assert_eq!(parse_action("Action 1: Search[High Plains]").render(), "Search[High Plains]");
        assert_eq!(parse_action("Act: answer(220)").render(), "answer(220)");
        assert_eq!(parse_action("Act: finish").render(), "finish");
        assert_eq!(parse_action("  a0 \n").render(), "a0");
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_observation("short", 10), "short");
        assert_eq!(truncate_observation("abcdef", 3), "abc[truncated]");
        // multi-byte char is never split
        assert_eq!(truncate_observation("aé", 2), "a[truncated]");
    }

    #[test]
    fn response_invariant() {
        let bad = EnvResponse {
            observation: String::new(),
            terminated: false,
            final_answer: Some("x".into()),
        };
        assert!(bad.validate().is_err());
        assert!(EnvResponse::finish("", "x").validate().is_ok());
    }
}
