use std::collections::HashMap;
use std::sync::Arc;

use super::{ActionKind, EnvResponse, Environment, ParsedAction, TaskFilter};
use crate::error::{Error, Result};
use crate::oracle::{encode_history, ProcessTable};

/// Environment whose observation is the canonical encoding of the decision
/// history; terminates at the table horizon with the last action as answer.
///
/// A decision counts as a move when its text is an action of the current
/// step's alphabet. `answer(...)`/`Finish[...]` still terminate early.
pub struct OracleEnv {
    default_table: Arc<ProcessTable>,
    per_task: Arc<HashMap<String, Arc<ProcessTable>>>,
    tasks: TaskFilter,
    table: Arc<ProcessTable>,
    history: Vec<String>,
    done: bool,
}

impl OracleEnv {
    pub fn new(table: Arc<ProcessTable>) -> Self {
        Self::with_tasks(table, Arc::new(HashMap::new()), TaskFilter::any())
    }

    pub fn with_tasks(
        default_table: Arc<ProcessTable>,
        per_task: Arc<HashMap<String, Arc<ProcessTable>>>,
        tasks: TaskFilter,
    ) -> Self {
        Self {
            table: default_table.clone(),
            default_table,
            per_task,
            tasks,
            history: Vec::new(),
            done: true,
        }
    }

    pub fn table(&self) -> &ProcessTable {
        &self.table
    }
}

impl Environment for OracleEnv {
    fn reset(&mut self, task_id: &str) -> Result<EnvResponse> {
        self.tasks.check(task_id)?;
        self.table = self
            .per_task
            .get(task_id)
            .cloned()
            .unwrap_or_else(|| self.default_table.clone());
        self.history.clear();
        self.done = false;
        Ok(EnvResponse::observe(encode_history::<String>(&[])))
    }

    fn step(&mut self, action: &ParsedAction) -> Result<EnvResponse> {
        if self.done {
            return Err(Error::Input("step on a finished episode; reset first".into()));
        }
        if action.kind.is_terminal() {
            self.done = true;
            return Ok(EnvResponse::finish(encode_history(&self.history), action.payload.clone()));
        }
        let t = self.history.len();
        let symbol = action.payload.trim();
        let known = action.kind == ActionKind::Malformed && self.table.alphabets()[t].iter().any(|a| a == symbol);
        if !known {
            return Ok(EnvResponse::invalid());
        }
        self.history.push(symbol.to_string());
        let observation = encode_history(&self.history);
        if self.history.len() == self.table.horizon() {
            self.done = true;
            return Ok(EnvResponse::finish(observation, symbol));
        }
        Ok(EnvResponse::observe(observation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::parse_action;
    use crate::oracle::reference_table;

    #[test]
    fn horizon_terminates() {
        let mut env = OracleEnv::new(Arc::new(reference_table()));
        assert_eq!(env.reset("t").unwrap().observation, "step=1");
        let r = env.step(&parse_action("a")).unwrap();
        assert_eq!(r, EnvResponse::observe("step=2|a"));
        let r = env.step(&parse_action("d")).unwrap();
        assert!(r.terminated);
        assert_eq!(r.final_answer.as_deref(), Some("d"));
        assert!(env.step(&parse_action("c")).is_err());
    }

    #[test]
    fn invalid_and_answer() {
        let mut env = OracleEnv::new(Arc::new(reference_table()));
        env.reset("t").unwrap();
        assert_eq!(env.step(&parse_action("c")).unwrap().observation, crate::env::INVALID_ACTION);
        assert_eq!(env.step(&parse_action("Search[a]")).unwrap().observation, crate::env::INVALID_ACTION);
        let r = env.step(&parse_action("Act: answer(220)")).unwrap();
        assert_eq!(r.final_answer.as_deref(), Some("220"));
    }

    #[test]
    fn unknown_task() {
        let mut env = OracleEnv::with_tasks(Arc::new(reference_table()), Arc::default(), TaskFilter::only(["x"]));
        assert!(matches!(env.reset("y"), Err(Error::NotFound(_))));
        assert!(env.reset("x").is_ok());
    }
}
