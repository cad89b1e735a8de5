use super::{EnvResponse, Environment, ParsedAction};
use crate::error::{Error, Result};
use crate::model::TdpRecord;

/// Replays recorded observations, checking that each action matches the record.
pub struct ReplayEnv {
    initial: String,
    steps: Vec<(String, EnvResponse)>,
    cursor: usize,
}

impl ReplayEnv {
    pub fn new(initial: impl Into<String>, steps: Vec<(String, EnvResponse)>) -> Self {
        Self {
            initial: initial.into(),
            steps,
            cursor: 0,
        }
    }

    /// Expected actions are the chosen decisions' `action_text`.
    pub fn from_tdp(initial: impl Into<String>, tdp: &TdpRecord) -> Self {
        let last = tdp.steps.len().saturating_sub(1);
        let steps = tdp
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let terminal = i == last && tdp.terminated;
                let resp = EnvResponse {
                    observation: s.observation.clone(),
                    terminated: terminal,
                    final_answer: if terminal { tdp.final_answer.clone() } else { None },
                };
                (s.chosen().action_text.clone(), resp)
            })
            .collect();
        Self::new(initial, steps)
    }
}

impl Environment for ReplayEnv {
    fn reset(&mut self, _task_id: &str) -> Result<EnvResponse> {
        self.cursor = 0;
        Ok(EnvResponse::observe(self.initial.clone()))
    }

    fn step(&mut self, action: &ParsedAction) -> Result<EnvResponse> {
        let step = self.cursor + 1;
        let Some((expected, resp)) = self.steps.get(self.cursor) else {
            return Err(Error::Replay {
                step,
                message: "no recorded step left".into(),
            });
        };
        let got = action.render();
        if got != *expected {
            return Err(Error::Replay {
                step,
                message: format!("recorded action {expected:?}, got {got:?}"),
            });
        }
        self.cursor += 1;
        Ok(resp.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::parse_action;

    #[test]
    fn replay_and_divergence() {
        let mut env = ReplayEnv::new(
            "",
            vec![
                ("Search[x]".into(), EnvResponse::observe("page x")),
                ("Finish[y]".into(), EnvResponse::finish("done", "y")),
            ],
        );
        env.reset("t").unwrap();
        assert_eq!(env.step(&parse_action("Action 1: Search[x]")).unwrap().observation, "page x");
        match env.step(&parse_action("Finish[z]")) {
            Err(Error::Replay { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
        assert!(env.step(&parse_action("Finish[y]")).unwrap().terminated);
        assert!(env.step(&parse_action("Finish[y]")).is_err());
    }
}
