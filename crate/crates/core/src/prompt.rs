//! Chat messages and the named prompt templates.
//!
//! `os` is the AgentBench operating-system one-shot dialogue; `react-hotpotqa`
//! and `react-strategyqa` are the ReAct scratchpad prompts with their
//! few-shot demonstrations. Observations are truncated to a byte budget
//! before they enter a prompt.

use serde::{Deserialize, Serialize};

use crate::env::truncate_observation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self> {
        let m = Self {
            role,
            content: content.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.role != Role::System && self.content.is_empty() {
            return Err(Error::validation("content", "must be non-empty for user and assistant messages"));
        }
        Ok(())
    }

    fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

pub const OS_INTRO: &str = r#"You are an assistant that will act like a person, I'will play the role of linux(ubuntu) operating system. Your goal is to implement the operations required by me or answer to the question proposed by me. For each of your turn, you should first think what you should do, and then take exact one of the three actions: "bash", "finish" or "answer".

1. If you think you should execute some bash code, take bash action, and you should print like this:

Think: put your thought here.

Act: bash

```bash
# put your bash code here
```

2. If you think you have finished the task, take finish action, and you should print like this:

Think: put your thought here.

Act: finish

3. If you think you have got the answer to the question, take answer action, and you should print like this:

Think: put your thought here.

Act: answer(Your answer to the question should be put in this pair of parentheses)

If the output is too long, I will truncate it. The truncated output is not complete. You have to deal with the truncating problem by yourself. Attention, your bash code should not contain any input operation. Once again, you should take only exact one of the three actions in each turn.

Now, my problem is:

tell me how many files are in the directory "/etc"?"#;

/// Assistant/user turns of the one-shot demonstration after the intro.
pub const OS_DEMO: &[(&str, &str)] = &[
    (
        "Think: To count the files in /etc, I need to print all the files in it.\n\nAct: bash\n\n```bash\nls /etc\n```",
        "The output of the OS:\ncpi cron.hourly fuse.conf iproute2 lvm networkd-dispatcher protocols selinux tmpfiles.d [truncated because the output is too long]",
    ),
    (
        "Think: The output has been truncated because it is too long, so I need to count files by script directly.\n\nAct: bash\n\n```bash\nls -1 /etc | wc -l\n```",
        "The output of the OS:\n220",
    ),
];

pub const OS_DEMO_ANSWER: &str = "Think: Now I get the answer, it is 220.\n\nAct: answer(220)";
pub const OS_NEW_PROBLEM: &str = "Now, I will start a new problem in a new OS. My problem is: ";
pub const OS_OBSERVATION_PREFIX: &str = "The output of the OS:\n";

pub const REACT_INSTRUCTION: &str = "Solve a question answering task with interleaving Thought, Action, Observation steps. Thought can reason about the current situation, and Action can be three types:
    (1) Search[entity], which searches the exact entity on Wikipedia and returns the first paragraph if it exists. If not, it will return some similar entities to search.
    (2) Lookup[keyword], which returns the next sentence containing keyword in the current passage.
    (3) Finish[answer], which returns the answer and finishes the task.
    Here are some examples.
";

pub const HOTPOTQA_DEMO: &str = "Question: What is the elevation range for the area that the eastern sector of the Colorado orogeny extends into?
Thought 1: I need to search Colorado orogeny, find the area that the eastern sector of the Colorado orogeny extends into, then find the elevation range of the area.
Action 1: Search[Colorado progeny]
Observation 1: The Colorado orogeny was an episode of mountain building (an orogeny) in Colorado and surrounding areas.
Thought 2: It does not mention the eastern sector. So I need to look up eastern sector.
Action 2: Lookup[eastern sector]
Observation 2: (Result 1 / 1) The eastern sector extends into the High Plains and is called the Central Plains progeny.
Thought 3: The eastern sector of Colorado orogeny extends into the High Plains. So I need to search High Plains and find its elevation range.
Action 3: Search[High Plains]
Observation 3: High Plains refers to one of two distinct land regions:
Thought 4: I need to instead search High Plains (United States).
Action 4: Search[High Plains (United States)]
Observation 4: The High Plains are a subregion of the Great Plains. From east to west, the High Plains rise in elevation from around 1,800 to 7,000 ft (550 to 2,130 m).[3]
Thought 5: High Plains rise in elevation from around 1,800 to 7,000 ft, the answer is 1,800 to 7,000 ft.
Action 5: Finish[1,800 to 7,000 ft]
";

pub const STRATEGYQA_DEMO: &str = "Question: Is Mixed martial arts totally original from Roman Colosseum games?
Thought 1: Mixed martial arts (MMA) does have some similarities to the ancient Roman games held in the Colosseum, where gladiators would fight to the death as a form of entertainment. However, there are also distinct differences between the two, such as rules, regulations, and cultural contexts.
Action 1: Search[Roman Colosseum games]
Observation 1: The Roman Colosseum, also known as the Flavian Amphitheater, was a huge arena used for gladiatorial contests, animal hunts, executions, re-enactments of famous battles, and dramas. The events held at the Colosseum were brutal displays of power and entertainment for the ancient Romans.
Thought 2: I need to further check mixed martial arts.
Action 2: Lookup[Mixed martial arts]
Observation 2: Mixed martial arts is a full-contact combat sport that allows a wide variety of fighting techniques and skills from a mixture of other combat sports to be used in competition. It involves striking and grappling techniques, both standing and on the ground.
Thought 3: While both the Roman Colosseum games and modern mixed martial arts involve combat sports, MMA is a regulated sport with rules and safety measures that were not present in the ancient gladiatorial contests. The styles of fighting and the purposes of the two are different, with MMA focusing more on competitive sportsmanship rather than the spectacle of bloodshed and death seen in the Roman games.
Action 3: Finish[No]
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TemplateId {
    #[default]
    #[serde(rename = "os")]
    Os,
    #[serde(rename = "react-hotpotqa")]
    ReactHotpotQa,
    #[serde(rename = "react-strategyqa")]
    ReactStrategyQa,
}

impl TemplateId {
    pub fn name(self) -> &'static str {
        match self {
            TemplateId::Os => "os",
            TemplateId::ReactHotpotQa => "react-hotpotqa",
            TemplateId::ReactStrategyQa => "react-strategyqa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TemplateId::Os, TemplateId::ReactHotpotQa, TemplateId::ReactStrategyQa]
            .into_iter()
            .find(|t| t.name() == s)
    }
}

/// One realized step: the chosen output text and the environment's reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub output: String,
    pub observation: String,
}

/// Builds the message list for the next decision given the episode so far.
pub fn build_messages(
    template: TemplateId,
    instruction: &str,
    initial_observation: &str,
    turns: &[Turn],
    observation_budget: usize,
) -> Vec<ChatMessage> {
    match template {
        TemplateId::Os => os_messages(instruction, initial_observation, turns, observation_budget),
        TemplateId::ReactHotpotQa => react_messages(HOTPOTQA_DEMO, instruction, turns, observation_budget),
        TemplateId::ReactStrategyQa => react_messages(STRATEGYQA_DEMO, instruction, turns, observation_budget),
    }
}

fn os_messages(instruction: &str, initial: &str, turns: &[Turn], budget: usize) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::user(OS_INTRO)];
    for (a, u) in OS_DEMO {
        out.push(ChatMessage::assistant(*a));
        out.push(ChatMessage::user(*u));
    }
    out.push(ChatMessage::assistant(OS_DEMO_ANSWER));
    let mut problem = format!("{OS_NEW_PROBLEM}{instruction}");
    if !initial.is_empty() {
        problem.push_str("\n\n");
        problem.push_str(&truncate_observation(initial, budget));
    }
    out.push(ChatMessage::user(problem));
    for turn in turns {
        out.push(ChatMessage::assistant(non_empty(&turn.output)));
        let obs = truncate_observation(&turn.observation, budget);
        out.push(ChatMessage::user(if obs.is_empty() {
            "The output of the OS is empty.".to_string()
        } else {
            format!("{OS_OBSERVATION_PREFIX}{obs}")
        }));
    }
    out
}

fn non_empty(s: &str) -> &str {
    if s.is_empty() {
        " "
    } else {
        s
    }
}

fn react_messages(demo: &str, question: &str, turns: &[Turn], budget: usize) -> Vec<ChatMessage> {
    let mut text = format!("{REACT_INSTRUCTION}{demo}\nQuestion: {question}\n");
    for (i, turn) in turns.iter().enumerate() {
        let k = i + 1;
        text.push_str(turn.output.trim_end());
        text.push('\n');
        text.push_str(&format!(
            "Observation {k}: {}\n",
            truncate_observation(&turn.observation, budget)
        ));
    }
    text.push_str(&format!("Thought {}:", turns.len() + 1));
    vec![ChatMessage::user(text)]
}
