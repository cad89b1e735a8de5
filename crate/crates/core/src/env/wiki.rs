use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::{ActionKind, EnvResponse, Environment, ParsedAction, TaskFilter};
use crate::error::{Error, Result};
use crate::textdist::decision_distance;

/// Entity title to ordered paragraphs.
pub type Corpus = BTreeMap<String, Vec<String>>;

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: e.column(),
        message: format!("{} line {}: {e}", path.display(), e.line()),
    })
}

const SIMILAR: usize = 5;

/// Local-corpus stand-in for the ReAct Wikipedia tool.
pub struct WikiCorpusEnv {
    corpus: Arc<Corpus>,
    tasks: TaskFilter,
    passage: Vec<String>,
    keyword: Option<String>,
    cursor: usize,
}

fn sentences(paragraphs: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for p in paragraphs {
        let mut start = 0;
        let bytes = p.as_bytes();
        for i in 0..bytes.len() {
            let end_of_sentence = matches!(bytes[i], b'.' | b'!' | b'?')
                && (i + 1 == bytes.len() || bytes[i + 1] == b' ');
            if end_of_sentence {
                let s = p[start..=i].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = i + 1;
            }
        }
        let tail = p[start..].trim();
        if !tail.is_empty() {
            out.push(tail.to_string());
        }
    }
    out
}

impl WikiCorpusEnv {
    pub fn new(corpus: Arc<Corpus>, tasks: TaskFilter) -> Self {
        Self {
            corpus,
            tasks,
            passage: Vec::new(),
            keyword: None,
            cursor: 0,
        }
    }

    fn search(&mut self, query: &str) -> EnvResponse {
        let hit = self
            .corpus
            .get_key_value(query)
            .or_else(|| self.corpus.iter().find(|(k, _)| k.to_lowercase() == query.to_lowercase()));
        self.keyword = None;
        self.cursor = 0;
        match hit {
            Some((_, paragraphs)) => {
                self.passage = sentences(paragraphs);
                EnvResponse::observe(paragraphs.first().cloned().unwrap_or_default())
            }
            None => {
                self.passage.clear();
                let mut ranked: Vec<(f64, &String)> =
                    self.corpus.keys().map(|k| (decision_distance(query, k), k)).collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
                let names: Vec<String> = ranked.iter().take(SIMILAR).map(|(_, k)| format!("'{k}'")).collect();
                EnvResponse::observe(format!("Could not find [{query}]. Similar: [{}].", names.join(", ")))
            }
        }
    }

    fn lookup(&mut self, keyword: &str) -> EnvResponse {
        let key = keyword.to_lowercase();
        if self.keyword.as_deref() != Some(key.as_str()) {
            self.keyword = Some(key.clone());
            self.cursor = 0;
        }
        let matches: Vec<&String> = self.passage.iter().filter(|s| s.to_lowercase().contains(&key)).collect();
        if self.cursor >= matches.len() {
            return EnvResponse::observe("No more results.");
        }
        self.cursor += 1;
        EnvResponse::observe(format!("(Result {} / {}) {}", self.cursor, matches.len(), matches[self.cursor - 1]))
    }
}

impl Environment for WikiCorpusEnv {
    fn reset(&mut self, task_id: &str) -> Result<EnvResponse> {
        self.tasks.check(task_id)?;
        self.passage.clear();
        self.keyword = None;
        self.cursor = 0;
        Ok(EnvResponse::observe(""))
    }

    fn step(&mut self, action: &ParsedAction) -> Result<EnvResponse> {
        Ok(match action.kind {
            ActionKind::Search => self.search(&action.payload),
            ActionKind::Lookup => self.lookup(&action.payload),
            ActionKind::Finish | ActionKind::Answer => EnvResponse::finish("Episode finished.", action.payload.clone()),
            ActionKind::Bash | ActionKind::Malformed => EnvResponse::invalid(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::parse_action;

    fn corpus() -> Arc<Corpus> {
        let mut c = Corpus::new();
        c.insert(
            "High Plains".into(),
            vec![
                "The High Plains are a subregion of the Great Plains. They rise in elevation.".into(),
                "From east to west, the High Plains rise from around 1,800 to 7,000 ft.".into(),
            ],
        );
        c.insert("High Plains (United States)".into(), vec!["A region.".into()]);
        c.insert("Colorado orogeny".into(), vec!["The Colorado orogeny was an episode of mountain building.".into()]);
        Arc::new(c)
    }

    #[test]
    fn search_hit_and_miss() {
        let mut env = WikiCorpusEnv::new(corpus(), TaskFilter::any());
        assert_eq!(env.reset("q").unwrap().observation, "");
        let r = env.step(&parse_action("Action 1: Search[High Plains]")).unwrap();
        assert!(r.observation.starts_with("The High Plains are a subregion"));
        assert!(!r.terminated);
        let r = env.step(&parse_action("Search[High Plain]")).unwrap();
        assert!(r.observation.starts_with("Could not find [High Plain]. Similar: ['High Plains',"), "{}", r.observation);
    }

    #[test]
    fn lookup_advances_then_exhausts() {
        let mut env = WikiCorpusEnv::new(corpus(), TaskFilter::any());
        env.reset("q").unwrap();
        env.step(&parse_action("Search[High Plains]")).unwrap();
        let a = env.step(&parse_action("Lookup[rise]")).unwrap().observation;
        assert_eq!(a, "(Result 1 / 2) They rise in elevation.");
        let b = env.step(&parse_action("Lookup[rise]")).unwrap().observation;
        assert!(b.starts_with("(Result 2 / 2) From east to west"));
        for _ in 0..3 {
            assert_eq!(env.step(&parse_action("Lookup[rise]")).unwrap().observation, "No more results.");
        }
    }

    #[test]
    fn terminal_and_invalid() {
        let mut env = WikiCorpusEnv::new(corpus(), TaskFilter::any());
        env.reset("q").unwrap();
        assert_eq!(env.step(&parse_action("ls -l")).unwrap(), EnvResponse::invalid());
        let r = env.step(&parse_action("Act: answer(220)")).unwrap();
        assert!(r.terminated);
        assert_eq!(r.final_answer.as_deref(), Some("220"));
    }
}
