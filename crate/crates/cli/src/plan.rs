//! Run plan file: tasks, environment, backend and sampling settings.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use uprop_client::ClientConfig;
use uprop_core::env::{load_corpus, Environment, OracleEnv, StdioAdapterEnv, TaskFilter, WikiCorpusEnv};
use uprop_core::oracle::ProcessTable;
use uprop_core::orchestrator::{AnswerMatcher, PlanTask, RunSettings};
use uprop_core::prompt::TemplateId;
use uprop_core::sampling::Selection;
use uprop_core::GenConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub table: PathBuf,
    #[serde(default)]
    pub task_tables: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    Oracle,
    Wiki {
        corpus: PathBuf,
    },
    Stdio {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    OracleTable,
    LlmClient { client: ClientConfig },
}

fn default_concurrency() -> usize {
    1
}

fn default_budget() -> usize {
    uprop_core::env::DEFAULT_OBSERVATION_BUDGET
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub tasks: Vec<PlanTask>,
    pub env: EnvSpec,
    pub backend: BackendSpec,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub gen_config: GenConfig,
    #[serde(default)]
    pub template: TemplateId,
    #[serde(default)]
    pub matcher: AnswerMatcher,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_budget")]
    pub observation_budget: usize,
    #[serde(default)]
    pub model_ref: Option<String>,
}

/// Builds a fresh environment per episode.
pub type EnvBuilder = Box<dyn Fn() -> uprop_core::Result<Box<dyn Environment>> + Sync>;

pub struct OracleTables {
    pub default: Arc<ProcessTable>,
    pub per_task: Arc<HashMap<String, Arc<ProcessTable>>>,
}

fn read_table(path: &Path) -> Result<ProcessTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read table {}", path.display()))?;
    ProcessTable::from_json(&text).with_context(|| format!("invalid table {}", path.display()))
}

impl RunPlan {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read plan {}", path.display()))?;
        let plan: RunPlan = serde_json::from_str(&text)
            .with_context(|| format!("invalid plan {}", path.display()))?;
        if plan.tasks.is_empty() {
            bail!("plan {} lists no tasks", path.display());
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((plan, base))
    }

    pub fn task_ids(&self) -> TaskFilter {
        TaskFilter::only(self.tasks.iter().map(|t| t.task_id.clone()))
    }

    pub fn settings(&self) -> RunSettings {
        let model_ref = self.model_ref.clone().unwrap_or_else(|| match &self.backend {
            BackendSpec::OracleTable => "oracle-table".into(),
            BackendSpec::LlmClient { client } => client.model_ref.clone(),
        });
        RunSettings {
            gen: self.gen_config.clone(),
            template: self.template,
            selection: self.selection,
            matcher: self.matcher,
            concurrency: self.concurrency,
            observation_budget: self.observation_budget,
            model_ref,
        }
    }

    pub fn oracle_tables(&self, base: &Path) -> Result<OracleTables> {
        let Some(section) = &self.oracle else {
            bail!("the oracle env and oracle-table backend need an `oracle` section with a table path");
        };
        let default = Arc::new(read_table(&base.join(&section.table))?);
        let mut per_task = HashMap::new();
        for (id, p) in &section.task_tables {
            per_task.insert(id.clone(), Arc::new(read_table(&base.join(p))?));
        }
        Ok(OracleTables {
            default,
            per_task: Arc::new(per_task),
        })
    }

    /// A constructor for fresh per-episode environments.
    pub fn env_factory(
        &self,
        base: &Path,
        tables: Option<&OracleTables>,
    ) -> Result<EnvBuilder> {
        let tasks = self.task_ids();
        Ok(match &self.env {
            EnvSpec::Oracle => {
                let t = tables.context("oracle env requires the `oracle` section")?;
                let (default, per_task) = (t.default.clone(), t.per_task.clone());
                Box::new(move || {
                    Ok(Box::new(OracleEnv::with_tasks(default.clone(), per_task.clone(), tasks.clone())) as Box<dyn Environment>)
                })
            }
            EnvSpec::Wiki { corpus } => {
                let path = base.join(corpus);
                let corpus = Arc::new(load_corpus(&path).with_context(|| format!("cannot load corpus {}", path.display()))?);
                Box::new(move || Ok(Box::new(WikiCorpusEnv::new(corpus.clone(), tasks.clone())) as Box<dyn Environment>))
            }
            EnvSpec::Stdio { program, args } => {
                let (program, args) = (program.clone(), args.clone());
                Box::new(move || Ok(Box::new(StdioAdapterEnv::spawn(&program, &args)?) as Box<dyn Environment>))
            }
        })
    }
}
