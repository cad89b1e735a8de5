use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use uprop_client::{LlmBackend, LlmClient};
use uprop_core::baselines::{AggregationMode, BaselineMethod};
use uprop_core::estimators::{AnswerFilter, EpsilonPolicy, IntrinsicMode, PmiMode, UpropConfig};
use uprop_core::metrics::LabeledScore;
use uprop_core::model::{read_tasks, write_tasks, Strictness};
use uprop_core::oracle::{convergence_experiment, ProcessTable};
use uprop_core::orchestrator::{run_plan, DecisionBackend, OracleBackend};
use uprop_core::reporting::{
    build_report, metrics_csv, score_task, Metric, MetricRow, MethodId, ReportSpec, ScoringConfig, Sweep, SweepAxis,
};
use uprop_core::sampling::Selection;
use uprop_core::TaskRecord;

use crate::fsio::{read_text, write_atomic};
use crate::plan::{BackendSpec, EnvSpec, RunPlan};
use crate::{
    Command, EvalArgs, IuModeArg, PmiModeArg, ReportArgs, RunArgs, ScoreArgs, ScoringArgs, SimulateArgs, SweepArg,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    }
}

fn pmi_mode(m: PmiModeArg) -> PmiMode {
    match m {
        PmiModeArg::Faithful => PmiMode::Faithful,
        PmiModeArg::Calibrated => PmiMode::Calibrated,
    }
}

fn scoring_config(a: &ScoringArgs) -> Result<ScoringConfig> {
    if !(0.0..=1.0).contains(&a.match_threshold) {
        bail!("--match-threshold must be in [0, 1], got {}", a.match_threshold);
    }
    if !(0.0..=1.0).contains(&a.sim_threshold) {
        bail!("--sim-threshold must be in [0, 1], got {}", a.sim_threshold);
    }
    Ok(ScoringConfig {
        uprop: UpropConfig {
            intrinsic: match a.iu_mode {
                IuModeArg::Pe => IntrinsicMode::Pe,
                IuModeArg::LnPe => IntrinsicMode::LnPe,
            },
            pmi: pmi_mode(a.pmi_mode),
            eps: EpsilonPolicy::default(),
        },
        filter: if a.no_answer_filter {
            AnswerFilter::Disabled
        } else {
            AnswerFilter::Threshold(a.match_threshold)
        },
        sim_threshold: a.sim_threshold,
    })
}

fn load_tasks(path: &Path, lenient: bool) -> Result<Vec<TaskRecord>> {
    let text = read_text(path)?;
    let strictness = if lenient { Strictness::Lenient } else { Strictness::Strict };
    let tasks = read_tasks(&text, strictness).with_context(|| format!("invalid trajectories {}", path.display()))?;
    if tasks.is_empty() {
        bail!("{} contains no tasks", path.display());
    }
    Ok(tasks)
}

/// Expands `--method` and `--agg` into method ids; `pe` with `avg,rms`
/// becomes `pe_avg,pe_rms`, and full ids like `pe_rms` pass through.
fn parse_methods(methods: &[String], aggs: &[String]) -> Result<Vec<MethodId>> {
    let aggs = aggs
        .iter()
        .map(|a| AggregationMode::parse(a.trim()).with_context(|| format!("unknown aggregation `{a}` (avg, rms)")))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<MethodId> = Vec::new();
    let mut push = |m: MethodId| {
        if !out.contains(&m) {
            out.push(m);
        }
    };
    for raw in methods {
        let m = raw.trim();
        if let Some(base) = BaselineMethod::parse(m) {
            for &a in &aggs {
                push(MethodId::Baseline(base, a));
            }
        } else if let Some(id) = MethodId::parse(m) {
            push(id);
        } else {
            let known: Vec<_> = BaselineMethod::ALL.iter().map(|b| b.name()).collect();
            bail!("unknown method `{m}` (uprop, {})", known.join(", "));
        }
    }
    if out.is_empty() {
        bail!("no methods selected");
    }
    Ok(out)
}

fn parse_metrics(names: &[String]) -> Result<Vec<Metric>> {
    names
        .iter()
        .map(|n| Metric::parse(n.trim()).with_context(|| format!("unknown metric `{n}` (auroc, auarc, success_rate)")))
        .collect()
}

#[derive(Serialize)]
struct RunMeta<'a> {
    selection: Selection,
    model_ref: &'a str,
    seed: u64,
    tasks: usize,
}

fn run(a: RunArgs) -> Result<()> {
    let (plan, base) = RunPlan::load(&a.plan)?;
    let mut settings = plan.settings();
    if a.weighted {
        settings.selection = Selection::Weighted;
    }
    if let Some(c) = a.concurrency {
        settings.concurrency = c;
    }
    if let Some(s) = a.seed {
        settings.gen.seed = s;
    }
    if settings.concurrency == 0 {
        bail!("concurrency must be positive");
    }
    let needs_tables = matches!(plan.env, EnvSpec::Oracle) || matches!(plan.backend, BackendSpec::OracleTable);
    let tables = if needs_tables { Some(plan.oracle_tables(&base)?) } else { None };
    let envs = plan.env_factory(&base, tables.as_ref())?;
    let backend: Box<dyn DecisionBackend> = match &plan.backend {
        BackendSpec::OracleTable => {
            let t = tables.as_ref().context("oracle-table backend requires the `oracle` section")?;
            Box::new(OracleBackend::new(t.default.clone(), t.per_task.clone()))
        }
        BackendSpec::LlmClient { client } => Box::new(LlmBackend::new(LlmClient::from_env(client.clone())?)),
    };
    let records = run_plan(&settings, backend.as_ref(), &envs, &plan.tasks)?;
    let body = write_tasks(&records)?;
    let meta = RunMeta {
        selection: settings.selection,
        model_ref: &settings.model_ref,
        seed: settings.gen.seed,
        tasks: records.len(),
    };
    let mut meta_json = serde_json::to_vec_pretty(&meta)?;
    meta_json.push(b'\n');
    let mut meta_path = a.out.clone().into_os_string();
    meta_path.push(".meta.json");
    write_atomic(&a.out, &body)?;
    write_atomic(Path::new(&meta_path), &meta_json)?;
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))
}

fn score(a: ScoreArgs) -> Result<()> {
    let cfg = scoring_config(&a.scoring)?;
    let methods = parse_methods(&a.method, &a.agg)?;
    let tasks = load_tasks(&a.input, a.scoring.lenient)?;
    let mut w = csv_writer();
    let mut header = vec!["task_id".to_string(), "correct".to_string()];
    header.extend(methods.iter().map(|m| m.name()));
    w.write_record(&header)?;
    for t in &tasks {
        let mut rec = vec![
            t.task_id.clone(),
            t.correct.map(|c| c.to_string()).unwrap_or_default(),
        ];
        for &m in &methods {
            let s = score_task(t, m, &cfg).with_context(|| format!("task {}: {}", t.task_id, m.name()))?;
            rec.push(s.to_string());
        }
        w.write_record(&rec)?;
    }
    write_atomic(&a.out, &csv_bytes(w)?)
}

struct ScoresFile {
    methods: Vec<MethodId>,
    /// Per method, the labeled rows.
    columns: Vec<Vec<LabeledScore>>,
    unlabeled: usize,
}

fn read_scores(path: &Path) -> Result<ScoresFile> {
    let text = read_text(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().with_context(|| format!("invalid scores {}", path.display()))?.clone();
    if header.len() < 3 || &header[0] != "task_id" || &header[1] != "correct" {
        bail!("{}: header must be task_id,correct,<method>...", path.display());
    }
    let methods = header
        .iter()
        .skip(2)
        .map(|h| MethodId::parse(h).with_context(|| format!("{}: unknown method column `{h}`", path.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec![Vec::new(); methods.len()];
    let mut unlabeled = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("{} line {line}", path.display()))?;
        let correct = match rec.get(1).unwrap_or("") {
            "" => {
                unlabeled += 1;
                continue;
            }
            "true" | "1" => true,
            "false" | "0" => false,
            other => bail!("{} line {line}: correct must be true/false, got `{other}`", path.display()),
        };
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = rec.get(j + 2).unwrap_or("");
            let u: f64 = cell
                .parse()
                .with_context(|| format!("{} line {line}: bad score `{cell}`", path.display()))?;
            col.push(LabeledScore::new(u, correct));
        }
    }
    Ok(ScoresFile {
        methods,
        columns,
        unlabeled,
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let scores = read_scores(&a.scores)?;
    let mut warnings = Vec::new();
    if scores.unlabeled > 0 {
        warnings.push(format!("{} task(s) without correctness labels excluded", scores.unlabeled));
    }
    let mut rows = Vec::new();
    for (&method, items) in scores.methods.iter().zip(&scores.columns) {
        let mut values = Vec::new();
        for &m in &metrics {
            match m.compute(items) {
                Ok(v) => values.push(Some(v)),
                Err(e) => {
                    warnings.push(format!("{} {} skipped: {e}", method.name(), m.name()));
                    values.push(None);
                }
            }
        }
        rows.push(MetricRow { method, values });
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&a.out, metrics_csv(&rows, &metrics, &warnings)?.as_bytes())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.n < 2 {
        bail!("--n must be at least 2");
    }
    if a.z_grid.is_empty() || a.z_grid.contains(&0) {
        bail!("--z-grid values must be positive");
    }
    let text = read_text(&a.table)?;
    let table = ProcessTable::from_json(&text).with_context(|| format!("invalid table {}", a.table.display()))?;
    let cfg = UpropConfig {
        pmi: pmi_mode(a.pmi_mode),
        ..UpropConfig::default()
    };
    let rep = convergence_experiment(&table, &a.z_grid, a.n, a.seed, &cfg)?;
    let mut w = csv_writer();
    w.write_record(["z", "path", "mean", "std_err", "rel_error", "h_exact", "marginal_sum"])?;
    for r in &rep.rows {
        w.write_record([
            r.z.to_string(),
            r.path.name().to_string(),
            r.mean.to_string(),
            r.std_err.to_string(),
            r.rel_error.to_string(),
            rep.exact_entropy.to_string(),
            rep.marginal_entropy_sum.to_string(),
        ])?;
    }
    write_atomic(&a.out, &csv_bytes(w)?)
}

fn report(a: ReportArgs) -> Result<()> {
    let scoring = scoring_config(&a.scoring)?;
    let metrics = parse_metrics(&a.metrics)?;
    let methods = match (&a.method, &a.scores) {
        (Some(m), _) => parse_methods(m, &a.agg)?,
        (None, Some(p)) => read_scores(p)?.methods,
        (None, None) => vec![MethodId::Uprop],
    };
    let tasks = load_tasks(&a.input, a.scoring.lenient)?;
    let sweep = match a.sweep {
        None => None,
        Some(axis) => {
            let axis = match axis {
                SweepArg::Z => SweepAxis::Z,
                SweepArg::N => SweepAxis::N,
            };
            let grid = match &a.grid {
                Some(g) => g.clone(),
                None => {
                    let max = tasks
                        .iter()
                        .map(|t| match axis {
                            SweepAxis::Z => t.tdps.len(),
                            SweepAxis::N => t
                                .tdps
                                .iter()
                                .flat_map(|d| d.steps.iter().map(|s| s.samples.len()))
                                .max()
                                .unwrap_or(0),
                        })
                        .max()
                        .unwrap_or(0);
                    if max < 2 {
                        bail!("cannot sweep {}: recorded maximum is {max}", axis.name());
                    }
                    (2..=max).collect()
                }
            };
            Some(Sweep { axis, grid })
        }
    };
    let spec = ReportSpec {
        methods,
        metrics,
        sweep,
        scoring,
    };
    let bundle = build_report(&tasks, &spec)?;
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    write_atomic(&a.out.join("metrics.csv"), bundle.metrics_csv.as_bytes())?;
    if let (Some(s), Some(csv)) = (&spec.sweep, &bundle.sweep_csv) {
        write_atomic(&a.out.join(format!("sweep_{}.csv", s.axis.name())), csv.as_bytes())?;
    }
    write_atomic(&a.out.join("step_fractions.csv"), bundle.fractions_csv.as_bytes())?;
    write_atomic(&a.out.join("step_fractions.svg"), bundle.fractions_svg.as_bytes())?;
    Ok(())
}
