//! Metric tables, sampling-number sweeps and IU/EU step-fraction charts.
//!
//! Sweeps sub-sample recorded tasks by truncation: the first `Z` TDPs and
//! the first `N` samples of every step. CSV numbers carry 6 significant
//! digits; identical inputs always give identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_task, AggregationMode, BaselineMethod, DEFAULT_SIM_THRESHOLD};
use crate::error::{Error, Result};
use crate::estimators::{iu_eu_fractions, uprop_score, AnswerFilter, StepFraction, UpropConfig};
use crate::metrics::{auarc, auroc, success_rate, LabeledScore};
use crate::model::{StepRecord, TaskRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodId {
    Uprop,
    Baseline(BaselineMethod, AggregationMode),
}

impl MethodId {
    pub fn name(self) -> String {
        match self {
            MethodId::Uprop => "uprop".into(),
            MethodId::Baseline(m, a) => format!("{}_{}", m.name(), a.name()),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "uprop" {
            return Some(MethodId::Uprop);
        }
        let (m, a) = s.rsplit_once('_')?;
        Some(MethodId::Baseline(BaselineMethod::parse(m)?, AggregationMode::parse(a)?))
    }
}

/// Estimator settings shared by every method in a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub uprop: UpropConfig,
    pub filter: AnswerFilter,
    pub sim_threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            uprop: UpropConfig::default(),
            filter: AnswerFilter::default(),
            sim_threshold: DEFAULT_SIM_THRESHOLD,
        }
    }
}

pub fn score_task(task: &TaskRecord, method: MethodId, cfg: &ScoringConfig) -> Result<f64> {
    match method {
        MethodId::Uprop => Ok(uprop_score(task, cfg.filter, &cfg.uprop)?.score),
        MethodId::Baseline(m, a) => baseline_task(task, m, a, cfg.sim_threshold),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Auarc,
    SuccessRate,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auroc, Metric::Auarc, Metric::SuccessRate];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::Auarc => "auarc",
            Metric::SuccessRate => "success_rate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn compute(self, items: &[LabeledScore]) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(items),
            Metric::Auarc => auarc(items),
            Metric::SuccessRate => success_rate(items),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Z,
    N,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Z => "z",
            SweepAxis::N => "n",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSpec {
    pub methods: Vec<MethodId>,
    pub metrics: Vec<Metric>,
    pub sweep: Option<Sweep>,
    pub scoring: ScoringConfig,
}

impl ReportSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.metrics.is_empty() {
            return Err(Error::Param("a report needs at least one method and one metric".into()));
        }
        if let Some(s) = &self.sweep {
            if s.grid.is_empty() || s.grid.contains(&0) {
                return Err(Error::Param("sweep grid must be non-empty and positive".into()));
            }
        }
        Ok(())
    }
}

/// Formats like C's `%.6g`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-4..6).contains(&exp) {
        trim(format!("{x:.*}", (5 - exp) as usize))
    } else {
        format!("{}e{}{:02}", trim(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// The first `n` samples of a step. A chosen sample beyond them takes the last slot.
fn truncate_step(step: &StepRecord, n: usize) -> StepRecord {
    if step.samples.len() <= n {
        return step.clone();
    }
    let (samples, chosen_index) = if step.chosen_index < n {
        (step.samples[..n].to_vec(), step.chosen_index)
    } else {
        let mut s = step.samples[..n - 1].to_vec();
        s.push(step.samples[step.chosen_index].clone());
        (s, n - 1)
    };
    StepRecord {
        samples,
        chosen_index,
        observation: step.observation.clone(),
    }
}

/// Keeps the first `z` TDPs and the first `n` samples per step.
pub fn truncate_task(task: &TaskRecord, z: Option<usize>, n: Option<usize>) -> TaskRecord {
    let mut out = task.clone();
    if let Some(z) = z {
        out.tdps.truncate(z);
        out.gen_config.z = out.tdps.len() as u32;
    }
    if let Some(n) = n {
        for tdp in &mut out.tdps {
            for step in &mut tdp.steps {
                *step = truncate_step(step, n);
            }
        }
        out.gen_config.n = out.gen_config.n.min(n as u32);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: MethodId,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub metrics_csv: String,
    pub sweep_csv: Option<String>,
    pub fractions_csv: String,
    pub fractions_svg: String,
    pub warnings: Vec<String>,
}

/// Method scores paired with labels; unlabeled tasks are dropped.
pub fn labeled_scores(tasks: &[TaskRecord], method: MethodId, cfg: &ScoringConfig) -> Result<Vec<LabeledScore>> {
    let mut out = Vec::with_capacity(tasks.len());
    for t in tasks {
        if let Some(c) = t.correct {
            let u = score_task(t, method, cfg).map_err(|e| Error::Input(format!("task {}: {e}", t.task_id)))?;
            out.push(LabeledScore::new(u, c));
        }
    }
    Ok(out)
}

pub fn metric_rows(tasks: &[TaskRecord], spec: &ReportSpec, warnings: &mut Vec<String>) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(spec.methods.len());
    let unlabeled = tasks.iter().filter(|t| t.correct.is_none()).count();
    if unlabeled > 0 {
        warnings.push(format!("{unlabeled} task(s) without correctness labels excluded"));
    }
    for &method in &spec.methods {
        let items = labeled_scores(tasks, method, &spec.scoring)?;
        let mut values = Vec::with_capacity(spec.metrics.len());
        for &metric in &spec.metrics {
            match metric.compute(&items) {
                Ok(v) => values.push(Some(v)),
                Err(e @ (Error::UndefinedMetric(_) | Error::Input(_))) => {
                    warnings.push(format!("{} {} skipped: {e}", method.name(), metric.name()));
                    values.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        rows.push(MetricRow { method, values });
    }
    Ok(rows)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Rows = methods, columns = metrics; skipped metrics are empty cells and
/// each warning becomes a trailing `warning,<message>` row.
pub fn metrics_csv(rows: &[MetricRow], metrics: &[Metric], warnings: &[String]) -> Result<String> {
    let mut w = csv_writer();
    let mut header = vec!["method".to_string()];
    header.extend(metrics.iter().map(|m| m.name().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.method.name()];
        rec.extend(r.values.iter().map(|v| v.map(fmt_sig6).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    for msg in warnings {
        let mut rec = vec!["warning".to_string(), msg.clone()];
        rec.resize(header.len().max(2), String::new());
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}

fn sweep_csv(tasks: &[TaskRecord], spec: &ReportSpec, sweep: &Sweep, warnings: &mut Vec<String>) -> Result<String> {
    let mut w = csv_writer();
    let mut header = vec![sweep.axis.name().to_string(), "method".to_string()];
    header.extend(spec.metrics.iter().map(|m| m.name().to_string()));
    w.write_record(&header).map_err(csv_err)?;
    for &g in &sweep.grid {
        let sub: Vec<TaskRecord> = tasks
            .iter()
            .map(|t| match sweep.axis {
                SweepAxis::Z => truncate_task(t, Some(g), None),
                SweepAxis::N => truncate_task(t, None, Some(g)),
            })
            .collect();
        let mut local = Vec::new();
        let rows = metric_rows(&sub, spec, &mut local)?;
        warnings.extend(local.into_iter().map(|m| format!("{}={g}: {m}", sweep.axis.name())));
        for r in rows {
            let mut rec = vec![g.to_string(), r.method.name()];
            rec.extend(r.values.iter().map(|v| v.map(fmt_sig6).unwrap_or_default()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn step_fractions(tasks: &[TaskRecord], cfg: &UpropConfig) -> Result<Vec<StepFraction>> {
    let mut all = Vec::new();
    for t in tasks {
        for tdp in &t.tdps {
            all.push(crate::estimators::score_tdp(tdp, cfg)?);
        }
    }
    Ok(iu_eu_fractions(&all))
}

pub fn fractions_csv(fractions: &[StepFraction]) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["step", "iu_fraction", "eu_fraction", "count"]).map_err(csv_err)?;
    for f in fractions {
        w.write_record([
            f.step.to_string(),
            fmt_sig6(f.iu_fraction),
            fmt_sig6(f.eu_fraction),
            f.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Standalone SVG 1.1 line chart of the IU and EU fraction per step.
pub fn fractions_svg(fractions: &[StepFraction]) -> String {
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;
    let steps = fractions.len().max(1);
    let x = |i: usize| {
        if steps == 1 {
            MARGIN + plot_w / 2.0
        } else {
            MARGIN + plot_w * i as f64 / (steps - 1) as f64
        }
    };
    let y = |v: f64| MARGIN + plot_h * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"  <rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"  <line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"  <line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let ty = y(tick);
        let _ = writeln!(
            s,
            r#"  <text x="{}" y="{}" font-size="11" text-anchor="end">{tick}</text>"#,
            x0 - 6.0,
            ty + 4.0
        );
    }
    for (i, f) in fractions.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"  <text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
            x(i),
            y1 + 16.0,
            f.step
        );
    }
    let _ = writeln!(
        s,
        r#"  <text x="{}" y="{}" font-size="12" text-anchor="middle">step</text>"#,
        W / 2.0,
        H - 12.0
    );
    for (name, color, pick) in [
        ("IU fraction", "#1f77b4", (|f: &StepFraction| f.iu_fraction) as fn(&StepFraction) -> f64),
        ("EU fraction", "#d62728", |f: &StepFraction| f.eu_fraction),
    ] {
        let points: Vec<String> = fractions
            .iter()
            .enumerate()
            .map(|(i, f)| format!("{:.2},{:.2}", x(i), y(pick(f))))
            .collect();
        let _ = writeln!(
            s,
            r#"  <polyline data-series="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
    }
    let _ = writeln!(s, r##"  <text x="{}" y="{}" font-size="12" fill="#1f77b4">IU fraction</text>"##, x1 - 90.0, y0 - 20.0);
    let _ = writeln!(s, r##"  <text x="{}" y="{}" font-size="12" fill="#d62728">EU fraction</text>"##, x1 - 90.0, y0 - 6.0);
    s.push_str("</svg>\n");
    s
}

pub fn build_report(tasks: &[TaskRecord], spec: &ReportSpec) -> Result<ReportBundle> {
    spec.validate()?;
    let mut warnings = Vec::new();
    let rows = metric_rows(tasks, spec, &mut warnings)?;
    let sweep_csv = match &spec.sweep {
        Some(s) => Some(sweep_csv(tasks, spec, s, &mut warnings)?),
        None => None,
    };
    let metrics_csv = metrics_csv(&rows, &spec.metrics, &warnings)?;
    let fractions = step_fractions(tasks, &spec.scoring.uprop)?;
    Ok(ReportBundle {
        metrics_csv,
        sweep_csv,
        fractions_csv: fractions_csv(&fractions)?,
        fractions_svg: fractions_svg(&fractions),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Decision, GenConfig, TdpRecord};

    #[test]
    fn sig6() {
        assert_eq!(fmt_sig6(0.75), "0.75");
        assert_eq!(fmt_sig6(1.0), "1");
        assert_eq!(fmt_sig6(2.0 / 3.0), "0.666667");
        assert_eq!(fmt_sig6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig6(0.0000123456789), "1.23457e-05");
        assert_eq!(fmt_sig6(-12.5), "-12.5");
        assert_eq!(fmt_sig6(999999.5), "1e+06");
    }

    #[test]
    fn method_names() {
        for m in ["uprop", "pe_avg", "se_rms", "sentsar_avg"] {
            assert_eq!(MethodId::parse(m).unwrap().name(), m);
        }
        assert!(MethodId::parse("pe").is_none());
    }

    fn step(actions: &[&str], lp: f64, chosen: usize) -> StepRecord {
        StepRecord {
            samples: actions.iter().map(|a| Decision::new(*a, *a, vec![lp])).collect(),
            chosen_index: chosen,
            observation: String::new(),
        }
    }

    fn task(id: &str, lp: f64, correct: Option<bool>) -> TaskRecord {
        let tdp = TdpRecord {
            steps: vec![step(&["a", "b", "a"], lp, 0), step(&["x", "y", "z"], lp, 2)],
            final_answer: Some("z".into()),
            terminated: true,
            truncated: false,
        };
        TaskRecord {
            task_id: id.into(),
            instruction: String::new(),
            greedy_answer: Some("z".into()),
            correct,
            model_ref: "m".into(),
            gen_config: GenConfig { n: 3, z: 2, ..Default::default() },
            tdps: vec![tdp.clone(), tdp],
        }
    }

    #[test]
    fn truncation_keeps_chosen() {
        let s = step(&["a", "b", "c"], -1.0, 2);
        let t = truncate_step(&s, 2);
        assert_eq!(t.samples.len(), 2);
        assert_eq!(t.chosen_index, 1);
        assert_eq!(t.chosen().action_text, "c");
        let t = truncate_step(&step(&["a", "b", "c"], -1.0, 0), 2);
        assert_eq!((t.chosen_index, t.samples[1].action_text.as_str()), (0, "b"));
        let full = task("t", -1.0, Some(true));
        assert_eq!(truncate_task(&full, Some(10), Some(10)), full);
        assert_eq!(truncate_task(&full, Some(1), None).tdps.len(), 1);
    }

    #[test]
    fn two_methods_one_metric() {
        let tasks = vec![task("a", -0.5, Some(true)), task("b", -2.0, Some(false))];
        let spec = ReportSpec {
            methods: vec![MethodId::Uprop, MethodId::Baseline(BaselineMethod::Pe, AggregationMode::Avg)],
            metrics: vec![Metric::Auroc],
            sweep: Some(Sweep {
                axis: SweepAxis::Z,
                grid: vec![1, 2],
            }),
            scoring: ScoringConfig::default(),
        };
        let b = build_report(&tasks, &spec).unwrap();
        assert_eq!(b.metrics_csv, "method,auroc\nuprop,1\npe_avg,1\n");
        let sweep = b.sweep_csv.unwrap();
        let lines: Vec<&str> = sweep.lines().collect();
        assert_eq!(lines[0], "z,method,auroc");
        assert_eq!(lines.len(), 5);
        // full-size sweep point reproduces the plain table
        assert_eq!(lines[3], "2,uprop,1");
        assert!(b.fractions_svg.contains("<svg"));
        assert_eq!(build_report(&tasks, &spec).unwrap().metrics_csv, b.metrics_csv);
    }

    #[test]
    fn missing_labels_warn() {
        let tasks = vec![task("a", -0.5, Some(true)), task("b", -2.0, None)];
        let spec = ReportSpec {
            methods: vec![MethodId::Uprop],
            metrics: vec![Metric::Auroc, Metric::SuccessRate],
            sweep: None,
            scoring: ScoringConfig::default(),
        };
        let b = build_report(&tasks, &spec).unwrap();
        let lines: Vec<&str> = b.metrics_csv.lines().collect();
        assert_eq!(lines[1], "uprop,,1");
        assert!(lines.iter().any(|l| l.starts_with("warning,uprop auroc skipped")));
        assert_eq!(b.warnings.len(), 2);
    }

    #[test]
    fn eu_growth_shows_in_chart() {
        // each step more spread than the last, so per-step EU keeps growing
        let tdp = TdpRecord {
            steps: vec![
                step(&["aaaa", "aaab", "aaaa", "aaaa"], -1.0, 0),
                step(&["bbbb", "cccc", "dddd", "eeee"], -1.0, 0),
                step(&["x", "x", "x", "x"], -1.0, 0),
            ],
            final_answer: Some("x".into()),
            terminated: true,
            truncated: false,
        };
        let mut t = task("a", -1.0, Some(true));
        t.tdps = vec![tdp];
        let f = step_fractions(&[t], &UpropConfig::default()).unwrap();
        assert!(f.windows(2).all(|w| w[1].eu_fraction > w[0].eu_fraction), "{f:?}");
        let svg = fractions_svg(&f);
        let line = svg.lines().find(|l| l.contains(r#"data-series="EU fraction""#)).unwrap();
        let pts: Vec<f64> = line
            .split("points=\"")
            .nth(1)
            .unwrap()
            .trim_end_matches("\"/>")
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        // larger fractions plot higher, i.e. smaller y
        assert!(pts.windows(2).all(|w| w[1] < w[0]), "{pts:?}");
    }
}
