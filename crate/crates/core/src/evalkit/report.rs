use super::metrics::{best_attempt, FULL_MARKS};
use super::{Complexity, EvalError, RunRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

/// Best attempt of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub complexity: Complexity,
    pub attempts: usize,
    pub best_attempt: u32,
    pub success: bool,
    pub process_score: f64,
    pub reasoning_steps: u64,
    pub complete_performance: Option<f64>,
}

/// Means over the tasks of one tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierMetrics {
    pub tasks: usize,
    pub su: f64,
    pub ps: f64,
    pub rs: f64,
    /// Mean over the tasks that were scored; `None` when none was.
    pub cp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskRow>,
    pub tiers: BTreeMap<Complexity, TierMetrics>,
}

/// Milestone ratio; a task without milestones counts its success check
/// as its only milestone.
fn ps_of(r: &RunRecord) -> f64 {
    if r.milestones_total == 0 {
        if r.success {
            1.0
        } else {
            0.0
        }
    } else {
        r.milestones_hit.min(r.milestones_total) as f64 / r.milestones_total as f64
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregate records (any number of attempts per task) into per-task
/// rows and per-tier means over each task's best attempt.
pub fn report(records: &[RunRecord]) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyTier("all".into()));
    }
    let mut by_task: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task_id.as_str()).or_default().push(r.clone());
    }
    let mut tasks = Vec::new();
    for (task_id, rs) in &by_task {
        let best = best_attempt(rs).expect("non-empty group");
        if rs.iter().any(|r| r.complexity != best.complexity) {
            return Err(EvalError::InvalidSpec {
                task_id: task_id.to_string(),
                reason: "records disagree on the tier".into(),
            });
        }
        tasks.push(TaskRow {
            task_id: task_id.to_string(),
            complexity: best.complexity,
            attempts: rs.len(),
            best_attempt: best.attempt,
            success: best.success,
            process_score: ps_of(best),
            reasoning_steps: best.gateway_calls,
            complete_performance: best.judge_score.map(|s| s.clamp(0.0, FULL_MARKS)),
        });
    }
    let mut tiers = BTreeMap::new();
    for tier in [Complexity::C1, Complexity::C2, Complexity::C3] {
        let rows: Vec<&TaskRow> = tasks.iter().filter(|t| t.complexity == tier).collect();
        if rows.is_empty() {
            continue;
        }
        tiers.insert(
            tier,
            TierMetrics {
                tasks: rows.len(),
                su: mean(rows.iter().map(|t| if t.success { 1.0 } else { 0.0 })).unwrap_or(0.0),
                ps: mean(rows.iter().map(|t| t.process_score)).unwrap_or(0.0),
                rs: mean(rows.iter().map(|t| t.reasoning_steps as f64)).unwrap_or(0.0),
                cp: mean(rows.iter().filter_map(|t| t.complete_performance)),
            },
        );
    }
    Ok(MetricsReport { tasks, tiers })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl MetricsReport {
    pub fn tier(&self, tier: Complexity) -> Result<&TierMetrics, EvalError> {
        self.tiers.get(&tier).ok_or_else(|| EvalError::EmptyTier(tier.to_string()))
    }

    /// Per-task rows followed by the tier summary, whose columns run
    /// SU, PS, RS, CP for each tier in turn.
    pub fn render_table(&self, system: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:<4} {:>3} {:>4} {:>7} {:>6} {:>4} {:>7}", "task", "tier", "try", "best", "success", "PS", "RS", "CP");
        for t in &self.tasks {
            let _ = writeln!(
                out,
                "{:<28} {:<4} {:>3} {:>4} {:>7} {:>6.4} {:>4} {:>7}",
                t.task_id,
                t.complexity,
                t.attempts,
                t.best_attempt,
                if t.success { "yes" } else { "no" },
                t.process_score,
                t.reasoning_steps,
                fmt_opt(t.complete_performance)
            );
        }
        out.push('\n');
        let mut header = format!("{:<16}", "system");
        let mut row = format!("{system:<16}");
        for (tier, m) in &self.tiers {
            for (name, v) in [("SU", Some(m.su)), ("PS", Some(m.ps)), ("RS", Some(m.rs)), ("CP", m.cp)] {
                let _ = write!(header, " {:>8}", format!("{tier} {name}"));
                let _ = write!(row, " {:>8}", fmt_opt(v));
            }
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{row}");
        out
    }

    /// One CSV row per task, then one per tier.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scope", "id", "tier", "count", "su", "ps", "rs", "cp"])?;
        for t in &self.tasks {
            w.write_record([
                "task".to_string(),
                t.task_id.clone(),
                t.complexity.to_string(),
                t.attempts.to_string(),
                if t.success { "1" } else { "0" }.to_string(),
                format!("{:.4}", t.process_score),
                t.reasoning_steps.to_string(),
                t.complete_performance.map(|v| format!("{v:.4}")).unwrap_or_default(),
            ])?;
        }
        for (tier, m) in &self.tiers {
            w.write_record([
                "tier".to_string(),
                tier.to_string(),
                tier.to_string(),
                m.tasks.to_string(),
                format!("{:.4}", m.su),
                format!("{:.4}", m.ps),
                format!("{:.4}", m.rs),
                m.cp.map(|v| format!("{v:.4}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
