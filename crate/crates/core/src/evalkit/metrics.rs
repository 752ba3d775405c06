use super::{Complexity, EvalError, RunRecord, TaskSpec};
use crate::gateway::{Gateway, ModelRequest, RoleTag, RunId};
use serde_json::Value;
use std::cmp::Ordering;

/// Complete-performance score of a finished C1 task.
pub const FULL_MARKS: f64 = 10.0;

/// Successes over tasks.
pub fn success_rate(records: &[RunRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyTier("(none)".into()));
    }
    let ok = records.iter().filter(|r| r.success).count();
    Ok(ok as f64 / records.len() as f64)
}

/// Fraction of the task's milestones reached.
pub fn process_score(record: &RunRecord, spec: &TaskSpec) -> Result<f64, EvalError> {
    if spec.milestones.is_empty() {
        return Err(EvalError::NoMilestones(spec.task_id.clone()));
    }
    Ok(record.milestones_hit.min(spec.milestones.len()) as f64 / spec.milestones.len() as f64)
}

pub fn reasoning_steps(record: &RunRecord) -> u64 {
    record.gateway_calls
}

pub fn mean_reasoning_steps(records: &[RunRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyTier("(none)".into()));
    }
    Ok(records.iter().map(|r| r.gateway_calls as f64).sum::<f64>() / records.len() as f64)
}

/// Ordering where the better attempt is greater: success, then more
/// milestones, then fewer model calls, then the earlier attempt.
fn rank(a: &RunRecord, b: &RunRecord) -> Ordering {
    a.success
        .cmp(&b.success)
        .then(a.milestones_hit.cmp(&b.milestones_hit))
        .then(b.gateway_calls.cmp(&a.gateway_calls))
        .then(b.attempt.cmp(&a.attempt))
}

pub fn best_attempt(records: &[RunRecord]) -> Option<&RunRecord> {
    records.iter().max_by(|a, b| rank(a, b))
}

/// Quality score out of ten. C1 tasks get full marks exactly when they
/// succeed; C2 and C3 are scored by the judge from the instruction and a
/// summary of what was done.
pub fn complete_performance(
    record: &RunRecord,
    spec: &TaskSpec,
    gateway: &dyn Gateway,
    trajectory_summary: &str,
) -> Result<f64, EvalError> {
    if spec.complexity == Complexity::C1 {
        return Ok(if record.success { FULL_MARKS } else { 0.0 });
    }
    let run = RunId::new(format!("{}#judge", spec.task_id));
    gateway.open_run(&run);
    let req = ModelRequest::new(run, RoleTag::Judge)
        .key("task", spec.rendered_instruction())
        .key("aspect", "complete")
        .context("trajectory", trajectory_summary)
        .context("outcome", if record.success { "finished" } else { "not finished" });
    let resp = gateway
        .complete(&req)
        .map_err(|e| EvalError::JudgeUnavailable(e.to_string()))?;
    let score = match resp.payload() {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::Object(o)) => o.get("score").and_then(Value::as_f64),
        _ => None,
    }
    .ok_or_else(|| EvalError::JudgeUnavailable(format!("no score in '{}'", resp.text)))?;
    if !(0.0..=FULL_MARKS).contains(&score) {
        return Err(EvalError::JudgeUnavailable(format!("score {score} outside 0..10")));
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(attempt: u32, success: bool, hit: usize, calls: u64) -> RunRecord {
        RunRecord {
            task_id: "t".into(),
            complexity: Complexity::C2,
            attempt,
            success,
            milestones_hit: hit,
            milestones_total: 4,
            gateway_calls: calls,
            device_steps: 0,
            trajectory: String::new(),
            judge_score: None,
            error: None,
        }
    }

    #[test]
    fn best_prefers_success_then_milestones_then_fewer_calls() {
        let rs = [rec(1, false, 4, 3), rec(2, true, 2, 9), rec(3, true, 2, 7)];
        assert_eq!(best_attempt(&rs).unwrap().attempt, 3);
        let rs = [rec(1, false, 1, 3), rec(2, false, 3, 9), rec(3, false, 2, 7)];
        assert_eq!(best_attempt(&rs).unwrap().attempt, 2);
        let rs = [rec(1, true, 2, 7), rec(2, true, 2, 7)];
        assert_eq!(best_attempt(&rs).unwrap().attempt, 1);
        assert!(best_attempt(&[]).is_none());
    }

    #[test]
    fn reasoning_steps_mean() {
        let rs = [rec(1, true, 0, 5), rec(1, true, 0, 6), rec(1, true, 0, 7)];
        assert_eq!(reasoning_steps(&rs[2]), 7);
        assert_eq!(mean_reasoning_steps(&rs).unwrap(), 6.0);
        assert!(matches!(mean_reasoning_steps(&[]), Err(EvalError::EmptyTier(_))));
    }
}
