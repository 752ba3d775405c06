use super::OrchestratorError;
use crate::device::Predicate;
use crate::expert::{AtomicTask, ExpertContext, ExpertPortrait, TaskStatus};
use crate::gateway::{ModelRequest, RoleTag};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Attempts an atomic task gets before its node fails.
pub const DEFAULT_ATOMIC_RETRY_LIMIT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustPolicy {
    /// Retry the failed task right away.
    Repeat,
    /// Run the next independent pending task first, then retry.
    Reorder,
}

/// Break a node description into atomic tasks for `expert`.
pub fn plan_expert(
    expert: &ExpertPortrait,
    node_id: &str,
    description: &str,
    ctx: &ExpertContext,
    max_steps: usize,
) -> Result<Vec<AtomicTask>, OrchestratorError> {
    let req = ModelRequest::new(ctx.run.clone(), RoleTag::PlanExpert)
        .key("expert", expert.role_name.as_str())
        .key("task", description)
        .context("responsibility", expert.responsibility.as_str());
    let resp = ctx.gateway.complete(&req)?;
    let items = match resp.payload() {
        Some(Value::Array(a)) => a,
        Some(Value::Object(mut o)) => match o.remove("tasks") {
            Some(Value::Array(a)) => a,
            _ => Vec::new(),
        },
        _ => Vec::new(),
    };
    let mut tasks = Vec::new();
    for item in items {
        let (desc, done, independent) = match &item {
            Value::String(s) => (s.clone(), None, false),
            Value::Object(o) => (
                o.get("description").and_then(Value::as_str).unwrap_or_default().to_string(),
                o.get("done")
                    .cloned()
                    .and_then(|d| serde_json::from_value::<Predicate>(d).ok()),
                o.get("independent").and_then(Value::as_bool).unwrap_or(false),
            ),
            _ => continue,
        };
        if desc.trim().is_empty() {
            continue;
        }
        let mut t = AtomicTask::new(format!("{node_id}.t{}", tasks.len() + 1), desc, node_id, max_steps);
        t.done = done;
        t.independent = independent;
        tasks.push(t);
    }
    if tasks.is_empty() {
        return Err(OrchestratorError::EmptyDecomposition(description.to_string()));
    }
    Ok(tasks)
}

/// New queue after `failed` did not complete. `pending` is what was still
/// queued behind it.
pub fn adjust_sequence(
    pending: &[AtomicTask],
    failed: &AtomicTask,
    policy: AdjustPolicy,
    retry_limit: u32,
) -> Result<Vec<AtomicTask>, OrchestratorError> {
    if failed.status != TaskStatus::Failed {
        return Err(OrchestratorError::InvalidPlan(format!(
            "task {} is {:?}, not failed",
            failed.task_id, failed.status
        )));
    }
    if failed.attempt >= retry_limit {
        return Err(OrchestratorError::RetryExhausted {
            task_id: failed.task_id.clone(),
            attempts: failed.attempt,
        });
    }
    let mut retry = failed.clone();
    retry.attempt += 1;
    retry.status = TaskStatus::Pending;
    let mut out = pending.to_vec();
    let at = match policy {
        AdjustPolicy::Reorder => out
            .iter()
            .position(|t| t.independent && t.status == TaskStatus::Pending)
            .map_or(0, |i| {
                let t = out.remove(i);
                out.insert(0, t);
                1
            }),
        AdjustPolicy::Repeat => 0,
    };
    out.insert(at, retry);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, independent: bool) -> AtomicTask {
        let mut t = AtomicTask::new(id, id, "n", 15);
        t.independent = independent;
        t
    }

    fn failed(id: &str, attempt: u32) -> AtomicTask {
        let mut t = task(id, false);
        t.status = TaskStatus::Failed;
        t.attempt = attempt;
        t
    }

    fn ids(ts: &[AtomicTask]) -> Vec<(String, u32)> {
        ts.iter().map(|t| (t.task_id.clone(), t.attempt)).collect()
    }

    #[test]
    fn repeat_reenqueues_with_next_attempt() {
        let q = adjust_sequence(&[task("b", false)], &failed("a", 1), AdjustPolicy::Repeat, 2).unwrap();
        assert_eq!(ids(&q), [("a".into(), 2), ("b".into(), 1)]);
        assert_eq!(q[0].status, TaskStatus::Pending);
    }

    #[test]
    fn exhausted_retries_fail() {
        assert!(matches!(
            adjust_sequence(&[], &failed("a", 2), AdjustPolicy::Repeat, 2),
            Err(OrchestratorError::RetryExhausted { attempts: 2, .. })
        ));
    }

    #[test]
    fn reorder_moves_first_independent_task_ahead() {
        let pending = [task("b", false), task("c", true), task("d", true)];
        let q = adjust_sequence(&pending, &failed("a", 1), AdjustPolicy::Reorder, 2).unwrap();
        assert_eq!(
            ids(&q),
            [("c".into(), 1), ("a".into(), 2), ("b".into(), 1), ("d".into(), 1)]
        );
        let q = adjust_sequence(&[task("b", false)], &failed("a", 1), AdjustPolicy::Reorder, 2).unwrap();
        assert_eq!(ids(&q)[0], ("a".into(), 2));
    }

    #[test]
    fn only_failed_tasks_are_adjusted() {
        assert!(adjust_sequence(&[], &task("a", false), AdjustPolicy::Repeat, 2).is_err());
    }
}
