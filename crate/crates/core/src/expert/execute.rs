use super::cycle::{run_cycle, CycleRequest, Mode};
use super::{AtomicTask, ExpertContext, ExpertError, ExpertPortrait, FailureReason, TaskStatus};
use crate::device::Device;
use crate::memory::WorkingMemory;
use crate::toolsmith::ActionTrajectory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReason>,
    pub trajectory: ActionTrajectory,
    pub steps_used: usize,
    /// Model calls made for this task.
    pub gateway_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_used: Option<String>,
    /// One line for the team pool.
    pub summary: String,
}

impl TaskOutcome {
    pub fn succeeded(&self) -> bool {
        self.status == TaskStatus::Done
    }
}

/// Carry out one atomic task with the Observe-Verify-Act cycle. Entries
/// fetched from teammates are placed in working memory first.
pub fn execute_atomic(
    expert: &ExpertPortrait,
    task: &AtomicTask,
    device: &mut dyn Device,
    ctx: &ExpertContext,
    wm: &mut WorkingMemory,
    team_context: &[String],
) -> Result<TaskOutcome, ExpertError> {
    if task.description.trim().is_empty() {
        return Err(ExpertError::InvalidTask(format!("{} has no description", task.task_id)));
    }
    if task.max_steps == 0 {
        return Err(ExpertError::InvalidTask(format!("{} allows no steps", task.task_id)));
    }
    ctx.gateway.open_run(&ctx.run);
    let calls_before = ctx.calls();
    for entry in team_context {
        wm.write("team", entry);
    }
    wm.write("task", &task.description);
    let req = CycleRequest {
        expert,
        goal: &task.description,
        done: task.done.as_ref(),
        max_steps: task.max_steps.min(ctx.config.max_steps),
        trajectory_id: format!("{}#{}", task.task_id, task.attempt),
        mode: Mode::Execute,
        explore_budget: None,
    };
    let report = run_cycle(&req, device, ctx, wm)?;
    let status = if report.success { TaskStatus::Done } else { TaskStatus::Failed };
    let summary = match (&report.failure, report.screens.last()) {
        (None, Some(screen)) => format!("{}: done, ended on {screen}", task.description),
        (None, None) => format!("{}: done", task.description),
        (Some(f), _) => format!("{}: failed ({f:?}) after {} steps", task.description, report.steps_used),
    };
    wm.write("result", &summary);
    if let Err(e) = ctx.archive.add(report.trajectory.clone()) {
        log::warn!("trajectory not journaled: {e}");
    }
    Ok(TaskOutcome {
        task_id: task.task_id.clone(),
        status,
        failure: report.failure,
        steps_used: report.steps_used,
        gateway_calls: ctx.calls().saturating_sub(calls_before),
        tool_used: report.tool_used,
        trajectory: report.trajectory,
        summary,
    })
}
