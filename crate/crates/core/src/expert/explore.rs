use super::cycle::{run_cycle, CycleReport, CycleRequest, Mode};
use super::{ExpertContext, ExpertError, ExpertPortrait, FailureReason, StepBudget};
use crate::device::{Device, Predicate};
use crate::gateway::{ModelRequest, RoleTag};
use crate::memory::{IconRecord, InsightCategory, InsightId, InsightRecord, WorkingMemory};
use crate::toolsmith::{
    detect_stable_elements, mine_workflow, validate_tool, ActionTrajectory, ToolError, WorkflowTool,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Default number of device actions one exploration may spend.
pub const DEFAULT_EXPLORATION_BUDGET: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub description: String,
    #[serde(default)]
    pub target_app: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done: Option<Predicate>,
}

/// What an exploration left behind in the shared memories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationOutcome {
    /// Tools that were validated and registered.
    pub tools: Vec<WorkflowTool>,
    /// Interface records created or updated.
    pub interface_records: Vec<IconRecord>,
    pub insights: Vec<InsightId>,
    pub trajectories: Vec<ActionTrajectory>,
    pub subtasks_completed: usize,
}

/// Ask the model to split a requirement into exploration subtasks.
pub fn decompose_requirement(
    expert: &ExpertPortrait,
    requirement: &str,
    ctx: &ExpertContext,
) -> Result<Vec<Subtask>, ExpertError> {
    let req = ModelRequest::new(ctx.run.clone(), RoleTag::Decompose)
        .key("expert", expert.role_name.as_str())
        .key("requirement", requirement)
        .context("responsibility", expert.responsibility.as_str())
        .context("apps", expert.app_affinity.join(", "));
    let resp = ctx.gateway.complete(&req)?;
    let items = match resp.payload() {
        Some(Value::Array(a)) => a,
        Some(Value::Object(mut o)) => match o.remove("subtasks") {
            Some(Value::Array(a)) => a,
            _ => Vec::new(),
        },
        _ => Vec::new(),
    };
    let subtasks: Vec<Subtask> = items
        .into_iter()
        .filter_map(|v| serde_json::from_value::<Subtask>(v).ok())
        .filter(|s| !s.description.trim().is_empty())
        .collect();
    if subtasks.is_empty() {
        return Err(ExpertError::EmptyDecomposition(requirement.to_string()));
    }
    Ok(subtasks)
}

/// Explore `requirement`: decompose it, attempt each subtask under one
/// shared action budget, then turn the results into interface records,
/// insights and validated tools. The device is put back to its starting
/// state after each subtask when the backend can restore snapshots.
pub fn explore(
    expert: &ExpertPortrait,
    requirement: &str,
    device: &mut dyn Device,
    ctx: &ExpertContext,
    budget: usize,
) -> Result<ExplorationOutcome, ExpertError> {
    ctx.gateway.open_run(&ctx.run);
    let subtasks = decompose_requirement(expert, requirement, ctx)?;
    let budget = StepBudget::new(budget);
    let start = device.snapshot();
    let mut out = ExplorationOutcome::default();
    let mut touched = Vec::new();
    let mut exhausted = false;

    for (i, sub) in subtasks.iter().enumerate() {
        let mut wm = WorkingMemory::new(expert.expert_id.clone(), ctx.config.wm_budget, ctx.clock.clone());
        let begin = device.snapshot();
        let req = CycleRequest {
            expert,
            goal: &sub.description,
            done: sub.done.as_ref(),
            max_steps: ctx.config.max_steps,
            trajectory_id: format!("explore-{}-{}", crate::text::slug(&sub.description), i + 1),
            mode: Mode::Explore,
            explore_budget: Some(&budget),
        };
        let report = run_cycle(&req, device, ctx, &mut wm)?;
        touched.extend(report.touched_icons.iter().cloned());
        record_insights(expert, sub, &report, &wm, ctx, &mut out)?;
        if let Err(e) = ctx.archive.add(report.trajectory.clone()) {
            log::warn!("trajectory not journaled: {e}");
        }
        if report.success {
            out.subtasks_completed += 1;
            if let Some(tool) = formulate_tool(&report.trajectory, begin.as_ref(), device, ctx)? {
                out.tools.push(tool);
            }
        }
        let failure = report.failure.clone();
        out.trajectories.push(report.trajectory);
        if let Some(s) = &start {
            device.restore(s)?;
        }
        if failure == Some(FailureReason::BudgetExhausted) {
            exhausted = true;
            break;
        }
    }

    touched.sort();
    touched.dedup();
    out.interface_records = touched.iter().filter_map(|k| ctx.icons.get(k)).collect();
    if exhausted {
        return Err(ExpertError::BudgetExhausted {
            partial: Box::new(out),
        });
    }
    Ok(out)
}

/// Mine, validate and register a tool from a successful exploration
/// trajectory. Validation replays from the subtask's starting state, so
/// only backends with snapshots get tools.
fn formulate_tool(
    traj: &ActionTrajectory,
    begin: Option<&crate::device::DeviceSnapshot>,
    device: &mut dyn Device,
    ctx: &ExpertContext,
) -> Result<Option<WorkflowTool>, ExpertError> {
    let Some(begin) = begin else {
        return Ok(None);
    };
    if traj.device_steps() == 0 {
        return Ok(None);
    }
    let history = ctx.archive.for_app(&traj.app_id);
    let stable = detect_stable_elements(&history);
    let live = (!ctx.gateway.is_scripted()).then_some((ctx.gateway.as_ref(), &ctx.run));
    let tool = match mine_workflow(traj, &stable, live) {
        Ok(t) => t,
        Err(ToolError::NotMinable(why)) => {
            log::info!("no tool from {}: {why}", traj.trajectory_id);
            return Ok(None);
        }
        Err(e) => return Err(e.into()),
    };
    let after = device.snapshot();
    device.restore(begin)?;
    let validated = validate_tool(&tool, device, None);
    if let Some(s) = &after {
        device.restore(s)?;
    }
    match validated {
        Ok(report) if report.passed => {
            let id = ctx.registry.register(tool, &report)?;
            Ok(ctx.registry.get(&id))
        }
        Ok(report) => {
            log::info!("tool {} failed validation: {}", report.tool_id, report.detail);
            Ok(None)
        }
        Err(e @ (ToolError::ReplayMismatch { .. } | ToolError::StepFailed { .. } | ToolError::PreconditionMismatch { .. })) => {
            log::info!("tool {} failed validation: {e}", tool.tool_id);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn record_insights(
    expert: &ExpertPortrait,
    sub: &Subtask,
    report: &CycleReport,
    wm: &WorkingMemory,
    ctx: &ExpertContext,
    out: &mut ExplorationOutcome,
) -> Result<(), ExpertError> {
    let mut add = |category, text: String| -> Result<(), ExpertError> {
        let id = ctx.insights.add(InsightRecord {
            category,
            expert_role: expert.role_name.clone(),
            task_context: sub.description.clone(),
            text,
            trajectory_ref: Some(report.trajectory.trajectory_id.clone()),
        })?;
        out.insights.push(id);
        Ok(())
    };
    let path = report.screens.join(" -> ");
    let failures: Vec<&str> = wm
        .entries()
        .iter()
        .filter(|e| e.tag == "failure")
        .map(|e| e.text.as_str())
        .collect();
    let notes = if failures.is_empty() {
        String::new()
    } else {
        format!("; {}", failures.join("; "))
    };
    match &report.failure {
        None => {
            add(
                InsightCategory::Efficiency,
                format!("{} takes {} actions: {path}", sub.description, report.steps_used),
            )?;
            if report.verify_failures > 0 {
                add(
                    InsightCategory::FailurePath,
                    format!(
                        "{} failed checks while trying to {}{notes}",
                        report.verify_failures, sub.description
                    ),
                )?;
            }
            if let Some(tool) = &report.tool_used {
                add(
                    InsightCategory::Performance,
                    format!("tool {tool} completes {} without model calls", sub.description),
                )?;
            }
        }
        Some(reason) => add(
            InsightCategory::FailurePath,
            format!(
                "{} not finished ({reason:?}) after {} actions, reached {path}{notes}",
                sub.description, report.steps_used
            ),
        )?,
    }
    Ok(())
}
