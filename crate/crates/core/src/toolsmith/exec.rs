use super::{ActionTrajectory, Binding, Outcome, ProgramStep, ToolError, TrajectoryRecorder, WorkflowTool};
use crate::device::{Action, Device, DeviceError, ScreenState, Signature};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tool_id: String,
    pub passed: bool,
    pub steps_run: usize,
    /// 1-based program step at which replay diverged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    pub expected_final: Signature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual_final: Option<Signature>,
    pub detail: String,
}

/// Concrete action for a program step on the live screen. Anchored steps
/// take their coordinates from where the anchor element is now.
pub fn resolve_step(
    step: &ProgramStep,
    bindings: &BTreeMap<String, String>,
    screen: &ScreenState,
) -> Result<Action, String> {
    let mut params = Map::new();
    for (name, binding) in &step.bindings {
        let value = match binding {
            Binding::Literal(v) => v.clone(),
            Binding::Formal(p) => Value::String(
                bindings
                    .get(p)
                    .cloned()
                    .ok_or_else(|| format!("no value for parameter '{p}'"))?,
            ),
        };
        params.insert(name.clone(), value);
    }
    if let Some(anchor) = &step.anchor {
        let (x, y) = match &anchor.stable_key {
            Some(key) => screen
                .find_by_key(key)
                .map(|e| e.bounds.center())
                .ok_or_else(|| format!("element '{key}' not on screen {}", screen.display_name()))?,
            None => {
                let [x, y] = anchor.point;
                match screen.hit_test(x, y) {
                    Some(e) if e.element_ref() == anchor.element_ref => (x, y),
                    _ => {
                        return Err(format!(
                            "element '{}' not at ({x}, {y}) on screen {}",
                            anchor.element_ref,
                            screen.display_name()
                        ))
                    }
                }
            }
        };
        params.insert("x".into(), Value::from(x));
        params.insert("y".into(), Value::from(y));
    }
    Action::from_parts(step.op.as_str(), &params).map_err(|e| e.to_string())
}

/// Run a tool's program on `device`. No model is consulted: every action
/// comes from the program, the bindings and the live screen.
pub fn execute_tool<D: Device + ?Sized>(
    tool: &WorkflowTool,
    bindings: &BTreeMap<String, String>,
    device: &mut D,
) -> Result<ActionTrajectory, ToolError> {
    for p in &tool.formal_params {
        if !bindings.contains_key(&p.name) {
            return Err(ToolError::MissingBinding(p.name.clone()));
        }
    }
    let current = device.capture_screen()?;
    if current.screen_signature != tool.initial_signature {
        return Err(ToolError::PreconditionMismatch {
            expected: tool.initial_signature.clone(),
            actual: current.screen_signature,
        });
    }
    let traj = ActionTrajectory::new(format!("{}-exec", tool.tool_id), tool.app_id.clone(), tool.summary.clone());
    let mut rec = TrajectoryRecorder::start(traj, current);
    for (i, step) in tool.program.iter().enumerate() {
        let failed = |rec: TrajectoryRecorder, reason: String| ToolError::StepFailed {
            step: i + 1,
            reason,
            prefix: Box::new(rec.finish(Outcome::Aborted)),
        };
        let action = match resolve_step(step, bindings, rec.current()) {
            Ok(a) => a,
            Err(reason) => return Err(failed(rec, reason)),
        };
        let task_input = matches!(step.bindings.get("content"), Some(Binding::Formal(_)));
        match rec.perform(device, &action, &step.goal, task_input) {
            Ok(_) => {}
            Err(ToolError::Device(
                e @ (DeviceError::ActionRejected(_) | DeviceError::InvalidParams(_)),
            )) => return Err(failed(rec, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(rec.finish(Outcome::Success))
}

/// Replay `tool` with sample bindings (its recorded examples unless
/// `samples` overrides them) and check that it lands on its final screen.
/// The device is restored afterwards when the backend supports snapshots.
pub fn validate_tool<D: Device + ?Sized>(
    tool: &WorkflowTool,
    device: &mut D,
    samples: Option<&BTreeMap<String, String>>,
) -> Result<ValidationReport, ToolError> {
    tool.check().map_err(|m| ToolError::NotMinable(m))?;
    let bindings: BTreeMap<String, String> = tool
        .formal_params
        .iter()
        .map(|p| {
            let v = samples
                .and_then(|s| s.get(&p.name).cloned())
                .or_else(|| p.example.clone())
                .unwrap_or_else(|| format!("sample {}", p.name));
            (p.name.clone(), v)
        })
        .collect();
    let snapshot = device.snapshot();
    let run = execute_tool(tool, &bindings, device);
    if let Some(s) = &snapshot {
        device.restore(s)?;
    }
    let mut report = ValidationReport {
        tool_id: tool.tool_id.clone(),
        passed: false,
        steps_run: 0,
        diverged_at: None,
        expected_final: tool.final_signature.clone(),
        actual_final: None,
        detail: String::new(),
    };
    match run {
        Ok(traj) => {
            report.steps_run = traj.steps.len();
            report.actual_final = traj.final_signature().cloned();
            if report.actual_final.as_ref() == Some(&tool.final_signature) {
                report.passed = true;
                report.detail = "final screen matches".into();
                Ok(report)
            } else {
                let step = tool.program.len();
                report.diverged_at = Some(step);
                report.detail = format!(
                    "ended on {} instead of {}",
                    report.actual_final.as_ref().map(|s| s.0.as_str()).unwrap_or("?"),
                    tool.final_signature
                );
                Err(ToolError::ReplayMismatch {
                    step,
                    report: Box::new(report),
                })
            }
        }
        Err(ToolError::StepFailed { step, reason, prefix }) => {
            report.steps_run = prefix.steps.len();
            report.actual_final = prefix.final_state.map(|s| s.screen_signature);
            report.diverged_at = Some(step);
            report.detail = reason;
            Err(ToolError::ReplayMismatch {
                step,
                report: Box::new(report),
            })
        }
        Err(e) => Err(e),
    }
}
