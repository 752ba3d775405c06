use super::{ActionTrajectory, Outcome, StabilityReport, ToolError};
use crate::device::{Op, Role, Signature};
use crate::gateway::{Gateway, ModelRequest, RoleTag, RunId};
use crate::text::slug;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Literal(Value),
    Formal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalParam {
    pub name: String,
    pub description: String,
    /// Value seen in the source trajectory; used as the validation sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
}

/// Element a Tap or Swipe is aimed at, resolved against the live screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_key: Option<String>,
    pub element_ref: String,
    pub role: Role,
    /// Recorded centre, used when the element has no stable key.
    pub point: [i32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramStep {
    pub op: Op,
    pub bindings: BTreeMap<String, Binding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTool {
    pub tool_id: String,
    pub app_id: String,
    pub summary: String,
    pub initial_signature: Signature,
    pub final_signature: Signature,
    pub formal_params: Vec<FormalParam>,
    pub program: Vec<ProgramStep>,
    /// Source trajectory id.
    pub provenance: String,
}

impl WorkflowTool {
    /// Structural checks: non-empty program, basic operations only, every
    /// formal binding declared, bindings matching each operation's schema.
    pub fn check(&self) -> Result<(), String> {
        if self.program.is_empty() {
            return Err("empty program".into());
        }
        let declared: BTreeSet<&str> = self.formal_params.iter().map(|p| p.name.as_str()).collect();
        for (i, step) in self.program.iter().enumerate() {
            let schema = step.op.schema();
            if step.bindings.len() != schema.len()
                || !schema.iter().all(|k| step.bindings.contains_key(*k))
            {
                return Err(format!("step {} bindings do not match {}", i + 1, step.op));
            }
            for b in step.bindings.values() {
                if let Binding::Formal(name) = b {
                    if !declared.contains(name.as_str()) {
                        return Err(format!("step {} uses undeclared parameter '{name}'", i + 1));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn literals(&self) -> impl Iterator<Item = &Value> {
        self.program.iter().flat_map(|s| {
            s.bindings.values().filter_map(|b| match b {
                Binding::Literal(v) => Some(v),
                Binding::Formal(_) => None,
            })
        })
    }
}

fn param_name(step: &super::ActionStep, fallback: usize) -> String {
    let raw = step
        .target
        .as_ref()
        .and_then(|e| e.stable_key.clone())
        .map(|k| k.rsplit(['/', ':']).next().unwrap_or(&k).to_string());
    match raw {
        Some(n) if !n.is_empty() => n,
        _ => format!("text_{fallback}"),
    }
}

/// Formulate a workflow tool from a successful trajectory.
///
/// Think, Read and Stop are dropped. A Tap on an element that `stable` does
/// not list is tolerated only when it was inert (no screen change, not a text
/// field); otherwise the trajectory is not minable. Text typed from task
/// inputs becomes a formal parameter.
pub fn mine_workflow(
    traj: &ActionTrajectory,
    stable: &StabilityReport,
    summarizer: Option<(&dyn Gateway, &RunId)>,
) -> Result<WorkflowTool, ToolError> {
    if traj.outcome != Outcome::Success {
        return Err(ToolError::NotMinable(format!(
            "trajectory {} did not succeed",
            traj.trajectory_id
        )));
    }
    let (Some(initial), Some(final_sig)) = (traj.initial_signature(), traj.final_signature()) else {
        return Err(ToolError::NotMinable("empty trajectory".into()));
    };
    let inputs: BTreeSet<&str> = traj.task_inputs().into_iter().collect();
    let mut params: Vec<FormalParam> = Vec::new();
    let mut by_value: BTreeMap<String, String> = BTreeMap::new();
    let mut program = Vec::new();

    for step in &traj.steps {
        if !step.op.is_device_affecting() {
            continue;
        }
        let mut bindings: BTreeMap<String, Binding> = step
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Binding::Literal(v.clone())))
            .collect();
        let mut anchor = None;
        match step.op {
            Op::Tap | Op::Swipe => {
                if let Some(target) = &step.target {
                    let element_ref = target.element_ref();
                    if stable.is_stable(&step.app_id, &step.pre_screen, &element_ref) {
                        let (cx, cy) = target.bounds.center();
                        anchor = Some(Anchor {
                            stable_key: target.stable_key.clone(),
                            element_ref,
                            role: target.role,
                            point: [cx, cy],
                        });
                    } else if step.op == Op::Tap {
                        let inert = step.result.effect == crate::device::Effect::ScreenUnchanged
                            && target.role != Role::TextField;
                        if inert {
                            continue;
                        }
                        return Err(ToolError::NotMinable(format!(
                            "step {} taps unstable element '{element_ref}'",
                            step.index
                        )));
                    }
                }
            }
            Op::Text => {
                let content = step.text_content().unwrap_or_default().to_string();
                if step.task_input || inputs.contains(content.as_str()) {
                    let name = match by_value.get(&content) {
                        Some(n) => n.clone(),
                        None => {
                            let mut name = param_name(step, params.len());
                            let mut n = 2;
                            while params.iter().any(|p| p.name == name) {
                                name = format!("{}_{n}", param_name(step, params.len()));
                                n += 1;
                            }
                            params.push(FormalParam {
                                name: name.clone(),
                                description: format!("text entered on {}", step.pre_screen.replace('_', " ")),
                                example: Some(content.clone()),
                            });
                            by_value.insert(content.clone(), name.clone());
                            name
                        }
                    };
                    bindings.insert("content".into(), Binding::Formal(name));
                }
            }
            _ => {}
        }
        program.push(ProgramStep {
            op: step.op,
            bindings,
            anchor,
            goal: step.goal.clone(),
        });
    }
    if program.is_empty() {
        return Err(ToolError::NotMinable("no device-affecting steps".into()));
    }

    let summary = match summarizer.filter(|(g, _)| !g.is_scripted()) {
        Some((gateway, run)) => {
            let steps = program
                .iter()
                .map(|s| format!("{} {}", s.op, s.goal))
                .collect::<Vec<_>>()
                .join("\n");
            let req = ModelRequest::new(run.clone(), RoleTag::WriteTool)
                .key("app", traj.app_id.as_str())
                .key("task", traj.task.as_str())
                .context("steps", steps);
            match gateway.complete(&req) {
                Ok(resp) if !resp.text.trim().is_empty() => resp.text.trim().to_string(),
                Ok(_) => goal_summary(traj),
                Err(e) => {
                    log::warn!("tool summary via model failed, using step goals: {e}");
                    goal_summary(traj)
                }
            }
        }
        None => goal_summary(traj),
    };

    let tool = WorkflowTool {
        tool_id: slug(&strip_quoted(&traj.task)),
        app_id: traj.app_id.clone(),
        summary,
        initial_signature: initial.clone(),
        final_signature: final_sig.clone(),
        formal_params: params,
        program,
        provenance: traj.trajectory_id.clone(),
    };
    tool.check().map_err(ToolError::NotMinable)?;
    Ok(tool)
}

fn goal_summary(traj: &ActionTrajectory) -> String {
    let mut seen = BTreeSet::new();
    let mut parts = vec![strip_quoted(&traj.task)];
    seen.insert(parts[0].clone());
    for s in &traj.steps {
        let g = s.goal.trim();
        if !g.is_empty() && seen.insert(g.to_string()) {
            parts.push(g.to_string());
        }
    }
    parts.retain(|p| !p.is_empty());
    parts.join("; ")
}

/// Remove quoted task inputs so summaries and ids describe the procedure
/// rather than one instance of it.
pub(crate) fn strip_quoted(text: &str) -> String {
    let mut out = text.to_string();
    for q in crate::text::quoted_inputs(text) {
        for wrapped in [format!("'{q}'"), format!("\"{q}\"")] {
            out = out.replace(&wrapped, "");
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}
