use super::ToolError;
use crate::device::{
    Action, ActionResult, Device, Effect, Op, ScreenState, Signature, UiElement,
};
use crate::journal::{read_journal, Journal, JournalError};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub ok: bool,
    pub effect: Effect,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    pub index: usize,
    pub op: Op,
    pub params: Map<String, Value>,
    pub goal: String,
    pub result: StepResult,
    pub app_id: String,
    pub pre_signature: Signature,
    pub post_signature: Signature,
    /// Logical screen names (signatures when the backend has no names).
    pub pre_screen: String,
    pub post_screen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_element_ref: Option<String>,
    /// The targeted element as it was observed before the step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<UiElement>,
    /// Text content derived from the task's own inputs.
    #[serde(default)]
    pub task_input: bool,
    /// Elements of the pre-step screen, kept for stability detection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pre_elements: Vec<UiElement>,
}

impl ActionStep {
    /// Describe `action` taken on `pre` that produced `post`.
    pub fn observe(
        index: usize,
        action: &Action,
        goal: &str,
        pre: &ScreenState,
        post: &ScreenState,
        result: StepResult,
        task_input: bool,
    ) -> Self {
        let target = match action {
            Action::Tap { x, y } | Action::Swipe { x, y, .. } => pre.hit_test(*x, *y).cloned(),
            Action::Text { .. } => pre
                .focused
                .as_ref()
                .and_then(|f| pre.elements.iter().find(|e| &e.element_id == f))
                .cloned(),
            _ => None,
        };
        ActionStep {
            index,
            op: action.op(),
            params: action.params(),
            goal: goal.to_string(),
            result,
            app_id: pre.app_id.clone(),
            pre_signature: pre.screen_signature.clone(),
            post_signature: post.screen_signature.clone(),
            pre_screen: pre.display_name(),
            post_screen: post.display_name(),
            target_element_ref: target.as_ref().map(UiElement::element_ref),
            target,
            task_input,
            pre_elements: pre.elements.clone(),
        }
    }

    pub fn action(&self) -> Result<Action, ToolError> {
        Ok(Action::from_parts(self.op.as_str(), &self.params)?)
    }

    pub fn text_content(&self) -> Option<&str> {
        if self.op == Op::Text {
            self.params.get("content").and_then(Value::as_str)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTrajectory {
    pub trajectory_id: String,
    pub app_id: String,
    /// The (sub)task the trajectory was recorded for.
    pub task: String,
    pub steps: Vec<ActionStep>,
    pub outcome: Outcome,
    /// Screen after the last step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state: Option<ScreenState>,
}

impl ActionTrajectory {
    pub fn new(trajectory_id: impl Into<String>, app_id: impl Into<String>, task: impl Into<String>) -> Self {
        Self {
            trajectory_id: trajectory_id.into(),
            app_id: app_id.into(),
            task: task.into(),
            steps: Vec::new(),
            outcome: Outcome::Aborted,
            final_state: None,
        }
    }

    /// Append a step, enforcing contiguous indices and the signature chain.
    pub fn record_step(&mut self, mut step: ActionStep) -> Result<(), ToolError> {
        if let Some(last) = self.steps.last() {
            if last.post_signature != step.pre_signature {
                return Err(ToolError::ChainBreak {
                    index: self.steps.len(),
                    expected: last.post_signature.clone(),
                    actual: step.pre_signature,
                });
            }
        }
        step.index = self.steps.len();
        if step.op == Op::Stop && self.outcome == Outcome::Aborted {
            self.outcome = Outcome::Success;
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn finish(&mut self, outcome: Outcome, final_state: Option<ScreenState>) {
        self.outcome = outcome;
        if final_state.is_some() {
            self.final_state = final_state;
        }
    }

    pub fn initial_signature(&self) -> Option<&Signature> {
        self.steps.first().map(|s| &s.pre_signature)
    }

    pub fn final_signature(&self) -> Option<&Signature> {
        self.steps.last().map(|s| &s.post_signature)
    }

    /// Device-affecting steps, the ones step caps count.
    pub fn device_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.op.is_device_affecting()).count()
    }

    /// Strings the trajectory marked as task-specific input.
    pub fn task_inputs(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter(|s| s.task_input)
            .filter_map(ActionStep::text_content)
            .collect()
    }
}

/// Drives a device while recording every action into a trajectory.
#[derive(Debug)]
pub struct TrajectoryRecorder {
    pub trajectory: ActionTrajectory,
    current: ScreenState,
}

impl TrajectoryRecorder {
    pub fn start(trajectory: ActionTrajectory, current: ScreenState) -> Self {
        Self { trajectory, current }
    }

    pub fn current(&self) -> &ScreenState {
        &self.current
    }

    /// Replace the known screen with a fresh capture. The capture must show
    /// the same stable structure, or the chain would break.
    pub fn refresh(&mut self, state: ScreenState) {
        self.current = state;
    }

    pub fn perform<D: Device + ?Sized>(
        &mut self,
        device: &mut D,
        action: &Action,
        goal: &str,
        task_input: bool,
    ) -> Result<ActionResult, ToolError> {
        let result = device.perform(action)?;
        let step = ActionStep::observe(
            self.trajectory.steps.len(),
            action,
            goal,
            &self.current,
            &result.post_state,
            StepResult {
                ok: result.ok,
                effect: result.observed_effect,
                note: result.note.clone(),
            },
            task_input,
        );
        self.trajectory.record_step(step)?;
        self.current = result.post_state.clone();
        Ok(result)
    }

    /// Record an operation handled off-device (Think, Read).
    pub fn record_local(&mut self, action: &Action, goal: &str, note: &str) -> Result<(), ToolError> {
        let step = ActionStep::observe(
            self.trajectory.steps.len(),
            action,
            goal,
            &self.current,
            &self.current,
            StepResult {
                ok: true,
                effect: Effect::ScreenUnchanged,
                note: note.to_string(),
            },
            false,
        );
        self.trajectory.record_step(step)
    }

    /// Append the steps of another trajectory that continued from the
    /// current screen (e.g. a tool run) and adopt its final screen.
    pub fn absorb(&mut self, other: ActionTrajectory) -> Result<(), ToolError> {
        for step in other.steps {
            self.trajectory.record_step(step)?;
        }
        if let Some(state) = other.final_state {
            self.current = state;
        }
        Ok(())
    }

    pub fn finish(mut self, outcome: Outcome) -> ActionTrajectory {
        let state = self.current.clone();
        self.trajectory.finish(outcome, Some(state));
        self.trajectory
    }
}

/// Journal line: a trajectory is a start record, its steps, then an end
/// record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TrajectoryRecord {
    Start {
        trajectory_id: String,
        app_id: String,
        task: String,
    },
    Step(Box<ActionStep>),
    End {
        trajectory_id: String,
        outcome: Outcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        final_state: Option<Box<ScreenState>>,
    },
}

pub struct TrajectoryJournal {
    journal: Journal,
}

impl TrajectoryJournal {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        Ok(Self {
            journal: Journal::open(path)?,
        })
    }

    pub fn write(&self, traj: &ActionTrajectory) -> Result<(), JournalError> {
        self.journal.append(&TrajectoryRecord::Start {
            trajectory_id: traj.trajectory_id.clone(),
            app_id: traj.app_id.clone(),
            task: traj.task.clone(),
        })?;
        for step in &traj.steps {
            self.journal.append(&TrajectoryRecord::Step(Box::new(step.clone())))?;
        }
        self.journal.append(&TrajectoryRecord::End {
            trajectory_id: traj.trajectory_id.clone(),
            outcome: traj.outcome,
            final_state: traj.final_state.clone().map(Box::new),
        })
    }
}

/// Rebuild trajectories from a journal. A trajectory without an end record
/// is returned as aborted.
pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<ActionTrajectory>, ToolError> {
    let records: Vec<TrajectoryRecord> = read_journal(path)?;
    let mut out = Vec::new();
    let mut open: Option<ActionTrajectory> = None;
    for record in records {
        match record {
            TrajectoryRecord::Start {
                trajectory_id,
                app_id,
                task,
            } => {
                if let Some(t) = open.take() {
                    out.push(t);
                }
                open = Some(ActionTrajectory::new(trajectory_id, app_id, task));
            }
            TrajectoryRecord::Step(step) => {
                let traj = open.get_or_insert_with(|| ActionTrajectory::new("unnamed", step.app_id.clone(), ""));
                traj.record_step(*step)?;
            }
            TrajectoryRecord::End {
                outcome,
                final_state,
                ..
            } => {
                if let Some(mut t) = open.take() {
                    t.finish(outcome, final_state.map(|b| *b));
                    out.push(t);
                }
            }
        }
    }
    if let Some(t) = open {
        out.push(t);
    }
    Ok(out)
}
