//! Trajectory recording and workflow-tool formulation: stable-element
//! detection, mining, replay validation, model-free execution and the shared
//! tool registry.

mod exec;
mod mine;
mod registry;
mod stability;
mod trajectory;

pub use exec::{execute_tool, resolve_step, validate_tool, ValidationReport};
pub use mine::{mine_workflow, Anchor, Binding, FormalParam, ProgramStep, WorkflowTool};
pub use registry::{ToolMatch, ToolRegistry, TOOL_MATCH_THRESHOLD};
pub use stability::{detect_stable_elements, StabilityReport};
pub use trajectory::{
    read_trajectories, ActionStep, ActionTrajectory, Outcome, StepResult, TrajectoryJournal,
    TrajectoryRecord, TrajectoryRecorder,
};

use crate::device::{DeviceError, Signature};
use crate::journal::JournalError;

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("step {index} starts on {actual} but the trajectory ended on {expected}")]
    ChainBreak {
        index: usize,
        expected: Signature,
        actual: Signature,
    },
    #[error("trajectory not minable: {0}")]
    NotMinable(String),
    #[error("missing binding for parameter '{0}'")]
    MissingBinding(String),
    #[error("tool expects screen {expected}, device is on {actual}")]
    PreconditionMismatch { expected: Signature, actual: Signature },
    #[error("tool step {step} failed after {} completed steps: {reason}", prefix.steps.len())]
    StepFailed {
        /// 1-based program step that failed.
        step: usize,
        reason: String,
        prefix: Box<ActionTrajectory>,
    },
    #[error("replay diverged at step {step}: {}", report.detail)]
    ReplayMismatch {
        step: usize,
        report: Box<ValidationReport>,
    },
    #[error("tool '{0}' has not passed validation")]
    NotValidated(String),
    #[error("tool file {path}: {message}")]
    ToolFile { path: String, message: String },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}
