//! The expert agent: portrait, exploration and self-verifying execution of
//! atomic tasks through the Observe-Verify-Act cycle.

mod context;
mod cycle;
mod execute;
mod explore;
mod verify;

pub use context::{ExpertConfig, ExpertContext, StepBudget, TrajectoryArchive};
pub use cycle::{parse_decision, Decision};
pub use execute::{execute_atomic, TaskOutcome};
pub use explore::{decompose_requirement, explore, ExplorationOutcome, Subtask, DEFAULT_EXPLORATION_BUDGET};
pub use verify::{verify_transition, VerifyResult};

use crate::device::{Action, DeviceError, Predicate, ScreenState};
use crate::gateway::GatewayError;
use crate::memory::{ExpertId, MemoryError};
use crate::toolsmith::ToolError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPortrait {
    pub expert_id: ExpertId,
    pub role_name: String,
    pub responsibility: String,
    #[serde(default)]
    pub capability_tags: Vec<String>,
    #[serde(default)]
    pub app_affinity: Vec<String>,
}

impl ExpertPortrait {
    /// Text the portrait is matched on.
    pub fn profile_text(&self) -> String {
        format!(
            "{} {} {} {}",
            self.role_name.replace('_', " "),
            self.responsibility,
            self.capability_tags.join(" ").replace('_', " "),
            self.app_affinity.join(" ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicTask {
    pub task_id: String,
    pub description: String,
    pub parent_node: String,
    pub status: TaskStatus,
    pub attempt: u32,
    pub max_steps: usize,
    /// Completion condition; without one the task ends when the model stops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub done: Option<Predicate>,
    /// May be reordered ahead of a failed task.
    #[serde(default)]
    pub independent: bool,
}

impl AtomicTask {
    pub fn new(task_id: impl Into<String>, description: impl Into<String>, parent_node: impl Into<String>, max_steps: usize) -> Self {
        Self {
            task_id: task_id.into(),
            description: description.into(),
            parent_node: parent_node.into(),
            status: TaskStatus::Pending,
            attempt: 1,
            max_steps,
            done: None,
            independent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecCycleState {
    pub previous: Option<ScreenState>,
    pub current: ScreenState,
    pub last_action: Option<Action>,
    pub last_expectation: String,
    pub step_count: usize,
}

/// Why an exploration or atomic task ended without success.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    StepCapExceeded,
    BudgetExhausted,
    /// Too many consecutive actions without their expected effect.
    VerifyLimit,
    /// The model stopped before the completion condition held.
    StoppedEarly,
    /// The model kept answering without acting.
    DecisionLimit,
}

#[derive(Debug, thiserror::Error)]
pub enum ExpertError {
    #[error("requirement produced no usable subtasks: {0}")]
    EmptyDecomposition(String),
    #[error("exploration budget exhausted")]
    BudgetExhausted { partial: Box<ExplorationOutcome> },
    #[error("step cap of {0} exceeded")]
    StepCapExceeded(usize),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}
