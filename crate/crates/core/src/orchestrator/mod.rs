//! Team assembly and double-layer planning: a team-level task graph whose
//! nodes experts break into atomic task sequences, executed by a
//! dependency-respecting scheduler over device leases.

mod plan;
mod schedule;
mod tasks;
mod team;

pub use plan::{find_cycle, plan_team, NodeStatus, PlanNode, TeamPlan};
pub use schedule::{
    schedule, DeviceLease, EventKind, NodeAttempt, NodeReport, PlanOutcome, ScheduleEvent,
    ScheduleOptions,
};
pub use tasks::{adjust_sequence, plan_expert, AdjustPolicy, DEFAULT_ATOMIC_RETRY_LIMIT};
pub use team::{
    assemble_team, needed_capabilities, score_portrait, ExpertPool, Team, CAPABILITY_LEXICON,
    SELECTION_THRESHOLD,
};

use crate::device::DeviceError;
use crate::expert::{ExpertContext, ExpertError};
use crate::gateway::GatewayError;
use crate::memory::MemoryError;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("requirement is empty")]
    EmptyRequirement,
    #[error("plan contains a cycle through {0:?}")]
    CyclicPlan(Vec<String>),
    #[error("node {0} is not assigned to a team member")]
    UnassignedNode(String),
    #[error("node {node} depends on unknown node {dep}")]
    UnknownDependency { node: String, dep: String },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no atomic tasks for '{0}'")]
    EmptyDecomposition(String),
    #[error("task {task_id} failed after {attempts} attempts")]
    RetryExhausted { task_id: String, attempts: u32 },
    #[error("scheduler stalled with nodes {0:?} pending")]
    DeadlockDetected(Vec<String>),
    #[error("no device leases")]
    NoLeases,
    #[error("invalid portrait: {0}")]
    InvalidPortrait(String),
    #[error("expert pool {path}: {message}")]
    PoolFile { path: String, message: String },
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Everything one request produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub team: Team,
    pub outcome: PlanOutcome,
}

/// Assemble a team, plan and execute `requirement`.
pub fn run_requirement(
    requirement: &str,
    pool: &mut ExpertPool,
    leases: &[DeviceLease],
    ctx: &ExpertContext,
    opts: &ScheduleOptions,
) -> Result<RunOutcome, OrchestratorError> {
    let team = assemble_team(pool, requirement)?;
    let plan = plan_team(&team, requirement, ctx)?;
    let outcome = schedule(plan, &team, leases, ctx, opts)?;
    Ok(RunOutcome { team, outcome })
}
