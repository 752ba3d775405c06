//! Memory mechanisms: confidence-labelled interface (icon) memory, insight
//! memory, per-expert working memory and the team-shared commit/fetch pool.

mod icons;
mod insights;
mod pool;
mod working;

pub use icons::{
    consistency_score, Confidence, IconKey, IconObservation, IconRecord, IconStore,
    CONSISTENCY_THRESHOLD,
};
pub use insights::{InsightCategory, InsightId, InsightRecord, InsightStore, DEFAULT_INSIGHT_K};
pub use pool::{CommitStatus, FetchedEntry, TeamCommit, TeamPool};
pub use working::{
    think_process, MemoryEntry, ThinkOutcome, WorkingMemory, DEFAULT_PINNED_RECENT,
    DEFAULT_WM_BUDGET,
};

use crate::journal::JournalError;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertId(pub String);

impl ExpertId {
    pub fn new(id: impl Into<String>) -> Self {
        ExpertId(id.into())
    }
}

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("malformed element reference '{0}'")]
    InvalidElementRef(String),
    #[error("no icon record for '{0}'")]
    UnknownIcon(String),
    #[error("icon '{0}' has no hypothesis to verify")]
    NoHypothesis(String),
    #[error("working memory of {owner} accessed by {caller}")]
    OwnerMismatch { owner: ExpertId, caller: ExpertId },
    #[error("entry of {entry_tokens} tokens cannot fit a budget of {budget}")]
    BudgetUnsatisfiable { entry_tokens: usize, budget: usize },
    #[error("node '{node}' attempt {attempt} already committed")]
    DuplicateCommit { node: String, attempt: u32 },
    #[error("dependency '{0}' has no commit")]
    MissingDependencyCommit(String),
    #[error("node '{0}' is not part of the active plan")]
    UnknownNode(String),
    #[error("gateway: {0}")]
    Gateway(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
}
