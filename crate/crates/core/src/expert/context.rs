use crate::clock::Clock;
use crate::gateway::{Gateway, RunId};
use crate::journal::JournalError;
use crate::memory::{IconStore, InsightStore, TeamPool, DEFAULT_INSIGHT_K, DEFAULT_WM_BUDGET};
use crate::toolsmith::{ActionTrajectory, ToolRegistry, TrajectoryJournal};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    /// Device steps per atomic task.
    pub max_steps: usize,
    /// Consecutive failed verifications tolerated before giving up.
    pub redecide_limit: usize,
    pub wm_budget: usize,
    pub insight_k: usize,
    /// Look for a registered tool before asking the model.
    pub tool_first: bool,
    /// Send Think compaction through the model in live mode.
    pub think_via_model: bool,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            max_steps: 15,
            redecide_limit: 3,
            wm_budget: DEFAULT_WM_BUDGET,
            insight_k: DEFAULT_INSIGHT_K,
            tool_first: true,
            think_via_model: false,
        }
    }
}

/// Counter of device steps shared by everything running under one limit.
#[derive(Debug)]
pub struct StepBudget {
    limit: usize,
    used: AtomicUsize,
}

impl StepBudget {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            used: AtomicUsize::new(0),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.limit.saturating_sub(self.used())
    }

    /// Take `n` steps if that many remain.
    pub fn try_consume(&self, n: usize) -> bool {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| {
                (u + n <= self.limit).then_some(u + n)
            })
            .is_ok()
    }
}

/// Every trajectory recorded during a run, optionally journaled.
#[derive(Default)]
pub struct TrajectoryArchive {
    trajectories: Mutex<Vec<ActionTrajectory>>,
    journal: Option<TrajectoryJournal>,
}

impl std::fmt::Debug for TrajectoryArchive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrajectoryArchive")
            .field("len", &self.len())
            .finish()
    }
}

impl TrajectoryArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_journal(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        Ok(Self {
            trajectories: Mutex::default(),
            journal: Some(TrajectoryJournal::open(path)?),
        })
    }

    pub fn add(&self, traj: ActionTrajectory) -> Result<(), JournalError> {
        if let Some(j) = &self.journal {
            j.write(&traj)?;
        }
        self.trajectories.lock().expect("archive poisoned").push(traj);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.lock().expect("archive poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<ActionTrajectory> {
        self.trajectories.lock().expect("archive poisoned").clone()
    }

    pub fn for_app(&self, app_id: &str) -> Vec<ActionTrajectory> {
        self.trajectories
            .lock()
            .expect("archive poisoned")
            .iter()
            .filter(|t| t.app_id == app_id)
            .cloned()
            .collect()
    }
}

/// Everything an expert needs besides its device: the model, the run it
/// is billed to, the shared memories and the limits.
#[derive(Clone)]
pub struct ExpertContext {
    pub gateway: Arc<dyn Gateway>,
    pub run: RunId,
    pub icons: Arc<IconStore>,
    pub insights: Arc<InsightStore>,
    pub registry: Arc<ToolRegistry>,
    pub pool: Arc<TeamPool>,
    pub archive: Arc<TrajectoryArchive>,
    pub config: ExpertConfig,
    pub clock: Clock,
    /// Device steps allowed across everything in the current attempt.
    pub step_budget: Option<Arc<StepBudget>>,
}

impl std::fmt::Debug for ExpertContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExpertContext")
            .field("run", &self.run)
            .field("config", &self.config)
            .finish()
    }
}

impl ExpertContext {
    /// In-memory stores around `gateway`.
    pub fn new(gateway: Arc<dyn Gateway>, run: RunId) -> Self {
        gateway.open_run(&run);
        let clock = Clock::default();
        Self {
            gateway,
            run,
            icons: Arc::new(IconStore::new(clock.clone())),
            insights: Arc::new(InsightStore::new()),
            registry: Arc::new(ToolRegistry::new()),
            pool: Arc::new(TeamPool::new()),
            archive: Arc::new(TrajectoryArchive::new()),
            config: ExpertConfig::default(),
            clock,
            step_budget: None,
        }
    }

    /// Same stores, billed to another run.
    pub fn for_run(&self, run: RunId) -> Self {
        self.gateway.open_run(&run);
        Self {
            run,
            ..self.clone()
        }
    }

    pub fn calls(&self) -> u64 {
        self.gateway.call_count(&self.run).map(|c| c.total).unwrap_or(0)
    }
}
