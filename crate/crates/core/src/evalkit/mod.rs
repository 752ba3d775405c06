//! Benchmark harness: task specs for three tiers of difficulty, the
//! best-of-N run protocol and the four metrics (success rate, process
//! score, reasoning steps, complete performance).

mod metrics;
mod report;
mod runner;

pub use metrics::{
    best_attempt, complete_performance, mean_reasoning_steps, process_score, reasoning_steps,
    success_rate, FULL_MARKS,
};
pub use report::{report, MetricsReport, TaskRow, TierMetrics};
pub use runner::{
    attempt_dir, run_bundle, run_task, DeviceFactory, EvalConfig, EvalSystem, SharedMemory, TaskRun,
};

use crate::device::Predicate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("config error: {0}")]
    Config(String),
    #[error("task {task_id}: {reason}")]
    InvalidSpec { task_id: String, reason: String },
    #[error("no records for tier {0}")]
    EmptyTier(String),
    #[error("task {0} defines no milestones")]
    NoMilestones(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("task bundle {path}: {message}")]
    Bundle { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SocialMedia,
    OnlineService,
    ProductivityTool,
    CrossApp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Complexity {
    C1,
    C2,
    C3,
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Complexity::C1 => "C1",
            Complexity::C2 => "C2",
            Complexity::C3 => "C3",
        })
    }
}

/// Step cap for C1 and C2 attempts.
pub const TIER_STEP_CAP: usize = 15;

/// How to run a task against the simulator. Paths are relative to the
/// file the spec was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub scenario: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Requirement explored before the first attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore: Option<String>,
    /// Devices available to the team.
    #[serde(default = "one")]
    pub leases: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub category: Category,
    pub app_ids: Vec<String>,
    pub complexity: Complexity,
    /// Instruction as published, `{name}` placeholders included.
    pub instruction: String,
    /// Values substituted for the placeholders.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub placeholders: BTreeMap<String, String>,
    pub success_check: Predicate,
    #[serde(default)]
    pub milestones: Vec<Predicate>,
    /// `None` means no per-attempt step cap (C3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSetup>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| {
            Err(EvalError::InvalidSpec {
                task_id: self.task_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.task_id.trim().is_empty() {
            return bad("empty task id");
        }
        if self.instruction.trim().is_empty() {
            return bad("empty instruction");
        }
        match self.complexity {
            Complexity::C1 | Complexity::C2 if self.max_steps != Some(TIER_STEP_CAP) => {
                return bad("C1 and C2 tasks are capped at 15 steps");
            }
            Complexity::C2 | Complexity::C3 if self.milestones.is_empty() => {
                return bad("C2 and C3 tasks need milestones");
            }
            _ => {}
        }
        if let Some(sim) = &self.sim {
            if sim.leases == 0 {
                return bad("at least one device lease is needed");
            }
        }
        Ok(())
    }

    /// The instruction with placeholders filled in. Unknown placeholders
    /// are left as they are.
    pub fn rendered_instruction(&self) -> String {
        let mut out = self.instruction.clone();
        for (name, value) in &self.placeholders {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

/// One attempt at one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub complexity: Complexity,
    /// 1-based.
    pub attempt: u32,
    pub success: bool,
    pub milestones_hit: usize,
    pub milestones_total: usize,
    pub gateway_calls: u64,
    pub device_steps: usize,
    /// Run id the attempt's calls and journals are filed under.
    pub trajectory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Load every `*.json` file in `dir` (sorted by name). A file holds one
/// spec or an array of specs. Relative simulator paths are resolved
/// against the file's directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Vec<TaskSpec>, EvalError> {
    let dir = dir.as_ref();
    let err = |path: &Path, message: String| EvalError::Bundle {
        path: path.to_path_buf(),
        message,
    };
    let mut files: Vec<PathBuf> = if dir.is_dir() {
        std::fs::read_dir(dir)
            .map_err(|e| err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect()
    } else {
        vec![dir.to_path_buf()]
    };
    files.sort();
    let mut specs = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file).map_err(|e| err(&file, e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| err(&file, e.to_string()))?;
        let mut batch: Vec<TaskSpec> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|s| vec![s])
        }
        .map_err(|e| err(&file, e.to_string()))?;
        let base = file.parent().unwrap_or(Path::new("."));
        for spec in &mut batch {
            spec.validate()?;
            if let Some(sim) = &mut spec.sim {
                sim.scenario = base.join(&sim.scenario);
                sim.script = sim.script.as_ref().map(|s| base.join(s));
            }
        }
        specs.append(&mut batch);
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in &specs {
        if !seen.insert(s.task_id.as_str()) {
            return Err(err(dir, format!("duplicate task id {}", s.task_id)));
        }
    }
    Ok(specs)
}
