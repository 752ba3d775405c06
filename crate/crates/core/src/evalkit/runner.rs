use super::metrics::{best_attempt, complete_performance};
use super::{EvalError, RunRecord, TaskSpec};
use crate::clock::Clock;
use crate::device::sim::{Scenario, SimDevice};
use crate::device::{CheckScope, Device, Predicate};
use crate::expert::{explore, ExpertConfig, ExpertContext, ExpertError, StepBudget, TrajectoryArchive};
use crate::gateway::{Gateway, RunId, ScriptedGateway};
use crate::journal::Journal;
use crate::memory::{IconStore, InsightStore, TeamPool};
use crate::orchestrator::{
    assemble_team, run_requirement, score_portrait, DeviceLease, ExpertPool, ScheduleOptions,
};
use crate::par::{self, Parallelism};
use crate::toolsmith::ToolRegistry;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Creates the `index`-th device for a task.
pub type DeviceFactory =
    Arc<dyn Fn(&TaskSpec, usize) -> Result<Box<dyn Device>, EvalError> + Send + Sync>;

/// Memories that persist across attempts and tasks.
#[derive(Debug, Clone)]
pub struct SharedMemory {
    pub icons: Arc<IconStore>,
    pub insights: Arc<InsightStore>,
    pub registry: Arc<ToolRegistry>,
}

impl SharedMemory {
    pub fn in_memory(clock: Clock) -> Self {
        Self {
            icons: Arc::new(IconStore::new(clock)),
            insights: Arc::new(InsightStore::new()),
            registry: Arc::new(ToolRegistry::new()),
        }
    }
}

/// The system under test.
#[derive(Clone)]
pub struct EvalSystem {
    pub experts: ExpertPool,
    pub gateway: Arc<dyn Gateway>,
    pub devices: DeviceFactory,
    pub memory: SharedMemory,
    pub clock: Clock,
    /// Where attempt journals go, if anywhere.
    pub run_dir: Option<PathBuf>,
}

impl EvalSystem {
    /// Simulator devices from the task's scenario and a gateway scripted
    /// from the task's script (or `gateway` when the task has none).
    pub fn for_sim_task(
        spec: &TaskSpec,
        experts: ExpertPool,
        gateway: Option<Arc<dyn Gateway>>,
        clock: Clock,
        run_dir: Option<PathBuf>,
    ) -> Result<Self, EvalError> {
        let sim = spec
            .sim
            .as_ref()
            .ok_or_else(|| EvalError::Config(format!("task {} has no simulator setup", spec.task_id)))?;
        let scenario = Scenario::load(&sim.scenario)
            .map_err(|e| EvalError::Config(format!("{}: {e}", sim.scenario.display())))?;
        let gateway = match (&sim.script, gateway) {
            (Some(path), _) => Arc::new(
                ScriptedGateway::load(path)
                    .map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?,
            ) as Arc<dyn Gateway>,
            (None, Some(g)) => g,
            (None, None) => {
                return Err(EvalError::Config(format!("task {} has no gateway", spec.task_id)))
            }
        };
        let devices: DeviceFactory = Arc::new(move |spec: &TaskSpec, i: usize| {
            Ok(Box::new(SimDevice::with_id(scenario.clone(), format!("{}-sim-{i}", spec.task_id)))
                as Box<dyn Device>)
        });
        Ok(Self {
            experts,
            gateway,
            devices,
            memory: SharedMemory::in_memory(clock.clone()),
            clock,
            run_dir,
        })
    }

    fn attempt_dir(&self, run: &str) -> Option<PathBuf> {
        self.run_dir.as_ref().map(|d| attempt_dir(d, run))
    }

    fn context(&self, run: &str, config: &EvalConfig) -> Result<ExpertContext, EvalError> {
        let mut ctx = ExpertContext::new(self.gateway.clone(), RunId::new(run));
        ctx.icons = self.memory.icons.clone();
        ctx.insights = self.memory.insights.clone();
        ctx.registry = self.memory.registry.clone();
        ctx.clock = self.clock.clone();
        ctx.config = ExpertConfig {
            max_steps: config.max_steps,
            redecide_limit: config.redecide_limit,
            ..ExpertConfig::default()
        };
        if let Some(dir) = self.attempt_dir(run) {
            let io = |e: &dyn std::fmt::Display| EvalError::Config(format!("{}: {e}", dir.display()));
            ctx.pool = Arc::new(TeamPool::with_journal(dir.join("pool.jsonl")).map_err(|e| io(&e))?);
            ctx.archive = Arc::new(
                TrajectoryArchive::with_journal(dir.join("trajectories.jsonl")).map_err(|e| io(&e))?,
            );
        }
        Ok(ctx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub attempts: u32,
    /// Device steps allowed for exploration per task.
    pub exploration_cap: usize,
    /// Steps per atomic task, and per attempt for C1/C2 tasks.
    pub max_steps: usize,
    /// Steps per attempt for tasks without a step cap.
    pub c3_step_budget: usize,
    pub node_retry_limit: u32,
    pub atomic_retry_limit: u32,
    pub redecide_limit: usize,
    /// Plan nodes run concurrently within one attempt.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            exploration_cap: 10,
            max_steps: 15,
            c3_step_budget: 200,
            node_retry_limit: 1,
            atomic_retry_limit: 2,
            redecide_limit: 3,
            jobs: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.attempts == 0 || self.max_steps == 0 || self.c3_step_budget == 0 || self.jobs == 0 {
            return Err(EvalError::Config("attempts, steps and jobs must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one task produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRun {
    pub best: RunRecord,
    pub attempts: Vec<RunRecord>,
    pub exploration_steps: usize,
    pub exploration_calls: u64,
}

fn holds(leases: &[DeviceLease], predicate: &Predicate, scope: CheckScope) -> Option<bool> {
    let answers: Vec<Option<bool>> = leases.iter().map(|l| l.lock().check(predicate, scope)).collect();
    if answers.iter().any(|a| *a == Some(true)) {
        Some(true)
    } else if answers.iter().all(Option::is_some) {
        Some(false)
    } else {
        None
    }
}

/// Explore once, then make up to `attempts` attempts and keep the best.
pub fn run_task(spec: &TaskSpec, system: &EvalSystem, config: &EvalConfig) -> Result<TaskRun, EvalError> {
    spec.validate()?;
    config.validate()?;
    let instruction = spec.rendered_instruction();
    let records_journal = match &system.run_dir {
        Some(d) => Some(
            Journal::open(d.join("records.jsonl"))
                .map_err(|e| EvalError::Config(e.to_string()))?,
        ),
        None => None,
    };

    let (exploration_steps, exploration_calls) = match spec.sim.as_ref().and_then(|s| s.explore.as_deref()) {
        Some(requirement) => run_exploration(spec, requirement, system, config)?,
        None => (0, 0),
    };

    let cap = spec.max_steps.unwrap_or(config.c3_step_budget);
    let leases_wanted = spec.sim.as_ref().map_or(1, |s| s.leases);
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for attempt in 1..=config.attempts {
        let run = format!("{}#a{attempt}", spec.task_id);
        let mut ctx = system.context(&run, config)?;
        ctx.config.max_steps = config.max_steps.min(cap);
        let budget = Arc::new(StepBudget::new(cap));
        ctx.step_budget = Some(budget.clone());
        let leases = (0..leases_wanted)
            .map(|i| (system.devices)(spec, i).map(DeviceLease::new))
            .collect::<Result<Vec<_>, _>>()?;
        let opts = ScheduleOptions {
            node_retry_limit: config.node_retry_limit,
            atomic_retry_limit: config.atomic_retry_limit,
            max_steps: ctx.config.max_steps,
            jobs: config.jobs,
        };
        let mut pool = system.experts.clone();
        let result = run_requirement(&instruction, &mut pool, &leases, &ctx, &opts);
        let (plan_ok, error, summary) = match &result {
            Ok(r) => (
                r.outcome.success,
                None,
                r.outcome
                    .commits
                    .iter()
                    .map(|c| format!("{} [{:?}]: {}", c.task_node_id, c.status, c.summary))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            Err(e) => {
                log::warn!("{run}: {e}");
                (false, Some(e.to_string()), String::new())
            }
        };
        let success = holds(&leases, &spec.success_check, CheckScope::Current).unwrap_or(plan_ok);
        let milestones_hit = spec
            .milestones
            .iter()
            .filter(|m| holds(&leases, m, CheckScope::Ever) == Some(true))
            .count();
        let record = RunRecord {
            task_id: spec.task_id.clone(),
            complexity: spec.complexity,
            attempt,
            success,
            milestones_hit,
            milestones_total: spec.milestones.len(),
            gateway_calls: ctx.calls(),
            device_steps: budget.used(),
            trajectory: run.clone(),
            judge_score: None,
            error,
        };
        if let Some(j) = &records_journal {
            j.append(&record).map_err(|e| EvalError::Config(e.to_string()))?;
        }
        records.push(record);
        summaries.push(summary);
    }

    let mut best = best_attempt(&records).cloned().expect("at least one attempt");
    let summary = &summaries[(best.attempt - 1) as usize];
    match complete_performance(&best, spec, system.gateway.as_ref(), summary) {
        Ok(score) => best.judge_score = Some(score),
        Err(e) => log::warn!("{}: {e}", spec.task_id),
    }
    records[(best.attempt - 1) as usize].judge_score = best.judge_score;
    Ok(TaskRun {
        best,
        attempts: records,
        exploration_steps,
        exploration_calls,
    })
}

fn run_exploration(
    spec: &TaskSpec,
    requirement: &str,
    system: &EvalSystem,
    config: &EvalConfig,
) -> Result<(usize, u64), EvalError> {
    let run = format!("{}#explore", spec.task_id);
    let ctx = system.context(&run, config)?;
    let mut pool = system.experts.clone();
    let team = match assemble_team(&mut pool, requirement) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("{run}: {e}");
            return Ok((0, ctx.calls()));
        }
    };
    let expert = team
        .members
        .iter()
        .max_by(|a, b| {
            score_portrait(a, requirement)
                .total_cmp(&score_portrait(b, requirement))
                .then_with(|| b.role_name.cmp(&a.role_name))
        })
        .expect("teams are never empty");
    let mut device = (system.devices)(spec, 0)?;
    let steps = |o: &crate::expert::ExplorationOutcome| o.trajectories.iter().map(|t| t.device_steps()).sum();
    let used = match explore(expert, requirement, device.as_mut(), &ctx, config.exploration_cap) {
        Ok(o) => steps(&o),
        Err(ExpertError::BudgetExhausted { partial }) => steps(&partial),
        Err(e) => {
            log::warn!("{run}: {e}");
            0
        }
    };
    Ok((used, ctx.calls()))
}

/// Run every task, up to `jobs` at a time. Each task gets its own system
/// (and so its own devices) from `make_system`; results keep input order.
pub fn run_bundle<F>(specs: &[TaskSpec], make_system: F, config: &EvalConfig, jobs: usize) -> Vec<Result<TaskRun, EvalError>>
where
    F: Fn(&TaskSpec) -> Result<EvalSystem, EvalError> + Sync + Send,
{
    par::map(specs.iter().collect(), Parallelism::from_jobs(jobs), |spec| {
        let system = make_system(spec)?;
        run_task(spec, &system, config)
    })
}

/// Directory the attempt journals of `run` are written to.
pub fn attempt_dir(run_dir: &Path, run: &str) -> PathBuf {
    run_dir.join(run.replace('#', "_"))
}
