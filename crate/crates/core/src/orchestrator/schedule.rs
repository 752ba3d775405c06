use super::tasks::{adjust_sequence, plan_expert, AdjustPolicy, DEFAULT_ATOMIC_RETRY_LIMIT};
use super::{NodeStatus, OrchestratorError, PlanNode, Team, TeamPlan};
use crate::device::{Action, ActionResult, CheckScope, Device, DeviceError, DeviceSnapshot, Predicate, ScreenState};
use crate::expert::{execute_atomic, ExpertContext, ExpertError, ExpertPortrait, TaskOutcome, TaskStatus};
use crate::memory::{CommitStatus, TeamCommit, WorkingMemory};
use crate::par::{self, Parallelism};
use serde::{Deserialize, Serialize};
use std::sync::{Mutex, MutexGuard};

/// Exclusive access to one device.
pub struct DeviceLease {
    id: String,
    device: Mutex<Box<dyn Device>>,
}

impl std::fmt::Debug for DeviceLease {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceLease").field("id", &self.id).finish()
    }
}

impl DeviceLease {
    pub fn new(device: Box<dyn Device>) -> Self {
        Self {
            id: device.id().to_string(),
            device: Mutex::new(device),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn lock(&self) -> MutexGuard<'_, Box<dyn Device>> {
        self.device.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn into_inner(self) -> Box<dyn Device> {
        self.device.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    /// Extra attempts a failed node gets.
    pub node_retry_limit: u32,
    /// Attempts per atomic task.
    pub atomic_retry_limit: u32,
    pub max_steps: usize,
    /// Nodes of one wave run concurrently up to this many (and never more
    /// than there are leases).
    pub jobs: usize,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            node_retry_limit: 1,
            atomic_retry_limit: DEFAULT_ATOMIC_RETRY_LIMIT,
            max_steps: 15,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Started { attempt: u32, lease: String },
    Fetched { deps: Vec<String> },
    FirstAction,
    Committed { attempt: u32, status: CommitStatus },
    /// Not run because a dependency failed.
    Skipped { failed_dep: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub seq: usize,
    pub node: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Default)]
struct EventLog(Mutex<Vec<ScheduleEvent>>);

impl EventLog {
    fn push(&self, node: &str, kind: EventKind) {
        let mut events = self.0.lock().expect("event log poisoned");
        let seq = events.len();
        events.push(ScheduleEvent {
            seq,
            node: node.to_string(),
            kind,
        });
    }

    fn take(self) -> Vec<ScheduleEvent> {
        self.0.into_inner().expect("event log poisoned")
    }
}

/// Reports the first device-affecting action of a node.
struct Instrumented<'a> {
    inner: &'a mut dyn Device,
    log: &'a EventLog,
    node: &'a str,
    fired: bool,
}

impl Device for Instrumented<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn display(&self) -> (i32, i32) {
        self.inner.display()
    }
    fn capture_screen(&mut self) -> Result<ScreenState, DeviceError> {
        self.inner.capture_screen()
    }
    fn perform(&mut self, action: &Action) -> Result<ActionResult, DeviceError> {
        if !self.fired && action.op().is_device_affecting() {
            self.fired = true;
            self.log.push(self.node, EventKind::FirstAction);
        }
        self.inner.perform(action)
    }
    fn check(&self, predicate: &Predicate, scope: CheckScope) -> Option<bool> {
        self.inner.check(predicate, scope)
    }
    fn snapshot(&self) -> Option<DeviceSnapshot> {
        self.inner.snapshot()
    }
    fn restore(&mut self, snapshot: &DeviceSnapshot) -> Result<(), DeviceError> {
        self.inner.restore(snapshot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttempt {
    pub attempt: u32,
    pub status: CommitStatus,
    pub summary: String,
    pub exported: Vec<String>,
    pub tasks: Vec<TaskOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node_id: String,
    pub expert: String,
    pub lease: String,
    pub attempts: Vec<NodeAttempt>,
}

impl NodeReport {
    pub fn succeeded(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.status == CommitStatus::Done)
    }

    pub fn steps_used(&self) -> usize {
        self.attempts.iter().flat_map(|a| &a.tasks).map(|t| t.steps_used).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: TeamPlan,
    pub success: bool,
    /// This plan's commits in the order they were made.
    pub commits: Vec<TeamCommit>,
    pub nodes: Vec<NodeReport>,
    pub events: Vec<ScheduleEvent>,
}

impl PlanOutcome {
    pub fn steps_used(&self) -> usize {
        self.nodes.iter().map(NodeReport::steps_used).sum()
    }

    pub fn task_outcomes(&self) -> impl Iterator<Item = &TaskOutcome> {
        self.nodes.iter().flat_map(|n| &n.attempts).flat_map(|a| &a.tasks)
    }
}

/// Execute the plan wave by wave: every ready node of a wave runs on its
/// own lease, results are committed in node order once the wave ends, and
/// only then do dependents become ready. A failed node (after its retry)
/// fails everything downstream of it.
pub fn schedule(
    mut plan: TeamPlan,
    team: &Team,
    leases: &[DeviceLease],
    ctx: &ExpertContext,
    opts: &ScheduleOptions,
) -> Result<PlanOutcome, OrchestratorError> {
    plan.validate(team)?;
    if leases.is_empty() {
        return Err(OrchestratorError::NoLeases);
    }
    plan.reset_status();
    ctx.pool.activate_plan(plan.nodes.iter().map(|n| n.node_id.clone()));
    let log = EventLog::default();
    let mut commits = Vec::new();
    let mut reports = Vec::new();
    let width = leases.len().min(opts.jobs.max(1));

    loop {
        plan.refresh_ready();
        let ready = plan.ready();
        if ready.is_empty() {
            let stuck: Vec<String> = plan
                .status
                .iter()
                .filter(|(_, s)| matches!(s, NodeStatus::Blocked | NodeStatus::Running))
                .map(|(id, _)| id.clone())
                .collect();
            if stuck.is_empty() {
                break;
            }
            return Err(OrchestratorError::DeadlockDetected(stuck));
        }
        for chunk in ready.chunks(width) {
            let jobs: Vec<(PlanNode, &DeviceLease)> = chunk
                .iter()
                .zip(leases)
                .map(|(id, lease)| (plan.node(id).expect("ready node exists").clone(), lease))
                .collect();
            for (node, _) in &jobs {
                plan.status.insert(node.node_id.clone(), NodeStatus::Running);
            }
            let mode = Parallelism::from_jobs(jobs.len());
            let results = par::map(jobs, mode, |(node, lease)| {
                let expert = team.member(&node.assigned_expert).expect("validated assignment");
                run_node(&node, expert, lease, ctx, opts, &log)
            });
            for result in results {
                let report = result?;
                for a in &report.attempts {
                    let tc = TeamCommit {
                        task_node_id: report.node_id.clone(),
                        attempt: a.attempt,
                        expert_id: team.member(&report.expert).expect("member").expert_id.clone(),
                        status: a.status,
                        summary: a.summary.clone(),
                        exported_entries: a.exported.clone(),
                        committed_at: ctx.clock.now(),
                    };
                    ctx.pool.commit(tc.clone())?;
                    log.push(&report.node_id, EventKind::Committed { attempt: a.attempt, status: a.status });
                    commits.push(tc);
                }
                let ok = report.succeeded();
                plan.status.insert(
                    report.node_id.clone(),
                    if ok { NodeStatus::Done } else { NodeStatus::Failed },
                );
                if !ok {
                    for d in plan.dependents(&report.node_id) {
                        if plan.status.get(&d) != Some(&NodeStatus::Failed) {
                            plan.status.insert(d.clone(), NodeStatus::Failed);
                            log.push(&d, EventKind::Skipped { failed_dep: report.node_id.clone() });
                        }
                    }
                }
                reports.push(report);
            }
        }
    }

    Ok(PlanOutcome {
        success: plan.is_complete(),
        plan,
        commits,
        nodes: reports,
        events: log.take(),
    })
}

fn run_node(
    node: &PlanNode,
    expert: &ExpertPortrait,
    lease: &DeviceLease,
    ctx: &ExpertContext,
    opts: &ScheduleOptions,
    log: &EventLog,
) -> Result<NodeReport, OrchestratorError> {
    let mut device = lease.lock();
    let mut device = Instrumented {
        inner: device.as_mut(),
        log,
        node: &node.node_id,
        fired: false,
    };
    let mut team_context = Vec::new();
    let mut attempts = Vec::new();
    for attempt in 1..=opts.node_retry_limit + 1 {
        log.push(&node.node_id, EventKind::Started { attempt, lease: lease.id().to_string() });
        if attempt == 1 && !node.deps.is_empty() {
            let fetched = ctx.pool.fetch(&node.deps, &node.description)?;
            log.push(&node.node_id, EventKind::Fetched { deps: node.deps.clone() });
            team_context = fetched.into_iter().map(|e| format!("[{}] {}", e.node_id, e.text)).collect();
        }
        let a = run_attempt(node, expert, &mut device, ctx, opts, attempt, &team_context)?;
        let done = a.status == CommitStatus::Done;
        attempts.push(a);
        if done || ctx.step_budget.as_ref().is_some_and(|b| b.remaining() == 0) {
            break;
        }
    }
    Ok(NodeReport {
        node_id: node.node_id.clone(),
        expert: expert.role_name.clone(),
        lease: lease.id().to_string(),
        attempts,
    })
}

fn run_attempt(
    node: &PlanNode,
    expert: &ExpertPortrait,
    device: &mut dyn Device,
    ctx: &ExpertContext,
    opts: &ScheduleOptions,
    attempt: u32,
    team_context: &[String],
) -> Result<NodeAttempt, OrchestratorError> {
    let failed = |summary: String, tasks| NodeAttempt {
        attempt,
        status: CommitStatus::Failed,
        summary,
        exported: Vec::new(),
        tasks,
    };
    let mut queue = match plan_expert(expert, &node.node_id, &node.description, ctx, opts.max_steps) {
        Ok(q) => q,
        Err(OrchestratorError::Gateway(e)) => return Ok(failed(format!("{}: planning failed: {e}", node.description), Vec::new())),
        Err(e @ OrchestratorError::EmptyDecomposition(_)) => return Ok(failed(e.to_string(), Vec::new())),
        Err(e) => return Err(e),
    };
    let mut wm = WorkingMemory::new(expert.expert_id.clone(), ctx.config.wm_budget, ctx.clock.clone());
    let mut outcomes: Vec<TaskOutcome> = Vec::new();
    let mut problem = None;
    while !queue.is_empty() {
        let mut task = queue.remove(0);
        task.status = TaskStatus::Running;
        let out = match execute_atomic(expert, &task, device, ctx, &mut wm, team_context) {
            Ok(o) => o,
            Err(ExpertError::Device(e)) => return Err(OrchestratorError::Device(e)),
            Err(e) => {
                problem = Some(format!("{}: {e}", task.task_id));
                break;
            }
        };
        let ok = out.succeeded();
        outcomes.push(out);
        if ok {
            continue;
        }
        task.status = TaskStatus::Failed;
        let policy = if queue.iter().any(|t| t.independent) {
            AdjustPolicy::Reorder
        } else {
            AdjustPolicy::Repeat
        };
        if ctx.step_budget.as_ref().is_some_and(|b| b.remaining() == 0) {
            problem = Some(format!("{}: step budget spent", task.task_id));
            break;
        }
        match adjust_sequence(&queue, &task, policy, opts.atomic_retry_limit) {
            Ok(q) => queue = q,
            Err(e @ OrchestratorError::RetryExhausted { .. }) => {
                problem = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut exported: Vec<String> = wm
        .entries()
        .iter()
        .filter(|e| e.tag == "read")
        .map(|e| e.text.clone())
        .collect();
    exported.extend(outcomes.iter().filter(|o| o.succeeded()).map(|o| o.summary.clone()));
    Ok(match problem {
        None => NodeAttempt {
            attempt,
            status: CommitStatus::Done,
            summary: format!("{}: done in {} tasks", node.description, outcomes.len()),
            exported,
            tasks: outcomes,
        },
        Some(why) => NodeAttempt {
            exported,
            ..failed(format!("{}: failed, {why}", node.description), outcomes)
        },
    })
}
