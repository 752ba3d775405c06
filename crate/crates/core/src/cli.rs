//! Command implementations behind the `mexp` binary: configuration
//! loading, device and gateway wiring, and the on-disk artifacts of each
//! command.

use crate::clock::Clock;
use crate::device::adb::AdbDevice;
use crate::device::sim::{Scenario, SimDevice};
use crate::device::{Device, DeviceError};
use crate::evalkit::{self, EvalConfig, EvalError, EvalSystem, MetricsReport, SharedMemory, TaskSpec};
use crate::expert::{explore, ExpertConfig, ExpertContext, ExpertError, StepBudget, TrajectoryArchive};
use crate::gateway::{Gateway, LiveConfig, LiveGateway, RunId, ScriptedGateway};
use crate::journal::Journal;
use crate::memory::{IconStore, InsightStore, TeamPool};
use crate::orchestrator::{
    assemble_team, plan_team, schedule, DeviceLease, ExpertPool, OrchestratorError, ScheduleOptions,
};
use crate::toolsmith::{
    detect_stable_elements, mine_workflow, read_trajectories, validate_tool, Outcome, ToolError,
    ToolRegistry,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("device error: {0}")]
    Device(String),
}

impl CliError {
    /// Process exit status for the error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Device(_) => 4,
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Device(d) => CliError::Device(d.to_string()),
            OrchestratorError::Expert(ExpertError::Device(d)) => CliError::Device(d.to_string()),
            OrchestratorError::PoolFile { .. } => CliError::Config(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ExpertError> for CliError {
    fn from(e: ExpertError) -> Self {
        match e {
            ExpertError::Device(d) => CliError::Device(d.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) | EvalError::Bundle { .. } | EvalError::InvalidSpec { .. } | EvalError::EmptyTier(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<DeviceError> for CliError {
    fn from(e: DeviceError) -> Self {
        CliError::Device(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayKind {
    Scripted,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    pub mode: GatewayKind,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    /// Simulator scenario file.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    /// adb serial of a real device.
    #[serde(default)]
    pub serial: Option<String>,
    #[serde(default = "one")]
    pub leases: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertsSection {
    pub pool: PathBuf,
    /// Tool registry directory; defaults to `<run_dir>/tools`.
    #[serde(default)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Caps {
    pub max_steps_c12: usize,
    pub exploration_cap: usize,
    pub attempts: u32,
    pub retry_limit: u32,
    pub atomic_retry_limit: u32,
    pub wm_budget: usize,
    /// Device steps allowed for a whole run without a per-attempt cap.
    pub c3_step_budget: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_steps_c12: 15,
            exploration_cap: 10,
            attempts: 3,
            retry_limit: 1,
            atomic_retry_limit: 2,
            wm_budget: crate::memory::DEFAULT_WM_BUDGET,
            c3_step_budget: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub gateway: GatewaySection,
    pub device: DeviceSection,
    pub experts: ExpertsSection,
    #[serde(default)]
    pub caps: Caps,
}

/// Replace `${NAME}` with the environment variable `NAME`. Comment lines
/// are left alone.
pub fn interpolate_env(text: &str) -> Result<String, CliError> {
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with('#') {
            out.push_str(line);
            continue;
        }
        let mut rest = line;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let tail = &rest[start + 2..];
            let end = tail
                .find('}')
                .ok_or_else(|| CliError::Config("unterminated ${ in config".into()))?;
            let name = &tail[..end];
            let value = std::env::var(name)
                .map_err(|_| CliError::Config(format!("environment variable {name} is not set")))?;
            out.push_str(&value);
            rest = &tail[end + 1..];
        }
        out.push_str(rest);
    }
    Ok(out)
}

impl RunConfig {
    /// Parse TOML (after `${VAR}` interpolation); relative paths are taken
    /// relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let text = interpolate_env(text)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.run_dir);
        fix(&mut cfg.experts.pool);
        if let Some(p) = &mut cfg.experts.registry {
            fix(p);
        }
        if let Some(p) = &mut cfg.gateway.script {
            fix(p);
        }
        if let Some(p) = &mut cfg.device.scenario {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.caps;
        if c.max_steps_c12 == 0 || c.attempts == 0 || c.wm_budget == 0 || c.c3_step_budget == 0 {
            return Err(CliError::Config("caps must be positive".into()));
        }
        if self.device.leases == 0 {
            return Err(CliError::Config("device.leases must be positive".into()));
        }
        match (&self.device.scenario, &self.device.serial) {
            (Some(_), None) => {}
            (None, Some(_)) if self.device.leases == 1 => {}
            (None, Some(_)) => return Err(CliError::Config("an adb device is a single lease".into())),
            _ => return Err(CliError::Config("set exactly one of device.scenario and device.serial".into())),
        }
        match self.gateway.mode {
            GatewayKind::Scripted if self.gateway.script.is_none() => {
                Err(CliError::Config("scripted gateway needs gateway.script".into()))
            }
            GatewayKind::Live if self.gateway.endpoint.is_none() => {
                Err(CliError::Config("live gateway needs gateway.endpoint".into()))
            }
            _ => Ok(()),
        }
    }

    /// Apply `--gateway` (`scripted:PATH` or `live[:ENDPOINT]`) and
    /// `--device` (`sim:PATH` or `adb:SERIAL`).
    pub fn apply_overrides(&mut self, gateway: Option<&str>, device: Option<&str>) -> Result<(), CliError> {
        if let Some(g) = gateway {
            let (kind, arg) = g.split_once(':').unwrap_or((g, ""));
            match kind {
                "scripted" => {
                    self.gateway.mode = GatewayKind::Scripted;
                    if !arg.is_empty() {
                        self.gateway.script = Some(arg.into());
                    }
                }
                "live" => {
                    self.gateway.mode = GatewayKind::Live;
                    if !arg.is_empty() {
                        self.gateway.endpoint = Some(arg.into());
                    }
                }
                _ => return Err(CliError::Config(format!("unknown gateway '{g}'"))),
            }
        }
        if let Some(d) = device {
            match d.split_once(':') {
                Some(("sim", path)) => {
                    self.device.scenario = Some(path.into());
                    self.device.serial = None;
                }
                Some(("adb", serial)) => {
                    self.device.serial = Some(serial.into());
                    self.device.scenario = None;
                    self.device.leases = 1;
                }
                _ => return Err(CliError::Config(format!("unknown device '{d}'"))),
            }
        }
        self.validate()
    }

    fn registry_dir(&self) -> PathBuf {
        self.experts.registry.clone().unwrap_or_else(|| self.run_dir.join("tools"))
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Frozen clock and stable run names, so journals are reproducible.
    pub deterministic: bool,
    pub jobs: usize,
}

impl Options {
    fn clock(&self) -> Clock {
        if self.deterministic {
            Clock::Frozen
        } else {
            Clock::monotonic()
        }
    }

    fn run_name(&self, prefix: &str, text: &str) -> String {
        let digest = hex::encode(&Sha256::digest(text.as_bytes())[..4]);
        if self.deterministic {
            format!("{prefix}-{digest}")
        } else {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("{prefix}-{digest}-{secs}")
        }
    }
}

pub fn open_gateway(cfg: &RunConfig) -> Result<Arc<dyn Gateway>, CliError> {
    let g = &cfg.gateway;
    Ok(match g.mode {
        GatewayKind::Scripted => {
            let path = g.script.as_ref().expect("validated");
            if !path.exists() {
                return Err(io_err(path, "script not found"));
            }
            Arc::new(ScriptedGateway::load(path).map_err(|e| CliError::Config(e.to_string()))?)
        }
        GatewayKind::Live => Arc::new(LiveGateway::new(LiveConfig {
            endpoint: g.endpoint.clone().expect("validated"),
            api_key: g.api_key.clone(),
            model: g.model.clone().unwrap_or_else(|| "gpt-4o".into()),
            retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        })),
    })
}

/// One device per lease.
pub fn open_devices(cfg: &RunConfig) -> Result<Vec<Box<dyn Device>>, CliError> {
    if let Some(path) = &cfg.device.scenario {
        let scenario = Scenario::load(path).map_err(|e| io_err(path, e))?;
        Ok((0..cfg.device.leases)
            .map(|i| Box::new(SimDevice::with_id(scenario.clone(), format!("sim-{i}"))) as Box<dyn Device>)
            .collect())
    } else {
        let serial = cfg.device.serial.as_ref().expect("validated");
        Ok(vec![Box::new(AdbDevice::connect(serial)?)])
    }
}

/// Memories kept under the run directory across commands.
fn open_memory(cfg: &RunConfig, clock: &Clock) -> Result<SharedMemory, CliError> {
    let mem = cfg.run_dir.join("memory");
    Ok(SharedMemory {
        icons: Arc::new(IconStore::persistent(mem.join("icons.jsonl"), clock.clone()).map_err(|e| io_err(&mem, e))?),
        insights: Arc::new(InsightStore::persistent(mem.join("insights.jsonl")).map_err(|e| io_err(&mem, e))?),
        registry: Arc::new(ToolRegistry::open(cfg.registry_dir()).map_err(|e| CliError::Config(e.to_string()))?),
    })
}

fn context(
    cfg: &RunConfig,
    gateway: Arc<dyn Gateway>,
    memory: &SharedMemory,
    dir: &Path,
    run: &str,
    clock: &Clock,
) -> Result<ExpertContext, CliError> {
    let mut ctx = ExpertContext::new(gateway, RunId::new(run));
    ctx.icons = memory.icons.clone();
    ctx.insights = memory.insights.clone();
    ctx.registry = memory.registry.clone();
    ctx.pool = Arc::new(TeamPool::with_journal(dir.join("pool.jsonl")).map_err(|e| io_err(dir, e))?);
    ctx.archive = Arc::new(TrajectoryArchive::with_journal(dir.join("trajectories.jsonl")).map_err(|e| io_err(dir, e))?);
    ctx.clock = clock.clone();
    ctx.config = ExpertConfig {
        max_steps: cfg.caps.max_steps_c12,
        wm_budget: cfg.caps.wm_budget,
        ..ExpertConfig::default()
    };
    Ok(ctx)
}

fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn load_pool(cfg: &RunConfig) -> Result<ExpertPool, CliError> {
    ExpertPool::load(&cfg.experts.pool).map_err(|e| CliError::Config(e.to_string()))
}

/// Save the pool next to the run when the command created experts.
fn save_pool_if_grown(pool: &ExpertPool, before: usize, dir: &Path) -> Result<(), CliError> {
    if pool.len() > before {
        for e in &pool.experts()[before..] {
            log::info!("created expert {} ({})", e.role_name, e.responsibility);
        }
        pool.save(dir.join("experts.json")).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExploreSummary {
    pub run_dir: PathBuf,
    pub experts: Vec<String>,
    pub tools: Vec<String>,
    pub insights: usize,
    pub steps: usize,
}

/// Assemble a team for `requirement` and let every member explore it.
pub fn cmd_explore(cfg: &RunConfig, requirement: &str, opts: &Options) -> Result<ExploreSummary, CliError> {
    let clock = opts.clock();
    let gateway = open_gateway(cfg)?;
    let memory = open_memory(cfg, &clock)?;
    let mut pool = load_pool(cfg)?;
    let before = pool.len();
    let team = assemble_team(&mut pool, requirement)?;
    let name = opts.run_name("explore", requirement);
    let dir = cfg.run_dir.join(&name);
    fresh_dir(&dir)?;
    save_pool_if_grown(&pool, before, &dir)?;
    let mut summary = ExploreSummary {
        run_dir: dir.clone(),
        experts: team.role_names().into_iter().map(str::to_string).collect(),
        tools: Vec::new(),
        insights: 0,
        steps: 0,
    };
    for expert in &team.members {
        let run = format!("{name}#{}", expert.role_name);
        let ctx = context(cfg, gateway.clone(), &memory, &dir, &run, &clock)?;
        let mut device = open_devices(cfg)?.remove(0);
        let outcome = match explore(expert, requirement, device.as_mut(), &ctx, cfg.caps.exploration_cap) {
            Ok(o) => o,
            Err(ExpertError::BudgetExhausted { partial }) => {
                return Err(CliError::Failed(format!(
                    "exploration budget of {} steps exhausted after {} tools",
                    cfg.caps.exploration_cap,
                    partial.tools.len()
                )))
            }
            Err(e) => return Err(e.into()),
        };
        summary.tools.extend(outcome.tools.iter().map(|t| t.tool_id.clone()));
        summary.insights += outcome.insights.len();
        summary.steps += outcome.trajectories.iter().map(|t| t.device_steps()).sum::<usize>();
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub success: bool,
    pub team: Vec<String>,
    pub synthesized: Vec<String>,
    /// Committed node ids in commit order.
    pub commits: Vec<String>,
    pub gateway_calls: u64,
    pub device_steps: usize,
}

/// Full pipeline for one instruction: team, plan, scheduled execution.
/// Fails with [`CliError::Failed`] when the plan does not succeed.
pub fn cmd_run(cfg: &RunConfig, instruction: &str, opts: &Options) -> Result<RunSummary, CliError> {
    let clock = opts.clock();
    let gateway = open_gateway(cfg)?;
    let memory = open_memory(cfg, &clock)?;
    let mut pool = load_pool(cfg)?;
    let before = pool.len();
    let name = opts.run_name("run", instruction);
    let dir = cfg.run_dir.join(&name);
    fresh_dir(&dir)?;
    let mut ctx = context(cfg, gateway, &memory, &dir, &name, &clock)?;
    let budget = Arc::new(StepBudget::new(cfg.caps.c3_step_budget));
    ctx.step_budget = Some(budget.clone());

    let team = assemble_team(&mut pool, instruction)?;
    save_pool_if_grown(&pool, before, &dir)?;
    write_json(&dir.join("team.json"), &team)?;
    let plan = plan_team(&team, instruction, &ctx)?;
    std::fs::write(dir.join("plan.json"), plan.to_json() + "\n").map_err(|e| io_err(&dir, e))?;
    let leases: Vec<DeviceLease> = open_devices(cfg)?.into_iter().map(DeviceLease::new).collect();
    let sched = ScheduleOptions {
        node_retry_limit: cfg.caps.retry_limit,
        atomic_retry_limit: cfg.caps.atomic_retry_limit,
        max_steps: cfg.caps.max_steps_c12,
        jobs: opts.jobs.max(1),
    };
    let outcome = schedule(plan, &team, &leases, &ctx, &sched)?;
    let events = Journal::open(dir.join("events.jsonl")).map_err(|e| io_err(&dir, e))?;
    for ev in &outcome.events {
        events.append(ev).map_err(|e| io_err(&dir, e))?;
    }
    let summary = RunSummary {
        run_dir: dir.clone(),
        success: outcome.success,
        team: team.role_names().into_iter().map(str::to_string).collect(),
        synthesized: team.synthesized.clone(),
        commits: outcome.commits.iter().map(|c| c.task_node_id.clone()).collect(),
        gateway_calls: ctx.calls(),
        device_steps: budget.used(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    if !summary.success {
        return Err(CliError::Failed(format!("plan did not complete; see {}", dir.display())));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricsReport,
    pub rendered: String,
    pub skipped: Vec<String>,
}

/// Run every task of a bundle under the benchmark protocol. With a
/// simulator backend only tasks that ship a simulator setup run; their
/// own scenario and script take precedence over the config's.
pub fn cmd_eval(cfg: &RunConfig, bundle: &Path, format: ReportFormat, opts: &Options) -> Result<EvalSummary, CliError> {
    let specs = evalkit::load_bundle(bundle)?;
    let simulated = cfg.device.scenario.is_some();
    let (runnable, skipped): (Vec<TaskSpec>, Vec<TaskSpec>) =
        specs.into_iter().partition(|s| !simulated || s.sim.is_some());
    for s in &skipped {
        log::info!("skipping {}: no simulator setup", s.task_id);
    }
    if runnable.is_empty() {
        return Err(EvalError::EmptyTier("bundle has no runnable tasks".into()).into());
    }
    let clock = opts.clock();
    let experts = load_pool(cfg)?;
    let config_gateway = open_gateway(cfg).ok();
    let eval_dir = cfg.run_dir.join(opts.run_name("eval", &bundle.display().to_string()));
    fresh_dir(&eval_dir)?;
    let config = EvalConfig {
        attempts: cfg.caps.attempts,
        exploration_cap: cfg.caps.exploration_cap,
        max_steps: cfg.caps.max_steps_c12,
        c3_step_budget: cfg.caps.c3_step_budget,
        node_retry_limit: cfg.caps.retry_limit,
        atomic_retry_limit: cfg.caps.atomic_retry_limit,
        ..EvalConfig::default()
    };
    let make_system = |spec: &TaskSpec| -> Result<EvalSystem, EvalError> {
        let run_dir = Some(eval_dir.join(&spec.task_id));
        if simulated {
            EvalSystem::for_sim_task(spec, experts.clone(), config_gateway.clone(), clock.clone(), run_dir)
        } else {
            let gateway = config_gateway
                .clone()
                .ok_or_else(|| EvalError::Config("gateway could not be opened".into()))?;
            let serial = cfg.device.serial.clone().expect("validated");
            Ok(EvalSystem {
                experts: experts.clone(),
                gateway,
                devices: Arc::new(move |_, _| {
                    AdbDevice::connect(&serial)
                        .map(|d| Box::new(d) as Box<dyn Device>)
                        .map_err(|e| EvalError::Config(e.to_string()))
                }),
                memory: SharedMemory::in_memory(clock.clone()),
                clock: clock.clone(),
                run_dir,
            })
        }
    };
    let results = evalkit::run_bundle(&runnable, make_system, &config, opts.jobs.max(1));
    let mut records = Vec::new();
    for r in results {
        records.extend(r?.attempts);
    }
    let report = evalkit::report(&records)?;
    let rendered = match format {
        ReportFormat::Table => report.render_table("mobile-experts"),
        ReportFormat::Csv => report.to_csv().map_err(|e| CliError::Failed(e.to_string()))?,
    };
    write_json(&eval_dir.join("report.json"), &report)?;
    let ext = if format == ReportFormat::Csv { "csv" } else { "txt" };
    std::fs::write(eval_dir.join(format!("report.{ext}")), &rendered).map_err(|e| io_err(&eval_dir, e))?;
    Ok(EvalSummary {
        report,
        rendered,
        skipped: skipped.into_iter().map(|s| s.task_id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MineSummary {
    pub tools: Vec<String>,
    /// Trajectory id and reason for every trajectory that gave no tool.
    pub rejected: Vec<(String, String)>,
}

/// Mine tools from a trajectory journal. Each tool is validated on a
/// fresh device placed on the tool's first screen before it is stored.
pub fn cmd_mine(cfg: &RunConfig, trajectories: &Path) -> Result<MineSummary, CliError> {
    let trajs = read_trajectories(trajectories).map_err(|e| io_err(trajectories, e))?;
    let stable = detect_stable_elements(&trajs);
    let registry = ToolRegistry::open(cfg.registry_dir()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut summary = MineSummary {
        tools: Vec::new(),
        rejected: Vec::new(),
    };
    for traj in &trajs {
        if traj.outcome != Outcome::Success {
            summary.rejected.push((traj.trajectory_id.clone(), "did not succeed".into()));
            continue;
        }
        let tool = match mine_workflow(traj, &stable, None) {
            Ok(t) => t,
            Err(ToolError::NotMinable(why)) => {
                summary.rejected.push((traj.trajectory_id.clone(), why));
                continue;
            }
            Err(e) => return Err(CliError::Failed(e.to_string())),
        };
        let mut device = open_devices(cfg)?.remove(0);
        if let Some(first) = traj.steps.iter().find(|s| s.op.is_device_affecting()) {
            place_device(device.as_mut(), cfg, &first.pre_screen)?;
        }
        match validate_tool(&tool, device.as_mut(), None) {
            Ok(report) if report.passed => {
                let id = registry.register(tool, &report).map_err(|e| CliError::Failed(e.to_string()))?;
                summary.tools.push(id);
            }
            Ok(report) => summary.rejected.push((traj.trajectory_id.clone(), report.detail)),
            Err(e) => summary.rejected.push((traj.trajectory_id.clone(), e.to_string())),
        }
    }
    if summary.tools.is_empty() {
        let why: Vec<String> = summary.rejected.iter().map(|(t, w)| format!("{t}: {w}")).collect();
        return Err(CliError::Failed(format!("no tool mined ({})", why.join("; "))));
    }
    Ok(summary)
}

/// Put a simulator on `screen`; real devices are left where they are.
fn place_device(device: &mut dyn Device, cfg: &RunConfig, screen: &str) -> Result<(), CliError> {
    if let Some(path) = &cfg.device.scenario {
        let scenario = Scenario::load(path).map_err(|e| io_err(path, e))?;
        let mut sim = SimDevice::with_id(scenario, device.id().to_string());
        if sim.goto(screen).is_ok() {
            if let Some(snap) = sim.snapshot() {
                device.restore(&snap)?;
            }
        }
    }
    Ok(())
}

/// One line per recorded step of every trajectory under `run`, which is
/// a run directory or a trajectory journal.
pub fn cmd_replay(run: &Path) -> Result<Vec<String>, CliError> {
    let path = if run.is_dir() { run.join("trajectories.jsonl") } else { run.to_path_buf() };
    let trajs = read_trajectories(&path).map_err(|e| io_err(&path, e))?;
    let mut lines = Vec::new();
    for t in &trajs {
        for s in &t.steps {
            let target = s
                .target
                .as_ref()
                .map(|e| format!(" {}", e.identity()))
                .unwrap_or_default();
            let params = if s.params.is_empty() {
                String::new()
            } else {
                format!(" {}", serde_json::Value::Object(s.params.clone()))
            };
            lines.push(format!(
                "{} #{:<2} {:<14} {:?}{}{} -> {} [{}]",
                t.trajectory_id,
                s.index,
                s.pre_screen,
                s.op,
                target,
                params,
                s.post_screen,
                if s.result.ok { "ok" } else { "failed" }
            ));
        }
    }
    Ok(lines)
}
