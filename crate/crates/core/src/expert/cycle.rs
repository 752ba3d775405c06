//! The Observe-Verify-Act loop shared by exploration and execution.

use super::{
    verify_transition, ExecCycleState, ExpertContext, ExpertError, ExpertPortrait, FailureReason,
    StepBudget,
};
use crate::device::{
    diff_screens, Action, CheckScope, Device, DeviceError, Op, Predicate, ScreenState, UiElement,
};
use crate::gateway::{Gateway, ModelRequest, RoleTag};
use crate::memory::{think_process, IconKey, IconObservation, ThinkOutcome, WorkingMemory};
use crate::text::quoted_inputs;
use crate::toolsmith::{
    execute_tool, ActionTrajectory, Outcome, ToolError, TrajectoryRecorder, TOOL_MATCH_THRESHOLD,
};
use serde_json::{Map, Value};
use std::collections::{BTreeMap, BTreeSet};

/// A parsed decide_action answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// What this step is for.
    pub goal: String,
    /// Expected effect, checked on the next observation.
    pub expectation: String,
    /// `(element, function)` guesses for icons on the screen.
    pub icon_guesses: Vec<(String, String)>,
}

/// Find an element by stable key, key suffix after `/` or `:`, element id
/// or element reference.
pub(crate) fn resolve_element<'a>(screen: &'a ScreenState, name: &str) -> Option<&'a UiElement> {
    screen.elements.iter().find(|e| {
        e.stable_key.as_deref() == Some(name)
            || e.stable_key
                .as_deref()
                .is_some_and(|k| k.rsplit(['/', ':']).next() == Some(name))
            || e.element_id == name
            || e.element_ref() == name
    })
}

fn str_field(p: &Value, name: &str) -> String {
    p.get(name)
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string()
}

/// Turn a decide_action payload into an action. A `target` naming an
/// element on `screen` supplies the coordinates when `params` has none.
pub fn parse_decision(payload: &Value, screen: &ScreenState) -> Result<Decision, String> {
    let op = payload
        .get("op")
        .and_then(Value::as_str)
        .ok_or("answer has no 'op'")?;
    let mut params: Map<String, Value> = match payload.get("params") {
        Some(Value::Object(m)) => m.clone(),
        None | Some(Value::Null) => Map::new(),
        Some(other) => return Err(format!("params must be an object, got {other}")),
    };
    let op_kind: Op = op.parse().map_err(|e: DeviceError| e.to_string())?;
    if let Some(target) = payload.get("target").and_then(Value::as_str) {
        if matches!(op_kind, Op::Tap | Op::Swipe) && !params.contains_key("x") {
            let el = resolve_element(screen, target)
                .ok_or_else(|| format!("target '{target}' not on screen {}", screen.display_name()))?;
            let (x, y) = el.bounds.center();
            params.insert("x".into(), Value::from(x));
            params.insert("y".into(), Value::from(y));
        }
    }
    let action = Action::from_parts(op, &params).map_err(|e| e.to_string())?;
    let icon_guesses = payload
        .get("icon_guesses")
        .and_then(Value::as_array)
        .map(|a| guesses_from(a))
        .unwrap_or_default();
    Ok(Decision {
        action,
        goal: str_field(payload, "goal"),
        expectation: str_field(payload, "expectation"),
        icon_guesses,
    })
}

fn guesses_from(items: &[Value]) -> Vec<(String, String)> {
    items
        .iter()
        .filter_map(|g| {
            let e = g.get("element")?.as_str()?;
            let f = g.get("function")?.as_str()?;
            Some((e.to_string(), f.to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Explore,
    Execute,
}

pub(crate) struct CycleRequest<'a> {
    pub expert: &'a ExpertPortrait,
    pub goal: &'a str,
    pub done: Option<&'a Predicate>,
    pub max_steps: usize,
    pub trajectory_id: String,
    pub mode: Mode,
    pub explore_budget: Option<&'a StepBudget>,
}

#[derive(Debug, Clone)]
pub(crate) struct CycleReport {
    pub success: bool,
    pub failure: Option<FailureReason>,
    pub trajectory: ActionTrajectory,
    pub steps_used: usize,
    pub verify_failures: usize,
    pub tool_used: Option<String>,
    pub touched_icons: Vec<IconKey>,
    /// Logical screens in the order they were observed.
    pub screens: Vec<String>,
}

struct Pending {
    action: Action,
    expectation: String,
    icon: Option<IconKey>,
}

fn element_lines(screen: &ScreenState) -> String {
    screen
        .elements
        .iter()
        .map(|e| {
            format!(
                "{} {} {:?} {:?}",
                e.element_ref(),
                e.role.as_str(),
                e.label.as_deref().unwrap_or(""),
                <[i32; 4]>::from(e.bounds)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn is_done(
    device: &dyn Device,
    done: Option<&Predicate>,
    ctx: &ExpertContext,
    goal: &str,
    screen: &ScreenState,
) -> Result<bool, ExpertError> {
    let Some(pred) = done else {
        return Ok(false);
    };
    if let Some(v) = device.check(pred, CheckScope::Current) {
        return Ok(v);
    }
    let question = match pred {
        Predicate::Judge(q) => q.clone(),
        other => serde_json::to_string(other).unwrap_or_default(),
    };
    let req = ModelRequest::new(ctx.run.clone(), RoleTag::Judge)
        .key("task", goal)
        .key("screen", screen.display_name())
        .context("criterion", question)
        .image(screen.screenshot_ref.clone());
    let resp = ctx.gateway.complete(&req)?;
    Ok(resp
        .payload()
        .and_then(|p| p.get("done").and_then(Value::as_bool))
        .unwrap_or(false))
}

/// Run the cycle until the goal holds, the model stops, or a limit is hit.
pub(crate) fn run_cycle(
    req: &CycleRequest<'_>,
    device: &mut dyn Device,
    ctx: &ExpertContext,
    wm: &mut WorkingMemory,
) -> Result<CycleReport, ExpertError> {
    let start = device.capture_screen()?;
    let mut rec = TrajectoryRecorder::start(
        ActionTrajectory::new(req.trajectory_id.clone(), start.app_id.clone(), req.goal),
        start.clone(),
    );
    let mut state = ExecCycleState {
        previous: None,
        current: start,
        last_action: None,
        last_expectation: String::new(),
        step_count: 0,
    };
    let mut pending: Option<Pending> = None;
    let mut consecutive_failures = 0usize;
    let mut verify_failures = 0usize;
    let mut decisions = 0usize;
    let decision_limit = req.max_steps * 3 + ctx.config.redecide_limit + 2;
    let mut tried_tools: BTreeSet<String> = BTreeSet::new();
    let mut tool_used = None;
    let mut touched: Vec<IconKey> = Vec::new();
    let mut seen_screens: BTreeSet<String> = BTreeSet::new();
    let mut screens = Vec::new();
    let mut last_note = String::new();
    let model: Option<(&dyn Gateway, &crate::gateway::RunId)> = Some((ctx.gateway.as_ref(), &ctx.run));
    let inputs = quoted_inputs(req.goal);

    let outcome: Result<(), FailureReason> = 'cycle: loop {
        // Observe
        let current = device.capture_screen()?;
        rec.refresh(current.clone());
        state.previous = Some(std::mem::replace(&mut state.current, current));
        if screens.last() != Some(&state.current.display_name()) {
            screens.push(state.current.display_name());
        }

        // Verify
        if let Some(p) = pending.take() {
            let prev = state.previous.as_ref().expect("previous set after first action");
            let verdict = verify_transition(prev, &state.current, &p.action, &p.expectation, model);
            if let (Mode::Explore, Some(key), Action::Tap { .. }) = (req.mode, &p.icon, &p.action) {
                if !p.expectation.is_empty() {
                    let diff = diff_screens(prev, &state.current);
                    let updated = if ctx.gateway.is_scripted() {
                        ctx.icons.verify(key, &p.expectation, &diff)
                    } else {
                        ctx.icons.apply_verdict(key, &p.expectation, &diff, verdict.consistent)
                    };
                    if let Err(e) = updated {
                        log::debug!("icon not verified: {e}");
                    }
                }
            }
            if verdict.consistent {
                consecutive_failures = 0;
            } else {
                verify_failures += 1;
                consecutive_failures += 1;
                wm.write("failure", &format!("{} did not work: {}", p.action, verdict.note));
                if consecutive_failures > ctx.config.redecide_limit {
                    break 'cycle Err(FailureReason::VerifyLimit);
                }
            }
            last_note = verdict.note;
        }

        if is_done(device, req.done, ctx, req.goal, &state.current)? {
            break 'cycle Ok(());
        }

        // Capacity for another device step.
        if state.step_count >= req.max_steps
            || ctx.step_budget.as_ref().is_some_and(|b| b.remaining() == 0)
        {
            break 'cycle Err(FailureReason::StepCapExceeded);
        }
        if req.explore_budget.is_some_and(|b| b.remaining() == 0) {
            break 'cycle Err(FailureReason::BudgetExhausted);
        }

        if req.mode == Mode::Explore && seen_screens.insert(state.current.screen_signature.0.clone()) {
            guess_icons(ctx, &state.current, &mut touched)?;
        }

        // Act: a registered tool first, the model otherwise.
        if ctx.config.tool_first {
            let candidate = ctx
                .registry
                .lookup(&state.current.app_id, &state.current.screen_signature, req.goal)
                .into_iter()
                .find(|m| {
                    !m.needs_navigation
                        && m.score >= TOOL_MATCH_THRESHOLD
                        && !tried_tools.contains(&m.tool.tool_id)
                        && m.tool.formal_params.len() <= inputs.len()
                });
            if let Some(m) = candidate {
                let n = m.tool.program.len();
                let fits = state.step_count + n <= req.max_steps
                    && ctx.step_budget.as_ref().map_or(true, |b| b.remaining() >= n)
                    && req.explore_budget.map_or(true, |b| b.remaining() >= n);
                if fits {
                    tried_tools.insert(m.tool.tool_id.clone());
                    let bindings: BTreeMap<String, String> = m
                        .tool
                        .formal_params
                        .iter()
                        .zip(inputs.iter())
                        .map(|(p, v)| (p.name.clone(), v.clone()))
                        .collect();
                    let run = execute_tool(&m.tool, &bindings, device);
                    let (traj, completed) = match run {
                        Ok(t) => (t, true),
                        Err(ToolError::StepFailed { step, reason, prefix }) => {
                            wm.write("failure", &format!("tool {} failed at step {step}: {reason}", m.tool.tool_id));
                            (*prefix, false)
                        }
                        Err(ToolError::PreconditionMismatch { .. }) => continue 'cycle,
                        Err(e) => return Err(e.into()),
                    };
                    let used = traj.device_steps();
                    state.step_count += used;
                    if let Some(b) = &ctx.step_budget {
                        b.try_consume(used.min(b.remaining()));
                    }
                    if let Some(b) = req.explore_budget {
                        b.try_consume(used.min(b.remaining()));
                    }
                    let landed = traj.final_signature().cloned();
                    rec.absorb(traj)?;
                    if completed {
                        tool_used = Some(m.tool.tool_id.clone());
                        wm.write("tool", &format!("ran tool {}", m.tool.tool_id));
                        if req.done.is_none() && landed.as_ref() == Some(&m.tool.final_signature) {
                            state.current = rec.current().clone();
                            screens.push(state.current.display_name());
                            break 'cycle Ok(());
                        }
                    }
                    continue 'cycle;
                }
            }
        }

        decisions += 1;
        if decisions > decision_limit {
            break 'cycle Err(FailureReason::DecisionLimit);
        }
        let mut request = ModelRequest::new(ctx.run.clone(), RoleTag::DecideAction)
            .key("screen", state.current.display_name())
            .key("goal", req.goal)
            .context("expert", format!("{}: {}", req.expert.role_name, req.expert.responsibility))
            .context("elements", element_lines(&state.current))
            .context("icons", icon_lines(ctx, &state.current))
            .context("insights", insight_lines(ctx, req))
            .context("working_memory", wm.render())
            .context("last_check", last_note.clone());
        if let Some(prev) = &state.previous {
            if prev.screenshot_ref != state.current.screenshot_ref {
                request = request.image(prev.screenshot_ref.clone());
            }
        }
        request = request.image(state.current.screenshot_ref.clone());
        let response = ctx.gateway.complete(&request)?;
        let decision = match response
            .payload()
            .ok_or_else(|| "answer is not JSON".to_string())
            .and_then(|p| parse_decision(&p, &state.current))
        {
            Ok(d) => d,
            Err(e) => {
                consecutive_failures += 1;
                wm.write("failure", &format!("unusable decision: {e}"));
                if consecutive_failures > ctx.config.redecide_limit {
                    break 'cycle Err(FailureReason::DecisionLimit);
                }
                continue 'cycle;
            }
        };
        if req.mode == Mode::Explore {
            for (element, function) in &decision.icon_guesses {
                if let Some(el) = resolve_element(&state.current, element) {
                    touched.push(upsert(ctx, &state.current, el, Some(function))?);
                }
            }
        }
        let step_goal = if decision.goal.is_empty() {
            req.goal.to_string()
        } else {
            decision.goal.clone()
        };

        match &decision.action {
            Action::Stop => {
                rec.perform(device, &decision.action, &step_goal, false)?;
                let ok = match req.done {
                    None => true,
                    Some(_) => is_done(device, req.done, ctx, req.goal, &state.current)?,
                };
                break 'cycle if ok { Ok(()) } else { Err(FailureReason::StoppedEarly) };
            }
            Action::Think { flow, goal } => {
                let me = wm.owner().clone();
                let via = (ctx.config.think_via_model).then_some((ctx.gateway.as_ref(), &ctx.run));
                let note = match think_process(wm, &me, *flow, goal, via) {
                    Ok(ThinkOutcome::Recalled(entries)) => format!("recalled {} entries", entries.len()),
                    Ok(ThinkOutcome::Compacted { removed }) => format!("compacted {removed} entries"),
                    Ok(ThinkOutcome::Written) => "written".to_string(),
                    Err(e) => format!("think failed: {e}"),
                };
                rec.record_local(&decision.action, &step_goal, &note)?;
            }
            Action::Read { .. } => {
                let result = match rec.perform(device, &decision.action, &step_goal, false) {
                    Ok(r) => r,
                    Err(ToolError::Device(e @ DeviceError::ActionRejected(_))) => {
                        wm.write("failure", &e.to_string());
                        continue 'cycle;
                    }
                    Err(e) => return Err(e.into()),
                };
                wm.write("read", &result.note);
            }
            action => {
                let target = match action {
                    Action::Tap { x, y } | Action::Swipe { x, y, .. } => state.current.hit_test(*x, *y).cloned(),
                    Action::Text { .. } => state
                        .current
                        .focused
                        .as_ref()
                        .and_then(|f| state.current.elements.iter().find(|e| &e.element_id == f))
                        .cloned(),
                    _ => None,
                };
                let task_input = match action {
                    Action::Text { content } => inputs.iter().any(|i| i == content),
                    _ => false,
                };
                match rec.perform(device, action, &step_goal, task_input) {
                    Ok(_) => {}
                    Err(ToolError::Device(e @ (DeviceError::ActionRejected(_) | DeviceError::InvalidParams(_)))) => {
                        consecutive_failures += 1;
                        verify_failures += 1;
                        wm.write("failure", &format!("{action} refused: {e}"));
                        if consecutive_failures > ctx.config.redecide_limit {
                            break 'cycle Err(FailureReason::VerifyLimit);
                        }
                        continue 'cycle;
                    }
                    Err(e) => return Err(e.into()),
                }
                state.step_count += 1;
                if let Some(b) = &ctx.step_budget {
                    b.try_consume(1);
                }
                if let Some(b) = req.explore_budget {
                    b.try_consume(1);
                }
                let icon = match (&target, req.mode) {
                    (Some(el), Mode::Explore) => {
                        let guess = (!decision.expectation.is_empty()).then_some(decision.expectation.as_str());
                        let key = upsert(ctx, &state.current, el, guess)?;
                        touched.push(key.clone());
                        Some(key)
                    }
                    _ => None,
                };
                state.last_action = Some(action.clone());
                state.last_expectation = decision.expectation.clone();
                pending = Some(Pending {
                    action: action.clone(),
                    expectation: decision.expectation.clone(),
                    icon,
                });
            }
        }
        if wm.over_budget() {
            if let Err(e) = wm.compact() {
                log::warn!("working memory compaction failed: {e}");
            }
        }
    };

    let success = outcome.is_ok();
    let trajectory = rec.finish(if success { Outcome::Success } else { Outcome::Failure });
    let mut seen = BTreeSet::new();
    touched.retain(|k| seen.insert(k.clone()));
    Ok(CycleReport {
        success,
        failure: outcome.err(),
        steps_used: trajectory.device_steps(),
        trajectory,
        verify_failures,
        tool_used,
        touched_icons: touched,
        screens,
    })
}

fn upsert(
    ctx: &ExpertContext,
    screen: &ScreenState,
    el: &UiElement,
    guess: Option<&str>,
) -> Result<IconKey, ExpertError> {
    let obs = IconObservation {
        app_id: screen.app_id.clone(),
        screen_signature: screen.screen_signature.clone(),
        element_ref: el.element_ref(),
        guess: guess.map(str::to_string),
    };
    ctx.icons.upsert(&obs)?;
    Ok(obs.key())
}

/// Ask for guesses about a screen's icons the first time it is seen.
fn guess_icons(ctx: &ExpertContext, screen: &ScreenState, touched: &mut Vec<IconKey>) -> Result<(), ExpertError> {
    if !ctx.icons.query(&screen.app_id, &screen.screen_signature).is_empty() {
        return Ok(());
    }
    let req = ModelRequest::new(ctx.run.clone(), RoleTag::GuessIcon)
        .key("app", screen.app_id.as_str())
        .key("screen", screen.display_name())
        .context("elements", element_lines(screen))
        .image(screen.screenshot_ref.clone());
    let resp = ctx.gateway.complete(&req)?;
    let items = match resp.payload() {
        Some(Value::Array(a)) => a,
        Some(Value::Object(o)) => match o.get("guesses") {
            Some(Value::Array(a)) => a.clone(),
            _ => Vec::new(),
        },
        _ => Vec::new(),
    };
    for (element, function) in guesses_from(&items) {
        if let Some(el) = resolve_element(screen, &element) {
            touched.push(upsert(ctx, screen, el, Some(&function))?);
        }
    }
    Ok(())
}

fn icon_lines(ctx: &ExpertContext, screen: &ScreenState) -> String {
    ctx.icons
        .query(&screen.app_id, &screen.screen_signature)
        .iter()
        .map(|r| {
            format!(
                "{} [{:?}] {}",
                r.element_ref,
                r.confidence,
                r.hypothesized_function.as_deref().unwrap_or("unknown")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn insight_lines(ctx: &ExpertContext, req: &CycleRequest<'_>) -> String {
    ctx.insights
        .query(&req.expert.role_name, req.goal, ctx.config.insight_k)
        .iter()
        .map(|(_, r)| r.text.clone())
        .collect::<Vec<_>>()
        .join("\n")
}
