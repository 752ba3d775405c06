//! Deterministic simulated device driven by a scenario file.
//!
//! A scenario declares logical screens with their elements and a transition
//! table keyed by `(screen, element, op)`. Elements may vary per visit
//! (labels, presence, offsets) so stability detection has something to
//! detect.

use super::{
    classify_effect, hit_test, screen_signature, Action, ActionResult, CheckScope, Device,
    DeviceError, DeviceSnapshot, Direction, DocumentReader, Effect, Predicate, Rect, Role,
    ScreenState, UiElement,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub id: String,
    pub role: Role,
    pub bounds: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Content changes between visits.
    #[serde(default)]
    pub variable: bool,
    /// Labels cycled per visit; implies `variable`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    /// Presence pattern cycled per visit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub present: Vec<bool>,
    /// Pixel offsets `[dx, dy]` cycled per visit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shift: Vec<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub id: String,
    pub app_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Text field focused on entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags_on_enter: Vec<String>,
    pub elements: Vec<ElementSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub from: String,
    /// `None` matches any element (screen-level ops such as back or wait).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<String>,
    /// `tap`, `text`, `swipe_up|down|left|right`, `back`, `home` or `wait`.
    pub op: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_display")]
    pub display: [i32; 2],
    pub initial_screen: String,
    /// Target of the Home key when no explicit transition exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_screen: Option<String>,
    pub screens: Vec<ScreenSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub documents: BTreeMap<String, String>,
}

fn default_display() -> [i32; 2] {
    [1080, 1920]
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, DeviceError> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| DeviceError::Scenario(format!("parse: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DeviceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DeviceError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn screen(&self, id: &str) -> Option<&ScreenSpec> {
        self.screens.iter().find(|s| s.id == id)
    }

    pub fn screen_mut(&mut self, id: &str) -> Option<&mut ScreenSpec> {
        self.screens.iter_mut().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let err = |m: String| Err(DeviceError::Scenario(m));
        let mut ids = BTreeSet::new();
        for s in &self.screens {
            if !ids.insert(s.id.as_str()) {
                return err(format!("duplicate screen '{}'", s.id));
            }
            let mut el_ids = BTreeSet::new();
            for e in &s.elements {
                if !el_ids.insert(e.id.as_str()) {
                    return err(format!("duplicate element '{}' on '{}'", e.id, s.id));
                }
            }
            if let Some(f) = &s.focus {
                if !el_ids.contains(f.as_str()) {
                    return err(format!("focus '{f}' not on screen '{}'", s.id));
                }
            }
        }
        if !ids.contains(self.initial_screen.as_str()) {
            return err(format!("initial screen '{}' not declared", self.initial_screen));
        }
        for s in &self.screens {
            if let Some(p) = &s.parent {
                if !ids.contains(p.as_str()) {
                    return err(format!("parent '{p}' of '{}' not declared", s.id));
                }
            }
        }
        if let Some(h) = &self.home_screen {
            if !ids.contains(h.as_str()) {
                return err(format!("home screen '{h}' not declared"));
            }
        }
        for t in &self.transitions {
            let Some(from) = self.screen(&t.from) else {
                return err(format!("transition from unknown screen '{}'", t.from));
            };
            if !ids.contains(t.to.as_str()) {
                return err(format!("transition to unknown screen '{}'", t.to));
            }
            if let Some(e) = &t.element {
                if !from.elements.iter().any(|x| &x.id == e) {
                    return err(format!("transition element '{e}' not on '{}'", t.from));
                }
            }
            const OPS: [&str; 9] = [
                "tap", "text", "swipe_up", "swipe_down", "swipe_left", "swipe_right", "back",
                "home", "wait",
            ];
            if !OPS.contains(&t.op.as_str()) {
                return err(format!("transition op '{}' not recognised", t.op));
            }
        }
        Ok(())
    }

    fn transition(&self, screen: &str, element: Option<&str>, op: &str) -> Option<&TransitionSpec> {
        let exact = self
            .transitions
            .iter()
            .find(|t| t.from == screen && t.op == op && t.element.as_deref() == element && element.is_some());
        exact.or_else(|| {
            self.transitions
                .iter()
                .find(|t| t.from == screen && t.op == op && t.element.is_none())
        })
    }

    /// Elements of `screen` as observed on its `visit`-th entry.
    pub fn render_elements(
        &self,
        screen: &str,
        visit: usize,
        values: &BTreeMap<String, String>,
    ) -> Vec<UiElement> {
        let Some(spec) = self.screen(screen) else {
            return Vec::new();
        };
        spec.elements
            .iter()
            .filter(|e| e.present.is_empty() || e.present[visit % e.present.len()])
            .map(|e| {
                let bounds = if e.shift.is_empty() {
                    e.bounds
                } else {
                    let [dx, dy] = e.shift[visit % e.shift.len()];
                    e.bounds.translate(dx, dy)
                };
                let label = if let Some(v) = values.get(&e.id) {
                    Some(v.clone())
                } else if !e.labels.is_empty() {
                    Some(e.labels[visit % e.labels.len()].clone())
                } else {
                    e.label.clone()
                };
                UiElement {
                    element_id: e.id.clone(),
                    role: e.role,
                    label,
                    bounds,
                    stable_key: e.key.clone(),
                    is_text_variable: e.variable || !e.labels.is_empty(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimState {
    screen: String,
    visits: BTreeMap<String, usize>,
    focus: Option<String>,
    /// Text typed into fields on the current visit, by element id.
    values: BTreeMap<String, String>,
    flags: BTreeSet<String>,
    visited: BTreeSet<String>,
    history: Vec<String>,
}

struct ScenarioDocs(BTreeMap<String, String>);

impl DocumentReader for ScenarioDocs {
    fn read(&self, file: &str) -> Result<String, DeviceError> {
        self.0
            .get(file)
            .cloned()
            .ok_or_else(|| DeviceError::ActionRejected(format!("no document '{file}'")))
    }
}

/// Simulated device. Identical action sequences from identical start states
/// produce identical observations.
pub struct SimDevice {
    id: String,
    scenario: Arc<Scenario>,
    state: SimState,
    connected: bool,
    wait_delay: Duration,
    captures: u64,
    reader: Box<dyn DocumentReader>,
}

impl std::fmt::Debug for SimDevice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimDevice")
            .field("id", &self.id)
            .field("screen", &self.state.screen)
            .finish()
    }
}

impl SimDevice {
    pub fn new(scenario: Scenario) -> Self {
        Self::with_id(scenario, "sim-0")
    }

    pub fn with_id(scenario: Scenario, id: impl Into<String>) -> Self {
        let reader = Box::new(ScenarioDocs(scenario.documents.clone()));
        let scenario = Arc::new(scenario);
        let state = Self::initial_state(&scenario);
        Self {
            id: id.into(),
            scenario,
            state,
            connected: true,
            wait_delay: Duration::ZERO,
            captures: 0,
            reader,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DeviceError> {
        Ok(Self::new(Scenario::load(path)?))
    }

    fn initial_state(scenario: &Scenario) -> SimState {
        let mut state = SimState {
            screen: String::new(),
            visits: BTreeMap::new(),
            focus: None,
            values: BTreeMap::new(),
            flags: BTreeSet::new(),
            visited: BTreeSet::new(),
            history: Vec::new(),
        };
        enter(scenario, &mut state, &scenario.initial_screen, &[]);
        state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn set_wait_delay(&mut self, delay: Duration) {
        self.wait_delay = delay;
    }

    pub fn set_reader(&mut self, reader: Box<dyn DocumentReader>) {
        self.reader = reader;
    }

    /// Simulate a dropped connection.
    pub fn set_connected(&mut self, connected: bool) {
        self.connected = connected;
    }

    pub fn current_screen(&self) -> &str {
        &self.state.screen
    }

    pub fn flags(&self) -> &BTreeSet<String> {
        &self.state.flags
    }

    /// Jump straight to a screen, as if freshly entered.
    pub fn goto(&mut self, screen: &str) -> Result<(), DeviceError> {
        if self.scenario.screen(screen).is_none() {
            return Err(DeviceError::Scenario(format!("unknown screen '{screen}'")));
        }
        enter(&self.scenario, &mut self.state, screen, &[]);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.state = Self::initial_state(&self.scenario);
    }

    fn visit_index(&self) -> usize {
        self.state
            .visits
            .get(&self.state.screen)
            .copied()
            .unwrap_or(1)
            .saturating_sub(1)
    }

    fn observe(&mut self) -> ScreenState {
        let elements =
            self.scenario
                .render_elements(&self.state.screen, self.visit_index(), &self.state.values);
        let app_id = self
            .scenario
            .screen(&self.state.screen)
            .map(|s| s.app_id.clone())
            .unwrap_or_default();
        let captured_at = self.captures;
        self.captures += 1;
        ScreenState {
            screen_signature: screen_signature(&elements),
            screenshot_ref: format!("{}/{}#{}", self.id, self.state.screen, self.visit_index()),
            elements,
            app_id,
            screen_name: Some(self.state.screen.clone()),
            focused: self.state.focus.clone(),
            captured_at,
        }
    }

    fn ensure_connected(&self) -> Result<(), DeviceError> {
        if self.connected {
            Ok(())
        } else {
            Err(DeviceError::Unreachable(format!("{} disconnected", self.id)))
        }
    }

    fn follow(&mut self, element: Option<&str>, op: &str) -> bool {
        let scenario = Arc::clone(&self.scenario);
        match scenario.transition(&self.state.screen, element, op) {
            Some(t) => {
                enter(&scenario, &mut self.state, &t.to, &t.set_flags);
                true
            }
            None => false,
        }
    }

    fn apply(&mut self, action: &Action, pre: &ScreenState) -> Result<String, DeviceError> {
        let scenario = Arc::clone(&self.scenario);
        match action {
            Action::Tap { x, y } => {
                let Some(target) = hit_test(&pre.elements, *x, *y) else {
                    return Ok(format!("no element at ({x}, {y})"));
                };
                let target_id = target.element_id.clone();
                if self.follow(Some(&target_id), "tap") {
                    Ok(format!("tapped '{target_id}'"))
                } else if target.role == Role::TextField {
                    self.state.focus = Some(target_id.clone());
                    Ok(format!("focused '{target_id}'"))
                } else {
                    Ok(format!("tapped '{target_id}' (no transition)"))
                }
            }
            Action::Text { content } => {
                let Some(field) = self.state.focus.clone() else {
                    return Err(DeviceError::ActionRejected(
                        "no focused text field".into(),
                    ));
                };
                self.state.values.insert(field.clone(), content.clone());
                self.follow(Some(&field), "text");
                Ok(format!("typed into '{field}'"))
            }
            Action::Swipe { x, y, direction } => {
                let op = match direction {
                    Direction::Up => "swipe_up",
                    Direction::Down => "swipe_down",
                    Direction::Left => "swipe_left",
                    Direction::Right => "swipe_right",
                };
                let target = hit_test(&pre.elements, *x, *y).map(|e| e.element_id.clone());
                if self.follow(target.as_deref(), op) {
                    Ok(format!("swiped {}", direction.as_str()))
                } else {
                    Ok("swipe had no effect".into())
                }
            }
            Action::Back => {
                if self.follow(None, "back") {
                    return Ok("back".into());
                }
                let parent = scenario
                    .screen(&self.state.screen)
                    .and_then(|s| s.parent.clone());
                match parent {
                    Some(p) => {
                        enter(&scenario, &mut self.state, &p, &[]);
                        Ok(format!("back to '{p}'"))
                    }
                    None => Ok("back: no parent screen".into()),
                }
            }
            Action::Home => {
                if self.follow(None, "home") {
                    return Ok("home".into());
                }
                match &scenario.home_screen {
                    Some(h) if *h != self.state.screen => {
                        enter(&scenario, &mut self.state, h, &[]);
                        Ok("home".into())
                    }
                    _ => Ok("home: already there".into()),
                }
            }
            Action::Wait => {
                if !self.wait_delay.is_zero() {
                    std::thread::sleep(self.wait_delay);
                }
                self.follow(None, "wait");
                Ok("waited".into())
            }
            Action::Read { file, .. } => self.reader.read(file),
            Action::Think { .. } => Ok("think is handled by working memory".into()),
            Action::Stop => Ok("stop".into()),
        }
    }
}

fn enter(scenario: &Scenario, state: &mut SimState, screen: &str, flags: &[String]) {
    state.screen = screen.to_string();
    *state.visits.entry(screen.to_string()).or_insert(0) += 1;
    state.values.clear();
    state.visited.insert(screen.to_string());
    state.history.push(screen.to_string());
    state.flags.extend(flags.iter().cloned());
    if let Some(spec) = scenario.screen(screen) {
        state.focus = spec.focus.clone();
        state.flags.extend(spec.flags_on_enter.iter().cloned());
    } else {
        state.focus = None;
    }
}

impl Device for SimDevice {
    fn id(&self) -> &str {
        &self.id
    }

    fn display(&self) -> (i32, i32) {
        (self.scenario.display[0], self.scenario.display[1])
    }

    fn capture_screen(&mut self) -> Result<ScreenState, DeviceError> {
        self.ensure_connected()?;
        Ok(self.observe())
    }

    fn perform(&mut self, action: &Action) -> Result<ActionResult, DeviceError> {
        self.ensure_connected()?;
        action.validate()?;
        action.check_bounds(self.display())?;
        let pre = self.observe();
        let note = self.apply(action, &pre)?;
        let post = self.observe();
        let observed_effect = if *action == Action::Stop {
            Effect::Terminal
        } else {
            classify_effect(&pre, &post)
        };
        Ok(ActionResult {
            ok: true,
            observed_effect,
            post_state: post,
            note,
        })
    }

    fn check(&self, predicate: &Predicate, scope: CheckScope) -> Option<bool> {
        match predicate {
            Predicate::Screen(name) => Some(match scope {
                CheckScope::Current => self.state.screen == *name,
                CheckScope::Ever => self.state.visited.contains(name),
            }),
            Predicate::Flag(flag) => Some(self.state.flags.contains(flag)),
            Predicate::Signature(sig) => {
                let elements = self.scenario.render_elements(
                    &self.state.screen,
                    self.visit_index(),
                    &self.state.values,
                );
                Some(screen_signature(&elements) == *sig)
            }
            Predicate::Judge(_) => None,
            Predicate::All(parts) => {
                let mut all = true;
                for p in parts {
                    all &= self.check(p, scope)?;
                }
                Some(all)
            }
        }
    }

    fn snapshot(&self) -> Option<DeviceSnapshot> {
        serde_json::to_value(&self.state).ok().map(DeviceSnapshot)
    }

    fn restore(&mut self, snapshot: &DeviceSnapshot) -> Result<(), DeviceError> {
        self.state = serde_json::from_value(snapshot.0.clone())
            .map_err(|e| DeviceError::Scenario(format!("bad snapshot: {e}")))?;
        Ok(())
    }
}
