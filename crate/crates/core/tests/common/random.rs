//! Random simulator apps and random walks over them.

use mobile_experts::device::sim::{Scenario, SimDevice};
use mobile_experts::device::{Action, Device, Role};
use mobile_experts::toolsmith::{ActionTrajectory, Outcome, TrajectoryRecorder};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

pub const APP: &str = "com.example.rand";

/// Ground truth kept next to a generated scenario.
#[derive(Debug, Clone)]
pub struct RandomApp {
    pub scenario: Scenario,
    /// `(screen, element)` pairs whose position alternates between visits.
    pub shifting: BTreeSet<(String, String)>,
    /// Tap transitions `(screen, element) -> screen`.
    pub taps: BTreeMap<(String, String), String>,
    pub fields: BTreeSet<String>,
}

pub fn random_app(rng: &mut impl Rng, max_screens: usize) -> RandomApp {
    let n = rng.gen_range(2..=max_screens.max(2));
    let mut screens = Vec::new();
    let mut transitions = Vec::new();
    let mut shifting = BTreeSet::new();
    let mut taps = BTreeMap::new();
    let mut fields = BTreeSet::new();
    for i in 0..n {
        let sid = format!("s{i}");
        let mut elements = vec![json!({
            "id": "title", "role": "container", "bounds": [0, 0, 1080, 150],
            "key": format!("{APP}:id/s{i}_title"), "label": sid
        })];
        for j in 0..rng.gen_range(1..=4) {
            let eid = format!("b{j}");
            let top = 200 + 300 * j;
            let mut el = json!({
                "id": eid, "role": "button", "bounds": [100, top, 980, top + 150],
                "key": format!("{APP}:id/s{i}_b{j}"), "label": format!("button {j}")
            });
            if rng.gen_bool(0.3) {
                el["shift"] = json!([[0, 0], [0, 96]]);
                shifting.insert((sid.clone(), eid.clone()));
            }
            elements.push(el);
            if rng.gen_bool(0.85) {
                let mut to = rng.gen_range(0..n - 1);
                if to >= i {
                    to += 1;
                }
                let to = format!("s{to}");
                transitions.push(json!({"from": sid, "element": eid, "op": "tap", "to": to}));
                taps.insert((sid.clone(), eid), to);
            }
        }
        let mut screen = json!({"id": sid, "app_id": APP, "elements": elements});
        if rng.gen_bool(0.4) {
            screen["elements"].as_array_mut().unwrap().push(json!({
                "id": "field", "role": "text_field", "bounds": [100, 1500, 980, 1620],
                "key": format!("{APP}:id/s{i}_field")
            }));
            screen["focus"] = Value::from("field");
            fields.insert(sid.clone());
        }
        screens.push(screen);
    }
    let spec = json!({"name": "random", "initial_screen": "s0", "screens": screens, "transitions": transitions});
    RandomApp {
        scenario: Scenario::from_json(&spec.to_string()).expect("generated scenario is valid"),
        shifting,
        taps,
        fields,
    }
}

/// A recorded walk and what the oracle needs to judge it.
#[derive(Debug, Clone)]
pub struct Walk {
    pub trajectory: ActionTrajectory,
    /// Screen-changing taps as `(screen, element)`.
    pub essential_taps: Vec<(String, String)>,
    /// Entries per screen, the initial one included.
    pub entries: BTreeMap<String, usize>,
    pub inputs: Vec<String>,
}

/// Random taps (mostly on buttons with a transition) and text entry.
pub fn random_walk(rng: &mut impl Rng, app: &RandomApp, len: usize, id: &str) -> Walk {
    let mut dev = SimDevice::new(app.scenario.clone());
    let start = dev.capture_screen().unwrap();
    let mut rec = TrajectoryRecorder::start(ActionTrajectory::new(id, APP, format!("walk {id}")), start);
    let mut essential = Vec::new();
    let mut entries = BTreeMap::from([("s0".to_string(), 1usize)]);
    let mut inputs = Vec::new();
    for k in 0..len {
        let screen = dev.current_screen().to_string();
        let state = dev.capture_screen().unwrap();
        if app.fields.contains(&screen) && rng.gen_bool(0.25) {
            let text = format!("input {id} {k}");
            rec.perform(&mut dev, &Action::Text { content: text.clone() }, "type", true).unwrap();
            inputs.push(text);
            continue;
        }
        let buttons: Vec<_> = state.elements.iter().filter(|e| e.role == Role::Button).collect();
        let live: Vec<_> = buttons
            .iter()
            .filter(|e| app.taps.contains_key(&(screen.clone(), e.element_id.clone())))
            .collect();
        let pick = if !live.is_empty() && rng.gen_bool(0.85) {
            **live.choose(rng).unwrap()
        } else {
            *buttons.choose(rng).unwrap()
        };
        let (x, y) = pick.bounds.center();
        let key = (screen.clone(), pick.element_id.clone());
        rec.perform(&mut dev, &Action::Tap { x, y }, &format!("tap {}", pick.element_id), false)
            .unwrap();
        if let Some(to) = app.taps.get(&key) {
            essential.push(key);
            *entries.entry(to.clone()).or_default() += 1;
        }
    }
    Walk {
        trajectory: rec.finish(Outcome::Success),
        essential_taps: essential,
        entries,
        inputs,
    }
}

/// Brute-force stability verdict from the scenario itself: a shifting
/// element is seen at two positions once its screen was entered twice.
pub fn oracle_minable(app: &RandomApp, walk: &Walk) -> bool {
    walk.essential_taps.iter().all(|(s, e)| {
        !app.shifting.contains(&(s.clone(), e.clone())) || walk.entries.get(s).copied().unwrap_or(0) < 2
    })
}
