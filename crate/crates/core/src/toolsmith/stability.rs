use super::{ActionTrajectory, ActionStep};
use crate::device::{Effect, Role, UiElement};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Stable elements keyed by `(app_id, screen, element_ref)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: BTreeSet<(String, String, String)>,
    /// Stable only because the screen was observed once.
    pub low_support: BTreeSet<(String, String, String)>,
    /// Stable position but content that differs between visits.
    pub label_varies: BTreeSet<(String, String, String)>,
    /// Number of observations per `(app_id, screen)`.
    pub visits: BTreeMap<(String, String), usize>,
}

impl StabilityReport {
    pub fn is_stable(&self, app_id: &str, screen: &str, element_ref: &str) -> bool {
        self.stable
            .contains(&(app_id.to_string(), screen.to_string(), element_ref.to_string()))
    }

    pub fn refs(&self) -> BTreeSet<String> {
        self.stable.iter().map(|(_, _, r)| r.clone()).collect()
    }

    pub fn merge(&mut self, other: StabilityReport) {
        self.stable.extend(other.stable);
        self.low_support.extend(other.low_support);
        self.label_varies.extend(other.label_varies);
        self.visits.extend(other.visits);
    }
}

type Observation<'a> = BTreeMap<String, (Role, [i32; 4], Option<&'a str>, bool)>;

fn observation(elements: &[UiElement]) -> Observation<'_> {
    elements
        .iter()
        .map(|e| {
            (
                e.element_ref(),
                (e.role, e.bounds.bucket(), e.label.as_deref(), e.is_text_variable),
            )
        })
        .collect()
}

/// Elements that keep the same role and bounds bucket on every observed visit
/// of their screen across all `trajs`.
///
/// Screens are grouped by logical name where the backend reports one, since
/// that is what a "visit of the same screen" means when unstable elements
/// change the signature itself.
pub fn detect_stable_elements(trajs: &[ActionTrajectory]) -> StabilityReport {
    let mut groups: BTreeMap<(String, String), Vec<Observation<'_>>> = BTreeMap::new();
    for traj in trajs {
        let mut prev: Option<&ActionStep> = None;
        for step in &traj.steps {
            let new_visit = prev.map_or(true, |p| p.result.effect != Effect::ScreenUnchanged);
            if new_visit && !step.pre_elements.is_empty() {
                groups
                    .entry((step.app_id.clone(), step.pre_screen.clone()))
                    .or_default()
                    .push(observation(&step.pre_elements));
            }
            prev = Some(step);
        }
        if let Some(last) = traj.steps.last() {
            if let Some(state) = &traj.final_state {
                if last.result.effect != Effect::ScreenUnchanged {
                    groups
                        .entry((state.app_id.clone(), state.display_name()))
                        .or_default()
                        .push(observation(&state.elements));
                }
            }
        }
    }

    let mut report = StabilityReport::default();
    for ((app, screen), observations) in groups {
        report.visits.insert((app.clone(), screen.clone()), observations.len());
        let candidates: BTreeSet<&String> = observations.iter().flat_map(|o| o.keys()).collect();
        for r in candidates {
            let first = observations[0].get(r);
            let Some(&(role, bucket, label, variable)) = first else {
                continue;
            };
            let consistent = observations
                .iter()
                .all(|o| matches!(o.get(r), Some(&(ro, b, _, _)) if ro == role && b == bucket));
            if !consistent {
                continue;
            }
            let key = (app.clone(), screen.clone(), r.clone());
            let varies = variable || observations.iter().any(|o| o[r].2 != label);
            if varies {
                report.label_varies.insert(key.clone());
            }
            if observations.len() == 1 {
                report.low_support.insert(key.clone());
            }
            report.stable.insert(key);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{screen_signature, Rect, ScreenState};
    use crate::toolsmith::StepResult;
    use crate::device::Action;

    fn el(key: &str, b: [i32; 4], label: &str, variable: bool) -> UiElement {
        UiElement {
            element_id: key.into(),
            role: Role::Button,
            label: Some(label.into()),
            bounds: Rect::try_from(b).unwrap(),
            stable_key: Some(key.into()),
            is_text_variable: variable,
        }
    }

    fn state(screen: &str, elements: Vec<UiElement>) -> ScreenState {
        ScreenState {
            screen_signature: screen_signature(&elements),
            elements,
            screenshot_ref: String::new(),
            app_id: "app".into(),
            screen_name: Some(screen.into()),
            focused: None,
            captured_at: 0,
        }
    }

    /// One trajectory per visit: Back from `screen` to "other".
    fn visit(elements: Vec<UiElement>) -> ActionTrajectory {
        let pre = state("s", elements);
        let post = state("other", vec![el("o", [0, 0, 10, 10], "o", false)]);
        let mut t = ActionTrajectory::new("t", "app", "task");
        let r = StepResult {
            ok: true,
            effect: Effect::ScreenChanged,
            note: String::new(),
        };
        t.record_step(ActionStep::observe(0, &Action::Back, "", &pre, &post, r, false))
            .unwrap();
        t
    }

    #[test]
    fn fixed_element_is_stable_and_flaky_one_is_not() {
        let trajs: Vec<_> = (0..3)
            .map(|i| {
                let mut els = vec![
                    el("fixed", [0, 0, 100, 100], "F", false),
                    el("feed", [0, 200, 100, 300], &format!("post {i}"), true),
                ];
                if i == 1 {
                    els.push(el("promo", [0, 400, 100, 500], "ad", false));
                }
                visit(els)
            })
            .collect();
        let r = detect_stable_elements(&trajs);
        assert!(r.is_stable("app", "s", "fixed"));
        assert!(r.is_stable("app", "s", "feed"));
        assert!(r.label_varies.contains(&("app".into(), "s".into(), "feed".into())));
        assert!(!r.is_stable("app", "s", "promo"));
        assert!(!r.low_support.contains(&("app".into(), "s".into(), "fixed".into())));
    }

    #[test]
    fn moved_element_is_unstable_and_single_visit_is_low_support() {
        let trajs = vec![
            visit(vec![el("b", [0, 0, 100, 100], "B", false)]),
            visit(vec![el("b", [0, 300, 100, 400], "B", false)]),
        ];
        let r = detect_stable_elements(&trajs);
        assert!(!r.is_stable("app", "s", "b"));
        let single = detect_stable_elements(&trajs[..1]);
        assert!(single.is_stable("app", "s", "b"));
        assert!(single.low_support.contains(&("app".into(), "s".into(), "b".into())));
    }
}
