use crate::device::{diff_screens, Action, Role, ScreenState};
use crate::gateway::{Gateway, ModelRequest, RoleTag, RunId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub consistent: bool,
    pub note: String,
}

impl VerifyResult {
    fn ok(note: impl Into<String>) -> Self {
        Self {
            consistent: true,
            note: note.into(),
        }
    }

    fn fail(note: impl Into<String>) -> Self {
        Self {
            consistent: false,
            note: note.into(),
        }
    }
}

/// Did `last_action` have the effect its class requires?
///
/// Locally: a Tap on anything but a text field must change the screen; Text
/// must change some text; Swipe must change something; Back and Home must
/// move; Wait, Read, Think and Stop impose nothing. With a live model the
/// verdict comes from the model instead, falling back to these rules when
/// the answer is unusable.
pub fn verify_transition(
    prev: &ScreenState,
    curr: &ScreenState,
    last_action: &Action,
    expectation: &str,
    model: Option<(&dyn Gateway, &RunId)>,
) -> VerifyResult {
    if let Some((gateway, run)) = model.filter(|(g, _)| !g.is_scripted()) {
        let req = ModelRequest::new(run.clone(), RoleTag::Verify)
            .key("action", last_action.to_string())
            .key("expectation", expectation)
            .context("previous_screen", prev.display_name())
            .context("current_screen", curr.display_name())
            .image(prev.screenshot_ref.clone())
            .image(curr.screenshot_ref.clone());
        match gateway.complete(&req).map(|r| r.payload()) {
            Ok(Some(p)) => {
                if let Some(consistent) = p.get("consistent").and_then(Value::as_bool) {
                    let note = p
                        .get("note")
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string();
                    return VerifyResult { consistent, note };
                }
            }
            Ok(None) => log::warn!("verify answer had no verdict, using local rules"),
            Err(e) => log::warn!("verify call failed, using local rules: {e}"),
        }
    }
    local_verdict(prev, curr, last_action)
}

fn local_verdict(prev: &ScreenState, curr: &ScreenState, action: &Action) -> VerifyResult {
    let diff = diff_screens(prev, curr);
    let moved = diff.changed || diff.app_switched();
    let anything = moved
        || !diff.added.is_empty()
        || !diff.removed.is_empty()
        || !diff.changed_elements.is_empty()
        || !diff.changed_text.is_empty();
    match action {
        Action::Tap { x, y } => {
            let target = prev.hit_test(*x, *y);
            match target {
                Some(t) if t.role == Role::TextField => VerifyResult::ok("focused text field"),
                Some(t) if anything => VerifyResult::ok(format!(
                    "tap on '{}' led to {}",
                    t.element_ref(),
                    curr.display_name()
                )),
                Some(t) => VerifyResult::fail(format!(
                    "no transition after tapping '{}' on {}",
                    t.element_ref(),
                    prev.display_name()
                )),
                None => VerifyResult::fail(format!("no element at ({x}, {y}); no transition")),
            }
        }
        Action::Text { .. } => {
            if !diff.changed_text.is_empty() || moved {
                VerifyResult::ok("text entered")
            } else {
                VerifyResult::fail("text content did not change")
            }
        }
        Action::Swipe { .. } => {
            if anything {
                VerifyResult::ok("swipe changed the view")
            } else {
                VerifyResult::fail("swipe had no visible effect")
            }
        }
        Action::Back | Action::Home => {
            if moved {
                VerifyResult::ok(format!("moved to {}", curr.display_name()))
            } else {
                VerifyResult::fail(format!("still on {}", curr.display_name()))
            }
        }
        Action::Wait | Action::Read { .. } | Action::Think { .. } | Action::Stop => {
            VerifyResult::ok("no change required")
        }
    }
}
