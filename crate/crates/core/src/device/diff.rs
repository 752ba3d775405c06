use super::{ScreenState, UiElement};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementChange {
    pub before: UiElement,
    pub after: UiElement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChange {
    pub element: String,
    pub before: Option<String>,
    pub after: Option<String>,
}

/// Element-level difference between two captures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenDiff {
    pub added: Vec<UiElement>,
    pub removed: Vec<UiElement>,
    /// Same identity, different role or bounds bucket.
    pub changed_elements: Vec<ElementChange>,
    /// Same identity and structure, different label.
    pub changed_text: Vec<TextChange>,
    /// Signature-level change (or app switch).
    pub changed: bool,
    pub before_screen: String,
    pub after_screen: String,
    pub before_app: String,
    pub after_app: String,
}

impl ScreenDiff {
    pub fn is_empty(&self) -> bool {
        !self.changed
            && self.added.is_empty()
            && self.removed.is_empty()
            && self.changed_elements.is_empty()
            && self.changed_text.is_empty()
    }

    pub fn app_switched(&self) -> bool {
        self.before_app != self.after_app
    }

    /// Words describing where the transition landed, for matching against
    /// icon hypotheses.
    pub fn observed_description(&self) -> String {
        let mut parts = vec![self.after_app.clone(), self.after_screen.replace('_', " ")];
        for e in &self.added {
            if let Some(key) = &e.stable_key {
                parts.push(key.rsplit(['/', ':']).next().unwrap_or(key).replace('_', " "));
            }
            if let Some(label) = &e.label {
                if !e.is_text_variable {
                    parts.push(label.clone());
                }
            }
        }
        parts.join(" ")
    }
}

pub fn diff_screens(before: &ScreenState, after: &ScreenState) -> ScreenDiff {
    let index = |s: &ScreenState| -> BTreeMap<String, UiElement> {
        s.elements
            .iter()
            .map(|e| (e.identity().to_string(), e.clone()))
            .collect()
    };
    let b = index(before);
    let a = index(after);
    let mut diff = ScreenDiff {
        added: Vec::new(),
        removed: Vec::new(),
        changed_elements: Vec::new(),
        changed_text: Vec::new(),
        changed: before.screen_signature != after.screen_signature || before.app_id != after.app_id,
        before_screen: before.display_name(),
        after_screen: after.display_name(),
        before_app: before.app_id.clone(),
        after_app: after.app_id.clone(),
    };
    for (id, e) in &a {
        match b.get(id) {
            None => diff.added.push(e.clone()),
            Some(old) => {
                if old.role != e.role || old.bounds.bucket() != e.bounds.bucket() {
                    diff.changed_elements.push(ElementChange {
                        before: old.clone(),
                        after: e.clone(),
                    });
                } else if old.label != e.label {
                    diff.changed_text.push(TextChange {
                        element: id.clone(),
                        before: old.label.clone(),
                        after: e.label.clone(),
                    });
                }
            }
        }
    }
    for (id, e) in &b {
        if !a.contains_key(id) {
            diff.removed.push(e.clone());
        }
    }
    diff
}
