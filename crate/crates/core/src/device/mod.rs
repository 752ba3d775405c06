//! Uniform device abstraction: screen observation plus the nine basic
//! operations, over a deterministic simulator and a real Android backend.

mod action;
pub mod adb;
mod diff;
pub mod sim;
pub mod uiautomator;

pub use action::{Action, Direction, Op, ThinkFlow};
pub use diff::{diff_screens, ElementChange, ScreenDiff, TextChange};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

/// Pixel grid used to quantize bounds before hashing.
pub const BOUNDS_BUCKET: i32 = 32;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("device unreachable: {0}")]
    Unreachable(String),
    #[error("screen capture timed out after {0} ms")]
    CaptureTimeout(u64),
    #[error("invalid action parameters: {0}")]
    InvalidParams(String),
    #[error("action rejected by backend: {0}")]
    ActionRejected(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("operation not supported by this backend: {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Button,
    TextField,
    Icon,
    ListItem,
    Image,
    Container,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Button => "button",
            Role::TextField => "text_field",
            Role::Icon => "icon",
            Role::ListItem => "list_item",
            Role::Image => "image",
            Role::Container => "container",
            Role::Other => "other",
        }
    }
}

/// Pixel rectangle, serialized as `[left, top, right, bottom]`.
/// Always non-degenerate: `right > left` and `bottom > top`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i32; 4]", into = "[i32; 4]")]
pub struct Rect {
    left: i32,
    top: i32,
    right: i32,
    bottom: i32,
}

impl Rect {
    pub fn new(left: i32, top: i32, right: i32, bottom: i32) -> Result<Self, DeviceError> {
        if right <= left || bottom <= top {
            return Err(DeviceError::Scenario(format!(
                "degenerate bounds [{left},{top}][{right},{bottom}]"
            )));
        }
        Ok(Self {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn left(&self) -> i32 {
        self.left
    }
    pub fn top(&self) -> i32 {
        self.top
    }
    pub fn right(&self) -> i32 {
        self.right
    }
    pub fn bottom(&self) -> i32 {
        self.bottom
    }

    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }

    pub fn encloses(&self, other: &Rect) -> bool {
        other.left >= self.left
            && other.right <= self.right
            && other.top >= self.top
            && other.bottom <= self.bottom
    }

    pub fn area(&self) -> i64 {
        (self.right - self.left) as i64 * (self.bottom - self.top) as i64
    }

    pub fn center(&self) -> (i32, i32) {
        ((self.left + self.right) / 2, (self.top + self.bottom) / 2)
    }

    /// Bounds quantized to the signature grid.
    pub fn bucket(&self) -> [i32; 4] {
        [
            self.left.div_euclid(BOUNDS_BUCKET),
            self.top.div_euclid(BOUNDS_BUCKET),
            self.right.div_euclid(BOUNDS_BUCKET),
            self.bottom.div_euclid(BOUNDS_BUCKET),
        ]
    }

    pub fn translate(&self, dx: i32, dy: i32) -> Rect {
        Rect {
            left: self.left + dx,
            top: self.top + dy,
            right: self.right + dx,
            bottom: self.bottom + dy,
        }
    }
}

impl TryFrom<[i32; 4]> for Rect {
    type Error = DeviceError;
    fn try_from(v: [i32; 4]) -> Result<Self, Self::Error> {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [i32; 4] {
    fn from(r: Rect) -> Self {
        [r.left, r.top, r.right, r.bottom]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub element_id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub bounds: Rect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_key: Option<String>,
    #[serde(default)]
    pub is_text_variable: bool,
}

impl UiElement {
    /// Identifier that survives revisits: the backend key when present,
    /// otherwise role plus bounds bucket.
    pub fn element_ref(&self) -> String {
        match &self.stable_key {
            Some(key) => key.clone(),
            None => {
                let b = self.bounds.bucket();
                format!("@{}:{},{},{},{}", self.role.as_str(), b[0], b[1], b[2], b[3])
            }
        }
    }

    /// Identity used when matching elements between two captures.
    pub fn identity(&self) -> &str {
        self.stable_key.as_deref().unwrap_or(&self.element_id)
    }
}

/// Canonical hash of a screen's stable structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Signature(pub String);

impl Signature {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hash of the sorted multiset of `(stable_key, role, bounds bucket)` over
/// elements whose content is not variable. Order and labels do not matter.
pub fn screen_signature(elements: &[UiElement]) -> Signature {
    let mut canon: Vec<String> = elements
        .iter()
        .filter(|e| !e.is_text_variable)
        .map(|e| {
            let b = e.bounds.bucket();
            format!(
                "{}|{}|{},{},{},{}",
                e.stable_key.as_deref().unwrap_or(""),
                e.role.as_str(),
                b[0],
                b[1],
                b[2],
                b[3]
            )
        })
        .collect();
    canon.sort();
    let mut hasher = Sha256::new();
    for line in &canon {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    Signature(hex::encode(&hasher.finalize()[..8]))
}

/// Topmost element containing `(x, y)`: the most deeply nested one, ties
/// broken by smallest area, then by later position in the list.
pub fn hit_test(elements: &[UiElement], x: i32, y: i32) -> Option<&UiElement> {
    elements
        .iter()
        .enumerate()
        .filter(|(_, e)| e.bounds.contains(x, y))
        .max_by_key(|(i, e)| {
            let depth = elements
                .iter()
                .enumerate()
                .filter(|(j, o)| j != i && o.bounds.encloses(&e.bounds) && o.bounds != e.bounds)
                .count();
            (depth, std::cmp::Reverse(e.bounds.area()), *i)
        })
        .map(|(_, e)| e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenState {
    pub screen_signature: Signature,
    pub elements: Vec<UiElement>,
    pub screenshot_ref: String,
    pub app_id: String,
    /// Logical screen name when the backend knows it (the simulator does).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focused: Option<String>,
    pub captured_at: u64,
}

impl ScreenState {
    pub fn find_by_key(&self, key: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.stable_key.as_deref() == Some(key))
    }

    pub fn find_by_ref(&self, element_ref: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.element_ref() == element_ref)
    }

    pub fn hit_test(&self, x: i32, y: i32) -> Option<&UiElement> {
        hit_test(&self.elements, x, y)
    }

    /// Name used in prompts and script keys.
    pub fn display_name(&self) -> String {
        self.screen_name
            .clone()
            .unwrap_or_else(|| self.screen_signature.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    ScreenChanged,
    ScreenUnchanged,
    AppSwitched,
    Terminal,
}

pub fn classify_effect(pre: &ScreenState, post: &ScreenState) -> Effect {
    if pre.app_id != post.app_id {
        Effect::AppSwitched
    } else if pre.screen_signature != post.screen_signature {
        Effect::ScreenChanged
    } else {
        Effect::ScreenUnchanged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub ok: bool,
    pub observed_effect: Effect,
    pub post_state: ScreenState,
    pub note: String,
}

/// Condition evaluated against device state: task success checks,
/// milestones and atomic-task completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// Logical screen name (simulator).
    Screen(String),
    Flag(String),
    Signature(Signature),
    /// Only answerable by a model judge.
    Judge(String),
    All(Vec<Predicate>),
}

/// Whether a predicate must hold now or at any point so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScope {
    Current,
    Ever,
}

/// Opaque backend state that can be restored later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSnapshot(pub serde_json::Value);

/// One operator per handle: `&mut self` serializes capture and perform.
pub trait Device: Send {
    fn id(&self) -> &str;

    /// Display size in pixels.
    fn display(&self) -> (i32, i32);

    fn capture_screen(&mut self) -> Result<ScreenState, DeviceError>;

    fn perform(&mut self, action: &Action) -> Result<ActionResult, DeviceError>;

    /// `None` when the backend cannot decide the predicate itself.
    fn check(&self, _predicate: &Predicate, _scope: CheckScope) -> Option<bool> {
        None
    }

    fn snapshot(&self) -> Option<DeviceSnapshot> {
        None
    }

    fn restore(&mut self, _snapshot: &DeviceSnapshot) -> Result<(), DeviceError> {
        Err(DeviceError::Unsupported("restore"))
    }
}

impl<D: Device + ?Sized> Device for Box<D> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn display(&self) -> (i32, i32) {
        (**self).display()
    }
    fn capture_screen(&mut self) -> Result<ScreenState, DeviceError> {
        (**self).capture_screen()
    }
    fn perform(&mut self, action: &Action) -> Result<ActionResult, DeviceError> {
        (**self).perform(action)
    }
    fn check(&self, predicate: &Predicate, scope: CheckScope) -> Option<bool> {
        (**self).check(predicate, scope)
    }
    fn snapshot(&self) -> Option<DeviceSnapshot> {
        (**self).snapshot()
    }
    fn restore(&mut self, snapshot: &DeviceSnapshot) -> Result<(), DeviceError> {
        (**self).restore(snapshot)
    }
}

/// Text extraction for the Read operation.
pub trait DocumentReader: Send + Sync {
    fn read(&self, file: &str) -> Result<String, DeviceError>;
}

/// Reads UTF-8 files relative to a base directory.
#[derive(Debug, Clone)]
pub struct PlainTextReader {
    pub base: std::path::PathBuf,
}

impl DocumentReader for PlainTextReader {
    fn read(&self, file: &str) -> Result<String, DeviceError> {
        std::fs::read_to_string(self.base.join(file))
            .map_err(|e| DeviceError::Backend(format!("read {file}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(id: &str, role: Role, b: [i32; 4], key: Option<&str>, variable: bool) -> UiElement {
        UiElement {
            element_id: id.into(),
            role,
            label: Some(id.to_uppercase()),
            bounds: Rect::try_from(b).unwrap(),
            stable_key: key.map(Into::into),
            is_text_variable: variable,
        }
    }

    fn sample() -> Vec<UiElement> {
        vec![
            el("bar", Role::Container, [0, 0, 1080, 160], Some("bar"), false),
            el("search", Role::Icon, [900, 40, 1040, 120], Some("search"), false),
            el("feed", Role::ListItem, [0, 200, 1080, 600], None, true),
            el("compose", Role::Button, [440, 880, 640, 1040], Some("compose"), false),
        ]
    }

    #[test]
    fn degenerate_rect_rejected() {
        assert!(Rect::new(10, 10, 10, 20).is_err());
        assert!(Rect::new(10, 30, 20, 20).is_err());
        assert!(serde_json::from_str::<Rect>("[0,0,0,5]").is_err());
        assert!(serde_json::from_str::<Rect>("[0,0,1,5]").is_ok());
    }

    #[test]
    fn signature_ignores_order_and_variable_labels() {
        let a = sample();
        let mut b = a.clone();
        b.reverse();
        b[1].label = Some("totally different".into());
        assert_eq!(screen_signature(&a), screen_signature(&b));
        let mut c = a.clone();
        c[2].label = Some("another tweet".into());
        assert_eq!(screen_signature(&a), screen_signature(&c));
    }

    #[test]
    fn signature_sensitive_to_stable_removal() {
        let a = sample();
        let mut b = a.clone();
        b.remove(1);
        assert_ne!(screen_signature(&a), screen_signature(&b));
        // removing a variable element does not matter
        let mut c = a.clone();
        c.remove(2);
        assert_eq!(screen_signature(&a), screen_signature(&c));
    }

    #[test]
    fn signature_survives_jitter_within_bucket() {
        let a = sample();
        let mut b = a.clone();
        b[3].bounds = Rect::new(441, 881, 641, 1041).unwrap();
        assert_eq!(screen_signature(&a), screen_signature(&b));
        b[3].bounds = Rect::new(480, 880, 680, 1040).unwrap();
        assert_ne!(screen_signature(&a), screen_signature(&b));
    }

    #[test]
    fn hit_test_prefers_nested_then_smaller() {
        let els = sample();
        assert_eq!(hit_test(&els, 950, 80).unwrap().element_id, "search");
        assert_eq!(hit_test(&els, 20, 80).unwrap().element_id, "bar");
        assert_eq!(hit_test(&els, 540, 960).unwrap().element_id, "compose");
        assert!(hit_test(&els, 540, 1500).is_none());
        // overlapping siblings at equal depth: smaller area wins
        let siblings = vec![
            el("big", Role::Button, [0, 0, 100, 100], None, false),
            el("small", Role::Button, [50, 50, 120, 120], None, false),
        ];
        assert_eq!(hit_test(&siblings, 60, 60).unwrap().element_id, "small");
    }

    #[test]
    fn element_ref_falls_back_to_bucket() {
        let e = el("x", Role::Icon, [64, 64, 96, 96], None, false);
        assert_eq!(e.element_ref(), "@icon:2,2,3,3");
        let k = el("x", Role::Icon, [64, 64, 96, 96], Some("id/x"), false);
        assert_eq!(k.element_ref(), "id/x");
    }
}
