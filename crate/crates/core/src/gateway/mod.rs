//! Exchangeable access to the vision-language model.
//!
//! Every `complete()` call is attributed to a [`RunId`] and counted, whether
//! it succeeds or not. That count is the reasoning-steps metric.

mod live;
mod scripted;

pub use live::{LiveConfig, LiveGateway};
pub use scripted::{ScriptEntry, ScriptedGateway};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no scripted response for {role_tag} with key '{key}'")]
    NoScriptMatch { role_tag: RoleTag, key: String },
    #[error("endpoint error: {0}")]
    EndpointError(String),
    #[error("unknown run '{0}'")]
    UnknownRun(RunId),
    #[error("script parse error: {0}")]
    ParseError(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    DecideAction,
    Decompose,
    PlanTeam,
    PlanExpert,
    Verify,
    Summarize,
    Judge,
    GuessIcon,
    WriteTool,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::DecideAction => "decide_action",
            RoleTag::Decompose => "decompose",
            RoleTag::PlanTeam => "plan_team",
            RoleTag::PlanExpert => "plan_expert",
            RoleTag::Verify => "verify",
            RoleTag::Summarize => "summarize",
            RoleTag::Judge => "judge",
            RoleTag::GuessIcon => "guess_icon",
            RoleTag::WriteTool => "write_tool",
        }
    }

    /// Instruction preamble sent ahead of the structured fields.
    pub fn instructions(self) -> &'static str {
        match self {
            RoleTag::DecideAction => "You operate a mobile phone. Compare the previous and current screenshots, check whether the last action had its expected effect, then choose the next basic operation (tap, text, swipe, read, think, back, home, wait, stop). Reply with JSON: {\"op\", \"params\", \"expectation\", \"icon_guesses\": [{\"element\", \"function\"}]}.",
            RoleTag::Decompose => "Split the requirement into exploration subtasks suited to your role. Reply with a JSON array of {\"description\", \"target_app\", \"done\"}.",
            RoleTag::PlanTeam => "Decompose the instruction into a dependency graph of tasks assigned to team members. Reply with JSON {\"nodes\": [{\"id\", \"description\", \"expert\", \"deps\"}]}.",
            RoleTag::PlanExpert => "Break the task into an ordered list of atomic tasks. Reply with a JSON array of {\"description\", \"done\", \"independent\"}.",
            RoleTag::Verify => "Given the previous screen, the current screen, the last action and its expected effect, decide whether the action succeeded. Reply with JSON {\"consistent\": bool, \"note\"}.",
            RoleTag::Summarize => "Summarize the entries so that the information needed for the goal is preserved, as briefly as possible.",
            RoleTag::Judge => "Score from 0 to 10 how well the trajectory accomplishes the instruction. Reply with JSON {\"score\": number, \"reason\"}.",
            RoleTag::GuessIcon => "Guess what each listed icon does. Reply with JSON [{\"element\", \"function\"}].",
            RoleTag::WriteTool => "Write a one-line functional summary of the recorded workflow.",
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub String);

impl RunId {
    pub fn new(id: impl Into<String>) -> Self {
        RunId(id.into())
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptField {
    pub name: String,
    pub value: String,
    /// Part of the script key.
    pub key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub run_id: RunId,
    pub role_tag: RoleTag,
    pub fields: Vec<PromptField>,
    /// Previous and current screenshot handles (at most two).
    pub image_refs: Vec<String>,
    pub context_budget: usize,
}

pub const DEFAULT_CONTEXT_BUDGET: usize = 4096;
pub const MAX_IMAGES: usize = 2;

impl ModelRequest {
    pub fn new(run_id: RunId, role_tag: RoleTag) -> Self {
        Self {
            run_id,
            role_tag,
            fields: Vec::new(),
            image_refs: Vec::new(),
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    /// A field that identifies the request for scripted lookup.
    pub fn key(mut self, name: &str, value: impl Into<String>) -> Self {
        self.fields.push(PromptField {
            name: name.into(),
            value: value.into(),
            key: true,
        });
        self
    }

    /// Supporting context that does not participate in the script key.
    pub fn context(mut self, name: &str, value: impl Into<String>) -> Self {
        self.fields.push(PromptField {
            name: name.into(),
            value: value.into(),
            key: false,
        });
        self
    }

    pub fn image(mut self, handle: impl Into<String>) -> Self {
        self.image_refs.push(handle.into());
        self
    }

    pub fn budget(mut self, tokens: usize) -> Self {
        self.context_budget = tokens;
        self
    }

    /// Normalized `name=value` pairs of the key fields, comma separated.
    pub fn script_key(&self) -> String {
        let raw = self
            .fields
            .iter()
            .filter(|f| f.key)
            .map(|f| format!("{}={}", f.name, f.value))
            .collect::<Vec<_>>()
            .join(",");
        normalize_key(&raw)
    }

    pub fn prompt_text(&self) -> String {
        let mut out = String::from(self.role_tag.instructions());
        for f in &self.fields {
            out.push_str("\n\n");
            out.push_str(&f.name);
            out.push_str(":\n");
            out.push_str(&f.value);
        }
        out
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.image_refs.len() > MAX_IMAGES {
            return Err(GatewayError::InvalidRequest(format!(
                "{} images attached, at most {MAX_IMAGES} allowed",
                self.image_refs.len()
            )));
        }
        Ok(())
    }
}

/// Lowercase and collapse runs of whitespace.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub parsed: Option<Value>,
    pub usage: Usage,
}

impl ModelResponse {
    /// The structured payload, falling back to JSON embedded in the text.
    pub fn payload(&self) -> Option<Value> {
        self.parsed.clone().or_else(|| extract_json(&self.text))
    }
}

/// Find the first parseable JSON object or array inside free text
/// (models like to wrap JSON in prose or code fences).
pub fn extract_json(text: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(text.trim()) {
        if v.is_object() || v.is_array() {
            return Some(v);
        }
    }
    for (start, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounter {
    pub total: u64,
    pub by_role_tag: BTreeMap<RoleTag, u64>,
}

/// Per-run call accounting shared by all gateway implementations.
#[derive(Debug, Default)]
pub struct CallLedger {
    runs: Mutex<HashMap<RunId, CallCounter>>,
}

impl CallLedger {
    pub fn record(&self, run: &RunId, tag: RoleTag) {
        let mut runs = self.runs.lock().expect("call ledger poisoned");
        let counter = runs.entry(run.clone()).or_default();
        counter.total += 1;
        *counter.by_role_tag.entry(tag).or_insert(0) += 1;
    }

    /// Make a run known before any call is attributed to it.
    pub fn open(&self, run: &RunId) {
        self.runs
            .lock()
            .expect("call ledger poisoned")
            .entry(run.clone())
            .or_default();
    }

    pub fn snapshot(&self, run: &RunId) -> Result<CallCounter, GatewayError> {
        self.runs
            .lock()
            .expect("call ledger poisoned")
            .get(run)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownRun(run.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    Scripted,
    Live,
}

pub trait Gateway: Send + Sync {
    fn mode(&self) -> GatewayMode;

    /// One model call. Always counted against `req.run_id`.
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError>;

    fn open_run(&self, run: &RunId);

    fn call_count(&self, run: &RunId) -> Result<CallCounter, GatewayError>;

    fn is_scripted(&self) -> bool {
        self.mode() == GatewayMode::Scripted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn script_key_uses_only_key_fields() {
        let req = ModelRequest::new(RunId::new("r"), RoleTag::DecideAction)
            .key("screen", "home")
            .context("memory", "lots of context")
            .key("goal", "Open   Compose");
        assert_eq!(req.script_key(), "screen=home,goal=open compose");
        assert!(req.prompt_text().contains("lots of context"));
    }

    #[test]
    fn too_many_images_is_invalid() {
        let req = ModelRequest::new(RunId::new("r"), RoleTag::Verify)
            .image("a")
            .image("b")
            .image("c");
        assert!(req.validate().is_err());
    }

    #[test]
    fn extracts_json_from_prose() {
        assert_eq!(
            extract_json("Sure! ```json\n{\"op\": \"back\"}\n``` done"),
            Some(json!({"op": "back"}))
        );
        assert_eq!(extract_json("[1, 2]"), Some(json!([1, 2])));
        assert_eq!(extract_json("no json here"), None);
        assert_eq!(extract_json("broken { here [1,2]"), Some(json!([1, 2])));
    }

    #[test]
    fn ledger_counts_by_tag() {
        let ledger = CallLedger::default();
        let run = RunId::new("r1");
        assert!(matches!(ledger.snapshot(&run), Err(GatewayError::UnknownRun(_))));
        ledger.open(&run);
        assert_eq!(ledger.snapshot(&run).unwrap().total, 0);
        for _ in 0..3 {
            ledger.record(&run, RoleTag::DecideAction);
        }
        for _ in 0..2 {
            ledger.record(&run, RoleTag::Verify);
        }
        let c = ledger.snapshot(&run).unwrap();
        assert_eq!(c.total, 5);
        assert_eq!(c.by_role_tag[&RoleTag::DecideAction], 3);
        assert_eq!(c.by_role_tag[&RoleTag::Verify], 2);
        assert_eq!(c.by_role_tag.values().sum::<u64>(), c.total);
    }
}
