use super::{
    normalize_key, CallCounter, CallLedger, Gateway, GatewayError, GatewayMode, ModelRequest,
    ModelResponse, RoleTag, RunId, Usage,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

/// Key that matches any request of the entry's role.
pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub role_tag: RoleTag,
    pub key: String,
    #[serde(default)]
    pub response_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_payload: Option<Value>,
}

/// Deterministic gateway answering from a script.
///
/// Entries sharing a `(role_tag, key)` form a sequence: the n-th matching
/// call within a run gets the n-th entry, and the last entry repeats.
#[derive(Debug, Default)]
pub struct ScriptedGateway {
    entries: BTreeMap<(RoleTag, String), Vec<ScriptEntry>>,
    cursors: Mutex<HashMap<(RunId, RoleTag, String), usize>>,
    ledger: CallLedger,
}

impl ScriptedGateway {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let mut map: BTreeMap<(RoleTag, String), Vec<ScriptEntry>> = BTreeMap::new();
        for e in entries {
            let key = if e.key == WILDCARD {
                WILDCARD.to_string()
            } else {
                normalize_key(&e.key)
            };
            map.entry((e.role_tag, key)).or_default().push(e);
        }
        Self {
            entries: map,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        if text.trim().is_empty() {
            return Ok(Self::new(Vec::new()));
        }
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| GatewayError::ParseError(e.to_string()))?;
        Ok(Self::new(entries))
    }

    /// Load a script file, or every `*.json` file in a directory (sorted by
    /// name).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| GatewayError::ParseError(format!("{}: {e}", p.display())))
        };
        let mut entries = Vec::new();
        if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| GatewayError::ParseError(format!("{}: {e}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for f in files {
                let text = read(&f)?;
                let mut part: Vec<ScriptEntry> = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::ParseError(format!("{}: {e}", f.display())))?;
                entries.append(&mut part);
            }
        } else {
            let text = read(path)?;
            if !text.trim().is_empty() {
                entries = serde_json::from_str(&text)
                    .map_err(|e| GatewayError::ParseError(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(Self::new(entries))
    }

    /// Number of distinct `(role_tag, key)` pairs.
    pub fn key_count(&self) -> usize {
        self.entries.len()
    }

    fn lookup(&self, req: &ModelRequest) -> Result<ScriptEntry, GatewayError> {
        let key = req.script_key();
        let slot = if self.entries.contains_key(&(req.role_tag, key.clone())) {
            key.clone()
        } else if self.entries.contains_key(&(req.role_tag, WILDCARD.to_string())) {
            WILDCARD.to_string()
        } else {
            return Err(GatewayError::NoScriptMatch {
                role_tag: req.role_tag,
                key,
            });
        };
        let seq = &self.entries[&(req.role_tag, slot.clone())];
        let mut cursors = self.cursors.lock().expect("script cursor poisoned");
        let cursor = cursors
            .entry((req.run_id.clone(), req.role_tag, slot))
            .or_insert(0);
        let entry = seq[(*cursor).min(seq.len() - 1)].clone();
        *cursor += 1;
        Ok(entry)
    }
}

impl Gateway for ScriptedGateway {
    fn mode(&self) -> GatewayMode {
        GatewayMode::Scripted
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        self.ledger.record(&req.run_id, req.role_tag);
        req.validate()?;
        let entry = self.lookup(req)?;
        let text = if entry.response_text.is_empty() {
            entry
                .parsed_payload
                .as_ref()
                .map(Value::to_string)
                .unwrap_or_default()
        } else {
            entry.response_text
        };
        let prompt_tokens = crate::text::token_estimate(&req.prompt_text()) as u64;
        let completion_tokens = crate::text::token_estimate(&text) as u64;
        Ok(ModelResponse {
            text,
            parsed: entry.parsed_payload,
            usage: Usage {
                prompt_tokens,
                completion_tokens,
            },
        })
    }

    fn open_run(&self, run: &RunId) {
        self.ledger.open(run);
    }

    fn call_count(&self, run: &RunId) -> Result<CallCounter, GatewayError> {
        self.ledger.snapshot(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn entry(tag: RoleTag, key: &str, text: &str) -> ScriptEntry {
        ScriptEntry {
            role_tag: tag,
            key: key.into(),
            response_text: text.into(),
            parsed_payload: None,
        }
    }

    #[test]
    fn matches_on_role_and_normalized_key() {
        let gw = ScriptedGateway::new(vec![ScriptEntry {
            role_tag: RoleTag::DecideAction,
            key: "screen=home,goal=Open Compose".into(),
            response_text: String::new(),
            parsed_payload: Some(json!({"op": "tap", "params": {"x": 540, "y": 960}})),
        }]);
        let run = RunId::new("r");
        let req = ModelRequest::new(run.clone(), RoleTag::DecideAction)
            .key("screen", "home")
            .key("goal", "open compose");
        let resp = gw.complete(&req).unwrap();
        assert_eq!(resp.payload().unwrap()["op"], "tap");
        assert_eq!(gw.call_count(&run).unwrap().total, 1);
    }

    #[test]
    fn unmatched_request_still_counts() {
        let gw = ScriptedGateway::new(vec![]);
        let run = RunId::new("r");
        let req = ModelRequest::new(run.clone(), RoleTag::Verify).key("x", "y");
        assert!(matches!(gw.complete(&req), Err(GatewayError::NoScriptMatch { .. })));
        assert_eq!(gw.call_count(&run).unwrap().total, 1);
    }

    #[test]
    fn repeated_keys_form_a_sequence_per_run() {
        let gw = ScriptedGateway::new(vec![
            entry(RoleTag::PlanTeam, "k=1", "first"),
            entry(RoleTag::PlanTeam, "k=1", "second"),
        ]);
        assert_eq!(gw.key_count(), 1);
        let ask = |run: &str| {
            gw.complete(&ModelRequest::new(RunId::new(run), RoleTag::PlanTeam).key("k", "1"))
                .unwrap()
                .text
        };
        assert_eq!(ask("a"), "first");
        assert_eq!(ask("a"), "second");
        assert_eq!(ask("a"), "second");
        assert_eq!(ask("b"), "first");
    }

    #[test]
    fn wildcard_is_fallback() {
        let gw = ScriptedGateway::new(vec![
            entry(RoleTag::Judge, "*", "5"),
            entry(RoleTag::Judge, "task=special", "9"),
        ]);
        let run = RunId::new("r");
        let judge = |task: &str| {
            gw.complete(&ModelRequest::new(run.clone(), RoleTag::Judge).key("task", task))
                .unwrap()
                .text
        };
        assert_eq!(judge("special"), "9");
        assert_eq!(judge("other"), "5");
    }

    #[test]
    fn loading_scripts() {
        let dir = tempfile::tempdir().unwrap();
        let entries: Vec<ScriptEntry> = (0..12)
            .map(|i| entry(RoleTag::Decompose, &format!("req={i}"), "[]"))
            .collect();
        let path = dir.path().join("s.json");
        std::fs::write(&path, serde_json::to_string(&entries).unwrap()).unwrap();
        assert_eq!(ScriptedGateway::load(&path).unwrap().key_count(), 12);
        assert_eq!(ScriptedGateway::load(dir.path()).unwrap().key_count(), 12);

        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "").unwrap();
        let gw = ScriptedGateway::load(&empty).unwrap();
        assert_eq!(gw.key_count(), 0);
        let req = ModelRequest::new(RunId::new("r"), RoleTag::Judge);
        assert!(matches!(gw.complete(&req), Err(GatewayError::NoScriptMatch { .. })));

        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "{not a list").unwrap();
        assert!(matches!(ScriptedGateway::load(&bad), Err(GatewayError::ParseError(_))));
    }
}
