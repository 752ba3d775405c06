use super::mine::strip_quoted;
use super::{ToolError, ValidationReport, WorkflowTool};
use crate::device::Signature;
use crate::text::overlap_score;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

/// Minimum goal overlap for a tool to be used without asking the model.
pub const TOOL_MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToolMatch {
    pub tool: WorkflowTool,
    pub score: f64,
    /// The tool starts on a different screen than the current one.
    pub needs_navigation: bool,
}

/// Procedure memory shared by all experts. Lookups run concurrently;
/// registration is serialized.
#[derive(Debug, Default)]
pub struct ToolRegistry {
    tools: RwLock<BTreeMap<String, WorkflowTool>>,
    dir: Option<PathBuf>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry persisted as one JSON file per tool under `dir`. Tools
    /// already there are loaded; they were validated when first written.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ToolError> {
        let dir = dir.as_ref().to_path_buf();
        let file_err = |path: &Path, message: String| ToolError::ToolFile {
            path: path.display().to_string(),
            message,
        };
        std::fs::create_dir_all(&dir).map_err(|e| file_err(&dir, e.to_string()))?;
        let mut tools = BTreeMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| file_err(&dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path).map_err(|e| file_err(&path, e.to_string()))?;
            let tool: WorkflowTool =
                serde_json::from_str(&text).map_err(|e| file_err(&path, e.to_string()))?;
            tool.check().map_err(|m| file_err(&path, m))?;
            tools.insert(tool.tool_id.clone(), tool);
        }
        Ok(Self {
            tools: RwLock::new(tools),
            dir: Some(dir),
        })
    }

    pub fn len(&self) -> usize {
        self.tools.read().expect("registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, tool_id: &str) -> Option<WorkflowTool> {
        self.tools.read().expect("registry poisoned").get(tool_id).cloned()
    }

    pub fn all(&self) -> Vec<WorkflowTool> {
        self.tools.read().expect("registry poisoned").values().cloned().collect()
    }

    /// Register a tool that passed validation. A tool with the same id and
    /// program is a no-op; a different one under a taken id gets a suffix.
    /// Returns the id it is stored under.
    pub fn register(&self, mut tool: WorkflowTool, report: &ValidationReport) -> Result<String, ToolError> {
        if !report.passed || report.tool_id != tool.tool_id {
            return Err(ToolError::NotValidated(tool.tool_id));
        }
        let mut tools = self.tools.write().expect("registry poisoned");
        let base = tool.tool_id.clone();
        let mut n = 2;
        while let Some(existing) = tools.get(&tool.tool_id) {
            if existing.program == tool.program && existing.initial_signature == tool.initial_signature {
                return Ok(tool.tool_id.clone());
            }
            tool.tool_id = format!("{base}_{n}");
            n += 1;
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.json", tool.tool_id));
            let text = serde_json::to_string_pretty(&tool).map_err(crate::journal::JournalError::from)?;
            std::fs::write(&path, text).map_err(|e| ToolError::ToolFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        let id = tool.tool_id.clone();
        tools.insert(id.clone(), tool);
        Ok(id)
    }

    /// Tools of `app_id` relevant to `goal`: those starting on the current
    /// screen first, then the rest flagged as needing navigation; by
    /// keyword overlap within each group, then id.
    pub fn lookup(&self, app_id: &str, current: &Signature, goal: &str) -> Vec<ToolMatch> {
        let goal = strip_quoted(goal);
        let tools = self.tools.read().expect("registry poisoned");
        let mut out: Vec<ToolMatch> = tools
            .values()
            .filter(|t| t.app_id == app_id)
            .map(|t| {
                let doc = format!("{} {}", t.tool_id.replace('_', " "), t.summary);
                ToolMatch {
                    tool: t.clone(),
                    score: overlap_score(&goal, &doc),
                    needs_navigation: &t.initial_signature != current,
                }
            })
            .filter(|m| m.score > 0.0)
            .collect();
        out.sort_by(|a, b| {
            a.needs_navigation
                .cmp(&b.needs_navigation)
                .then(b.score.total_cmp(&a.score))
                .then(a.tool.tool_id.cmp(&b.tool.tool_id))
        });
        out
    }
}
