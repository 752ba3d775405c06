use super::{ExpertId, MemoryError};
use crate::clock::Clock;
use crate::device::ThinkFlow;
use crate::gateway::{Gateway, ModelRequest, RoleTag, RunId};
use crate::text::{overlap_score, token_estimate};
use serde::{Deserialize, Serialize};

pub const DEFAULT_WM_BUDGET: usize = 2000;
pub const DEFAULT_PINNED_RECENT: usize = 3;
pub const SUMMARY_TAG: &str = "summary";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub tag: String,
    pub text: String,
    pub created_at: u64,
}

impl MemoryEntry {
    pub fn estimate(&self) -> usize {
        token_estimate(&self.text)
    }
}

/// Single-owner scratch memory of an expert during task execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingMemory {
    owner: ExpertId,
    entries: Vec<MemoryEntry>,
    token_estimate: usize,
    pub budget: usize,
    pub pinned_recent: usize,
    #[serde(skip)]
    clock: Clock,
}

impl PartialEq for Clock {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl WorkingMemory {
    pub fn new(owner: ExpertId, budget: usize, clock: Clock) -> Self {
        Self {
            owner,
            entries: Vec::new(),
            token_estimate: 0,
            budget,
            pinned_recent: DEFAULT_PINNED_RECENT,
            clock,
        }
    }

    pub fn owner(&self) -> &ExpertId {
        &self.owner
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn token_estimate(&self) -> usize {
        self.token_estimate
    }

    pub fn over_budget(&self) -> bool {
        self.token_estimate > self.budget
    }

    pub fn write(&mut self, tag: &str, text: &str) {
        let entry = MemoryEntry {
            tag: tag.to_string(),
            text: text.to_string(),
            created_at: self.clock.now(),
        };
        self.token_estimate += entry.estimate();
        self.entries.push(entry);
    }

    /// Entries sharing keywords with `goal`, most relevant first (newer first
    /// on ties).
    pub fn read(&self, goal: &str) -> Vec<MemoryEntry> {
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (overlap_score(goal, &format!("{} {}", e.tag, e.text)), i))
            .filter(|(s, _)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        scored.into_iter().map(|(_, i)| self.entries[i].clone()).collect()
    }

    /// Rendered for prompts, oldest first.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("[{}] {}", e.tag, e.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Plan a compaction: how many oldest entries to drop so that the kept
    /// suffix fits, never dropping the `pinned_recent` newest.
    fn compaction_split(&self) -> Result<usize, MemoryError> {
        if let Some(big) = self.entries.iter().find(|e| e.estimate() > self.budget) {
            return Err(MemoryError::BudgetUnsatisfiable {
                entry_tokens: big.estimate(),
                budget: self.budget,
            });
        }
        let mut kept = 0usize;
        let mut start = self.entries.len();
        while start > 0 && kept + self.entries[start - 1].estimate() <= self.budget {
            kept += self.entries[start - 1].estimate();
            start -= 1;
        }
        let pinned = self.pinned_recent.min(self.entries.len());
        if self.entries.len() - start < pinned {
            let pinned_tokens: usize = self.entries[self.entries.len() - pinned..]
                .iter()
                .map(MemoryEntry::estimate)
                .sum();
            return Err(MemoryError::BudgetUnsatisfiable {
                entry_tokens: pinned_tokens,
                budget: self.budget,
            });
        }
        Ok(start)
    }

    /// Keep the newest entries that fit and replace the rest with a single
    /// summary entry, truncated to whatever budget remains.
    pub fn compact_with(&mut self, summarize: impl FnOnce(&[MemoryEntry]) -> String) -> Result<usize, MemoryError> {
        if !self.over_budget() {
            return Ok(0);
        }
        let start = self.compaction_split()?;
        let dropped: Vec<MemoryEntry> = self.entries.drain(..start).collect();
        let kept_tokens: usize = self.entries.iter().map(MemoryEntry::estimate).sum();
        let room_chars = (self.budget - kept_tokens) * 4;
        let mut summary = summarize(&dropped);
        if summary.chars().count() > room_chars {
            summary = summary.chars().take(room_chars).collect();
        }
        if !summary.trim().is_empty() {
            self.entries.insert(
                0,
                MemoryEntry {
                    tag: SUMMARY_TAG.to_string(),
                    text: summary,
                    created_at: self.clock.now(),
                },
            );
        }
        self.token_estimate = self.entries.iter().map(MemoryEntry::estimate).sum();
        Ok(dropped.len())
    }

    /// Local compaction rule: the summary lists the dropped entries' tags
    /// and opening words.
    pub fn compact(&mut self) -> Result<usize, MemoryError> {
        self.compact_with(local_summary)
    }
}

pub fn local_summary(dropped: &[MemoryEntry]) -> String {
    let body = dropped
        .iter()
        .map(|e| {
            let head: String = e.text.split_whitespace().take(6).collect::<Vec<_>>().join(" ");
            format!("{}: {}", e.tag, head)
        })
        .collect::<Vec<_>>()
        .join("; ");
    format!("{} earlier entries: {body}", dropped.len())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThinkOutcome {
    Written,
    Recalled(Vec<MemoryEntry>),
    Compacted { removed: usize },
}

/// The Think operation. Compaction summarizes through the model only when a
/// live gateway is supplied; otherwise the local rule applies.
pub fn think_process(
    wm: &mut WorkingMemory,
    caller: &ExpertId,
    flow: ThinkFlow,
    goal: &str,
    model: Option<(&dyn Gateway, &RunId)>,
) -> Result<ThinkOutcome, MemoryError> {
    if wm.owner() != caller {
        return Err(MemoryError::OwnerMismatch {
            owner: wm.owner().clone(),
            caller: caller.clone(),
        });
    }
    match flow {
        ThinkFlow::Write => {
            wm.write("note", goal);
            Ok(ThinkOutcome::Written)
        }
        ThinkFlow::Read => Ok(ThinkOutcome::Recalled(wm.read(goal))),
        ThinkFlow::Compact => {
            let removed = match model.filter(|(g, _)| !g.is_scripted()) {
                Some((gateway, run)) => {
                    let mut failure = None;
                    let removed = wm.compact_with(|dropped| {
                        let text = dropped
                            .iter()
                            .map(|e| format!("[{}] {}", e.tag, e.text))
                            .collect::<Vec<_>>()
                            .join("\n");
                        let req = ModelRequest::new(run.clone(), RoleTag::Summarize)
                            .key("goal", goal)
                            .context("entries", text);
                        match gateway.complete(&req) {
                            Ok(r) => r.text,
                            Err(e) => {
                                failure = Some(e.to_string());
                                local_summary(dropped)
                            }
                        }
                    })?;
                    if let Some(e) = failure {
                        log::warn!("model compaction failed, used local summary: {e}");
                    }
                    removed
                }
                None => wm.compact()?,
            };
            Ok(ThinkOutcome::Compacted { removed })
        }
    }
}
