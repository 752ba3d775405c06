use super::{ExpertId, MemoryError};
use crate::journal::Journal;
use crate::text::overlap_score;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::RwLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamCommit {
    pub task_node_id: String,
    pub attempt: u32,
    pub expert_id: ExpertId,
    pub status: CommitStatus,
    pub summary: String,
    pub exported_entries: Vec<String>,
    pub committed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchedEntry {
    pub node_id: String,
    pub expert_id: ExpertId,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Default)]
struct PoolInner {
    nodes: BTreeSet<String>,
    commits: BTreeMap<(String, u32), TeamCommit>,
    order: Vec<(String, u32)>,
}

/// Team-shared memory. Commits are immutable and become visible atomically:
/// a fetch either sees a whole commit or none of it.
#[derive(Debug, Default)]
pub struct TeamPool {
    inner: RwLock<PoolInner>,
    journal: Option<Journal>,
}

impl TeamPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_journal(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        Ok(Self {
            inner: RwLock::default(),
            journal: Some(Journal::open(path)?),
        })
    }

    /// Declare the nodes of the plan being executed.
    pub fn activate_plan<I, S>(&self, node_ids: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut inner = self.inner.write().expect("team pool poisoned");
        inner.nodes.extend(node_ids.into_iter().map(Into::into));
    }

    pub fn commit(&self, tc: TeamCommit) -> Result<(), MemoryError> {
        let mut inner = self.inner.write().expect("team pool poisoned");
        if !inner.nodes.contains(&tc.task_node_id) {
            return Err(MemoryError::UnknownNode(tc.task_node_id));
        }
        let key = (tc.task_node_id.clone(), tc.attempt);
        if inner.commits.contains_key(&key) {
            return Err(MemoryError::DuplicateCommit {
                node: tc.task_node_id,
                attempt: tc.attempt,
            });
        }
        if let Some(j) = &self.journal {
            j.append(&tc)?;
        }
        inner.order.push(key.clone());
        inner.commits.insert(key, tc);
        Ok(())
    }

    /// Latest commit for each requested node, its summary and exported
    /// entries ranked by relevance to `query` (request order on ties).
    pub fn fetch(&self, node_ids: &[String], query: &str) -> Result<Vec<FetchedEntry>, MemoryError> {
        let inner = self.inner.read().expect("team pool poisoned");
        let mut out: Vec<(f64, usize, FetchedEntry)> = Vec::new();
        let mut seq = 0usize;
        for id in node_ids {
            let latest = inner
                .commits
                .range((id.clone(), 0)..=(id.clone(), u32::MAX))
                .next_back()
                .map(|(_, c)| c)
                .ok_or_else(|| MemoryError::MissingDependencyCommit(id.clone()))?;
            for text in std::iter::once(&latest.summary).chain(latest.exported_entries.iter()) {
                let score = overlap_score(query, text);
                out.push((
                    score,
                    seq,
                    FetchedEntry {
                        node_id: id.clone(),
                        expert_id: latest.expert_id.clone(),
                        text: text.clone(),
                        score,
                    },
                ));
                seq += 1;
            }
        }
        out.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(out.into_iter().map(|(_, _, e)| e).collect())
    }

    pub fn get(&self, node_id: &str, attempt: u32) -> Option<TeamCommit> {
        self.inner
            .read()
            .expect("team pool poisoned")
            .commits
            .get(&(node_id.to_string(), attempt))
            .cloned()
    }

    /// All commits in the order they were accepted.
    pub fn commits(&self) -> Vec<TeamCommit> {
        let inner = self.inner.read().expect("team pool poisoned");
        inner.order.iter().map(|k| inner.commits[k].clone()).collect()
    }
}
