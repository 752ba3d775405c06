use super::MemoryError;
use crate::journal::{read_journal, Journal};
use crate::text::overlap_score;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::RwLock;

pub const DEFAULT_INSIGHT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightCategory {
    Efficiency,
    FailurePath,
    Performance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightRecord {
    pub category: InsightCategory,
    pub expert_role: String,
    pub task_context: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InsightId(pub u64);

#[derive(Debug, Serialize, Deserialize)]
struct Stored {
    id: InsightId,
    #[serde(flatten)]
    record: InsightRecord,
}

/// Append-only insight memory.
#[derive(Debug, Default)]
pub struct InsightStore {
    records: RwLock<Vec<(InsightId, InsightRecord)>>,
    journal: Option<Journal>,
}

impl InsightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn persistent(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let mut records = Vec::new();
        if path.exists() {
            for s in read_journal::<Stored>(path)? {
                records.push((s.id, s.record));
            }
        }
        Ok(Self {
            records: RwLock::new(records),
            journal: Some(Journal::open(path)?),
        })
    }

    pub fn add(&self, record: InsightRecord) -> Result<InsightId, MemoryError> {
        let mut records = self.records.write().expect("insight store poisoned");
        let id = InsightId(records.len() as u64);
        if let Some(j) = &self.journal {
            j.append(&Stored {
                id,
                record: record.clone(),
            })?;
        }
        records.push((id, record));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("insight store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<(InsightId, InsightRecord)> {
        self.records.read().expect("insight store poisoned").clone()
    }

    /// Up to `k` records of `expert_role` sharing keywords with
    /// `task_context`, best overlap first, older first on ties.
    pub fn query(
        &self,
        expert_role: &str,
        task_context: &str,
        k: usize,
    ) -> Vec<(InsightId, InsightRecord)> {
        let records = self.records.read().expect("insight store poisoned");
        let mut scored: Vec<(f64, InsightId, InsightRecord)> = records
            .iter()
            .filter(|(_, r)| r.expert_role == expert_role)
            .map(|(id, r)| {
                let doc = format!("{} {}", r.task_context, r.text);
                (overlap_score(task_context, &doc), *id, r.clone())
            })
            .filter(|(s, _, _)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, id, r)| (id, r)).collect()
    }
}
