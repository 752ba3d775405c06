use super::MemoryError;
use crate::clock::Clock;
use crate::device::{ScreenDiff, Signature};
use crate::journal::{read_journal, Journal};
use crate::text::overlap_score;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

/// Minimum fraction of hypothesis tokens that must show up in the observed
/// transition for the hypothesis to count as confirmed.
pub const CONSISTENCY_THRESHOLD: f64 = 0.5;

/// Ordered from least to most certain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Confidence {
    Uncharted,
    Hypothesized,
    Verified,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IconKey {
    pub app_id: String,
    pub screen_signature: Signature,
    pub element_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IconObservation {
    pub app_id: String,
    pub screen_signature: Signature,
    pub element_ref: String,
    pub guess: Option<String>,
}

impl IconObservation {
    pub fn key(&self) -> IconKey {
        IconKey {
            app_id: self.app_id.clone(),
            screen_signature: self.screen_signature.clone(),
            element_ref: self.element_ref.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IconRecord {
    pub app_id: String,
    pub screen_signature: Signature,
    pub element_ref: String,
    pub hypothesized_function: Option<String>,
    pub confidence: Confidence,
    pub evidence_count: u32,
    pub last_updated: u64,
}

impl IconRecord {
    pub fn key(&self) -> IconKey {
        IconKey {
            app_id: self.app_id.clone(),
            screen_signature: self.screen_signature.clone(),
            element_ref: self.element_ref.clone(),
        }
    }
}

/// Token-overlap agreement between a hypothesis and an observed transition.
pub fn consistency_score(hypothesis: &str, diff: &ScreenDiff) -> f64 {
    overlap_score(hypothesis, &diff.observed_description())
}

fn observed_function(diff: &ScreenDiff) -> String {
    if diff.app_switched() {
        format!("switches to {} ({})", diff.after_app, diff.after_screen)
    } else if diff.changed {
        format!("leads to {}", diff.after_screen.replace('_', " "))
    } else if !diff.changed_text.is_empty() {
        "edits text in place".to_string()
    } else {
        "no visible effect".to_string()
    }
}

/// Team-wide interface memory. Concurrent readers, serialized writers.
#[derive(Debug, Default)]
pub struct IconStore {
    records: RwLock<BTreeMap<IconKey, IconRecord>>,
    clock: Clock,
    journal: Option<Journal>,
}

impl IconStore {
    pub fn new(clock: Clock) -> Self {
        Self {
            records: RwLock::default(),
            clock,
            journal: None,
        }
    }

    /// Store backed by a journal; existing records are replayed first.
    pub fn persistent(path: impl AsRef<Path>, clock: Clock) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let mut records = BTreeMap::new();
        if path.exists() {
            for r in read_journal::<IconRecord>(path)? {
                records.insert(r.key(), r);
            }
        }
        Ok(Self {
            records: RwLock::new(records),
            clock,
            journal: Some(Journal::open(path)?),
        })
    }

    fn write(&self, record: IconRecord) -> Result<IconRecord, MemoryError> {
        if let Some(j) = &self.journal {
            j.append(&record)?;
        }
        self.records
            .write()
            .expect("icon store poisoned")
            .insert(record.key(), record.clone());
        Ok(record)
    }

    pub fn get(&self, key: &IconKey) -> Option<IconRecord> {
        self.records.read().expect("icon store poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("icon store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<IconRecord> {
        self.records
            .read()
            .expect("icon store poisoned")
            .values()
            .cloned()
            .collect()
    }

    /// Record that an element was seen, optionally with a guessed function.
    /// Never lowers confidence.
    pub fn upsert(&self, obs: &IconObservation) -> Result<IconRecord, MemoryError> {
        if obs.element_ref.trim().is_empty() {
            return Err(MemoryError::InvalidElementRef(obs.element_ref.clone()));
        }
        let guess = obs.guess.as_ref().filter(|g| !g.trim().is_empty()).cloned();
        let now = self.clock.now();
        let record = match self.get(&obs.key()) {
            None => IconRecord {
                app_id: obs.app_id.clone(),
                screen_signature: obs.screen_signature.clone(),
                element_ref: obs.element_ref.clone(),
                confidence: if guess.is_some() {
                    Confidence::Hypothesized
                } else {
                    Confidence::Uncharted
                },
                hypothesized_function: guess,
                evidence_count: 0,
                last_updated: now,
            },
            Some(mut existing) => {
                if existing.confidence == Confidence::Uncharted && guess.is_some() {
                    existing.confidence = Confidence::Hypothesized;
                    existing.hypothesized_function = guess;
                }
                existing.last_updated = now;
                existing
            }
        };
        self.write(record)
    }

    /// Check a hypothesis against an observed transition using the token
    /// matcher.
    pub fn verify(
        &self,
        key: &IconKey,
        expected: &str,
        observed: &ScreenDiff,
    ) -> Result<IconRecord, MemoryError> {
        let consistent = consistency_score(expected, observed) >= CONSISTENCY_THRESHOLD;
        self.apply_verdict(key, expected, observed, consistent)
    }

    /// Apply an externally decided verdict (e.g. from a model judge).
    /// Confirmed: Verified with one more piece of evidence. Contradicted:
    /// Hypothesized, with the hypothesis replaced by what was observed.
    pub fn apply_verdict(
        &self,
        key: &IconKey,
        expected: &str,
        observed: &ScreenDiff,
        consistent: bool,
    ) -> Result<IconRecord, MemoryError> {
        let mut record = self
            .get(key)
            .ok_or_else(|| MemoryError::UnknownIcon(key.element_ref.clone()))?;
        if record.confidence == Confidence::Uncharted || record.hypothesized_function.is_none() {
            return Err(MemoryError::NoHypothesis(key.element_ref.clone()));
        }
        if consistent {
            record.confidence = Confidence::Verified;
            record.evidence_count += 1;
            record.hypothesized_function = Some(expected.to_string());
        } else {
            record.confidence = Confidence::Hypothesized;
            record.evidence_count = 0;
            record.hypothesized_function = Some(observed_function(observed));
        }
        record.last_updated = self.clock.now();
        self.write(record)
    }

    /// Records for one screen: Verified, then Hypothesized, then Uncharted;
    /// within a label by evidence count, descending.
    pub fn query(&self, app_id: &str, screen_signature: &Signature) -> Vec<IconRecord> {
        let mut out: Vec<IconRecord> = self
            .records
            .read()
            .expect("icon store poisoned")
            .values()
            .filter(|r| r.app_id == app_id && &r.screen_signature == screen_signature)
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            b.confidence
                .cmp(&a.confidence)
                .then(b.evidence_count.cmp(&a.evidence_count))
                .then(a.element_ref.cmp(&b.element_ref))
        });
        out
    }
}
