use super::OrchestratorError;
use crate::expert::ExpertPortrait;
use crate::memory::ExpertId;
use crate::text::{overlap_score, tokens};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;

/// Portraits scoring at least this against a requirement join the team.
pub const SELECTION_THRESHOLD: f64 = 0.3;

/// Keywords that reveal which capability a requirement needs, with the app
/// that usually provides it.
pub const CAPABILITY_LEXICON: &[(&str, &[&str], Option<&str>)] = &[
    ("twitter", &["twitter", "tweet"], Some("com.twitter.android")),
    ("instagram", &["instagram"], Some("com.instagram.android")),
    ("tiktok", &["tiktok"], Some("com.zhiliaoapp.musically")),
    ("xiaohongshu", &["xiaohongshu"], Some("com.xingin.xhs")),
    ("maps", &["navigate", "maps"], Some("com.google.android.apps.maps")),
    ("shopping", &["temu", "alibaba", "price", "product"], Some("com.einnovation.temu")),
    ("app_store", &["play", "install", "software", "app"], Some("com.android.vending")),
    ("messenger", &["messenger", "verification"], Some("com.facebook.orca")),
    ("notion", &["notion", "note", "document"], Some("notion.id")),
    ("email", &["gmail", "email", "emails"], Some("com.google.android.gm")),
    ("browser", &["chrome", "arxiv", "browser", "web", "article"], Some("com.android.chrome")),
    ("wikipedia", &["wikipedia"], Some("org.wikipedia")),
    ("research", &["theme", "topic", "research", "popular"], Some("com.android.chrome")),
    ("registration", &["registration", "register"], None),
];

/// Capability tags a requirement calls for, in lexicon order.
pub fn needed_capabilities(requirement: &str) -> Vec<&'static str> {
    let words = tokens(requirement);
    CAPABILITY_LEXICON
        .iter()
        .filter(|(_, keys, _)| keys.iter().any(|k| tokens(k).iter().all(|t| words.contains(t))))
        .map(|(tag, _, _)| *tag)
        .collect()
}

fn app_for(tag: &str) -> Option<&'static str> {
    CAPABILITY_LEXICON.iter().find(|(t, _, _)| *t == tag).and_then(|(_, _, app)| *app)
}

/// Fraction of the requirement's content words found in the portrait.
pub fn score_portrait(portrait: &ExpertPortrait, requirement: &str) -> f64 {
    overlap_score(requirement, &portrait.profile_text())
}

fn covers(portrait: &ExpertPortrait, tag: &str) -> bool {
    portrait.capability_tags.iter().any(|t| t == tag)
        || app_for(tag).is_some_and(|app| portrait.app_affinity.iter().any(|a| a == app))
}

/// Every known expert. Role names are unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertPool {
    experts: Vec<ExpertPortrait>,
}

impl ExpertPool {
    pub fn new(experts: Vec<ExpertPortrait>) -> Result<Self, OrchestratorError> {
        let mut pool = Self::default();
        for e in experts {
            pool.add(e)?;
        }
        Ok(pool)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref();
        let err = |message: String| OrchestratorError::PoolFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let experts: Vec<ExpertPortrait> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Self::new(experts)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OrchestratorError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.experts).expect("portraits serialize");
        std::fs::write(path, text + "\n").map_err(|e| OrchestratorError::PoolFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn add(&mut self, portrait: ExpertPortrait) -> Result<(), OrchestratorError> {
        if portrait.responsibility.trim().is_empty() {
            return Err(OrchestratorError::InvalidPortrait(format!(
                "{} has no responsibility",
                portrait.role_name
            )));
        }
        if self.get(&portrait.role_name).is_some() {
            return Err(OrchestratorError::InvalidPortrait(format!(
                "duplicate role {}",
                portrait.role_name
            )));
        }
        self.experts.push(portrait);
        Ok(())
    }

    pub fn get(&self, role_name: &str) -> Option<&ExpertPortrait> {
        self.experts.iter().find(|e| e.role_name == role_name)
    }

    pub fn experts(&self) -> &[ExpertPortrait] {
        &self.experts
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Team {
    pub team_id: String,
    pub members: Vec<ExpertPortrait>,
    pub requirement: String,
    /// Role names created for this requirement.
    #[serde(default)]
    pub synthesized: Vec<String>,
}

impl Team {
    pub fn member(&self, role_name: &str) -> Option<&ExpertPortrait> {
        self.members.iter().find(|m| m.role_name == role_name)
    }

    pub fn role_names(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.role_name.as_str()).collect()
    }
}

/// New portrait covering `tags`, named after the first of them.
fn synthesize(tags: &[&str], requirement: &str, pool: &ExpertPool) -> ExpertPortrait {
    let base = tags.first().copied().unwrap_or("general");
    let mut role_name = format!("{base}_expert");
    let mut n = 2;
    while pool.get(&role_name).is_some() {
        role_name = format!("{base}_expert_{n}");
        n += 1;
    }
    let apps: BTreeSet<&str> = tags.iter().filter_map(|t| app_for(t)).collect();
    let responsibility = if tags.is_empty() {
        format!("handles requests such as: {requirement}")
    } else {
        format!("handles {} tasks", tags.join(", ").replace('_', " "))
    };
    ExpertPortrait {
        expert_id: ExpertId::new(role_name.clone()),
        role_name,
        responsibility,
        capability_tags: tags.iter().map(|t| t.to_string()).collect(),
        app_affinity: apps.into_iter().map(str::to_string).collect(),
    }
}

/// Choose the experts for a requirement.
///
/// Portraits scoring at least [`SELECTION_THRESHOLD`] are selected. Each
/// capability the requirement needs that no selected member covers is
/// filled by the best-scoring pool expert covering it; capabilities nobody
/// covers get one newly created expert, which is added to the pool.
pub fn assemble_team(pool: &mut ExpertPool, requirement: &str) -> Result<Team, OrchestratorError> {
    if requirement.trim().is_empty() {
        return Err(OrchestratorError::EmptyRequirement);
    }
    let mut scored: Vec<(f64, &ExpertPortrait)> = pool
        .experts()
        .iter()
        .map(|e| (score_portrait(e, requirement), e))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.role_name.cmp(&b.1.role_name)));

    let mut members: Vec<ExpertPortrait> = scored
        .iter()
        .filter(|(s, _)| *s >= SELECTION_THRESHOLD)
        .map(|(_, e)| (*e).clone())
        .collect();
    let mut uncovered = Vec::new();
    for tag in needed_capabilities(requirement) {
        if members.iter().any(|m| covers(m, tag)) {
            continue;
        }
        match scored.iter().find(|(_, e)| covers(e, tag)) {
            Some((_, e)) => members.push((*e).clone()),
            None => uncovered.push(tag),
        }
    }
    let mut synthesized = Vec::new();
    if !uncovered.is_empty() || members.is_empty() {
        let portrait = synthesize(&uncovered, requirement, pool);
        log::info!("created expert {} for '{requirement}'", portrait.role_name);
        synthesized.push(portrait.role_name.clone());
        pool.add(portrait.clone())?;
        members.push(portrait);
    }

    let mut hasher = Sha256::new();
    hasher.update(requirement.as_bytes());
    for m in &members {
        hasher.update(b"|");
        hasher.update(m.role_name.as_bytes());
    }
    Ok(Team {
        team_id: format!("team-{}", hex::encode(&hasher.finalize()[..4])),
        members,
        requirement: requirement.to_string(),
        synthesized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn portrait(role: &str, resp: &str, tags: &[&str], apps: &[&str]) -> ExpertPortrait {
        ExpertPortrait {
            expert_id: ExpertId::new(role),
            role_name: role.into(),
            responsibility: resp.into(),
            capability_tags: tags.iter().map(|s| s.to_string()).collect(),
            app_affinity: apps.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn lexicon_finds_capabilities() {
        assert_eq!(needed_capabilities("Post a tweet about cats"), ["twitter"]);
        assert_eq!(needed_capabilities("Enter arxiv.org in Chrome."), ["browser"]);
        assert!(needed_capabilities("hello there").is_empty());
    }

    #[test]
    fn pool_rejects_duplicates_and_empty_responsibility() {
        let mut pool = ExpertPool::default();
        pool.add(portrait("a", "does a", &[], &[])).unwrap();
        assert!(pool.add(portrait("a", "again", &[], &[])).is_err());
        assert!(pool.add(portrait("b", " ", &[], &[])).is_err());
    }

    #[test]
    fn synthesized_names_do_not_clash() {
        let mut pool = ExpertPool::default();
        pool.add(portrait("maps_expert", "x", &[], &[])).unwrap();
        let p = synthesize(&["maps"], "navigate home", &pool);
        assert_eq!(p.role_name, "maps_expert_2");
        assert_eq!(p.app_affinity, ["com.google.android.apps.maps"]);
    }
}
