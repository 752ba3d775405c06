use super::{score_portrait, OrchestratorError, Team};
use crate::expert::ExpertContext;
use crate::gateway::{ModelRequest, RoleTag};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Blocked,
    Ready,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub node_id: String,
    pub description: String,
    pub assigned_expert: String,
    #[serde(default)]
    pub deps: Vec<String>,
}

/// Team-level task graph. Statuses are owned by the scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamPlan {
    pub plan_id: String,
    pub requirement: String,
    pub nodes: Vec<PlanNode>,
    pub status: BTreeMap<String, NodeStatus>,
}

/// A cycle in `nodes`, if any, as the ids left over by Kahn's algorithm.
/// Unknown dependency ids are ignored here.
pub fn find_cycle(nodes: &[PlanNode]) -> Option<Vec<String>> {
    let ids: BTreeSet<&str> = nodes.iter().map(|n| n.node_id.as_str()).collect();
    let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|&id| (id, 0)).collect();
    let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for n in nodes {
        for d in n.deps.iter().filter(|d| ids.contains(d.as_str())) {
            *indegree.get_mut(n.node_id.as_str()).expect("known id") += 1;
            out.entry(d.as_str()).or_default().push(&n.node_id);
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
    let mut seen = 0;
    while let Some(id) = ready.pop_first() {
        seen += 1;
        for &next in out.get(id).map(Vec::as_slice).unwrap_or_default() {
            let d = indegree.get_mut(next).expect("known id");
            *d -= 1;
            if *d == 0 {
                ready.insert(next);
            }
        }
    }
    (seen < ids.len()).then(|| {
        indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(id, _)| id.to_string())
            .collect()
    })
}

impl TeamPlan {
    pub fn new(requirement: &str, nodes: Vec<PlanNode>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(requirement.as_bytes());
        for n in &nodes {
            hasher.update(n.node_id.as_bytes());
            hasher.update(n.assigned_expert.as_bytes());
        }
        let plan_id = format!("plan-{}", hex::encode(&hasher.finalize()[..4]));
        let mut plan = Self {
            plan_id,
            requirement: requirement.to_string(),
            nodes,
            status: BTreeMap::new(),
        };
        plan.reset_status();
        plan
    }

    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Ready when every dependency is done, blocked otherwise.
    pub fn reset_status(&mut self) {
        self.status = self
            .nodes
            .iter()
            .map(|n| {
                let s = if n.deps.is_empty() { NodeStatus::Ready } else { NodeStatus::Blocked };
                (n.node_id.clone(), s)
            })
            .collect();
    }

    /// Promote blocked nodes whose dependencies are all done.
    pub fn refresh_ready(&mut self) {
        let done: BTreeSet<String> = self
            .status
            .iter()
            .filter(|(_, s)| **s == NodeStatus::Done)
            .map(|(id, _)| id.clone())
            .collect();
        for n in &self.nodes {
            let s = self.status.get_mut(&n.node_id).expect("status per node");
            if *s == NodeStatus::Blocked && n.deps.iter().all(|d| done.contains(d)) {
                *s = NodeStatus::Ready;
            }
        }
    }

    /// Ids of ready nodes in id order.
    pub fn ready(&self) -> Vec<String> {
        self.status
            .iter()
            .filter(|(_, s)| **s == NodeStatus::Ready)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Every node reachable from `id` through dependency edges.
    pub fn dependents(&self, id: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            for n in &self.nodes {
                if n.deps.contains(&cur) && out.insert(n.node_id.clone()) {
                    stack.push(n.node_id.clone());
                }
            }
        }
        out
    }

    /// Node ids in a dependency-respecting order (smallest id first among
    /// the available ones).
    pub fn topo_order(&self) -> Result<Vec<String>, OrchestratorError> {
        if let Some(cycle) = find_cycle(&self.nodes) {
            return Err(OrchestratorError::CyclicPlan(cycle));
        }
        let mut done: BTreeSet<&str> = BTreeSet::new();
        let mut order = Vec::new();
        while order.len() < self.nodes.len() {
            let next = self
                .nodes
                .iter()
                .filter(|n| !done.contains(n.node_id.as_str()))
                .filter(|n| n.deps.iter().all(|d| done.contains(d.as_str())))
                .map(|n| n.node_id.as_str())
                .min()
                .expect("acyclic graph always has an available node");
            done.insert(next);
            order.push(next.to_string());
        }
        Ok(order)
    }

    /// Structural checks: unique non-empty ids, known dependencies,
    /// acyclic, every node assigned to a team member.
    pub fn validate(&self, team: &Team) -> Result<(), OrchestratorError> {
        validate_nodes(&self.nodes)?;
        for n in &self.nodes {
            if team.member(&n.assigned_expert).is_none() {
                return Err(OrchestratorError::UnassignedNode(n.node_id.clone()));
            }
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.status.values().all(|s| *s == NodeStatus::Done)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        serde_json::from_str(text).map_err(|e| OrchestratorError::InvalidPlan(e.to_string()))
    }
}

fn validate_nodes(nodes: &[PlanNode]) -> Result<(), OrchestratorError> {
    if nodes.is_empty() {
        return Err(OrchestratorError::InvalidPlan("plan has no nodes".into()));
    }
    let mut ids = BTreeSet::new();
    for n in nodes {
        if n.node_id.trim().is_empty() {
            return Err(OrchestratorError::InvalidPlan("node with empty id".into()));
        }
        if !ids.insert(n.node_id.as_str()) {
            return Err(OrchestratorError::InvalidPlan(format!("duplicate node id {}", n.node_id)));
        }
    }
    for n in nodes {
        for d in &n.deps {
            if !ids.contains(d.as_str()) {
                return Err(OrchestratorError::UnknownDependency {
                    node: n.node_id.clone(),
                    dep: d.clone(),
                });
            }
        }
    }
    match find_cycle(nodes) {
        Some(cycle) => Err(OrchestratorError::CyclicPlan(cycle)),
        None => Ok(()),
    }
}

/// Pick the member best suited to a node: highest score, then role name.
pub(crate) fn auto_assign(team: &Team, description: &str) -> String {
    let mut scored: Vec<(f64, &str)> = team
        .members
        .iter()
        .map(|m| (score_portrait(m, description), m.role_name.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored[0].1.to_string()
}

fn parse_nodes(payload: Option<Value>, team: &Team) -> Result<Vec<PlanNode>, OrchestratorError> {
    let items = match payload {
        Some(Value::Object(mut o)) => match o.remove("nodes") {
            Some(Value::Array(a)) => a,
            _ => return Err(OrchestratorError::InvalidPlan("answer has no 'nodes' list".into())),
        },
        Some(Value::Array(a)) => a,
        _ => return Err(OrchestratorError::InvalidPlan("answer is not JSON".into())),
    };
    items
        .iter()
        .map(|v| {
            let text = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
            let node_id = text("id")
                .or_else(|| text("node_id"))
                .ok_or_else(|| OrchestratorError::InvalidPlan(format!("node without id: {v}")))?;
            let description = text("description").unwrap_or_default();
            let assigned_expert = match text("expert").or_else(|| text("assigned_expert")) {
                Some(e) if !e.trim().is_empty() => e,
                _ => auto_assign(team, &description),
            };
            let deps = v
                .get("deps")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                .unwrap_or_default();
            Ok(PlanNode {
                node_id,
                description,
                assigned_expert,
                deps,
            })
        })
        .collect()
}

/// Distribute the requirement over the team as a validated task graph.
/// A one-member team gets a single node without asking the model. A plan
/// that is malformed or cyclic is asked for once more before giving up.
pub fn plan_team(team: &Team, requirement: &str, ctx: &ExpertContext) -> Result<TeamPlan, OrchestratorError> {
    if requirement.trim().is_empty() {
        return Err(OrchestratorError::EmptyRequirement);
    }
    if team.members.len() == 1 {
        let node = PlanNode {
            node_id: "n1".into(),
            description: requirement.to_string(),
            assigned_expert: team.members[0].role_name.clone(),
            deps: Vec::new(),
        };
        return Ok(TeamPlan::new(requirement, vec![node]));
    }
    let mut roles: Vec<&str> = team.members.iter().map(|m| m.role_name.as_str()).collect();
    roles.sort_unstable();
    let profiles = team
        .members
        .iter()
        .map(|m| format!("{}: {}", m.role_name, m.responsibility))
        .collect::<Vec<_>>()
        .join("\n");
    let mut last_err = None;
    for asked in 0..2 {
        let req = ModelRequest::new(ctx.run.clone(), RoleTag::PlanTeam)
            .key("requirement", requirement)
            .key("team", roles.join("+"))
            .context("members", profiles.clone())
            .context(
                "feedback",
                last_err.as_ref().map(|e: &OrchestratorError| e.to_string()).unwrap_or_default(),
            );
        let resp = ctx.gateway.complete(&req)?;
        let attempt = parse_nodes(resp.payload(), team).and_then(|nodes| {
            let plan = TeamPlan::new(requirement, nodes);
            plan.validate(team)?;
            Ok(plan)
        });
        match attempt {
            Ok(plan) => return Ok(plan),
            Err(e @ (OrchestratorError::CyclicPlan(_) | OrchestratorError::InvalidPlan(_))) if asked == 0 => {
                log::warn!("rejected team plan, asking again: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("loop exits early on success"))
}
