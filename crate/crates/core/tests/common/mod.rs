#![allow(dead_code)]

use mobile_experts::bundle_dir;
use mobile_experts::clock::Clock;
use mobile_experts::device::sim::{Scenario, SimDevice};
use mobile_experts::expert::{ExpertContext, ExpertPortrait};
use mobile_experts::gateway::{Gateway, RoleTag, RunId, ScriptEntry, ScriptedGateway};
use mobile_experts::memory::ExpertId;
use serde_json::Value;
use std::sync::Arc;

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(bundle_dir().join("scenarios").join(format!("{name}.json"))).unwrap()
}

pub fn phone() -> SimDevice {
    SimDevice::new(scenario("phone"))
}

pub fn phone_with_id(id: &str) -> SimDevice {
    SimDevice::with_id(scenario("phone"), id)
}

pub fn entry(tag: RoleTag, key: &str, payload: Value) -> ScriptEntry {
    ScriptEntry {
        role_tag: tag,
        key: key.into(),
        response_text: String::new(),
        parsed_payload: Some(payload),
    }
}

pub fn context(entries: Vec<ScriptEntry>, run: &str) -> ExpertContext {
    let gw: Arc<dyn Gateway> = Arc::new(ScriptedGateway::new(entries));
    let mut ctx = ExpertContext::new(gw, RunId::new(run));
    ctx.clock = Clock::Frozen;
    ctx
}

pub fn portrait(role: &str, responsibility: &str, tags: &[&str], apps: &[&str]) -> ExpertPortrait {
    ExpertPortrait {
        expert_id: ExpertId::new(role),
        role_name: role.into(),
        responsibility: responsibility.into(),
        capability_tags: tags.iter().map(|s| s.to_string()).collect(),
        app_affinity: apps.iter().map(|s| s.to_string()).collect(),
    }
}

pub mod random;
