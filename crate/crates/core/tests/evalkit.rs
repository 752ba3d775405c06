use mobile_experts::bundle_dir;
use mobile_experts::clock::Clock;
use mobile_experts::device::Predicate;
use mobile_experts::evalkit::{
    complete_performance, load_bundle, process_score, report, run_task, success_rate, Category,
    Complexity, EvalConfig, EvalError, EvalSystem, RunRecord, TaskSpec,
};
use mobile_experts::gateway::{Gateway, RoleTag, RunId, ScriptEntry, ScriptedGateway};
use mobile_experts::orchestrator::ExpertPool;
use std::collections::BTreeMap;
use std::sync::Arc;

fn bundle() -> Vec<TaskSpec> {
    load_bundle(bundle_dir().join("tasks")).unwrap()
}

fn spec(id: &str) -> TaskSpec {
    bundle().into_iter().find(|s| s.task_id == id).unwrap()
}

fn experts() -> ExpertPool {
    ExpertPool::load(bundle_dir().join("experts.json")).unwrap()
}

fn system(spec: &TaskSpec) -> EvalSystem {
    EvalSystem::for_sim_task(spec, experts(), None, Clock::Frozen, None).unwrap()
}

fn record(task: &str, tier: Complexity, success: bool, calls: u64) -> RunRecord {
    RunRecord {
        task_id: task.into(),
        complexity: tier,
        attempt: 1,
        success,
        milestones_hit: 0,
        milestones_total: 0,
        gateway_calls: calls,
        device_steps: 0,
        trajectory: String::new(),
        judge_score: None,
        error: None,
    }
}

#[test]
fn bundle_has_the_full_task_table() {
    let specs = bundle();
    assert_eq!(specs.len(), 28);
    let mut tiers: BTreeMap<Complexity, usize> = BTreeMap::new();
    for s in &specs {
        *tiers.entry(s.complexity).or_default() += 1;
    }
    assert_eq!(tiers[&Complexity::C1], 12);
    assert_eq!(tiers[&Complexity::C2], 13);
    assert_eq!(tiers[&Complexity::C3], 3);
    let cross = specs.iter().filter(|s| s.category == Category::CrossApp).count();
    assert_eq!(cross, 4);
    assert!(specs
        .iter()
        .any(|s| s.instruction == "Help me operate a twitter account with the theme {topic}."));
    // at least one simulated task per category and tier
    let mut covered = std::collections::BTreeSet::new();
    for s in specs.iter().filter(|s| s.sim.is_some()) {
        covered.insert((s.category, s.complexity));
    }
    for cat in [Category::SocialMedia, Category::OnlineService, Category::ProductivityTool] {
        assert!(covered.contains(&(cat, Complexity::C1)) && covered.contains(&(cat, Complexity::C2)));
    }
    assert!(covered.contains(&(Category::CrossApp, Complexity::C2)));
    assert!(covered.contains(&(Category::CrossApp, Complexity::C3)));
}

#[test]
fn spec_invariants() {
    let mut s = spec("twitter_c2");
    s.max_steps = Some(20);
    assert!(matches!(s.validate(), Err(EvalError::InvalidSpec { .. })));
    let mut s = spec("twitter_c2");
    s.milestones.clear();
    assert!(s.validate().is_err());
    let s = spec("gmail_c1");
    assert_eq!(s.rendered_instruction(), "Write an email to team@example.com.");
}

#[test]
fn success_rate_matches_reported_tiers() {
    let tier = |n: usize, ok: usize, t| -> Vec<RunRecord> {
        (0..n).map(|i| record(&format!("{t:?}{i}"), t, i < ok, 0)).collect()
    };
    let oracle = |ok: f64, n: f64| ok / n;
    assert!((success_rate(&tier(12, 10, Complexity::C1)).unwrap() - oracle(10.0, 12.0)).abs() < 1e-12);
    assert!((success_rate(&tier(12, 10, Complexity::C1)).unwrap() - 0.8333).abs() < 1e-4);
    assert!((success_rate(&tier(13, 10, Complexity::C2)).unwrap() - 0.7692).abs() < 1e-4);
    assert_eq!(success_rate(&tier(3, 3, Complexity::C3)).unwrap(), 1.0);
    assert!(matches!(success_rate(&[]), Err(EvalError::EmptyTier(_))));
}

#[test]
fn process_score_is_the_milestone_ratio() {
    let s = spec("notion_c2");
    let mut r = record("notion_c2", Complexity::C2, false, 0);
    r.milestones_hit = 3;
    assert_eq!(process_score(&r, &s).unwrap(), 0.75);
    r.milestones_hit = 4;
    assert_eq!(process_score(&r, &s).unwrap(), 1.0);
    r.milestones_hit = 0;
    assert_eq!(process_score(&r, &s).unwrap(), 0.0);
    assert!(matches!(process_score(&r, &spec("gmail_c1")), Err(EvalError::NoMilestones(_))));
}

#[test]
fn complete_performance_rules() {
    let gw = ScriptedGateway::new(vec![ScriptEntry {
        role_tag: RoleTag::Judge,
        key: format!("task={},aspect=complete", spec("notion_c2").instruction),
        response_text: "{\"score\": 7}".into(),
        parsed_payload: None,
    }]);
    let c1 = spec("twitter_c1");
    let ok = record("twitter_c1", Complexity::C1, true, 3);
    assert_eq!(complete_performance(&ok, &c1, &gw, "").unwrap(), 10.0);
    let bad = record("twitter_c1", Complexity::C1, false, 3);
    assert_eq!(complete_performance(&bad, &c1, &gw, "").unwrap(), 0.0);
    let c2 = spec("notion_c2");
    let r = record("notion_c2", Complexity::C2, true, 3);
    assert_eq!(complete_performance(&r, &c2, &gw, "did it").unwrap(), 7.0);
    let empty = ScriptedGateway::new(vec![]);
    assert!(matches!(
        complete_performance(&r, &c2, &empty, ""),
        Err(EvalError::JudgeUnavailable(_))
    ));
}

#[test]
fn report_aggregates_best_attempts() {
    let mut records = Vec::new();
    for (i, calls) in [28, 29, 28].into_iter().enumerate() {
        records.push(record(&format!("c3-{i}"), Complexity::C3, true, calls));
        // a worse earlier attempt of the same task must not count
        let mut worse = record(&format!("c3-{i}"), Complexity::C3, false, 5);
        worse.attempt = 2;
        records.push(worse);
    }
    let rep = report(&records).unwrap();
    let c3 = rep.tier(Complexity::C3).unwrap();
    assert_eq!(c3.tasks, 3);
    assert!((c3.rs - 85.0 / 3.0).abs() < 1e-12);
    assert!((c3.rs - 28.3333).abs() < 1e-4);
    assert_eq!(c3.su, 1.0);
    assert!(rep.tier(Complexity::C1).is_err());

    let single = report(&[record("x", Complexity::C1, true, 4)]).unwrap();
    assert_eq!(single.tiers.len(), 1);
    let table = single.render_table("sim");
    assert!(table.contains("C1 SU") && table.contains("C1 CP"));

    let csv_text = rep.to_csv().unwrap();
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[3][0], "tier");
    assert_eq!(&rows[3][6], "28.3333");
}

#[test]
fn simulated_tasks_succeed() {
    let config = EvalConfig {
        attempts: 1,
        ..EvalConfig::default()
    };
    for s in bundle().iter().filter(|s| s.sim.is_some()) {
        let sys = system(s);
        let run = run_task(s, &sys, &config).unwrap();
        let best = &run.best;
        assert!(best.success, "{}: {best:?}", s.task_id);
        assert_eq!(best.milestones_hit, best.milestones_total, "{}", s.task_id);
        assert_eq!(best.gateway_calls, sys.gateway.call_count(&RunId::new(best.trajectory.as_str())).unwrap().total);
        if s.complexity != Complexity::C3 {
            assert!(best.device_steps <= 15);
        }
        assert!(run.exploration_steps <= 10);
        if s.complexity == Complexity::C1 {
            assert_eq!(best.judge_score, Some(10.0));
        } else {
            assert!(best.judge_score.is_some(), "{}", s.task_id);
        }
    }
}

#[test]
fn best_of_three_and_explored_tool_cuts_calls() {
    let s = spec("notion_c1");
    let run = run_task(&s, &system(&s), &EvalConfig::default()).unwrap();
    assert_eq!(run.attempts.len(), 3);
    assert!(run.exploration_steps > 0 && run.exploration_steps <= 10);
    // the mined tool replaces every decision: only the planning call is left
    assert_eq!(run.best.gateway_calls, 1);
    assert_eq!(run.best.attempt, 1);
}

#[test]
fn judge_predicates_fall_back_to_the_plan_outcome() {
    let mut s = spec("twitter_c1");
    s.success_check = Predicate::Judge("was the message read?".into());
    let config = EvalConfig {
        attempts: 1,
        ..EvalConfig::default()
    };
    let run = run_task(&s, &system(&s), &config).unwrap();
    assert!(run.best.success);
}

#[test]
fn unscripted_task_fails_without_error() {
    let s = spec("twitter_c1");
    let gw: Arc<dyn Gateway> = Arc::new(ScriptedGateway::new(vec![]));
    let mut sys = system(&s);
    sys.gateway = gw;
    let config = EvalConfig {
        attempts: 2,
        ..EvalConfig::default()
    };
    let run = run_task(&s, &sys, &config).unwrap();
    assert_eq!(run.attempts.len(), 2);
    assert!(!run.best.success);
    assert!(run.best.error.is_none(), "plan call failure is a failed node, not a crash");
    assert_eq!(run.best.gateway_calls, 2, "one plan call per node attempt");
}
