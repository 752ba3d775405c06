use mobile_experts::bundle_dir;
use mobile_experts::device::sim::{Scenario, SimDevice};
use mobile_experts::device::{Action, Device};
use mobile_experts::gateway::{Gateway, RunId, ScriptedGateway};
use mobile_experts::toolsmith::{
    detect_stable_elements, execute_tool, mine_workflow, read_trajectories, validate_tool,
    ActionTrajectory, Binding, Outcome, ToolError, ToolRegistry, TrajectoryJournal,
    TrajectoryRecorder,
};
use std::collections::BTreeMap;

fn twitter() -> Scenario {
    Scenario::load(bundle_dir().join("scenarios/twitter.json")).unwrap()
}

fn center(dev: &mut SimDevice, key_tail: &str) -> (i32, i32) {
    let s = dev.capture_screen().unwrap();
    s.elements
        .iter()
        .find(|e| e.stable_key.as_deref().is_some_and(|k| k.ends_with(key_tail)))
        .unwrap_or_else(|| panic!("{key_tail} not on {}", s.display_name()))
        .bounds
        .center()
}

fn tap(dev: &mut SimDevice, key_tail: &str) -> Action {
    let (x, y) = center(dev, key_tail);
    Action::Tap { x, y }
}

fn post_tweet_trajectory(dev: &mut SimDevice, body: &str) -> ActionTrajectory {
    let start = dev.capture_screen().unwrap();
    let mut rec = TrajectoryRecorder::start(
        ActionTrajectory::new("explore-1", "com.twitter.android", format!("post a tweet '{body}'")),
        start,
    );
    rec.perform(dev, &Action::Tap { x: 540, y: 960 }, "open composer", false)
        .unwrap();
    rec.record_local(
        &Action::Think {
            flow: mobile_experts::device::ThinkFlow::Write,
            goal: "composer is open".into(),
        },
        "note progress",
        "",
    )
    .unwrap();
    rec.perform(dev, &Action::Text { content: body.into() }, "type the tweet", true)
        .unwrap();
    let post = tap(dev, "post_button");
    rec.perform(dev, &post, "post the tweet", false).unwrap();
    rec.finish(Outcome::Success)
}

#[test]
fn mines_post_tweet_with_one_formal_param() {
    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "hello");
    assert_eq!(traj.steps.len(), 4);
    let stable = detect_stable_elements(std::slice::from_ref(&traj));
    let tool = mine_workflow(&traj, &stable, None).unwrap();
    assert_eq!(tool.tool_id, "post_tweet");
    assert_eq!(tool.program.len(), 3, "think step dropped");
    assert_eq!(tool.formal_params.len(), 1);
    assert_eq!(tool.formal_params[0].name, "tweet_body");
    assert_eq!(
        tool.program[1].bindings["content"],
        Binding::Formal("tweet_body".into())
    );
    assert!(tool.literals().all(|v| v.as_str() != Some("hello")));
    assert_eq!(&tool.initial_signature, traj.initial_signature().unwrap());
    assert_eq!(&tool.final_signature, traj.final_signature().unwrap());
}

#[test]
fn validation_passes_then_detects_precondition_and_divergence() {
    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "hello");
    let tool = mine_workflow(&traj, &detect_stable_elements(&[traj.clone()]), None).unwrap();

    let mut fresh = SimDevice::new(twitter());
    let report = validate_tool(&tool, &mut fresh, None).unwrap();
    assert!(report.passed);
    assert_eq!(fresh.current_screen(), "home", "device restored after validation");

    fresh.goto("compose_editor").unwrap();
    assert!(matches!(
        validate_tool(&tool, &mut fresh, None),
        Err(ToolError::PreconditionMismatch { .. })
    ));

    let mut mutated = twitter();
    let editor = mutated.screen_mut("compose_editor").unwrap();
    editor.elements.retain(|e| e.id != "post_button");
    mutated
        .transitions
        .retain(|t| t.element.as_deref() != Some("post_button"));
    let mut dev = SimDevice::new(mutated);
    match validate_tool(&tool, &mut dev, None) {
        Err(ToolError::ReplayMismatch { step, report }) => {
            assert_eq!(step, 3);
            assert_eq!(report.diverged_at, Some(3));
            assert!(!report.passed);
        }
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn execution_makes_no_model_calls() {
    let gateway = ScriptedGateway::new(Vec::new());
    let run = RunId::new("exec");
    gateway.open_run(&run);

    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "hello");
    let tool = mine_workflow(&traj, &detect_stable_elements(&[traj.clone()]), None).unwrap();

    let mut dev = SimDevice::new(twitter());
    let bindings = BTreeMap::from([("tweet_body".to_string(), "hi".to_string())]);
    let out = execute_tool(&tool, &bindings, &mut dev).unwrap();
    assert_eq!(out.device_steps(), 3);
    assert!(dev.flags().contains("tweet_posted"));
    assert_eq!(gateway.call_count(&run).unwrap().total, 0);
    assert_eq!(out.task_inputs(), vec!["hi"]);

    let mut dev = SimDevice::new(twitter());
    assert!(matches!(
        execute_tool(&tool, &BTreeMap::new(), &mut dev),
        Err(ToolError::MissingBinding(p)) if p == "tweet_body"
    ));
}

#[test]
fn drift_before_second_step_reports_prefix() {
    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "hello");
    let tool = mine_workflow(&traj, &detect_stable_elements(&[traj.clone()]), None).unwrap();

    let mut drifted = twitter();
    for t in &mut drifted.transitions {
        if t.from == "home" && t.element.as_deref() == Some("compose") {
            t.to = "messages".into();
        }
    }
    let mut dev = SimDevice::new(drifted);
    let bindings = BTreeMap::from([("tweet_body".to_string(), "hi".to_string())]);
    match execute_tool(&tool, &bindings, &mut dev) {
        Err(ToolError::StepFailed { step, prefix, .. }) => {
            assert_eq!(step, 2);
            assert_eq!(prefix.steps.len(), 1);
        }
        other => panic!("expected step failure, got {other:?}"),
    }
}

#[test]
fn tap_on_shifting_feed_item_is_not_minable() {
    let mut dev = SimDevice::new(twitter());
    let start = dev.capture_screen().unwrap();
    let mut rec = TrajectoryRecorder::start(
        ActionTrajectory::new("feed", "com.twitter.android", "open the second tweet"),
        start,
    );
    let a = tap(&mut dev, "feed_item_2");
    rec.perform(&mut dev, &a, "open tweet", false).unwrap();
    let a = tap(&mut dev, ":id/back");
    rec.perform(&mut dev, &a, "leave", false).unwrap();
    rec.perform(&mut dev, &Action::Back, "back home", false).unwrap();
    assert_eq!(dev.current_screen(), "home");
    let a = tap(&mut dev, "feed_item_2");
    rec.perform(&mut dev, &a, "open tweet again", false).unwrap();
    let traj = rec.finish(Outcome::Success);

    let stable = detect_stable_elements(std::slice::from_ref(&traj));
    assert!(!stable.is_stable("com.twitter.android", "home", "com.twitter.android:id/feed_item_2"));
    assert!(stable.is_stable("com.twitter.android", "home", "com.twitter.android:id/compose"));
    assert!(matches!(
        mine_workflow(&traj, &stable, None),
        Err(ToolError::NotMinable(_))
    ));
}

#[test]
fn trajectory_without_text_has_no_params() {
    let mut dev = SimDevice::new(twitter());
    let start = dev.capture_screen().unwrap();
    let mut rec = TrajectoryRecorder::start(
        ActionTrajectory::new("msg", "com.twitter.android", "read the first unread message"),
        start,
    );
    let a = tap(&mut dev, ":id/messages");
    rec.perform(&mut dev, &a, "open messages", false).unwrap();
    let a = tap(&mut dev, "thread_1");
    rec.perform(&mut dev, &a, "open first thread", false).unwrap();
    let traj = rec.finish(Outcome::Success);
    let tool = mine_workflow(&traj, &detect_stable_elements(&[traj.clone()]), None).unwrap();
    assert!(tool.formal_params.is_empty());
    assert_eq!(tool.program.len(), 2);

    let failed = {
        let mut t = traj.clone();
        t.outcome = Outcome::Failure;
        t
    };
    assert!(matches!(
        mine_workflow(&failed, &detect_stable_elements(&[traj]), None),
        Err(ToolError::NotMinable(_))
    ));
}

#[test]
fn chain_break_is_rejected() {
    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "x");
    let mut broken = ActionTrajectory::new("b", "app", "task");
    broken.record_step(traj.steps[0].clone()).unwrap();
    let err = broken.record_step(traj.steps[0].clone()).unwrap_err();
    assert!(matches!(err, ToolError::ChainBreak { index: 1, .. }));
    assert_eq!(broken.steps.len(), 1);
}

#[test]
fn registry_ranks_and_persists() {
    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "hello");
    let tool = mine_workflow(&traj, &detect_stable_elements(&[traj.clone()]), None).unwrap();
    let mut fresh = SimDevice::new(twitter());
    let report = validate_tool(&tool, &mut fresh, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let registry = ToolRegistry::open(dir.path()).unwrap();
    assert!(registry
        .lookup("com.twitter.android", &tool.initial_signature, "post a tweet")
        .is_empty());
    let id = registry.register(tool.clone(), &report).unwrap();
    assert_eq!(id, "post_tweet");

    let hits = registry.lookup("com.twitter.android", &tool.initial_signature, "post a tweet 'hey'");
    assert_eq!(hits[0].tool.tool_id, "post_tweet");
    assert!(!hits[0].needs_navigation);
    let elsewhere = fresh.capture_screen().map(|_| ()).and_then(|_| {
        fresh.goto("messages")?;
        fresh.capture_screen()
    });
    let hits = registry.lookup("com.twitter.android", &elsewhere.unwrap().screen_signature, "post a tweet");
    assert!(hits[0].needs_navigation);

    let mut bad = report.clone();
    bad.passed = false;
    assert!(matches!(registry.register(tool, &bad), Err(ToolError::NotValidated(_))));

    let reopened = ToolRegistry::open(dir.path()).unwrap();
    assert_eq!(reopened.len(), 1);
}

#[test]
fn journal_round_trip() {
    let mut dev = SimDevice::new(twitter());
    let traj = post_tweet_trajectory(&mut dev, "hello");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectories.jsonl");
    let journal = TrajectoryJournal::open(&path).unwrap();
    journal.write(&traj).unwrap();
    journal.write(&traj).unwrap();
    let back = read_trajectories(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], traj);
}
