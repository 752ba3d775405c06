mod common;

use common::random::{random_app, random_walk};
use mobile_experts::clock::Clock;
use mobile_experts::device::sim::SimDevice;
use mobile_experts::device::{diff_screens, Action, Device, DeviceError, Direction, Role, ScreenState};
use mobile_experts::evalkit::{best_attempt, Complexity, RunRecord};
use mobile_experts::expert::verify_transition;
use mobile_experts::memory::{Confidence, ExpertId, IconKey, IconObservation, IconStore, MemoryError, WorkingMemory};
use mobile_experts::orchestrator::{find_cycle, PlanNode, TeamPlan};
use mobile_experts::toolsmith::{detect_stable_elements, mine_workflow, Binding};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        4 => (0..1080i32, 0..2400i32).prop_map(|(x, y)| Action::Tap { x, y }),
        1 => "[a-z ]{1,12}".prop_map(|content| Action::Text { content }),
        1 => (0..1080i32, 0..2400i32).prop_map(|(x, y)| Action::Swipe { x, y, direction: Direction::Up }),
        1 => Just(Action::Back),
        1 => Just(Action::Home),
        1 => Just(Action::Wait),
    ]
}

fn invalid_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (i32::MIN..0, any::<i32>()).prop_map(|(x, y)| Action::Tap { x, y }),
        (0..1080i32, i32::MIN..0).prop_map(|(x, y)| Action::Tap { x, y }),
        Just(Action::Text { content: String::new() }),
    ]
}

/// Capture without the timestamp.
fn view(s: &ScreenState) -> (String, Vec<String>, Option<String>) {
    let els = s.elements.iter().map(|e| format!("{e:?}")).collect();
    (s.screen_signature.0.clone(), els, s.focused.clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invalid_actions_leave_the_screen_alone(prefix in prop::collection::vec(action(), 0..6), bad in invalid_action()) {
        let mut dev = common::phone();
        for a in &prefix {
            let _ = dev.perform(a);
        }
        let before = dev.capture_screen().unwrap();
        let err = dev.perform(&bad).unwrap_err();
        prop_assert!(matches!(err, DeviceError::InvalidParams(_)), "{err}");
        prop_assert_eq!(view(&before), view(&dev.capture_screen().unwrap()));
    }

    #[test]
    fn simulator_is_deterministic(actions in prop::collection::vec(action(), 0..=20)) {
        let (mut a, mut b) = (common::phone(), common::phone());
        for act in &actions {
            let ra = a.perform(act).map(|r| (r.observed_effect, view(&r.post_state)));
            let rb = b.perform(act).map(|r| (r.observed_effect, view(&r.post_state)));
            prop_assert_eq!(ra, rb);
        }
        prop_assert_eq!(a.current_screen(), b.current_screen());
    }

    #[test]
    fn one_signature_never_names_two_screens(actions in prop::collection::vec(action(), 0..=20)) {
        let mut dev = common::phone();
        let mut names: BTreeMap<String, String> = BTreeMap::new();
        let first = dev.capture_screen().unwrap();
        names.insert(first.screen_signature.0.clone(), first.display_name());
        for act in &actions {
            if let Ok(r) = dev.perform(act) {
                let s = r.post_state;
                let name = names.entry(s.screen_signature.0.clone()).or_insert_with(|| s.display_name());
                prop_assert_eq!(&*name, &s.display_name());
            }
        }
    }

    #[test]
    fn compaction_keeps_the_newest_entries(
        lens in prop::collection::vec(1usize..120, 1..30),
        budget in 20usize..400,
    ) {
        let mut wm = WorkingMemory::new(ExpertId::new("e"), budget, Clock::Frozen);
        for (i, n) in lens.iter().enumerate() {
            wm.write(&format!("t{i}"), &"w".repeat(*n));
        }
        let before = wm.clone();
        let pinned: Vec<_> = before.entries().iter().rev().take(3).cloned().collect();
        match wm.compact() {
            Ok(_) => {
                prop_assert!(wm.token_estimate() <= budget);
                let kept: Vec<_> = wm.entries().iter().rev().take(pinned.len()).cloned().collect();
                prop_assert_eq!(kept, pinned);
            }
            Err(MemoryError::BudgetUnsatisfiable { .. }) => {
                prop_assert!(before.over_budget());
                prop_assert_eq!(wm, before);
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn icon_confidence_only_drops_on_contradiction(ops in prop::collection::vec(0u8..5, 0..40)) {
        let mut dev = common::phone();
        let before = dev.capture_screen().unwrap();
        let after = dev.perform(&Action::Home).unwrap().post_state;
        let diff = diff_screens(&before, &after);
        let store = IconStore::new(Clock::Frozen);
        let key = IconKey { app_id: "a".into(), screen_signature: before.screen_signature.clone(), element_ref: "a:id/i".into() };
        for op in ops {
            let was = store.get(&key).map(|r| r.confidence);
            let guess = match op { 1 => Some("opens a menu".to_string()), 2 => Some("goes back".to_string()), _ => None };
            let _ = match op {
                0..=2 => store
                    .upsert(&IconObservation { app_id: "a".into(), screen_signature: key.screen_signature.clone(), element_ref: key.element_ref.clone(), guess })
                    .map(|_| ()),
                3 => store.apply_verdict(&key, "opens a menu", &diff, true).map(|_| ()),
                _ => store.apply_verdict(&key, "opens a menu", &diff, false).map(|_| ()),
            };
            let now = store.get(&key).map(|r| r.confidence);
            if now < was {
                prop_assert_eq!(op, 4);
                prop_assert_eq!((was, now), (Some(Confidence::Verified), Some(Confidence::Hypothesized)));
            }
        }
    }
}

fn graph() -> impl Strategy<Value = (usize, BTreeSet<(usize, usize)>)> {
    (1usize..=9).prop_flat_map(|n| (Just(n), prop::collection::btree_set((0..n, 0..n), 0..=n * 2)))
}

fn nodes_of(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<PlanNode> {
    (0..n)
        .map(|a| PlanNode {
            node_id: format!("n{a}"),
            description: format!("step {a}"),
            assigned_expert: "x".into(),
            deps: edges.iter().filter(|e| e.0 == a).map(|e| format!("n{}", e.1)).collect(),
        })
        .collect()
}

fn reaches_itself(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    (0..n).any(|start| {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = edges.iter().filter(|e| e.0 == start).map(|e| e.1).collect();
        while let Some(v) = stack.pop() {
            if v == start {
                return true;
            }
            if seen.insert(v) {
                stack.extend(edges.iter().filter(|e| e.0 == v).map(|e| e.1));
            }
        }
        false
    })
}

fn record(attempt: u32, success: bool, milestones: usize, calls: u64) -> RunRecord {
    RunRecord {
        task_id: "t".into(),
        complexity: Complexity::C2,
        attempt,
        success,
        milestones_hit: milestones,
        milestones_total: 4,
        gateway_calls: calls,
        device_steps: 0,
        trajectory: String::new(),
        judge_score: None,
        error: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn cycle_detection_matches_reachability((n, edges) in graph()) {
        let nodes = nodes_of(n, &edges);
        prop_assert_eq!(find_cycle(&nodes).is_some(), reaches_itself(n, &edges));
        if let Ok(order) = TeamPlan::new("r", nodes.clone()).topo_order() {
            let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            prop_assert_eq!(pos.len(), n);
            for node in &nodes {
                for d in &node.deps {
                    prop_assert!(pos[d.as_str()] < pos[node.node_id.as_str()]);
                }
            }
        }
    }

    #[test]
    fn best_attempt_ignores_order(
        attrs in prop::collection::vec((any::<bool>(), 0usize..4, 0u64..6), 1..6),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let records: Vec<RunRecord> = attrs.iter().enumerate().map(|(i, &(s, m, c))| record(i as u32 + 1, s, m, c)).collect();
        let best = best_attempt(&records).expect("non-empty input has a best").attempt;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(best_attempt(&shuffled).unwrap().attempt, best);
        for r in &records {
            let b = &records[best as usize - 1];
            prop_assert!((b.success, b.milestones_hit) >= (r.success, r.milestones_hit));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_verification_matches_the_scenario(seed in any::<u64>(), taps in prop::collection::vec((0usize..6, any::<bool>()), 1..10)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let app = random_app(&mut rng, 6);
        let mut dev = SimDevice::new(app.scenario.clone());
        for (pick, miss) in taps {
            let prev = dev.capture_screen().unwrap();
            let screen = dev.current_screen().to_string();
            let targets: Vec<_> = prev.elements.iter().filter(|e| e.role != Role::Container).collect();
            // the strip left of the buttons is empty on every screen
            let (action, truth) = if miss || targets.is_empty() {
                (Action::Tap { x: 20, y: 1000 }, false)
            } else {
                let t = targets[pick % targets.len()];
                let (x, y) = t.bounds.center();
                let live = t.role == Role::TextField || app.taps.contains_key(&(screen.clone(), t.element_id.clone()));
                (Action::Tap { x, y }, live)
            };
            let curr = dev.perform(&action).unwrap().post_state;
            prop_assert_eq!(verify_transition(&prev, &curr, &action, "", None).consistent, truth);
        }
    }

    #[test]
    fn task_inputs_become_parameters(seed in any::<u64>(), len in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let app = random_app(&mut rng, 8);
        let walk = random_walk(&mut rng, &app, len, "p");
        let stable = detect_stable_elements(std::slice::from_ref(&walk.trajectory));
        if let Ok(tool) = mine_workflow(&walk.trajectory, &stable, None) {
            let formal: Vec<&Binding> = tool.program.iter().flat_map(|s| s.bindings.values()).filter(|b| matches!(b, Binding::Formal(_))).collect();
            prop_assert_eq!(formal.len(), walk.inputs.len());
            let examples: BTreeSet<String> = tool.formal_params.iter().filter_map(|p| p.example.clone()).collect();
            prop_assert_eq!(examples, walk.inputs.iter().cloned().collect::<BTreeSet<_>>());
            for lit in tool.literals() {
                prop_assert!(!walk.inputs.iter().any(|i| lit.as_str() == Some(i.as_str())));
            }
        }
    }
}
