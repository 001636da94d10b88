mod common;

use std::collections::VecDeque;

use walknav::geodesy::{LocalFrame, LocalPose};
use walknav::grounding::{ground, ReferenceIntentModel};
use walknav::map_service::MapService;
use walknav::orchestrator::{assemble_observation, success_rate, Outcome, Trace};
use walknav::route::build_waypoint_plan;
use walknav::sim::{ControlCommand, Scenario};

use common::*;

fn scenario(dir: std::path::PathBuf, stem: &str) -> std::path::PathBuf {
    dir.join(format!("{stem}.toml"))
}

fn traces_of(stem: &str, adversarial: bool, trials: usize) -> Vec<Trace> {
    let dir = if adversarial { adversarial_dir() } else { nominal_dir() };
    run_reference(vec![scenario(dir, stem)], trials, None).traces
}

#[test]
fn delivery_reaches_building_b_without_stopping() {
    for t in traces_of("01-milk-tea-building-b", false, 5) {
        let r = t.result().unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert_eq!(r.stop_wait_events, 0);
        assert_eq!(r.destination.as_deref(), Some("poi-building-b"));
        assert!(r.final_distance.unwrap() <= 3.0);
    }
}

#[test]
fn permanent_red_aborts_after_exactly_the_budget() {
    for t in traces_of("01-permanent-red", true, 5) {
        let h = t.header().unwrap();
        assert_eq!(t.result().unwrap().outcome, Outcome::AbortedSafety);
        let steps: Vec<_> = t.steps().collect();
        let last = steps.last().unwrap();
        assert_eq!(last.consecutive_stops, h.config.safety_budget + 1);
        assert_eq!(last.dt, 0.0);
        assert_eq!(last.pose_before, last.pose_after);
        let retries = steps[..steps.len() - 1]
            .iter()
            .rev()
            .take_while(|s| s.command == ControlCommand::Stop)
            .count();
        assert_eq!(retries, 10);
        assert!(t.red_crossing_steps().is_empty());
    }
}

#[test]
fn red_then_green_waits_then_crosses_on_green() {
    for t in traces_of("02-red-then-green", true, 5) {
        let r = t.result().unwrap();
        assert_eq!(r.outcome, Outcome::Success);
        assert!(r.stop_wait_events >= 1);
        let entry = t.steps().find(|s| s.crossing_after.is_some()).unwrap();
        assert!(!entry.red_crossing_after);
        assert!(entry.clock >= 20.0, "entered at {}", entry.clock);
    }
}

#[test]
fn trace_level_invariants_hold_on_shipped_scenarios() {
    let report = run_reference(vec![nominal_dir(), adversarial_dir()], 3, None);
    for t in &report.traces {
        let h = t.header().unwrap();
        let r = t.result().unwrap();
        assert!(t.gate_violations(h.config.alpha).is_empty());
        assert!(t.moving_stops().is_empty());
        assert!(t.red_crossing_steps().is_empty());
        let steps: Vec<_> = t.steps().collect();
        for s in &steps {
            if s.command.moves() {
                assert_eq!(s.consecutive_stops, 0, "{} step {}", h.meta.scenario, s.step);
            }
        }
        if let Some(d) = r.final_distance {
            assert_eq!(r.outcome == Outcome::Success, d <= h.config.arrival_tolerance);
        }
        if r.outcome == Outcome::Success {
            let total = h.plan_length.unwrap();
            let arc = r.final_arc.unwrap();
            assert!(total - arc <= h.config.arrival_tolerance, "{}: {arc} of {total}", h.meta.scenario);
        }
    }
}

#[test]
fn observation_history_and_goal() {
    let sc = Scenario::load(&scenario(nominal_dir(), "04-go-shopping")).unwrap();
    let map = sc.load_map().unwrap();
    let mut setup = sc.build(3).unwrap();
    let grounded = ground(&mut ReferenceIntentModel, &map, &setup.instruction).unwrap();
    let route = map.walking_route(setup.instruction.issued_at, grounded.choice.location).unwrap();
    let plan = build_waypoint_plan(&route, LocalFrame::new(setup.instruction.issued_at).unwrap(), 5.0).unwrap();
    let cfg = walknav::cli::episode_config(&sc, &[]).unwrap();
    let mut history: VecDeque<LocalPose> = VecDeque::new();
    for step in 0..cfg.history_len + 6 {
        let obs = assemble_observation(&mut setup.world, &plan, &route, &history, &cfg, &setup.noise, step);
        match step {
            0 => assert!(obs.history.is_empty()),
            s if s >= cfg.history_len + 5 => assert_eq!(obs.history.len(), cfg.history_len),
            s => assert_eq!(obs.history.len(), s.min(cfg.history_len)),
        }
        let want = &plan.waypoints()[brute_lookahead(&plan, &obs.pose, cfg.lookahead)];
        assert_eq!(&obs.goal, want);
        let density = obs
            .scene
            .pedestrians
            .iter()
            .filter(|p| (p.position.0 - obs.pose.x).hypot(p.position.1 - obs.pose.y) <= 5.0)
            .count();
        assert!(density <= obs.scene.pedestrians.len());
        history.push_back(obs.pose);
        setup
            .world
            .advance(&ControlCommand::Track { target: obs.goal.local }, cfg.dt)
            .unwrap();
    }
}

#[test]
fn summary_groups_scenarios_by_task() {
    let paths = vec![
        scenario(nominal_dir(), "01-milk-tea-building-b"),
        scenario(nominal_dir(), "03-go-for-a-walk"),
    ];
    let report = run_reference(paths, 5, None);
    let table = &report.summary.table;
    assert_eq!(table.rows().count(), 5);
    assert_eq!(table.scenarios.len(), 2);
    assert_eq!(table.tasks.len(), 2);
    let avg = table.average.as_ref().unwrap();
    assert_eq!((avg.successes, avg.trials), (10, 10));
    for row in &table.scenarios {
        let batch = walknav::orchestrator::TrialBatch {
            results: report
                .summary
                .episodes
                .iter()
                .filter(|e| e.meta.scenario == row.scenario)
                .map(|e| e.result.clone())
                .collect(),
        };
        assert_eq!(row.sr, success_rate(&batch).unwrap());
    }
    let rendered = table.render();
    assert!(rendered.lines().any(|l| l.starts_with("Average") && l.contains("All")));
    assert!(rendered.contains("10 / 10"));
}

#[test]
fn same_seed_same_trace() {
    let a = traces_of("05-oncoming-pedestrians", false, 2);
    let b = traces_of("05-oncoming-pedestrians", false, 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.to_jsonl(), y.to_jsonl());
    }
}
