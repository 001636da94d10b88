mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::Rng;

use walknav::adapter::AdapterError;
use walknav::geodesy::{bearing, haversine_distance, to_geo, to_local, GeoPoint, LocalFrame, LocalPose};
use walknav::grounding::{
    ground_destination, Instruction, IntentModel, IntentRequest, IntentResponse, ReferenceIntentModel,
};
use walknav::map_service::{FixtureMap, MapService};
use walknav::policy::{
    body_frame, decide, from_body, reference_decision, reference_trajectory, Observation, SceneDescription,
};
use walknav::route::{build_waypoint_plan, lookahead_goal, Waypoint};
use walknav::sim::{ControlCommand, LightSchedule, Pedestrian, WorldState, MAX_SPEED_MPS, MAX_YAW_RATE};

use common::*;

fn geo_near(lat0: f64, lon0: f64, x: f64, y: f64) -> GeoPoint {
    let frame = LocalFrame::new(GeoPoint::new(lat0, lon0).unwrap()).unwrap();
    to_geo(&frame, x, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn haversine_is_symmetric(a in -90.0..=90.0f64, b in -180.0..=180.0f64, c in -90.0..=90.0f64, d in -180.0..=180.0f64) {
        let p = GeoPoint::new(a, b).unwrap();
        let q = GeoPoint::new(c, d).unwrap();
        prop_assert_eq!(haversine_distance(p, q), haversine_distance(q, p));
    }

    #[test]
    fn triangle_inequality_within_100_km(
        lat in -70.0..70.0f64, lon in -179.0..179.0f64,
        pts in proptest::array::uniform6(-50_000.0..50_000.0f64),
    ) {
        let a = geo_near(lat, lon, pts[0] / 2.0, pts[1] / 2.0);
        let b = geo_near(lat, lon, pts[2] / 2.0, pts[3] / 2.0);
        let c = geo_near(lat, lon, pts[4] / 2.0, pts[5] / 2.0);
        let (ab, bc, ac) = (haversine_distance(a, b), haversine_distance(b, c), haversine_distance(a, c));
        prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn geo_round_trip_within_10_km(lat in -80.0..80.0f64, lon in -180.0..180.0f64, r in 0.0..10_000.0f64, th in -PI..PI) {
        let frame = LocalFrame::new(GeoPoint::new(lat, lon).unwrap()).unwrap();
        let p = to_geo(&frame, r * th.cos(), r * th.sin()).unwrap();
        let (x, y) = to_local(&frame, p).unwrap();
        let q = to_geo(&frame, x, y).unwrap();
        prop_assert!((q.lat - p.lat).abs() < 1e-9);
        prop_assert!((((q.lon - p.lon) + 540.0) % 360.0 - 180.0).abs() < 1e-9);
    }

    #[test]
    fn local_bearing_matches_spherical(lat in -60.0..60.0f64, lon in -179.0..179.0f64, r in 1.0..1000.0f64, th in -PI..PI) {
        let origin = GeoPoint::new(lat, lon).unwrap();
        let frame = LocalFrame::new(origin).unwrap();
        let p = to_geo(&frame, r * th.cos(), r * th.sin()).unwrap();
        // Compass bearing of the local displacement, clockwise from north.
        let local = (PI / 2.0 - th).rem_euclid(2.0 * PI);
        let sph = bearing(origin, p).unwrap().rem_euclid(2.0 * PI);
        let diff = (local - sph + 3.0 * PI).rem_euclid(2.0 * PI) - PI;
        prop_assert!(diff.abs() < 0.01, "local {local} spherical {sph}");
    }

    #[test]
    fn body_frame_round_trip(x in -500.0..500.0f64, y in -500.0..500.0f64, yaw in -PI..PI, px in -500.0..500.0f64, py in -500.0..500.0f64) {
        let pose = LocalPose::new(x, y, yaw);
        let q = from_body(&pose, body_frame(&pose, (px, py)));
        prop_assert!((q.0 - px).abs() < 1e-9 && (q.1 - py).abs() < 1e-9);
    }

    #[test]
    fn plans_satisfy_invariants(seed in any::<u64>(), spacing in 1.0..10.0f64) {
        let route = random_route(&mut rng(seed));
        let frame = LocalFrame::new(route.origin).unwrap();
        let plan = build_waypoint_plan(&route, frame, spacing).unwrap();
        prop_assert!(plan.check(route.destination).is_ok(), "{:?}", plan.check(route.destination));
    }

    #[test]
    fn lookahead_matches_brute_force(seed in any::<u64>(), x in -100.0..100.0f64, y in -100.0..100.0f64, look in 0.5..30.0f64) {
        let route = random_route(&mut rng(seed));
        let frame = LocalFrame::new(route.origin).unwrap();
        let plan = build_waypoint_plan(&route, frame, 5.0).unwrap();
        let pose = LocalPose::new(x, y, 0.0);
        let got = lookahead_goal(&plan, &pose, look);
        prop_assert!(std::ptr::eq(got, &plan.waypoints()[brute_lookahead(&plan, &pose, look)]));
    }

    #[test]
    fn lookahead_goals_never_backtrack(seed in any::<u64>(), look in 1.0..20.0f64) {
        let route = random_route(&mut rng(seed));
        let frame = LocalFrame::new(route.origin).unwrap();
        let plan = build_waypoint_plan(&route, frame, 5.0).unwrap();
        // Walking the waypoints in order increases projected arc length.
        let mut last = f64::NEG_INFINITY;
        for w in plan.waypoints() {
            let g = lookahead_goal(&plan, &LocalPose::new(w.local.0, w.local.1, 0.0), look);
            prop_assert!(g.arc_length >= last);
            last = g.arc_length;
        }
    }

    #[test]
    fn fixture_routes_are_shortest_and_chained(seed in any::<u64>()) {
        let mut r = rng(seed);
        let fx = random_fixture(&mut r);
        let dist = floyd_warshall(&fx);
        let map = FixtureMap::from_fixture(fx.clone()).unwrap();
        let n = fx.nodes.len();
        let a = r.random_range(0..n);
        let b = (a + r.random_range(1..n)) % n;
        match map.walking_route(node_point(&fx, a), node_point(&fx, b)) {
            Ok(route) => {
                prop_assert!((route.total_length() - dist[a][b]).abs() < 1e-6);
                prop_assert!(route.check().is_ok());
                let back = map.walking_route(node_point(&fx, b), node_point(&fx, a)).unwrap();
                prop_assert!((back.total_length() - route.total_length()).abs() < 1.0);
            }
            Err(_) => prop_assert!(dist[a][b].is_infinite()),
        }
    }

    #[test]
    fn poi_search_respects_radius_and_rank(radius in 50.0..2000.0f64, x in -500.0..500.0f64, y in -500.0..500.0f64) {
        let map = FixtureMap::load(&fixture_path()).unwrap();
        let near = geo_near(30.26, 120.12, x, y);
        for cat in ["building", "park", "shopping mall", "supermarket"] {
            let found = map.poi_search(cat, near, radius, 50).unwrap();
            for c in &found {
                prop_assert!(haversine_distance(near, c.location) <= radius);
                prop_assert_eq!(&c.category, cat);
            }
            prop_assert!(found.windows(2).all(|w| w[0].rank < w[1].rank));
        }
    }

    #[test]
    fn grounding_never_returns_foreign_candidates(seed in any::<u64>(), pick in 0usize..20) {
        struct Chooser(String);
        impl IntentModel for Chooser {
            fn infer(&mut self, _: &IntentRequest) -> Result<IntentResponse, AdapterError> {
                Ok(IntentResponse::Selection { candidate_id: self.0.clone(), rationale: "pick".into(), confidence: None })
            }
        }
        let map = FixtureMap::load(&fixture_path()).unwrap();
        let candidates = map.poi_search("building", origin(), 1500.0, 10).unwrap();
        let mut r = rng(seed);
        let id = if r.random_bool(0.5) && pick < candidates.len() {
            candidates[pick].id.clone()
        } else {
            format!("ghost-{pick}")
        };
        let instruction = Instruction { text: "deliver to building".into(), issued_at: origin() };
        if let Ok(g) = ground_destination(&mut Chooser(id), &instruction, &["building".into()], &candidates) {
            prop_assert!(candidates.contains(&g.choice));
        }
        let mut reference = ReferenceIntentModel;
        let a = ground_destination(&mut reference, &instruction, &["building".into()], &candidates).unwrap();
        let b = ground_destination(&mut reference, &instruction, &["building".into()], &candidates).unwrap();
        prop_assert!(candidates.contains(&a.choice));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reference_models_are_pure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut peds = Vec::new();
        for _ in 0..r.random_range(0..6) {
            peds.push(walknav::policy::PedestrianObservation {
                position: (r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)),
                velocity: (r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)),
            });
        }
        let obs = Observation {
            scene: SceneDescription { pedestrians: peds, ..SceneDescription::empty() },
            pose: LocalPose::new(0.0, 0.0, r.random_range(-PI..PI)),
            history: Vec::new(),
            goal: Waypoint {
                geo: origin(),
                local: (r.random_range(-15.0..15.0), r.random_range(-15.0..15.0)),
                cue: walknav::map_service::SemanticCue::None,
                step_index: 0,
                arc_length: 0.0,
            },
            instruction: String::new(),
            step: 0,
        };
        let d = reference_decision(&obs);
        prop_assert!(d.validate().is_ok());
        prop_assert_eq!(&d, &reference_decision(&obs));
        let mut m = walknav::policy::ReferenceJointModel;
        prop_assert_eq!(&decide(&mut m, &obs).unwrap(), &d);
        let t = reference_trajectory(&obs);
        prop_assert!(t.validate(MAX_SPEED_MPS * 0.5).is_ok(), "{:?}", t.validate(MAX_SPEED_MPS * 0.5));
        prop_assert_eq!(t, reference_trajectory(&obs));
    }

    #[test]
    fn sim_respects_caps_and_stops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut world = WorldState::new(LocalPose::new(0.0, 0.0, r.random_range(-PI..PI)), seed);
        world.pedestrians.push(Pedestrian::new("p", vec![(5.0, 5.0), (-5.0, 5.0)], 1.0, true));
        let start = world.clone();
        let mut commands = Vec::new();
        for _ in 0..40 {
            let cmd = match r.random_range(0..3) {
                0 => ControlCommand::Stop,
                1 => ControlCommand::YawAlign { heading: r.random_range(-PI..PI) },
                _ => ControlCommand::Track { target: (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0)) },
            };
            let before = world.robot.pose;
            world.advance(&cmd, 0.5).unwrap();
            prop_assert!(world.robot.speed <= MAX_SPEED_MPS + 1e-12);
            prop_assert!(world.robot.yaw_rate.abs() <= MAX_YAW_RATE + 1e-12);
            if cmd == ControlCommand::Stop {
                prop_assert_eq!(world.robot.pose, before);
            }
            commands.push(cmd);
        }
        let mut again = start;
        for cmd in &commands {
            again.advance(cmd, 0.5).unwrap();
        }
        prop_assert_eq!(again, world);
    }

    #[test]
    fn light_phase_matches_accumulation(red in 0.0..60.0f64, green in 0.0..60.0f64, offset in -100.0..100.0f64) {
        let schedule = LightSchedule { red_s: red, green_s: green, offset_s: offset };
        // Accumulate elapsed time phase by phase, starting at the offset.
        let period = red + green;
        let mut phase = if period > 0.0 { offset.rem_euclid(period) } else { 0.0 };
        for k in 0..200 {
            let t = k as f64 * 0.5;
            let red_now = if green <= 0.0 { true } else if red <= 0.0 { false } else { phase < red };
            let got = schedule.state_at(t) == walknav::policy::LightState::Red;
            // Skip samples that land within rounding of a phase boundary.
            let near_edge = period > 0.0 && ((phase - red).abs() < 1e-6 || phase < 1e-6 || (period - phase) < 1e-6);
            if !near_edge {
                prop_assert_eq!(got, red_now, "t {} phase {}", t, phase);
            }
            if period > 0.0 {
                phase += 0.5;
                while phase >= period {
                    phase -= period;
                }
            }
        }
    }
}

#[test]
fn localization_noise_has_configured_spread() {
    let noise = walknav::sim::NoiseModel { sigma_xy: 0.2, sigma_yaw: 0.05 };
    let mut world = WorldState::new(LocalPose::new(3.0, -2.0, 0.4), 99);
    let n = 10_000;
    let (mut sx, mut sy, mut syaw) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let p = world.localize(&noise);
        sx += (p.x - 3.0).powi(2);
        sy += (p.y + 2.0).powi(2);
        syaw += (p.yaw - 0.4).powi(2);
    }
    let sd = |s: f64| (s / n as f64).sqrt();
    assert!((sd(sx) / 0.2 - 1.0).abs() < 0.05, "x sigma {}", sd(sx));
    assert!((sd(sy) / 0.2 - 1.0).abs() < 0.05, "y sigma {}", sd(sy));
    assert!((sd(syaw) / 0.05 - 1.0).abs() < 0.05, "yaw sigma {}", sd(syaw));
}

#[test]
fn zero_noise_localizes_exactly() {
    let noise = walknav::sim::NoiseModel { sigma_xy: 0.0, sigma_yaw: 0.0 };
    let mut world = WorldState::new(LocalPose::new(3.0, -2.0, 0.4), 1);
    assert_eq!(world.localize(&noise), LocalPose::new(3.0, -2.0, 0.4));
}

#[test]
fn same_seed_gives_same_noise() {
    let noise = walknav::sim::NoiseModel::default();
    let mut a = WorldState::new(LocalPose::new(0.0, 0.0, 0.0), 7);
    let mut b = WorldState::new(LocalPose::new(0.0, 0.0, 0.0), 7);
    for _ in 0..100 {
        assert_eq!(a.localize(&noise), b.localize(&noise));
    }
}
