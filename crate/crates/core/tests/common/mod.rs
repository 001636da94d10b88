#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use walknav::cli::{self, RunReport, RunSpec};
use walknav::geodesy::{to_geo, GeoPoint, LocalFrame, LocalPose};
use walknav::map_service::{RouteStep, SemanticCue, WalkingRoute};
use walknav::route::{WaypointPlan, Waypoint};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn nominal_dir() -> PathBuf {
    repo_root().join("scenarios/nominal")
}

pub fn adversarial_dir() -> PathBuf {
    repo_root().join("scenarios/adversarial")
}

pub fn fixture_path() -> PathBuf {
    repo_root().join("fixtures/campus.toml")
}

pub fn run_reference(paths: Vec<PathBuf>, trials: usize, out: Option<PathBuf>) -> RunReport {
    cli::run(&RunSpec {
        scenario_paths: paths,
        trials,
        out_dir: out,
        ..RunSpec::default()
    })
    .expect("batch runs")
}

pub fn origin() -> GeoPoint {
    GeoPoint::new(30.26, 120.12).unwrap()
}

/// Random walking route of 1 to 5 steps with random headings and lengths.
pub fn random_route(rng: &mut ChaCha8Rng) -> WalkingRoute {
    let frame = LocalFrame::new(origin()).unwrap();
    let mut p = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let mut heading: f64 = rng.random_range(-3.1..3.1);
    let n_steps = rng.random_range(1..=5);
    let mut steps = Vec::new();
    for i in 0..n_steps {
        let mut pts = vec![to_geo(&frame, p.0, p.1).unwrap()];
        for _ in 0..rng.random_range(1..=3) {
            heading += rng.random_range(-0.6..0.6);
            let len = rng.random_range(2.0..60.0);
            p = (p.0 + len * heading.cos(), p.1 + len * heading.sin());
            pts.push(to_geo(&frame, p.0, p.1).unwrap());
        }
        heading += rng.random_range(-1.5..1.5);
        let cue = match rng.random_range(0..4) {
            0 => SemanticCue::Crossing,
            1 => SemanticCue::TrafficLight,
            _ => SemanticCue::None,
        };
        steps.push(RouteStep {
            polyline: pts,
            instruction_text: format!("step {i}"),
            semantic_cue: cue,
        });
    }
    let origin = steps[0].polyline[0];
    let destination = *steps.last().unwrap().polyline.last().unwrap();
    WalkingRoute {
        steps,
        origin,
        destination,
    }
}

/// Nearest waypoint by scanning every waypoint, lower index on ties.
pub fn brute_nearest(plan: &WaypointPlan, pose: &LocalPose) -> usize {
    let wps = plan.waypoints();
    let d = |w: &Waypoint| (w.local.0 - pose.x).hypot(w.local.1 - pose.y);
    let best = wps.iter().map(d).fold(f64::INFINITY, f64::min);
    wps.iter().position(|w| d(w) == best).unwrap()
}

/// First waypoint at least `lookahead` of arc past the nearest one, else the
/// final waypoint.
pub fn brute_lookahead(plan: &WaypointPlan, pose: &LocalPose, lookahead: f64) -> usize {
    let wps = plan.waypoints();
    let base = wps[brute_nearest(plan, pose)].arc_length;
    wps.iter()
        .position(|w| w.arc_length >= base + lookahead)
        .unwrap_or(wps.len() - 1)
}

/// Circle through the origin, tangent to +x, through `goal`: returns the
/// point reached after arc length `s`. Straight line when `goal` is ahead on
/// the axis.
pub fn circle_oracle(goal: (f64, f64), s: f64) -> (f64, f64) {
    if goal.1.abs() < 1e-12 {
        return (s, 0.0);
    }
    // Center (0, c) is equidistant from the origin and the goal.
    let c = (goal.0 * goal.0 + goal.1 * goal.1) / (2.0 * goal.1);
    let r = c.abs();
    let phi = s / r;
    // The origin rotated about the center by phi, turning toward the goal.
    (r * phi.sin(), c * (1.0 - phi.cos()))
}

/// Minimum distance between each point `k` and every pedestrian advanced
/// `(k + 1) * spacing` seconds at constant velocity.
pub fn clearance_oracle(points: &[(f64, f64)], spacing: f64, peds: &[walknav::policy::PedestrianMotion]) -> f64 {
    let mut best = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        let t = spacing * (k + 1) as f64;
        for (pos, vel) in peds {
            let dx = p.0 - (pos.0 + vel.0 * t);
            let dy = p.1 - (pos.1 + vel.1 * t);
            best = best.min((dx * dx + dy * dy).sqrt());
        }
    }
    best
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

use walknav::geodesy::haversine_distance;
use walknav::map_service::{Coverage, Fixture, FixtureEdge, FixtureNode};

/// Random pedestrian graph of 4 to 14 nodes within 400 m of the origin. Not
/// necessarily connected.
pub fn random_fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let frame = LocalFrame::new(origin()).unwrap();
    let n = rng.random_range(4..=14);
    let mut nodes = Vec::new();
    for i in 0..n {
        let g = to_geo(&frame, rng.random_range(-400.0..400.0), rng.random_range(-400.0..400.0)).unwrap();
        nodes.push(FixtureNode {
            id: format!("n{i}"),
            lat: g.lat,
            lon: g.lon,
        });
    }
    let mut edges = Vec::new();
    let p_edge = rng.random_range(0.15..0.6);
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p_edge) {
                edges.push(FixtureEdge {
                    from: format!("n{a}"),
                    to: format!("n{b}"),
                    street: format!("Street {}", rng.random_range(0..4)),
                    cue: match rng.random_range(0..6) {
                        0 => SemanticCue::Crossing,
                        1 => SemanticCue::TrafficLight,
                        _ => SemanticCue::None,
                    },
                });
            }
        }
    }
    Fixture {
        kind: "fixture".into(),
        version: 1,
        name: "random".into(),
        coverage: Coverage {
            lat: origin().lat,
            lon: origin().lon,
            radius_m: 2000.0,
        },
        pois: Vec::new(),
        nodes,
        edges,
        routes: Vec::new(),
    }
}

pub fn node_point(fx: &Fixture, i: usize) -> GeoPoint {
    GeoPoint::new(fx.nodes[i].lat, fx.nodes[i].lon).unwrap()
}

/// All-pairs shortest path lengths by Floyd-Warshall over haversine edge
/// lengths.
pub fn floyd_warshall(fx: &Fixture) -> Vec<Vec<f64>> {
    let n = fx.nodes.len();
    let idx = |id: &str| fx.nodes.iter().position(|x| x.id == id).unwrap();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for e in &fx.edges {
        let (a, b) = (idx(&e.from), idx(&e.to));
        let w = haversine_distance(node_point(fx, a), node_point(fx, b));
        if w < d[a][b] {
            d[a][b] = w;
            d[b][a] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}
