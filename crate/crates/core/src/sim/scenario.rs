//! Scenario documents: world geometry, scripts and schedules for one
//! desk-scale episode, authored in meters east/north of a scenario origin.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CrossingZone, LightSchedule, NoiseModel, Pedestrian, TrafficLight, WorldState};
use crate::geodesy::{bearing_to_yaw, to_geo, to_local, GeoPoint, LocalFrame, LocalPose};
use crate::grounding::Instruction;
use crate::map_service::{Fixture, FixtureMap};

pub const SCENARIO_VERSION: u32 = 1;
const MAX_PEDESTRIAN_SPEED_MPS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {}", issues.join("; "))]
    Invalid { path: String, issues: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Start {
    pub x: f64,
    pub y: f64,
    /// Compass heading, degrees clockwise from north.
    pub heading_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioNoise {
    pub sigma_xy: f64,
    pub sigma_yaw: f64,
    /// Position error of the GPS fix used to anchor the local frame.
    pub gps_sigma_m: f64,
}

impl Default for ScenarioNoise {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            sigma_xy: n.sigma_xy,
            sigma_yaw: n.sigma_yaw,
            gps_sigma_m: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub red_s: f64,
    pub green_s: f64,
    #[serde(default)]
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingSpec {
    pub id: String,
    pub polygon: Vec<[f64; 2]>,
    #[serde(default)]
    pub light: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub id: String,
    pub path: Vec<[f64; 2]>,
    pub speed: f64,
    #[serde(default)]
    pub looped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: String,
    pub version: u32,
    pub name: String,
    /// Task category used to group rows in summaries.
    pub task: String,
    /// Fixture path, relative to the scenario file.
    pub fixture: String,
    pub instruction: String,
    #[serde(default)]
    pub expect_destination: Option<String>,
    pub origin: Origin,
    pub start: Start,
    #[serde(default)]
    pub noise: ScenarioNoise,
    /// Episode configuration overrides, applied before command-line ones.
    #[serde(default)]
    pub config: toml::Table,
    #[serde(default, rename = "light")]
    pub lights: Vec<LightSpec>,
    #[serde(default, rename = "crossing")]
    pub crossings: Vec<CrossingSpec>,
    #[serde(default, rename = "pedestrian")]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(skip)]
    source: PathBuf,
}

/// Everything needed to start an episode.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub world: WorldState,
    /// Local frame anchored at the noisy GPS fix.
    pub frame: LocalFrame,
    pub gps_fix: GeoPoint,
    pub true_start: GeoPoint,
    pub instruction: Instruction,
    pub noise: NoiseModel,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Prefixes a parse message with the key assigned on the offending line.
fn with_field(text: &str, offset: usize, message: &str) -> String {
    let line = text.lines().nth(line_of(text, offset) - 1).unwrap_or("");
    match line.split_once('=') {
        Some((key, _)) if !key.trim().is_empty() && !message.contains(&format!("`{}`", key.trim())) => {
            format!("field `{}`: {message}", key.trim())
        }
        _ => message.to_string(),
    }
}

impl Scenario {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        let shown = path.display().to_string();
        let mut sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: shown.clone(),
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            message: e
                .span()
                .map_or_else(|| e.message().to_string(), |sp| with_field(text, sp.start, e.message())),
        })?;
        let header_err = |message: String| ScenarioError::Parse {
            path: shown.clone(),
            line: 1,
            message,
        };
        if sc.kind != "scenario" {
            return Err(header_err(format!(
                "field `kind`: expected \"scenario\", found {:?}",
                sc.kind
            )));
        }
        if sc.version != SCENARIO_VERSION {
            return Err(header_err(format!(
                "field `version`: unsupported version {} (expected {SCENARIO_VERSION})",
                sc.version
            )));
        }
        sc.source = path.to_path_buf();
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn fixture_path(&self) -> PathBuf {
        self.source
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.fixture)
    }

    pub fn load_map(&self) -> Result<FixtureMap, ScenarioError> {
        let path = self.fixture_path();
        FixtureMap::load(&path).map_err(|e| ScenarioError::Invalid {
            path: self.source.display().to_string(),
            issues: vec![format!("field `fixture`: {e}")],
        })
    }

    /// Schema and invariant checks beyond parsing. An empty list means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.name.trim().is_empty() {
            issues.push("field `name`: must not be empty".into());
        }
        if self.task.trim().is_empty() {
            issues.push("field `task`: must not be empty".into());
        }
        if self.instruction.trim().is_empty() {
            issues.push("field `instruction`: must not be empty".into());
        }
        match GeoPoint::new(self.origin.lat, self.origin.lon).map(LocalFrame::new) {
            Ok(Ok(_)) => {}
            Ok(Err(e)) | Err(e) => issues.push(format!("field `origin`: {e}")),
        }
        let start = [self.start.x, self.start.y, self.start.heading_deg];
        if start.iter().any(|v| !v.is_finite()) {
            issues.push("field `start`: values must be finite".into());
        }
        let n = &self.noise;
        for (field, v) in [
            ("sigma_xy", n.sigma_xy),
            ("sigma_yaw", n.sigma_yaw),
            ("gps_sigma_m", n.gps_sigma_m),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                issues.push(format!("field `noise.{field}`: must be finite and >= 0, got {v}"));
            }
        }

        let mut light_ids = HashSet::new();
        for l in &self.lights {
            let at = format!("light {:?}", l.id);
            if !light_ids.insert(l.id.as_str()) {
                issues.push(format!("{at}: duplicate id"));
            }
            if ![l.x, l.y, l.offset_s].iter().all(|v| v.is_finite()) {
                issues.push(format!("{at}: position and offset must be finite"));
            }
            if !(l.red_s.is_finite() && l.red_s >= 0.0 && l.green_s.is_finite() && l.green_s >= 0.0) {
                issues.push(format!("{at}: red_s and green_s must be finite and >= 0"));
            } else if l.red_s + l.green_s <= 0.0 {
                issues.push(format!("{at}: schedule has zero period"));
            }
        }

        let mut crossing_ids = HashSet::new();
        for c in &self.crossings {
            let at = format!("crossing {:?}", c.id);
            if !crossing_ids.insert(c.id.as_str()) {
                issues.push(format!("{at}: duplicate id"));
            }
            let poly: Vec<(f64, f64)> = c.polygon.iter().map(|p| (p[0], p[1])).collect();
            if let Err(e) = check_polygon(&poly) {
                issues.push(format!("{at}: polygon {e}"));
            }
            if let Some(l) = &c.light {
                if !light_ids.contains(l.as_str()) {
                    issues.push(format!("{at}: unknown light {l:?}"));
                }
            }
        }

        let mut ped_ids = HashSet::new();
        for p in &self.pedestrians {
            let at = format!("pedestrian {:?}", p.id);
            if !ped_ids.insert(p.id.as_str()) {
                issues.push(format!("{at}: duplicate id"));
            }
            if p.path.is_empty() {
                issues.push(format!("{at}: path must have at least one point"));
            }
            if p.path.iter().flatten().any(|v| !v.is_finite()) {
                issues.push(format!("{at}: path values must be finite"));
            }
            if !(p.speed.is_finite() && (0.0..=MAX_PEDESTRIAN_SPEED_MPS).contains(&p.speed)) {
                issues.push(format!(
                    "{at}: speed must be in [0, {MAX_PEDESTRIAN_SPEED_MPS}], got {}",
                    p.speed
                ));
            }
        }

        match Fixture::load(&self.fixture_path()) {
            Err(e) => issues.push(format!("field `fixture`: {e}")),
            Ok(fx) => {
                for i in fx.validate() {
                    issues.push(format!("fixture: {i}"));
                }
                if let Some(want) = &self.expect_destination {
                    if !fx.pois.iter().any(|p| &p.id == want) {
                        issues.push(format!("field `expect_destination`: no POI {want:?} in fixture"));
                    }
                }
            }
        }
        issues
    }

    /// Validates, then instantiates the world for one seeded trial.
    pub fn build(&self, seed: u64) -> Result<SimSetup, ScenarioError> {
        let issues = self.validate();
        if !issues.is_empty() {
            return Err(ScenarioError::Invalid {
                path: self.source.display().to_string(),
                issues,
            });
        }
        Ok(self.instantiate(seed))
    }

    fn instantiate(&self, seed: u64) -> SimSetup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let authored = LocalFrame::new(GeoPoint {
            lat: self.origin.lat,
            lon: self.origin.lon,
        })
        .expect("validated origin");
        let true_start = to_geo(&authored, self.start.x, self.start.y).expect("start near origin");
        let gps = Normal::new(0.0, self.noise.gps_sigma_m).expect("validated sigma");
        let (ex, ey) = (gps.sample(&mut rng), gps.sample(&mut rng));
        let gps_fix = to_geo(&LocalFrame::new(true_start).expect("valid"), ex, ey).expect("small offset");
        let frame = LocalFrame::new(gps_fix).expect("valid fix");
        let convert = |p: [f64; 2]| -> (f64, f64) {
            let g = to_geo(&authored, p[0], p[1]).expect("geometry near origin");
            to_local(&frame, g).expect("geometry near fix")
        };

        let start = convert([self.start.x, self.start.y]);
        let yaw = bearing_to_yaw(self.start.heading_deg.to_radians());
        let mut world = WorldState::new(LocalPose::new(start.0, start.1, yaw), seed);
        world.belief_offset = (-start.0, -start.1);
        world.lights = self
            .lights
            .iter()
            .map(|l| TrafficLight {
                id: l.id.clone(),
                position: convert([l.x, l.y]),
                schedule: LightSchedule {
                    red_s: l.red_s,
                    green_s: l.green_s,
                    offset_s: l.offset_s,
                },
            })
            .collect();
        world.crossings = self
            .crossings
            .iter()
            .map(|c| CrossingZone {
                id: c.id.clone(),
                polygon: c.polygon.iter().map(|&p| convert(p)).collect(),
                light: c
                    .light
                    .as_ref()
                    .and_then(|l| self.lights.iter().position(|s| &s.id == l)),
            })
            .collect();
        world.pedestrians = self
            .pedestrians
            .iter()
            .map(|p| {
                Pedestrian::new(
                    p.id.clone(),
                    p.path.iter().map(|&q| convert(q)).collect(),
                    p.speed,
                    p.looped,
                )
            })
            .collect();
        let world = world.with_rng(rng);

        SimSetup {
            world,
            frame,
            gps_fix,
            true_start,
            instruction: Instruction {
                text: self.instruction.clone(),
                issued_at: gps_fix,
            },
            noise: NoiseModel {
                sigma_xy: self.noise.sigma_xy,
                sigma_yaw: self.noise.sigma_yaw,
            },
        }
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection, including touching and collinear overlap.
pub fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Checks that a closed ring is a simple polygon with positive area.
pub fn check_polygon(poly: &[(f64, f64)]) -> Result<(), String> {
    let n = poly.len();
    if n < 3 {
        return Err(format!("needs at least 3 vertices, got {n}"));
    }
    if poly.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err("has non-finite vertices".into());
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a == b {
            return Err(format!("has a zero-length edge at vertex {i}"));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Err(format!("self-intersects: edge {i} crosses edge {j}"));
            }
        }
    }
    let area2: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    if area2.abs() < 1e-9 {
        return Err("has zero area".into());
    }
    Ok(())
}
