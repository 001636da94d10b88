//! Deterministic kinematic world: a unicycle robot, scripted pedestrians,
//! scheduled traffic lights and crossing zones.
//!
//! All state, including the noise stream, lives in [`WorldState`], so a
//! cloned world advanced with the same commands stays bit-identical.

mod scenario;

pub use scenario::{Scenario, ScenarioError, SimSetup, SCENARIO_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{normalize_angle, LocalPose};
use crate::policy::{
    LightObservation, LightState, PedestrianObservation, SceneDescription, CROWD_RADIUS_M,
};

pub const MAX_SPEED_MPS: f64 = 1.2;
pub const MAX_YAW_RATE: f64 = 1.0;
pub const DEFAULT_DT_S: f64 = 0.5;
pub const LIGHT_VISIBILITY_M: f64 = 25.0;
pub const LIGHT_FIELD_OF_VIEW: f64 = std::f64::consts::PI / 3.0;
pub const PEDESTRIAN_SENSE_RANGE_M: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time step {0} must be positive and finite")]
    InvalidTimeStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_xy: f64,
    pub sigma_yaw: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_xy: 0.05,
            sigma_yaw: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlCommand {
    /// Drive toward a body-frame target point.
    Track { target: (f64, f64) },
    /// Hold position.
    Stop,
    /// Rotate in place toward a local-frame heading.
    YawAlign { heading: f64 },
}

impl ControlCommand {
    pub fn moves(&self) -> bool {
        !matches!(self, ControlCommand::Stop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pose: LocalPose,
    /// Speed and yaw rate realized over the last step.
    pub speed: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub id: String,
    pub position: (f64, f64),
    pub velocity: (f64, f64),
    pub path: Vec<(f64, f64)>,
    pub speed: f64,
    pub looped: bool,
    next: usize,
}

impl Pedestrian {
    pub fn new(id: impl Into<String>, path: Vec<(f64, f64)>, speed: f64, looped: bool) -> Self {
        assert!(!path.is_empty(), "pedestrian path needs at least one point");
        Self {
            id: id.into(),
            position: path[0],
            velocity: (0.0, 0.0),
            next: usize::from(path.len() > 1),
            path,
            speed,
            looped,
        }
    }

    fn advance(&mut self, dt: f64) {
        let start = self.position;
        let mut budget = self.speed * dt;
        // Bounded by path length so a zero-length loop cannot spin forever.
        let mut hops = 0;
        while budget > 0.0 && self.next < self.path.len() && hops <= 2 * self.path.len() {
            let target = self.path[self.next];
            let (dx, dy) = (target.0 - self.position.0, target.1 - self.position.1);
            let d = dx.hypot(dy);
            if d > budget {
                self.position = (self.position.0 + dx / d * budget, self.position.1 + dy / d * budget);
                budget = 0.0;
            } else {
                self.position = target;
                budget -= d;
                self.next += 1;
                hops += 1;
                if self.next == self.path.len() && self.looped {
                    self.next = 0;
                }
            }
        }
        self.velocity = (
            (self.position.0 - start.0) / dt,
            (self.position.1 - start.1) / dt,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightSchedule {
    pub red_s: f64,
    pub green_s: f64,
    pub offset_s: f64,
}

impl LightSchedule {
    /// A cycle starts with `red_s` of red followed by `green_s` of green,
    /// shifted by `offset_s`.
    pub fn state_at(&self, t: f64) -> LightState {
        let period = self.red_s + self.green_s;
        if self.green_s <= 0.0 {
            return LightState::Red;
        }
        if self.red_s <= 0.0 {
            return LightState::Green;
        }
        let phase = (t + self.offset_s).rem_euclid(period);
        if phase < self.red_s {
            LightState::Red
        } else {
            LightState::Green
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficLight {
    pub id: String,
    pub position: (f64, f64),
    pub schedule: LightSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingZone {
    pub id: String,
    pub polygon: Vec<(f64, f64)>,
    /// Index into [`WorldState::lights`].
    pub light: Option<usize>,
}

impl CrossingZone {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        point_in_polygon(p, &self.polygon)
    }
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub robot: RobotState,
    pub pedestrians: Vec<Pedestrian>,
    pub lights: Vec<TrafficLight>,
    pub crossings: Vec<CrossingZone>,
    pub clock: f64,
    pub seed: u64,
    /// Difference between where the robot believes it is and where it is,
    /// fixed at frame anchoring.
    pub belief_offset: (f64, f64),
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(robot: LocalPose, seed: u64) -> Self {
        Self {
            robot: RobotState {
                pose: robot,
                speed: 0.0,
                yaw_rate: 0.0,
            },
            pedestrians: Vec::new(),
            lights: Vec::new(),
            crossings: Vec::new(),
            clock: 0.0,
            seed,
            belief_offset: (0.0, 0.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn with_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.rng = rng;
        self
    }

    pub fn light_state(&self, light: usize) -> LightState {
        self.lights[light].schedule.state_at(self.clock)
    }

    /// Crossing zone containing the robot, if any.
    pub fn robot_crossing(&self) -> Option<&CrossingZone> {
        let p = self.robot.pose.position();
        self.crossings.iter().find(|c| c.contains(p))
    }

    /// Whether the robot stands in a crossing whose governing light is red.
    pub fn in_red_crossing(&self) -> bool {
        let p = self.robot.pose.position();
        self.crossings
            .iter()
            .any(|c| c.contains(p) && c.light.is_some_and(|l| self.light_state(l) == LightState::Red))
    }

    /// Integrates one control period.
    pub fn advance(&mut self, cmd: &ControlCommand, dt: f64) -> Result<(), SimError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::InvalidTimeStep(dt));
        }
        let pose = self.robot.pose;
        match *cmd {
            ControlCommand::Stop => {
                self.robot.speed = 0.0;
                self.robot.yaw_rate = 0.0;
            }
            ControlCommand::YawAlign { heading } => {
                let max = MAX_YAW_RATE * dt;
                let turn = normalize_angle(heading - pose.yaw).clamp(-max, max);
                self.robot.pose = LocalPose::new(pose.x, pose.y, pose.yaw + turn);
                self.robot.speed = 0.0;
                self.robot.yaw_rate = turn.abs() / dt;
            }
            ControlCommand::Track { target } => self.track(target, dt),
        }
        for p in &mut self.pedestrians {
            p.advance(dt);
        }
        self.clock += dt;
        Ok(())
    }

    // Follows the arc tangent to the current heading through the target, at
    // up to MAX_SPEED_MPS and MAX_YAW_RATE; stops at the target if reached.
    fn track(&mut self, target: (f64, f64), dt: f64) {
        let pose = self.robot.pose;
        let d = target.0.hypot(target.1);
        if d < 1e-12 {
            self.robot.speed = 0.0;
            self.robot.yaw_rate = 0.0;
            return;
        }
        let curvature = 2.0 * target.1 / (d * d);
        let half = target.1.abs().atan2(target.0);
        let arc_to_target = if half < 1e-12 {
            d
        } else if half.sin() < 1e-12 {
            f64::INFINITY
        } else {
            d * half / half.sin()
        };
        let mut v = MAX_SPEED_MPS;
        if curvature.abs() * v > MAX_YAW_RATE {
            v = MAX_YAW_RATE / curvature.abs();
        }
        let s = arc_to_target.min(v * dt);
        let (x, y, yaw) = if curvature.abs() < 1e-12 {
            (pose.x + s * pose.yaw.cos(), pose.y + s * pose.yaw.sin(), pose.yaw)
        } else {
            let yaw1 = pose.yaw + curvature * s;
            (
                pose.x + (yaw1.sin() - pose.yaw.sin()) / curvature,
                pose.y + (pose.yaw.cos() - yaw1.cos()) / curvature,
                yaw1,
            )
        };
        self.robot.pose = LocalPose::new(x, y, yaw);
        self.robot.speed = s / dt;
        self.robot.yaw_rate = (curvature * s).abs() / dt;
    }

    /// Structured scene as perceived from the robot. Positions are expressed
    /// in the robot's belief frame.
    pub fn sense(&self) -> SceneDescription {
        let r = self.robot.pose;
        let (ox, oy) = self.belief_offset;
        let mut pedestrians = Vec::new();
        let mut crowd = 0;
        for p in &self.pedestrians {
            let d = r.distance_to(p.position);
            if d <= CROWD_RADIUS_M {
                crowd += 1;
            }
            if d <= PEDESTRIAN_SENSE_RANGE_M {
                pedestrians.push(PedestrianObservation {
                    position: (p.position.0 + ox, p.position.1 + oy),
                    velocity: p.velocity,
                });
            }
        }
        let traffic_light = self
            .lights
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let (dx, dy) = (l.position.0 - r.x, l.position.1 - r.y);
                let d = dx.hypot(dy);
                let off_axis = normalize_angle(dy.atan2(dx) - r.yaw).abs();
                (d <= LIGHT_VISIBILITY_M && off_axis <= LIGHT_FIELD_OF_VIEW).then_some((i, d))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, d)| LightObservation {
                state: self.light_state(i),
                distance: d,
            });
        SceneDescription {
            pedestrians,
            traffic_light,
            in_crossing_zone: self.robot_crossing().is_some(),
            crowd_density: crowd,
            image_payload: None,
        }
    }

    /// Belief pose with zero-mean Gaussian noise drawn from the world's
    /// seeded stream.
    pub fn localize(&mut self, noise: &NoiseModel) -> LocalPose {
        let r = self.robot.pose;
        let nxy = Normal::new(0.0, noise.sigma_xy.max(0.0)).expect("finite sigma");
        let nyaw = Normal::new(0.0, noise.sigma_yaw.max(0.0)).expect("finite sigma");
        let ex = nxy.sample(&mut self.rng);
        let ey = nxy.sample(&mut self.rng);
        let eyaw = nyaw.sample(&mut self.rng);
        LocalPose::new(
            r.x + self.belief_offset.0 + ex,
            r.y + self.belief_offset.1 + ey,
            r.yaw + eyaw,
        )
    }
}
