//! High-level joint routing/safety decision and low-level short-horizon
//! trajectory policy, with deterministic scene-driven reference models.
//!
//! The reference models read a [`SceneDescription`], a structured rendering
//! of the cues a vision model would extract from a camera frame: pedestrian
//! positions and motion, traffic-light state, crossing-zone membership and
//! crowd density. `image_payload` is carried through untouched so adapters
//! backed by real models can receive actual frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, Recorder, Replay};
use crate::geodesy::LocalPose;
use crate::map_service::SemanticCue;
use crate::route::Waypoint;

/// Radius used for the crowd-density count.
pub const CROWD_RADIUS_M: f64 = 5.0;
pub const CROWD_THRESHOLD: usize = 3;
/// Closer than this, the reference model stops.
pub const STOP_PROXIMITY_M: f64 = 1.0;
/// Closer than this, the reference model flags the scene as ambiguous.
pub const CAUTION_PROXIMITY_M: f64 = 2.0;
const AMBIGUITY_PENALTY: f64 = 0.1;

pub const HORIZON: usize = 8;
pub const POINT_SPACING_M: f64 = 0.5;
/// Required clearance between trajectory points and predicted pedestrians.
pub const MIN_CLEARANCE_M: f64 = 1.0;
/// Below this clearance on the nominal arc, avoidance arcs are considered.
pub const AVOID_TRIGGER_M: f64 = 1.5;
/// Number of evenly spaced curvatures searched during avoidance.
pub const CURVATURE_SAMPLES: usize = 64;
pub const MAX_CURVATURE: f64 = 2.0;
/// Speed assumed when time-stamping trajectory points for pedestrian prediction.
pub const NOMINAL_SPEED_MPS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("decision model failure: {message}")]
    DecisionModelFailure { message: String, recoverable: bool },
    #[error("local policy failure: {message}")]
    PolicyFailure { message: String, recoverable: bool },
}

impl PolicyError {
    pub fn recoverable(&self) -> bool {
        match self {
            PolicyError::DecisionModelFailure { recoverable, .. }
            | PolicyError::PolicyFailure { recoverable, .. } => *recoverable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Red,
    Green,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightObservation {
    pub state: LightState,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianObservation {
    /// Local-frame position, meters.
    pub position: (f64, f64),
    /// Local-frame velocity, m/s.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub pedestrians: Vec<PedestrianObservation>,
    pub traffic_light: Option<LightObservation>,
    pub in_crossing_zone: bool,
    pub crowd_density: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_payload: Option<Vec<u8>>,
}

impl SceneDescription {
    pub fn empty() -> Self {
        Self {
            pedestrians: Vec::new(),
            traffic_light: None,
            in_crossing_zone: false,
            crowd_density: 0,
            image_payload: None,
        }
    }

    pub fn nearest_pedestrian(&self, from: (f64, f64)) -> Option<f64> {
        self.pedestrians
            .iter()
            .map(|p| (p.position.0 - from.0).hypot(p.position.1 - from.1))
            .min_by(f64::total_cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scene: SceneDescription,
    pub pose: LocalPose,
    pub history: Vec<LocalPose>,
    pub goal: Waypoint,
    pub instruction: String,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    Routine,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Proceed,
    StopAndWait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDecision {
    pub routing: Routing,
    pub action: Action,
    pub conf: f64,
    pub reason: String,
}

impl JointDecision {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(format!("confidence {} outside [0, 1]", self.conf));
        }
        if self.reason.trim().is_empty() {
            return Err("empty reason".into());
        }
        Ok(())
    }

    /// Proceed with confidence at or above `alpha`.
    pub fn permits_motion(&self, alpha: f64) -> bool {
        self.action == Action::Proceed && self.conf >= alpha
    }
}

/// Body-frame trajectory: `x` forward, `y` left, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    /// `first_reach` is the distance the robot can cover in one control step.
    pub fn validate(&self, first_reach: f64) -> Result<(), String> {
        let Some(first) = self.points.first() else {
            return Err("empty trajectory".into());
        };
        if self.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err("non-finite trajectory point".into());
        }
        if first.0.hypot(first.1) > first_reach + 1e-9 {
            return Err(format!(
                "first point {:.3} m away exceeds one-step reach {first_reach:.3} m",
                first.0.hypot(first.1)
            ));
        }
        for w in self.points.windows(2) {
            if (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1) > 1.0 + 1e-9 {
                return Err("consecutive points more than 1 m apart".into());
            }
        }
        Ok(())
    }
}

/// High-level joint routing + safety decision model.
pub trait JointModel {
    fn decide(&mut self, obs: &Observation) -> Result<JointDecision, AdapterError>;
}

/// Low-level short-horizon trajectory policy.
pub trait LocalPolicy {
    fn predict(&mut self, obs: &Observation) -> Result<Trajectory, AdapterError>;
}

impl<M: JointModel + ?Sized> JointModel for Box<M> {
    fn decide(&mut self, obs: &Observation) -> Result<JointDecision, AdapterError> {
        (**self).decide(obs)
    }
}

impl<M: LocalPolicy + ?Sized> LocalPolicy for Box<M> {
    fn predict(&mut self, obs: &Observation) -> Result<Trajectory, AdapterError> {
        (**self).predict(obs)
    }
}

impl JointModel for Replay {
    fn decide(&mut self, obs: &Observation) -> Result<JointDecision, AdapterError> {
        self.answer(obs)
    }
}

impl LocalPolicy for Replay {
    fn predict(&mut self, obs: &Observation) -> Result<Trajectory, AdapterError> {
        self.answer(obs)
    }
}

pub struct Recording<M> {
    pub inner: M,
    pub log: Recorder,
}

impl<M> Recording<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            log: Recorder::default(),
        }
    }
}

impl<M: JointModel> JointModel for Recording<M> {
    fn decide(&mut self, obs: &Observation) -> Result<JointDecision, AdapterError> {
        let r = self.inner.decide(obs);
        self.log.record(obs, &r);
        r
    }
}

impl<M: LocalPolicy> LocalPolicy for Recording<M> {
    fn predict(&mut self, obs: &Observation) -> Result<Trajectory, AdapterError> {
        let r = self.inner.predict(obs);
        self.log.record(obs, &r);
        r
    }
}

/// Queries the decision model and rejects out-of-domain answers.
pub fn decide(model: &mut dyn JointModel, obs: &Observation) -> Result<JointDecision, PolicyError> {
    let d = model
        .decide(obs)
        .map_err(|e| PolicyError::DecisionModelFailure {
            message: e.message,
            recoverable: e.recoverable,
        })?;
    d.validate()
        .map_err(|message| PolicyError::DecisionModelFailure {
            message,
            recoverable: true,
        })?;
    Ok(d)
}

/// Queries the local policy and rejects trajectories violating the
/// trajectory invariants.
pub fn predict_trajectory(
    policy: &mut dyn LocalPolicy,
    obs: &Observation,
    first_reach: f64,
) -> Result<Trajectory, PolicyError> {
    let t = policy.predict(obs).map_err(|e| PolicyError::PolicyFailure {
        message: e.message,
        recoverable: e.recoverable,
    })?;
    t.validate(first_reach)
        .map_err(|message| PolicyError::PolicyFailure {
            message,
            recoverable: true,
        })?;
    Ok(t)
}

/// Expresses a local-frame point in the robot body frame.
pub fn body_frame(pose: &LocalPose, p: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (p.0 - pose.x, p.1 - pose.y);
    let (s, c) = pose.yaw.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`body_frame`].
pub fn from_body(pose: &LocalPose, b: (f64, f64)) -> (f64, f64) {
    let (s, c) = pose.yaw.sin_cos();
    (pose.x + c * b.0 - s * b.1, pose.y + s * b.0 + c * b.1)
}

// ---------------------------------------------------------------------------
// Reference decision model

/// Rule-table decision model:
///
/// * complex iff the goal carries a crossing cue or the crowd count reaches
///   [`CROWD_THRESHOLD`];
/// * stop-and-wait iff a red light is visible on a crossing segment, or a
///   pedestrian is within [`STOP_PROXIMITY_M`];
/// * confidence starts at 1 and loses 0.1 per ambiguity flag (dense crowd,
///   pedestrian within [`CAUTION_PROXIMITY_M`], crossing with no visible
///   signal).
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceJointModel;

impl JointModel for ReferenceJointModel {
    fn decide(&mut self, obs: &Observation) -> Result<JointDecision, AdapterError> {
        Ok(reference_decision(obs))
    }
}

pub fn reference_decision(obs: &Observation) -> JointDecision {
    let scene = &obs.scene;
    let cue = obs.goal.cue;
    let crowded = scene.crowd_density >= CROWD_THRESHOLD;
    let nearest = scene.nearest_pedestrian(obs.pose.position());
    let red = matches!(
        scene.traffic_light,
        Some(LightObservation {
            state: LightState::Red,
            ..
        })
    );

    let routing = if cue != SemanticCue::None || crowded {
        Routing::Complex
    } else {
        Routing::Routine
    };

    let mut reasons: Vec<String> = Vec::new();
    let red_at_crossing = red && cue.is_crossing();
    let too_close = nearest.is_some_and(|d| d < STOP_PROXIMITY_M);
    if red_at_crossing {
        reasons.push("red traffic light ahead of the crossing".into());
    }
    if let (true, Some(d)) = (too_close, nearest) {
        reasons.push(format!("pedestrian {d:.1} m away"));
    }
    let action = if red_at_crossing || too_close {
        Action::StopAndWait
    } else {
        Action::Proceed
    };

    let mut flags = 0u32;
    if crowded {
        flags += 1;
        reasons.push(format!("{} pedestrians nearby", scene.crowd_density));
    }
    if !too_close && nearest.is_some_and(|d| d < CAUTION_PROXIMITY_M) {
        flags += 1;
        reasons.push("pedestrian close to the path".into());
    }
    if cue.is_crossing() && scene.traffic_light.is_none() {
        flags += 1;
        reasons.push("crossing without a visible signal".into());
    }
    if cue.is_crossing() && !red {
        if let Some(l) = scene.traffic_light {
            reasons.push(format!("green light {:.0} m ahead", l.distance));
        }
    }
    let conf = (1.0 - AMBIGUITY_PENALTY * flags as f64).max(0.0);

    if reasons.is_empty() {
        reasons.push("clear path along the route".into());
    }
    JointDecision {
        routing,
        action,
        conf,
        reason: reasons.join("; "),
    }
}

// ---------------------------------------------------------------------------
// Reference local policy

/// Point at arc length `s` along a constant-curvature arc leaving the origin
/// along `+x`.
pub fn arc_point(curvature: f64, s: f64) -> (f64, f64) {
    if curvature.abs() < 1e-9 {
        (s, 0.0)
    } else {
        let th = curvature * s;
        (th.sin() / curvature, (1.0 - th.cos()) / curvature)
    }
}

/// Curvature of the arc tangent to `+x` through `goal`.
pub fn pursuit_curvature(goal: (f64, f64)) -> f64 {
    let d2 = goal.0 * goal.0 + goal.1 * goal.1;
    if d2 < 1e-18 {
        0.0
    } else {
        2.0 * goal.1 / d2
    }
}

/// Arc length from the origin to `goal` along the pursuit arc.
pub fn pursuit_arc_length(goal: (f64, f64)) -> f64 {
    let chord = goal.0.hypot(goal.1);
    let half = goal.1.abs().atan2(goal.0);
    if half < 1e-9 {
        chord
    } else if half.sin() < 1e-12 {
        f64::INFINITY
    } else {
        chord * half / half.sin()
    }
}

/// Curvatures scanned when the nominal arc is blocked.
pub fn avoidance_curvatures() -> impl Iterator<Item = f64> {
    (0..CURVATURE_SAMPLES)
        .map(|i| -MAX_CURVATURE + 2.0 * MAX_CURVATURE * i as f64 / (CURVATURE_SAMPLES - 1) as f64)
}

/// Minimum distance between each point and every pedestrian's
/// constant-velocity prediction at that point's time offset.
/// Body-frame pedestrian position and velocity.
pub type PedestrianMotion = ((f64, f64), (f64, f64));

pub fn clearance(points: &[(f64, f64)], spacing: f64, pedestrians: &[PedestrianMotion]) -> f64 {
    let mut best = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        let t = (k + 1) as f64 * spacing / NOMINAL_SPEED_MPS;
        for (pos, vel) in pedestrians {
            let q = (pos.0 + vel.0 * t, pos.1 + vel.1 * t);
            best = best.min((p.0 - q.0).hypot(p.1 - q.1));
        }
    }
    best
}

fn arc_points(curvature: f64, spacing: f64) -> Vec<(f64, f64)> {
    (1..=HORIZON)
        .map(|k| arc_point(curvature, k as f64 * spacing))
        .collect()
}

/// Constant-curvature pursuit arc toward the goal; when a pedestrian is
/// predicted within [`AVOID_TRIGGER_M`] of it, the arc is swapped for the
/// sampled curvature that gets closest to the goal while keeping clear.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceLocalPolicy;

impl LocalPolicy for ReferenceLocalPolicy {
    fn predict(&mut self, obs: &Observation) -> Result<Trajectory, AdapterError> {
        Ok(reference_trajectory(obs))
    }
}

pub fn reference_trajectory(obs: &Observation) -> Trajectory {
    let goal = body_frame(&obs.pose, obs.goal.local);
    if goal.0.hypot(goal.1) < 1e-9 {
        return Trajectory {
            points: vec![(0.0, 0.0); HORIZON],
        };
    }
    let spacing = POINT_SPACING_M.min(pursuit_arc_length(goal) / HORIZON as f64);
    let nominal_k = pursuit_curvature(goal);
    let nominal = arc_points(nominal_k, spacing);

    let peds: Vec<((f64, f64), (f64, f64))> = obs
        .scene
        .pedestrians
        .iter()
        .map(|p| {
            let pos = body_frame(&obs.pose, p.position);
            let (s, c) = obs.pose.yaw.sin_cos();
            let vel = (c * p.velocity.0 + s * p.velocity.1, -s * p.velocity.0 + c * p.velocity.1);
            (pos, vel)
        })
        .collect();
    if peds.is_empty() || clearance(&nominal, spacing, &peds) >= AVOID_TRIGGER_M {
        return Trajectory { points: nominal };
    }

    let start_dist = goal.0.hypot(goal.1);
    struct Candidate {
        points: Vec<(f64, f64)>,
        clearance: f64,
        goal_dist: f64,
    }
    let candidates: Vec<Candidate> = std::iter::once(nominal_k)
        .chain(avoidance_curvatures())
        .map(|k| {
            let points = arc_points(k, spacing);
            let end = *points.last().unwrap();
            Candidate {
                clearance: clearance(&points, spacing, &peds),
                goal_dist: (end.0 - goal.0).hypot(end.1 - goal.1),
                points,
            }
        })
        .collect();

    let pick = |ok: &dyn Fn(&Candidate) -> bool| {
        candidates
            .iter()
            .filter(|c| ok(c))
            .min_by(|a, b| a.goal_dist.total_cmp(&b.goal_dist))
    };
    let chosen = pick(&|c| c.clearance >= AVOID_TRIGGER_M && c.goal_dist < start_dist)
        .or_else(|| pick(&|c| c.clearance >= MIN_CLEARANCE_M && c.goal_dist < start_dist))
        .or_else(|| pick(&|c| c.clearance >= MIN_CLEARANCE_M))
        .unwrap_or_else(|| {
            candidates
                .iter()
                .max_by(|a, b| a.clearance.total_cmp(&b.clearance))
                .expect("candidate set is non-empty")
        });
    Trajectory {
        points: chosen.points.clone(),
    }
}
