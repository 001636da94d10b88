//! Closed perception, reasoning and action loop for one episode.

mod batch;
mod trace;

pub use batch::{success_rate, BatchError, SummaryRow, SummaryTable, TrialBatch};
pub use trace::{EpisodeHeader, StepRecord, Trace, TraceError, TraceRecord};

use std::collections::VecDeque;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::LocalPose;
use crate::grounding::{ground, Instruction, IntentModel};
use crate::map_service::MapService;
use crate::policy::{
    body_frame, decide, predict_trajectory, Action, JointDecision, JointModel, LocalPolicy,
    Observation, Routing,
};
use crate::route::{
    build_waypoint_plan, lookahead_goal, step_instruction, WaypointPlan, DEFAULT_LOOKAHEAD_M,
    DEFAULT_SPACING_M,
};
use crate::sim::{ControlCommand, NoiseModel, WorldState, MAX_SPEED_MPS};
use crate::map_service::WalkingRoute;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("configuration key {key:?}: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("configuration key {key:?}: {message}")]
    OutOfRange { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Confidence threshold a proceed decision must reach.
    pub alpha: f64,
    pub arrival_tolerance: f64,
    pub max_iterations: usize,
    /// Consecutive stop-and-wait retries allowed before aborting.
    pub safety_budget: usize,
    pub retry_interval: f64,
    pub lookahead: f64,
    pub spacing: f64,
    pub history_len: usize,
    /// Control period for motion steps.
    pub dt: f64,
    /// Heading error above which the robot turns in place first.
    pub yaw_align_threshold: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            arrival_tolerance: 3.0,
            max_iterations: 2000,
            safety_budget: 10,
            retry_interval: 2.0,
            lookahead: DEFAULT_LOOKAHEAD_M,
            spacing: DEFAULT_SPACING_M,
            history_len: 16,
            dt: crate::sim::DEFAULT_DT_S,
            yaw_align_threshold: 0.3,
        }
    }
}

impl EpisodeConfig {
    pub const KEYS: [&'static str; 10] = [
        "alpha",
        "arrival_tolerance",
        "max_iterations",
        "safety_budget",
        "retry_interval",
        "lookahead",
        "spacing",
        "history_len",
        "dt",
        "yaw_align_threshold",
    ];

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        let count = || value.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "alpha" => self.alpha = real()?,
            "arrival_tolerance" => self.arrival_tolerance = real()?,
            "max_iterations" => self.max_iterations = count()?,
            "safety_budget" => self.safety_budget = count()?,
            "retry_interval" => self.retry_interval = real()?,
            "lookahead" => self.lookahead = real()?,
            "spacing" => self.spacing = real()?,
            "history_len" => self.history_len = count()?,
            "dt" => self.dt = real()?,
            "yaw_align_threshold" => self.yaw_align_threshold = real()?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        self.validate()
    }

    /// Applies a TOML table of overrides, such as a scenario's `[config]`.
    pub fn apply_table(&mut self, table: &toml::Table) -> Result<(), ConfigError> {
        for (key, value) in table {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            self.set(key, &text)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &str, message: &str| {
            Err(ConfigError::OutOfRange {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return range("alpha", "must be in (0, 1]");
        }
        for (key, v) in [
            ("arrival_tolerance", self.arrival_tolerance),
            ("retry_interval", self.retry_interval),
            ("lookahead", self.lookahead),
            ("spacing", self.spacing),
            ("dt", self.dt),
            ("yaw_align_threshold", self.yaw_align_threshold),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return range(key, "must be positive and finite");
            }
        }
        for (key, v) in [
            ("max_iterations", self.max_iterations),
            ("safety_budget", self.safety_budget),
            ("history_len", self.history_len),
        ] {
            if v == 0 {
                return range(key, "must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    AbortedSafety,
    AbortedIterations,
    AdapterFailure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::AbortedSafety => "aborted_safety",
            Outcome::AbortedIterations => "aborted_iterations",
            Outcome::AdapterFailure => "adapter_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    /// Control steps issued.
    pub steps: usize,
    pub distance_traveled: f64,
    pub stop_wait_events: usize,
    /// Believed distance from the robot to the final waypoint at the end.
    pub final_distance: Option<f64>,
    /// Believed progress along the route polyline at the end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_arc: Option<f64>,
    pub destination: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
}

/// Identifies an episode in its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    /// Position of the scenario in the batch, used to order summaries.
    pub scenario_index: usize,
    pub scenario: String,
    pub task: String,
    pub trial: usize,
    pub seed: u64,
}

/// The models and services an episode talks to.
pub struct Adapters<'a> {
    pub map: &'a dyn MapService,
    pub intent: &'a mut dyn IntentModel,
    pub joint: &'a mut dyn JointModel,
    pub local: &'a mut dyn LocalPolicy,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub trace: Trace,
}

/// Builds the observation for the current step. Localization draws from the
/// world's noise stream, hence `&mut`.
pub fn assemble_observation(
    world: &mut WorldState,
    plan: &WaypointPlan,
    route: &WalkingRoute,
    history: &VecDeque<LocalPose>,
    cfg: &EpisodeConfig,
    noise: &NoiseModel,
    step: usize,
) -> Observation {
    let scene = world.sense();
    let pose = world.localize(noise);
    let goal = lookahead_goal(plan, &pose, cfg.lookahead).clone();
    let instruction = step_instruction(&goal, route);
    let skip = history.len().saturating_sub(cfg.history_len);
    Observation {
        scene,
        pose,
        history: history.iter().skip(skip).copied().collect(),
        goal,
        instruction,
        step,
    }
}

/// Angle from the robot heading to the direction of travel: the end of the
/// predicted trajectory, or the goal itself when the goal lies behind.
pub fn heading_error(obs: &Observation, trajectory: &[(f64, f64)]) -> f64 {
    let g = body_frame(&obs.pose, obs.goal.local);
    let target = match trajectory.last() {
        Some(&end) if g.0 > 0.0 && end.0.hypot(end.1) > 1e-9 => end,
        _ => g,
    };
    target.1.atan2(target.0)
}

fn failed(meta: &EpisodeMeta, cfg: &EpisodeConfig, message: String) -> EpisodeRun {
    let result = EpisodeResult {
        outcome: Outcome::AdapterFailure,
        steps: 0,
        distance_traveled: 0.0,
        stop_wait_events: 0,
        final_distance: None,
        final_arc: None,
        destination: None,
        failure: Some(message),
        trace_path: None,
    };
    let mut trace = Trace::default();
    trace.records.push(TraceRecord::Episode(EpisodeHeader::bare(meta, cfg)));
    trace.records.push(TraceRecord::Result(result.clone()));
    EpisodeRun { result, trace }
}

/// Runs one episode to termination.
pub fn run_episode(
    instruction: &Instruction,
    world: &mut WorldState,
    adapters: Adapters<'_>,
    cfg: &EpisodeConfig,
    noise: &NoiseModel,
    meta: &EpisodeMeta,
) -> EpisodeRun {
    let Adapters {
        map,
        intent,
        joint,
        local,
    } = adapters;
    let grounded = match ground(intent, map, instruction) {
        Ok(g) => g,
        Err(e) => return failed(meta, cfg, format!("grounding: {e}")),
    };
    let route = match map.walking_route(instruction.issued_at, grounded.choice.location) {
        Ok(r) => r,
        Err(e) => return failed(meta, cfg, format!("routing: {e}")),
    };
    let frame = match crate::geodesy::LocalFrame::new(instruction.issued_at) {
        Ok(f) => f,
        Err(e) => return failed(meta, cfg, format!("frame: {e}")),
    };
    let plan = match build_waypoint_plan(&route, frame, cfg.spacing) {
        Ok(p) => p,
        Err(e) => return failed(meta, cfg, format!("waypoint plan: {e}")),
    };

    let mut trace = Trace::default();
    trace.records.push(TraceRecord::Episode(EpisodeHeader {
        meta: meta.clone(),
        config: *cfg,
        destination: Some(grounded.choice.clone()),
        rationale: Some(grounded.rationale.clone()),
        categories: grounded.proposed_categories.clone(),
        plan_length: Some(plan.total_length()),
        waypoints: plan.waypoints().len(),
        start_in_red_crossing: world.in_red_crossing(),
    }));

    let final_wp = plan.last().local;
    let mut history: VecDeque<LocalPose> = VecDeque::with_capacity(cfg.history_len + 1);
    let mut consecutive_stops = 0usize;
    let mut stop_wait_events = 0usize;
    let mut distance = 0.0;
    let mut steps = 0usize;
    let mut failure = None;
    let mut final_distance;
    let mut final_arc;

    let outcome = 'episode: loop {
        let obs = assemble_observation(world, &plan, &route, &history, cfg, noise, steps);
        final_distance = obs.pose.distance_to(final_wp);
        final_arc = plan.project_arc(obs.pose.x, obs.pose.y);
        if final_distance <= cfg.arrival_tolerance {
            break Outcome::Success;
        }
        if steps >= cfg.max_iterations {
            break Outcome::AbortedIterations;
        }

        let (decision, decision_error) = match decide(joint, &obs) {
            Ok(d) => (d, None),
            Err(e) if e.recoverable() => (
                JointDecision {
                    routing: Routing::Complex,
                    action: Action::StopAndWait,
                    conf: 0.0,
                    reason: e.to_string(),
                },
                Some(e.to_string()),
            ),
            Err(e) => {
                failure = Some(e.to_string());
                break Outcome::AdapterFailure;
            }
        };
        let gate_open = decision.permits_motion(cfg.alpha);

        let mut trajectory = None;
        let mut policy_error = None;
        let command = if gate_open {
            match predict_trajectory(local, &obs, MAX_SPEED_MPS * cfg.dt) {
                Ok(t) => {
                    let heading_error = heading_error(&obs, &t.points);
                    let first = t.points[0];
                    trajectory = Some(t.points);
                    if heading_error.abs() > cfg.yaw_align_threshold {
                        ControlCommand::YawAlign {
                            heading: obs.pose.yaw + heading_error,
                        }
                    } else {
                        ControlCommand::Track { target: first }
                    }
                }
                Err(e) if e.recoverable() => {
                    policy_error = Some(e.to_string());
                    ControlCommand::Stop
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break 'episode Outcome::AdapterFailure;
                }
            }
        } else {
            ControlCommand::Stop
        };

        let aborting;
        let dt;
        if command.moves() {
            consecutive_stops = 0;
            aborting = false;
            dt = cfg.dt;
        } else {
            consecutive_stops += 1;
            aborting = consecutive_stops > cfg.safety_budget;
            dt = cfg.retry_interval;
        }

        let clock = world.clock;
        let before = world.robot.pose;
        if !aborting {
            if !command.moves() {
                stop_wait_events += 1;
            }
            world.advance(&command, dt).expect("validated dt");
        }
        let after = world.robot.pose;
        let moved = (after.x - before.x).hypot(after.y - before.y);
        distance += moved;
        steps += 1;

        history.push_back(obs.pose);
        if history.len() > cfg.history_len {
            history.pop_front();
        }

        trace.records.push(TraceRecord::Step(Box::new(StepRecord {
            step: obs.step,
            clock,
            belief: obs.pose,
            goal: obs.goal.local,
            goal_arc: obs.goal.arc_length,
            cue: obs.goal.cue,
            route_step: obs.goal.step_index,
            instruction: obs.instruction.clone(),
            history_len: obs.history.len(),
            pedestrians: obs.scene.pedestrians.len(),
            nearest_pedestrian: obs.scene.nearest_pedestrian(obs.pose.position()),
            crowd_density: obs.scene.crowd_density,
            light: obs.scene.traffic_light,
            in_crossing_zone: obs.scene.in_crossing_zone,
            decision,
            decision_error,
            gate_open,
            trajectory,
            policy_error,
            command,
            dt: if aborting { 0.0 } else { dt },
            pose_before: before,
            pose_after: after,
            displacement: moved,
            crossing_after: world.robot_crossing().map(|c| c.id.clone()),
            red_crossing_after: world.in_red_crossing(),
            consecutive_stops,
            stop_wait_events,
            projected_arc: plan.project_arc(obs.pose.x, obs.pose.y),
        })));

        if aborting {
            break Outcome::AbortedSafety;
        }
    };

    let result = EpisodeResult {
        outcome,
        steps,
        distance_traveled: distance,
        stop_wait_events,
        final_distance: Some(final_distance),
        final_arc: Some(final_arc),
        destination: Some(grounded.choice.id.clone()),
        failure,
        trace_path: None,
    };
    trace.records.push(TraceRecord::Result(result.clone()));
    EpisodeRun { result, trace }
}
