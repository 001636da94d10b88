//! Line-delimited episode traces.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EpisodeConfig, EpisodeMeta, EpisodeResult};
use crate::geodesy::LocalPose;
use crate::map_service::{PoiCandidate, SemanticCue};
use crate::policy::{Action, JointDecision, LightObservation};
use crate::sim::ControlCommand;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no result record")]
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub meta: EpisodeMeta,
    pub config: EpisodeConfig,
    pub destination: Option<PoiCandidate>,
    pub rationale: Option<String>,
    pub categories: Vec<String>,
    pub plan_length: Option<f64>,
    pub waypoints: usize,
    pub start_in_red_crossing: bool,
}

impl EpisodeHeader {
    pub(super) fn bare(meta: &EpisodeMeta, cfg: &EpisodeConfig) -> Self {
        Self {
            meta: meta.clone(),
            config: *cfg,
            destination: None,
            rationale: None,
            categories: Vec::new(),
            plan_length: None,
            waypoints: 0,
            start_in_red_crossing: false,
        }
    }
}

/// One control step. Poses before and after the command are ground truth;
/// `belief` is what the robot observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub clock: f64,
    pub belief: LocalPose,
    pub goal: (f64, f64),
    pub goal_arc: f64,
    pub cue: SemanticCue,
    pub route_step: usize,
    pub instruction: String,
    pub history_len: usize,
    pub pedestrians: usize,
    pub nearest_pedestrian: Option<f64>,
    pub crowd_density: usize,
    pub light: Option<LightObservation>,
    pub in_crossing_zone: bool,
    pub decision: JointDecision,
    pub decision_error: Option<String>,
    pub gate_open: bool,
    pub trajectory: Option<Vec<(f64, f64)>>,
    pub policy_error: Option<String>,
    pub command: ControlCommand,
    pub dt: f64,
    pub pose_before: LocalPose,
    pub pose_after: LocalPose,
    pub displacement: f64,
    pub crossing_after: Option<String>,
    pub red_crossing_after: bool,
    pub consecutive_stops: usize,
    pub stop_wait_events: usize,
    pub projected_arc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Episode(EpisodeHeader),
    Step(Box<StepRecord>),
    Result(EpisodeResult),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn header(&self) -> Option<&EpisodeHeader> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Episode(h) => Some(h),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Step(s) => Some(s.as_ref()),
            _ => None,
        })
    }

    pub fn result(&self) -> Option<&EpisodeResult> {
        self.records.iter().rev().find_map(|r| match r {
            TraceRecord::Result(res) => Some(res),
            _ => None,
        })
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| TraceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Steps where a track command was issued without a passing decision.
    pub fn gate_violations(&self, alpha: f64) -> Vec<usize> {
        self.steps()
            .filter(|s| {
                matches!(s.command, ControlCommand::Track { .. })
                    && !(s.decision.action == Action::Proceed && s.decision.conf >= alpha)
            })
            .map(|s| s.step)
            .collect()
    }

    /// Steps that ended inside a crossing under a red governing light.
    pub fn red_crossing_steps(&self) -> Vec<usize> {
        self.steps()
            .filter(|s| s.red_crossing_after)
            .map(|s| s.step)
            .collect()
    }

    /// Stop steps that moved the robot.
    pub fn moving_stops(&self) -> Vec<usize> {
        self.steps()
            .filter(|s| s.command == ControlCommand::Stop && s.pose_before != s.pose_after)
            .map(|s| s.step)
            .collect()
    }
}
