//! Waypoint construction from a walking route and the forward-looking goal
//! rule used by the navigation loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{to_geo, to_local, GeoError, GeoPoint, LocalFrame, LocalPose};
use crate::map_service::{SemanticCue, WalkingRoute};

pub const DEFAULT_SPACING_M: f64 = 5.0;
pub const DEFAULT_LOOKAHEAD_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("degenerate route: {0}")]
    DegenerateRoute(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub geo: GeoPoint,
    pub local: (f64, f64),
    pub cue: SemanticCue,
    pub step_index: usize,
    pub arc_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    waypoints: Vec<Waypoint>,
    frame: LocalFrame,
    spacing: f64,
    /// Planar route polyline and its cumulative arc lengths, kept for
    /// projection queries.
    polyline: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl WaypointPlan {
    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn last(&self) -> &Waypoint {
        self.waypoints.last().expect("plan has >= 2 waypoints")
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().expect("plan polyline is non-empty")
    }

    /// Index of the waypoint closest to `(x, y)`; ties go to the lower index.
    pub fn nearest_index(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, w) in self.waypoints.iter().enumerate() {
            let d = (w.local.0 - x).hypot(w.local.1 - y);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Arc length of the closest point on the route polyline.
    pub fn project_arc(&self, x: f64, y: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.polyline.windows(2).enumerate() {
            let (ax, ay) = w[0];
            let (dx, dy) = (w[1].0 - ax, w[1].1 - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (ax + t * dx - x).hypot(ay + t * dy - y);
            if d < best.0 {
                best = (d, self.cumulative[i] + t * len2.sqrt());
            }
        }
        best.1
    }

    /// Checks the spacing, monotonicity and frame-consistency invariants.
    pub fn check(&self, destination: GeoPoint) -> Result<(), String> {
        let w = &self.waypoints;
        if w.len() < 2 {
            return Err("fewer than 2 waypoints".into());
        }
        for (i, p) in w.windows(2).enumerate() {
            if p[1].arc_length <= p[0].arc_length {
                return Err(format!("arc length not increasing at {}", i + 1));
            }
            let gap = (p[1].local.0 - p[0].local.0).hypot(p[1].local.1 - p[0].local.1);
            let is_final = i + 2 == w.len();
            // Chord can be shorter than arc on bends; the lower bound applies to arc.
            let arc_gap = p[1].arc_length - p[0].arc_length;
            if !is_final && w.len() > 2
                && (arc_gap < 0.5 * self.spacing - 1e-9 || gap > 1.5 * self.spacing + 1e-9)
            {
                return Err(format!("waypoint spacing out of range at {}", i + 1));
            }
        }
        for (i, p) in w.iter().enumerate() {
            let (x, y) = to_local(&self.frame, p.geo).map_err(|e| e.to_string())?;
            if (x - p.local.0).hypot(y - p.local.1) > 1e-6 {
                return Err(format!("waypoint {i} geo/local mismatch"));
            }
        }
        let end = self.last().geo;
        let miss = crate::geodesy::haversine_distance(end, destination);
        if miss > 1.0 {
            return Err(format!("last waypoint {miss:.2} m from destination"));
        }
        Ok(())
    }
}

/// Resamples `route` by arc length at `spacing`, always keeping both route
/// endpoints. A remainder shorter than half a spacing is absorbed into the
/// final gap so every gap stays within `[0.5, 1.5] * spacing`.
pub fn build_waypoint_plan(
    route: &WalkingRoute,
    frame: LocalFrame,
    spacing: f64,
) -> Result<WaypointPlan, RouteError> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(RouteError::InvalidParameter(format!(
            "spacing {spacing} must be positive"
        )));
    }
    if route.steps.is_empty() {
        return Err(RouteError::DegenerateRoute("no steps".into()));
    }

    // Flatten steps into one planar polyline; step_starts[k] is the arc
    // length where step k begins.
    let mut polyline: Vec<(f64, f64)> = Vec::new();
    let mut cumulative: Vec<f64> = Vec::new();
    let mut step_starts = Vec::with_capacity(route.steps.len());
    for step in &route.steps {
        if step.polyline.len() < 2 {
            return Err(RouteError::DegenerateRoute("step with fewer than 2 points".into()));
        }
        step_starts.push(cumulative.last().copied().unwrap_or(0.0));
        for (j, p) in step.polyline.iter().enumerate() {
            let q = to_local(&frame, *p)?;
            match polyline.last() {
                None => {
                    polyline.push(q);
                    cumulative.push(0.0);
                }
                // Shared endpoint between consecutive steps.
                Some(&last) if j == 0 && (q.0 - last.0).hypot(q.1 - last.1) < 1.0 => {}
                Some(&last) => {
                    let d = (q.0 - last.0).hypot(q.1 - last.1);
                    if d <= 1e-9 {
                        continue;
                    }
                    polyline.push(q);
                    cumulative.push(cumulative.last().unwrap() + d);
                }
            }
        }
    }
    let total = *cumulative.last().unwrap();
    if !(total > 1e-6) {
        return Err(RouteError::DegenerateRoute("zero total length".into()));
    }

    let mut arcs: Vec<f64> = Vec::new();
    let full = (total / spacing).floor() as usize;
    for i in 0..=full {
        arcs.push(i as f64 * spacing);
    }
    let remainder = total - full as f64 * spacing;
    if full >= 1 && remainder < 0.5 * spacing {
        *arcs.last_mut().unwrap() = total;
    } else {
        arcs.push(total);
    }
    arcs.dedup_by(|b, a| *b <= *a);

    let mut waypoints = Vec::with_capacity(arcs.len());
    let mut seg = 0;
    for &s in &arcs {
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (polyline[seg], polyline[seg + 1]);
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let t = ((s - cumulative[seg]) / seg_len).clamp(0.0, 1.0);
        let local = if s >= total {
            *polyline.last().unwrap()
        } else {
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        let geo = to_geo(&frame, local.0, local.1)?;
        // Re-project so `local` is exactly what to_local reports for `geo`.
        let local = to_local(&frame, geo)?;
        // A boundary point belongs to the later step.
        let step_index = step_starts.iter().rposition(|&start| start <= s).unwrap_or(0);
        waypoints.push(Waypoint {
            geo,
            local,
            cue: route.steps[step_index].semantic_cue,
            step_index,
            arc_length: s,
        });
    }

    Ok(WaypointPlan {
        waypoints,
        frame,
        spacing,
        polyline,
        cumulative,
    })
}

/// First waypoint at least `lookahead` meters of arc past the waypoint
/// nearest to `pose`, clamped to the final waypoint.
pub fn lookahead_goal<'a>(plan: &'a WaypointPlan, pose: &LocalPose, lookahead: f64) -> &'a Waypoint {
    let wps = plan.waypoints();
    let nearest = plan.nearest_index(pose.x, pose.y);
    let target = wps[nearest].arc_length + lookahead;
    wps[nearest..]
        .iter()
        .find(|w| w.arc_length >= target)
        .unwrap_or_else(|| plan.last())
}

/// Step-aware instruction for the step that owns `goal`.
pub fn step_instruction(goal: &Waypoint, route: &WalkingRoute) -> String {
    let text = route
        .steps
        .get(goal.step_index)
        .map(|s| s.instruction_text.as_str())
        .unwrap_or("continue to the destination");
    match goal.cue {
        SemanticCue::None => text.to_string(),
        SemanticCue::Crossing => format!("prepare to cross at the pedestrian crossing; {text}"),
        SemanticCue::TrafficLight => {
            format!("approach the traffic light and cross only on green; {text}")
        }
    }
}
