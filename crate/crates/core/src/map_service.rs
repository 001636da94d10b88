//! Map-service client interface (POI search and walking routes) and the
//! fixture-file backend used for offline runs.
//!
//! The fixture format is documented in `docs/formats.md`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{bearing, haversine_distance, normalize_angle, GeoError, GeoPoint};

/// Fixture schema version understood by this build.
pub const FIXTURE_VERSION: u32 = 1;

/// Query points farther than this from every graph node are not covered.
pub const SNAP_RADIUS_M: f64 = 25.0;

/// Consecutive steps must chain within this distance.
pub const STEP_CHAIN_TOLERANCE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("no walking route found: {0}")]
    NoRouteFound(String),
    #[error("fixture has no data for {0}")]
    FixtureMissing(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("{path}: {message}")]
    FixtureParse { path: String, message: String },
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Route-level semantic annotation carried from the map source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticCue {
    #[default]
    None,
    Crossing,
    TrafficLight,
}

impl SemanticCue {
    pub fn is_crossing(self) -> bool {
        matches!(self, SemanticCue::Crossing | SemanticCue::TrafficLight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiCandidate {
    pub id: String,
    pub name: String,
    pub category: String,
    pub location: GeoPoint,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub polyline: Vec<GeoPoint>,
    pub instruction_text: String,
    pub semantic_cue: SemanticCue,
}

impl RouteStep {
    pub fn length(&self) -> f64 {
        self.polyline
            .windows(2)
            .map(|w| haversine_distance(w[0], w[1]))
            .sum()
    }

    pub fn start(&self) -> GeoPoint {
        self.polyline[0]
    }

    pub fn end(&self) -> GeoPoint {
        *self.polyline.last().expect("route step polyline has >= 2 points")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkingRoute {
    pub steps: Vec<RouteStep>,
    pub origin: GeoPoint,
    pub destination: GeoPoint,
}

impl WalkingRoute {
    pub fn total_length(&self) -> f64 {
        self.steps.iter().map(RouteStep::length).sum()
    }

    /// Checks the chaining and length invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("route has no steps".into());
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.polyline.len() < 2 {
                return Err(format!("step {i} has fewer than 2 points"));
            }
            for w in step.polyline.windows(2) {
                if haversine_distance(w[0], w[1]) <= 1e-9 {
                    return Err(format!("step {i} repeats a point"));
                }
            }
        }
        for (i, w) in self.steps.windows(2).enumerate() {
            let gap = haversine_distance(w[0].end(), w[1].start());
            if gap > STEP_CHAIN_TOLERANCE_M {
                return Err(format!("steps {i} and {} are {gap:.2} m apart", i + 1));
            }
        }
        if self.total_length() <= 0.0 {
            return Err("route has zero length".into());
        }
        Ok(())
    }
}

/// Client interface to a public map service.
pub trait MapService {
    fn poi_search(
        &self,
        category: &str,
        near: GeoPoint,
        radius_m: f64,
        limit: usize,
    ) -> Result<Vec<PoiCandidate>, MapError>;

    fn walking_route(
        &self,
        origin: GeoPoint,
        destination: GeoPoint,
    ) -> Result<WalkingRoute, MapError>;
}

// ---------------------------------------------------------------------------
// Fixture document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub kind: String,
    pub version: u32,
    pub name: String,
    pub coverage: Coverage,
    #[serde(default, rename = "poi")]
    pub pois: Vec<FixturePoi>,
    #[serde(default, rename = "node")]
    pub nodes: Vec<FixtureNode>,
    #[serde(default, rename = "edge")]
    pub edges: Vec<FixtureEdge>,
    #[serde(default, rename = "route")]
    pub routes: Vec<CachedRoute>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coverage {
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixturePoi {
    pub id: String,
    pub name: String,
    pub category: String,
    pub lat: f64,
    pub lon: f64,
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureNode {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEdge {
    pub from: String,
    pub to: String,
    pub street: String,
    #[serde(default)]
    pub cue: SemanticCue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CachedRoute {
    pub name: String,
    pub nodes: Vec<String>,
}

impl Fixture {
    pub fn parse(text: &str, origin: &str) -> Result<Self, MapError> {
        let fx: Fixture = toml::from_str(text).map_err(|e| MapError::FixtureParse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        if fx.kind != "fixture" {
            return Err(MapError::FixtureParse {
                path: origin.to_string(),
                message: format!("field `kind`: expected \"fixture\", found {:?}", fx.kind),
            });
        }
        if fx.version != FIXTURE_VERSION {
            return Err(MapError::FixtureParse {
                path: origin.to_string(),
                message: format!(
                    "field `version`: unsupported version {} (expected {FIXTURE_VERSION})",
                    fx.version
                ),
            });
        }
        Ok(fx)
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path).map_err(|e| MapError::FixtureParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fixture serializes to TOML")
    }

    /// Full schema and invariant check; an empty list means the fixture is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        match FixtureMap::from_fixture(self.clone()) {
            Ok(map) => issues.extend(map.semantic_issues()),
            Err(e) => issues.push(e.to_string()),
        }
        issues
    }
}

// ---------------------------------------------------------------------------
// Pedestrian graph

#[derive(Debug, Clone)]
struct Adjacent {
    node: usize,
    edge: usize,
    length: f64,
}

#[derive(Debug, Clone)]
pub struct PedestrianGraph {
    ids: Vec<String>,
    points: Vec<GeoPoint>,
    index: HashMap<String, usize>,
    edges: Vec<FixtureEdge>,
    adjacency: Vec<Vec<Adjacent>>,
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PedestrianGraph {
    fn build(nodes: &[FixtureNode], edges: &[FixtureEdge]) -> Result<Self, MapError> {
        let mut index = HashMap::new();
        let mut ids = Vec::with_capacity(nodes.len());
        let mut points = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            let p = GeoPoint::new(n.lat, n.lon)
                .map_err(|e| MapError::InvalidFixture(format!("node {:?}: {e}", n.id)))?;
            if index.insert(n.id.clone(), i).is_some() {
                return Err(MapError::InvalidFixture(format!("duplicate node id {:?}", n.id)));
            }
            ids.push(n.id.clone());
            points.push(p);
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| {
                    MapError::InvalidFixture(format!(
                        "edge {ei} ({} -> {}): unknown node {id:?}",
                        e.from, e.to
                    ))
                })
            };
            let a = lookup(&e.from)?;
            let b = lookup(&e.to)?;
            let length = haversine_distance(points[a], points[b]);
            if a == b || length <= 1e-9 {
                return Err(MapError::InvalidFixture(format!(
                    "edge {ei} ({} -> {}) has zero length",
                    e.from, e.to
                )));
            }
            adjacency[a].push(Adjacent {
                node: b,
                edge: ei,
                length,
            });
            adjacency[b].push(Adjacent {
                node: a,
                edge: ei,
                length,
            });
        }
        Ok(Self {
            ids,
            points,
            index,
            edges: edges.to_vec(),
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn node_id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn point(&self, i: usize) -> GeoPoint {
        self.points[i]
    }

    /// Undirected edge list as `(a, b, length_m)`.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        self.edges
            .iter()
            .map(|e| {
                let a = self.index[&e.from];
                let b = self.index[&e.to];
                (a, b, haversine_distance(self.points[a], self.points[b]))
            })
            .collect()
    }

    /// Nearest node to `p` and its distance.
    pub fn nearest_node(&self, p: GeoPoint) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, haversine_distance(p, *q)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Shortest path by Dijkstra; returns the length and node sequence.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<(f64, Vec<usize>)> {
        let n = self.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Frontier {
            cost: 0.0,
            node: from,
        });
        while let Some(Frontier { cost, node }) = heap.pop() {
            if node == to {
                break;
            }
            if cost > dist[node] {
                continue;
            }
            for adj in &self.adjacency[node] {
                let next = cost + adj.length;
                if next < dist[adj.node] {
                    dist[adj.node] = next;
                    prev[adj.node] = node;
                    heap.push(Frontier {
                        cost: next,
                        node: adj.node,
                    });
                }
            }
        }
        if !dist[to].is_finite() {
            return None;
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse();
        Some((dist[to], path))
    }

    fn edge_between(&self, a: usize, b: usize) -> Option<&Adjacent> {
        self.adjacency[a]
            .iter()
            .filter(|adj| adj.node == b)
            .min_by(|x, y| x.length.total_cmp(&y.length).then(x.edge.cmp(&y.edge)))
    }

    fn path_length(&self, path: &[usize]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.edge_between(w[0], w[1]).map(|a| a.length))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Fixture-backed client

#[derive(Debug, Clone)]
pub struct FixtureMap {
    fixture: Fixture,
    coverage_center: GeoPoint,
    pois: Vec<PoiCandidate>,
    graph: PedestrianGraph,
}

impl FixtureMap {
    pub fn load(path: &Path) -> Result<Self, MapError> {
        Self::from_fixture(Fixture::load(path)?)
    }

    pub fn from_fixture(fixture: Fixture) -> Result<Self, MapError> {
        let coverage_center = GeoPoint::new(fixture.coverage.lat, fixture.coverage.lon)
            .map_err(|e| MapError::InvalidFixture(format!("coverage: {e}")))?;
        if !(fixture.coverage.radius_m > 0.0) {
            return Err(MapError::InvalidFixture(
                "coverage: radius_m must be positive".into(),
            ));
        }
        let mut seen = HashSet::new();
        let mut pois = Vec::with_capacity(fixture.pois.len());
        for p in &fixture.pois {
            if !seen.insert(p.id.clone()) {
                return Err(MapError::InvalidFixture(format!("duplicate poi id {:?}", p.id)));
            }
            let location = GeoPoint::new(p.lat, p.lon)
                .map_err(|e| MapError::InvalidFixture(format!("poi {:?}: {e}", p.id)))?;
            pois.push(PoiCandidate {
                id: p.id.clone(),
                name: p.name.clone(),
                category: p.category.clone(),
                location,
                rank: p.rank,
            });
        }
        let graph = PedestrianGraph::build(&fixture.nodes, &fixture.edges)?;
        Ok(Self {
            fixture,
            coverage_center,
            pois,
            graph,
        })
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }

    pub fn graph(&self) -> &PedestrianGraph {
        &self.graph
    }

    fn covers(&self, p: GeoPoint) -> bool {
        haversine_distance(self.coverage_center, p) <= self.fixture.coverage.radius_m
    }

    fn snap(&self, p: GeoPoint, what: &str) -> Result<usize, MapError> {
        if !self.covers(p) {
            return Err(MapError::FixtureMissing(format!(
                "{what} ({:.6}, {:.6}) outside coverage",
                p.lat, p.lon
            )));
        }
        match self.graph.nearest_node(p) {
            Some((i, d)) if d <= SNAP_RADIUS_M => Ok(i),
            _ => Err(MapError::FixtureMissing(format!(
                "{what} ({:.6}, {:.6}) not within {SNAP_RADIUS_M} m of the pedestrian graph",
                p.lat, p.lon
            ))),
        }
    }

    fn node_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let (from_id, to_id) = (self.graph.node_id(from), self.graph.node_id(to));
        for cached in &self.fixture.routes {
            let (Some(first), Some(last)) = (cached.nodes.first(), cached.nodes.last()) else {
                continue;
            };
            let resolved: Option<Vec<usize>> =
                cached.nodes.iter().map(|id| self.graph.node_index(id)).collect();
            let Some(mut resolved) = resolved else {
                continue;
            };
            if self.graph.path_length(&resolved).is_none() {
                continue;
            }
            if first == from_id && last == to_id {
                return Some(resolved);
            }
            if first == to_id && last == from_id {
                resolved.reverse();
                return Some(resolved);
            }
        }
        self.graph.shortest_path(from, to).map(|(_, p)| p)
    }

    fn steps_for(&self, path: &[usize]) -> Result<Vec<RouteStep>, MapError> {
        struct Span {
            street: String,
            cue: SemanticCue,
            nodes: Vec<usize>,
        }
        let mut spans: Vec<Span> = Vec::new();
        for w in path.windows(2) {
            let adj = self
                .graph
                .edge_between(w[0], w[1])
                .ok_or_else(|| MapError::NoRouteFound("path uses a missing edge".into()))?;
            let edge = &self.graph.edges[adj.edge];
            match spans.last_mut() {
                Some(s) if s.street == edge.street && s.cue == edge.cue => s.nodes.push(w[1]),
                _ => spans.push(Span {
                    street: edge.street.clone(),
                    cue: edge.cue,
                    nodes: vec![w[0], w[1]],
                }),
            }
        }

        let mut steps = Vec::with_capacity(spans.len());
        let mut prev_heading: Option<f64> = None;
        for span in &spans {
            let polyline: Vec<GeoPoint> = span.nodes.iter().map(|&i| self.graph.point(i)).collect();
            let first_heading = bearing(polyline[0], polyline[1])?;
            let n = polyline.len();
            let last_heading = bearing(polyline[n - 2], polyline[n - 1])?;
            let instruction_text =
                step_text(prev_heading, first_heading, span.cue, &span.street);
            prev_heading = Some(last_heading);
            steps.push(RouteStep {
                polyline,
                instruction_text,
                semantic_cue: span.cue,
            });
        }
        Ok(steps)
    }

    /// Problems that do not prevent loading but make the fixture unusable:
    /// disconnected cached routes, inconsistent caches, rank collisions and
    /// POIs off the pedestrian graph.
    fn semantic_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let mut ranks: HashMap<(String, u32), &str> = HashMap::new();
        for p in &self.pois {
            if let Some(other) = ranks.insert((p.category.to_lowercase(), p.rank), &p.id) {
                issues.push(format!(
                    "poi {:?}: rank {} already used by {:?} in category {:?}",
                    p.id, p.rank, other, p.category
                ));
            }
            if !self.covers(p.location) {
                issues.push(format!("poi {:?}: outside coverage", p.id));
            }
            match self.graph.nearest_node(p.location) {
                Some((_, d)) if d <= SNAP_RADIUS_M => {}
                _ => issues.push(format!(
                    "poi {:?}: not within {SNAP_RADIUS_M} m of any graph node",
                    p.id
                )),
            }
        }
        for r in &self.fixture.routes {
            if r.nodes.len() < 2 {
                issues.push(format!("route {:?}: needs at least 2 nodes", r.name));
                continue;
            }
            let resolved: Result<Vec<usize>, String> = r
                .nodes
                .iter()
                .map(|id| {
                    self.graph
                        .node_index(id)
                        .ok_or_else(|| format!("route {:?}: unknown node {id:?}", r.name))
                })
                .collect();
            let resolved = match resolved {
                Ok(v) => v,
                Err(e) => {
                    issues.push(e);
                    continue;
                }
            };
            let (a, b) = (resolved[0], *resolved.last().unwrap());
            let Some((best, _)) = self.graph.shortest_path(a, b) else {
                issues.push(format!(
                    "route {:?}: no path between {:?} and {:?}",
                    r.name, r.nodes[0], r.nodes[r.nodes.len() - 1]
                ));
                continue;
            };
            match self.graph.path_length(&resolved) {
                None => issues.push(format!(
                    "route {:?}: consecutive nodes are not joined by an edge",
                    r.name
                )),
                Some(len) if (len - best).abs() > 1.0 => issues.push(format!(
                    "route {:?}: cached length {len:.1} m differs from shortest {best:.1} m",
                    r.name
                )),
                Some(_) => {}
            }
        }
        issues
    }
}

fn compass_word(bearing: f64) -> &'static str {
    const NAMES: [&str; 8] = [
        "north",
        "northeast",
        "east",
        "southeast",
        "south",
        "southwest",
        "west",
        "northwest",
    ];
    let deg = bearing.to_degrees().rem_euclid(360.0);
    NAMES[((deg + 22.5) / 45.0) as usize % 8]
}

fn step_text(prev: Option<f64>, heading: f64, cue: SemanticCue, street: &str) -> String {
    if cue.is_crossing() {
        return format!("cross {street}");
    }
    let Some(prev) = prev else {
        return format!("head {} on {street}", compass_word(heading));
    };
    // Bearings are clockwise, so a positive change is a right turn.
    let turn = normalize_angle(heading - prev).to_degrees();
    if turn.abs() < 30.0 {
        format!("continue straight on {street}")
    } else if turn.abs() > 150.0 {
        format!("make a U-turn onto {street}")
    } else if turn > 0.0 {
        format!("turn right onto {street}")
    } else {
        format!("turn left onto {street}")
    }
}

impl MapService for FixtureMap {
    fn poi_search(
        &self,
        category: &str,
        near: GeoPoint,
        radius_m: f64,
        limit: usize,
    ) -> Result<Vec<PoiCandidate>, MapError> {
        if !(radius_m > 0.0) {
            return Err(MapError::InvalidQuery(format!("radius {radius_m} must be positive")));
        }
        if limit == 0 {
            return Err(MapError::InvalidQuery("limit must be at least 1".into()));
        }
        near.validate()?;
        if !self.covers(near) {
            return Err(MapError::FixtureMissing(format!(
                "search center ({:.6}, {:.6}) outside coverage",
                near.lat, near.lon
            )));
        }
        let wanted = category.trim().to_lowercase();
        let mut hits: Vec<&PoiCandidate> = self
            .pois
            .iter()
            .filter(|p| p.category.to_lowercase() == wanted)
            .filter(|p| haversine_distance(near, p.location) <= radius_m)
            .collect();
        hits.sort_by(|a, b| a.rank.cmp(&b.rank).then_with(|| a.id.cmp(&b.id)));
        Ok(hits.into_iter().take(limit).cloned().collect())
    }

    fn walking_route(
        &self,
        origin: GeoPoint,
        destination: GeoPoint,
    ) -> Result<WalkingRoute, MapError> {
        origin.validate()?;
        destination.validate()?;
        let from = self.snap(origin, "origin")?;
        let to = self.snap(destination, "destination")?;
        if from == to {
            return Err(MapError::NoRouteFound(
                "origin and destination resolve to the same place".into(),
            ));
        }
        let path = self.node_path(from, to).ok_or_else(|| {
            MapError::NoRouteFound(format!(
                "{:?} is not reachable from {:?}",
                self.graph.node_id(to),
                self.graph.node_id(from)
            ))
        })?;
        let steps = self.steps_for(&path)?;
        let route = WalkingRoute {
            origin: self.graph.point(from),
            destination: self.graph.point(to),
            steps,
        };
        route.check().map_err(MapError::NoRouteFound)?;
        Ok(route)
    }
}
