//! Destination grounding: abstract instruction -> place categories -> POI
//! candidates -> one concrete destination with a rationale.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{AdapterError, Recorder, Replay};
use crate::geodesy::{haversine_distance, GeoPoint};
use crate::map_service::{MapError, MapService, PoiCandidate};

pub const MAX_CATEGORIES: usize = 5;
pub const POOL_RADIUS_M: f64 = 2000.0;
pub const POOL_LIMIT: usize = 10;

/// Candidates this close in distance are treated as tied.
pub const DISTANCE_TIE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("no destination candidates")]
    NoCandidates,
    #[error("intent model failure: {0}")]
    IntentModelFailure(String),
    #[error("map service: {0}")]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub issued_at: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedDestination {
    pub choice: PoiCandidate,
    pub rationale: String,
    pub proposed_categories: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentTask {
    ProposeCategories,
    SelectDestination,
}

/// What an intent model is asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRequest {
    pub task: IntentTask,
    pub instruction: String,
    pub location: GeoPoint,
    /// Categories proposed earlier; empty for `ProposeCategories`.
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub candidates: Vec<PoiCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentResponse {
    Categories(Vec<String>),
    Selection {
        candidate_id: String,
        rationale: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confidence: Option<f64>,
    },
}

/// High-level model used for category proposal and destination selection.
pub trait IntentModel {
    fn infer(&mut self, request: &IntentRequest) -> Result<IntentResponse, AdapterError>;
}

impl<M: IntentModel + ?Sized> IntentModel for Box<M> {
    fn infer(&mut self, request: &IntentRequest) -> Result<IntentResponse, AdapterError> {
        (**self).infer(request)
    }
}

impl IntentModel for Replay {
    fn infer(&mut self, request: &IntentRequest) -> Result<IntentResponse, AdapterError> {
        self.answer(request)
    }
}

/// Wraps an intent model and records every exchange.
pub struct RecordingIntent<M> {
    pub inner: M,
    pub log: Recorder,
}

impl<M: IntentModel> IntentModel for RecordingIntent<M> {
    fn infer(&mut self, request: &IntentRequest) -> Result<IntentResponse, AdapterError> {
        let r = self.inner.infer(request);
        self.log.record(request, &r);
        r
    }
}

struct IntentRule {
    /// Any of these phrases triggers the rule.
    phrases: &'static [&'static str],
    categories: &'static [&'static str],
    intent: &'static str,
}

// First match wins, so the delivery rule sits above rules that could also
// fire on the delivered item ("milk tea", "coffee").
const RULES: &[IntentRule] = &[
    IntentRule {
        phrases: &["deliver", "to building", "drop off", "bring this to"],
        categories: &["building"],
        intent: "deliver to a named building",
    },
    IntentRule {
        phrases: &["walk", "stroll", "fresh air"],
        categories: &["park", "plaza", "riverside walkway"],
        intent: "go for a walk",
    },
    IntentRule {
        phrases: &["shop", "buy", "groceries"],
        categories: &["shopping mall", "supermarket", "convenience store"],
        intent: "go shopping",
    },
    IntentRule {
        phrases: &["eat", "hungry", "lunch", "dinner", "coffee"],
        categories: &["restaurant", "cafe"],
        intent: "get something to eat or drink",
    },
];

/// Deterministic keyword-rule intent model.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceIntentModel;

impl ReferenceIntentModel {
    fn rule_for(text: &str) -> Option<&'static IntentRule> {
        let lower = text.to_lowercase();
        RULES
            .iter()
            .find(|r| r.phrases.iter().any(|p| lower.contains(p)))
    }

    fn select(request: &IntentRequest) -> Result<IntentResponse, AdapterError> {
        let lower = request.instruction.to_lowercase();
        let named: Vec<&PoiCandidate> = request
            .candidates
            .iter()
            .filter(|c| lower.contains(&c.name.to_lowercase()))
            .collect();
        let pool: Vec<&PoiCandidate> = if named.is_empty() {
            request.candidates.iter().collect()
        } else {
            named
        };
        let best = select_by_priority(&pool, &request.categories, request.location)
            .ok_or_else(|| AdapterError::recoverable("no candidates to choose from"))?;
        let distance = haversine_distance(request.location, best.location);
        let intent = Self::rule_for(&request.instruction)
            .map(|r| r.intent)
            .unwrap_or("reach the requested place");
        let how = if pool.len() < request.candidates.len() {
            "is named in the request"
        } else {
            "is the closest match for the preferred category"
        };
        Ok(IntentResponse::Selection {
            candidate_id: best.id.clone(),
            rationale: format!(
                "To {intent} (\"{}\"): {} ({}) {how}, about {distance:.0} m away.",
                request.instruction, best.name, best.category
            ),
            confidence: None,
        })
    }
}

/// Category priority (order in `categories`), then distance with a
/// [`DISTANCE_TIE_M`] tie band, then lexicographic id.
pub fn select_by_priority<'a>(
    candidates: &[&'a PoiCandidate],
    categories: &[String],
    from: GeoPoint,
) -> Option<&'a PoiCandidate> {
    let priority = |c: &PoiCandidate| {
        let cat = c.category.to_lowercase();
        categories
            .iter()
            .position(|k| k.to_lowercase() == cat)
            .unwrap_or(categories.len())
    };
    let best_priority = candidates.iter().map(|c| priority(c)).min()?;
    let tier: Vec<&PoiCandidate> = candidates
        .iter()
        .copied()
        .filter(|c| priority(c) == best_priority)
        .collect();
    let nearest = tier
        .iter()
        .map(|c| haversine_distance(from, c.location))
        .fold(f64::INFINITY, f64::min);
    tier.into_iter()
        .filter(|c| haversine_distance(from, c.location) <= nearest + DISTANCE_TIE_M)
        .min_by(|a, b| a.id.cmp(&b.id))
}

impl IntentModel for ReferenceIntentModel {
    fn infer(&mut self, request: &IntentRequest) -> Result<IntentResponse, AdapterError> {
        match request.task {
            IntentTask::ProposeCategories => {
                let rule = Self::rule_for(&request.instruction).ok_or_else(|| {
                    AdapterError::recoverable(format!(
                        "no place category matches {:?}",
                        request.instruction
                    ))
                })?;
                Ok(IntentResponse::Categories(
                    rule.categories.iter().map(|c| c.to_string()).collect(),
                ))
            }
            IntentTask::SelectDestination => Self::select(request),
        }
    }
}

/// Asks the model for 1 to [`MAX_CATEGORIES`] distinct place categories.
pub fn propose_categories(
    model: &mut dyn IntentModel,
    instruction: &Instruction,
) -> Result<Vec<String>, GroundingError> {
    if instruction.text.trim().is_empty() {
        return Err(GroundingError::EmptyInstruction);
    }
    let request = IntentRequest {
        task: IntentTask::ProposeCategories,
        instruction: instruction.text.clone(),
        location: instruction.issued_at,
        categories: Vec::new(),
        candidates: Vec::new(),
    };
    let response = model
        .infer(&request)
        .map_err(|e| GroundingError::IntentModelFailure(e.message))?;
    let IntentResponse::Categories(raw) = response else {
        return Err(GroundingError::IntentModelFailure(
            "expected a category list, got a selection".into(),
        ));
    };
    let mut seen = HashSet::new();
    let categories: Vec<String> = raw
        .into_iter()
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty() && seen.insert(c.to_lowercase()))
        .collect();
    if categories.is_empty() || categories.len() > MAX_CATEGORIES {
        return Err(GroundingError::IntentModelFailure(format!(
            "expected 1 to {MAX_CATEGORIES} categories, got {}",
            categories.len()
        )));
    }
    Ok(categories)
}

/// Issues one POI search per category and merges the results, dropping
/// repeated ids. Order follows category order, then service rank.
pub fn gather_candidates(
    map: &dyn MapService,
    categories: &[String],
    near: GeoPoint,
) -> Result<Vec<PoiCandidate>, GroundingError> {
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    for cat in categories {
        for c in map.poi_search(cat, near, POOL_RADIUS_M, POOL_LIMIT)? {
            if seen.insert(c.id.clone()) {
                pool.push(c);
            }
        }
    }
    Ok(pool)
}

/// Asks the model to pick one candidate; the pick is checked against the
/// candidate list rather than trusted.
pub fn ground_destination(
    model: &mut dyn IntentModel,
    instruction: &Instruction,
    categories: &[String],
    candidates: &[PoiCandidate],
) -> Result<GroundedDestination, GroundingError> {
    if candidates.is_empty() {
        return Err(GroundingError::NoCandidates);
    }
    let request = IntentRequest {
        task: IntentTask::SelectDestination,
        instruction: instruction.text.clone(),
        location: instruction.issued_at,
        categories: categories.to_vec(),
        candidates: candidates.to_vec(),
    };
    let response = model
        .infer(&request)
        .map_err(|e| GroundingError::IntentModelFailure(e.message))?;
    let IntentResponse::Selection {
        candidate_id,
        rationale,
        confidence,
    } = response
    else {
        return Err(GroundingError::IntentModelFailure(
            "expected a selection, got a category list".into(),
        ));
    };
    if let Some(c) = confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(GroundingError::IntentModelFailure(format!(
                "selection confidence {c} outside [0, 1]"
            )));
        }
    }
    let choice = candidates
        .iter()
        .find(|c| c.id == candidate_id)
        .cloned()
        .ok_or_else(|| {
            GroundingError::IntentModelFailure(format!(
                "selected id {candidate_id:?} is not among the candidates"
            ))
        })?;
    if rationale.trim().is_empty() {
        return Err(GroundingError::IntentModelFailure("empty rationale".into()));
    }
    Ok(GroundedDestination {
        choice,
        rationale,
        proposed_categories: categories.to_vec(),
    })
}

/// Full grounding pass: propose, search, select.
pub fn ground(
    model: &mut dyn IntentModel,
    map: &dyn MapService,
    instruction: &Instruction,
) -> Result<GroundedDestination, GroundingError> {
    let categories = propose_categories(model, instruction)?;
    let candidates = gather_candidates(map, &categories, instruction.issued_at)?;
    ground_destination(model, instruction, &categories, &candidates)
}
