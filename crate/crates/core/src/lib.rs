//! Hierarchical pedestrian navigation: instruction grounding against a map
//! service, coarse waypoint planning, a gated joint routing/safety decision,
//! short-horizon trajectory prediction, and a deterministic simulator that
//! closes the loop.

// Negated comparisons are how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod cli;
pub mod geodesy;
pub mod grounding;
pub mod map_service;
pub mod orchestrator;
pub mod policy;
pub mod route;
pub mod sim;
