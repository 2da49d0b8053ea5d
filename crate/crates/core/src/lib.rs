//! Reasoning flows as trajectories in embedding space.
//!
//! The crate turns stepwise reasoning records into context-cumulative
//! embedding trajectories and measures them: velocities, Menger curvature,
//! pairwise similarity matrices and grouped summaries.

pub mod corpus;
pub mod provider;
pub mod flow;
pub mod geometry;
pub mod analysis;
pub mod project;
pub mod smooth;
pub mod synth;
