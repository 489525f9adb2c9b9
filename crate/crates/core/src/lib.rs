//! Locally invariant center manifolds for partially hyperbolic invariant sets
//! of smooth maps: cone certificates, strong-connection detection, Whitney
//! initial surfaces, the graph transform and its verification, and stable
//! foliations through the projectivized tangent dynamics.

pub mod cli;
pub mod cones;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod graph_transform;
pub mod invariant_set;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod projective_lift;
pub mod report;
pub mod verify;
pub mod smoothing;
pub mod strong_manifolds;
pub mod whitney_surface;

pub use error::{Error, Result};
