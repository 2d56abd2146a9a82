//! Simulation core for mechanical search in a cluttered bin.

pub mod geometry;
pub mod harness;
pub mod heapgen;
pub mod planners;
pub mod policies;
pub mod scene;
pub mod session;
pub mod simphys;
