//! Chunk-based P2P live-streaming diffusion under heterogeneous upload
//! capacities: a discrete-event simulator, the metrics it feeds, and a
//! recursive mean-field solver for latest-blind diffusion.

pub mod analytic;
pub mod cli;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod overlay;
pub mod policies;
pub mod rng;
pub mod stats;
