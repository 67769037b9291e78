//! Visual realism assessment for face-swap video.
//!
//! The pipeline ingests per-frame feature vectors exported by upstream
//! backbones, pools a sampled frame window into a fixed-length descriptor,
//! trains a small MLP regression head against mean opinion scores, runs
//! repeated stochastic inference, and scores predictions with the
//! correlation metrics used for leaderboard ranking.
//!
//! All randomness flows through seeded, named [`sampler::RngStream`] lanes,
//! so every stage reproduces bit-identically from a base seed.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod metrics;
pub mod optim;
pub mod pooling;
pub mod regressor;
pub mod sampler;
pub mod schedule;
pub mod store;
pub mod trainer;

pub use error::{Result, VraError};
