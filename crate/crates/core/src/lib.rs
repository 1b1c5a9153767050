//! Reinforcement-learning refinement of speaker embeddings.
//!
//! The crate is split the same way the refinement loop is:
//!
//! - [`embedding`], [`state`], [`action`]: the value types and the pure
//!   state/action algebra (state flattening, additive refinement, softmax
//!   fusion of reference embeddings).
//! - [`scoring`]: the fused similarity/quality/intelligibility score, the
//!   per-step delta reward, the scorer plug-in contract and the
//!   newline-delimited JSON protocol for out-of-process scorers.
//! - [`env`]: the episode runner plus two seeded synthetic voice spaces and
//!   a brute-force grid oracle.
//! - [`agent`]: an actor-critic network with hand-written backprop, GAE,
//!   clipped-surrogate PPO updates and JSON checkpoints.

pub mod action;
pub mod agent;
pub mod config;
pub mod embedding;
pub mod env;
pub mod rng;
pub mod scoring;
pub mod state;
pub mod trace;

mod error;

pub use action::{apply_ss, fuse_fs, Action, Fusion};
pub use config::{EncoderKind, RLConfig, Scenario};
pub use embedding::{mean_init, Embedding, TextFeatures};
pub use error::DomainError;
pub use state::{flatten_state, OptionalSegments, Segment, SegmentMask, StateDims, StateVector};
pub use trace::{EpisodeTrace, TraceStep};
