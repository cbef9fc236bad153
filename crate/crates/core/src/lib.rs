//! Video-guided audio editing at desk scale.
//!
//! Hierarchical A-weighted loudness features are extracted from a source
//! clip, optionally masked down to a chosen level of detail, and fed to a
//! small conditional flow-matching model together with a target class and a
//! control track standing in for the edited video. Sampling uses two-term
//! classifier-free guidance, and the level of detail can be picked per edit
//! from a cross-modal editability score.

pub mod adaptive;
pub mod augment;
pub mod condition;
pub mod config;
pub mod edit;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod latent;
pub mod model;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
