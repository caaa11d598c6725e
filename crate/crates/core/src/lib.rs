//! Zero-shot skeleton action recognition with part-level side information,
//! learnable visual attribute prompts and semantic part prompts.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod semantics;
pub mod skeleton;
pub mod synth;
pub mod train;
pub mod visual;

pub use error::{Result, StarError};
