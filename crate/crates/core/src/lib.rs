//! Testbed for burden-bounded, path-dependent recurrent dynamics and for
//! measuring what output-only distillation transfers from such a teacher.

pub mod distillation;
pub mod document;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod model;
pub mod numgrad;
pub mod profiles;
pub mod rng;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
