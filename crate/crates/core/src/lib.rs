//! Numeric core of the prefloss workspace: a deliberately tiny autoregressive
//! softmax language model (f64 everywhere, hand-written backprop) together with
//! the four losses it is built to study, the closed-form per-logit gradient
//! factors those losses induce, diagnostic metrics, loss-landscape sweeps,
//! synthetic preference-pair generators, and a seeded SGD trainer.
//!
//! Everything here is `no_std` + `alloc`. File formats, the CLI, and anything
//! that touches an operating system live in the companion `prefloss` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod backprop;
pub mod fixtures;
pub mod gradcheck;
pub mod landscape;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod seq;
pub mod synth;
pub mod trainer;

pub use losses::{LossMethod, LossSpec, RefPolicy, Schedule};
pub use model::{Gradient, StepDistribution, ToyLm};
pub use seq::{PreferencePair, TokenSeq, Vocab};
