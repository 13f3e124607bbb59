//! Reward-sequence representation laboratory.
//!
//! Finite Block MDPs with visual-distractor chains, exact reward-sequence
//! distributions and their characteristic functions, Monte-Carlo CF targets,
//! a small reverse-mode dense-network library, the characteristic-function
//! prediction objective with its baselines, and the evaluation tools
//! (value-bound checks and linear-probe style classifiers) used to judge the
//! learned encoders.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Every
//! reduction is performed in a fixed order so results are bit-identical in
//! both modes.

pub mod bmdp;
pub mod charfn;
pub mod diffnet;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod rng;
pub mod rsd_oracle;
pub mod suite;
pub mod training;

pub use error::{Error, Result};
