//! Output-discrepancy active learning on small fully connected networks.
//!
//! A model's change in output over training steps is a cheap stand-in for
//! its loss on a sample. This crate checks the inequalities behind that idea
//! numerically, and uses the discrepancy between consecutive active-learning
//! cycles to choose which unlabeled samples to label next.

pub mod activeloop;
pub mod analysis;
pub mod cli;
pub mod data;
pub mod discrepancy;
mod error;
pub mod io;
pub mod nnet;
pub mod sampling;
pub mod seeding;
pub mod training;

pub use error::{Error, Result};
