//! Grammar induction over labeled text corpora and mining of the induced
//! parse trees for label-correlated ("shortcut") features.

pub mod chart;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod grammar;
pub mod miner;
pub mod numeric;
pub mod robust;
pub mod selfcheck;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
