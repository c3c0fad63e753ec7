//! Shared-battery scheduling as constrained average-cost Markov decision processes.
//!
//! Users with Markov net generation share one battery. The crate builds the
//! controlled chain over (joint net generation, battery level), solves the
//! occupation-measure linear programs for minimum loss of load under fairness
//! and for maximum fairness under efficiency, and computes the derived
//! tradeoff quantities (price of fairness, decay rates, frontiers).

pub mod analysis;
pub mod cmdp;
pub mod error;
mod linalg;
pub mod lpcore;
pub mod markov;
pub mod netgen;
pub mod policy;
pub mod programs;
pub mod sim;

pub use error::{Error, Result};
