//! Design, randomization, analysis and power evaluation for cluster-randomized
//! experiments on networks with interference.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: the weighted interference graph and cluster purity.
//! * [`clustering`]: Louvain and recursive balanced bisection.
//! * [`randomization`]: deterministic hash-based assignment with a mixed
//!   unit/cluster split and trigger logging.
//! * [`estimation`]: delta-method estimators, regression adjustment and the
//!   SUTVA gate tests.
//! * [`simulation`]: a potential-outcome simulator with known ground truth,
//!   AA tests, MDE estimation and MDE–purity tradeoff curves.

pub mod clustering;
pub mod error;
pub mod estimation;
pub mod graph;
pub mod randomization;
pub mod simulation;

mod serde_bit;

pub use error::{Error, Result};
