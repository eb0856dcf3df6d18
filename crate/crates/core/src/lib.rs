//! Numerical laboratory for dyadic-like maximal operators on measure trees.
//!
//! The crate builds finite measure trees, evaluates the tree maximal operator
//! on nonnegative step functions, decomposes it into a piecewise-constant
//! linearization, verifies a family of sharp integral inequalities as
//! nonnegative slacks, redistributes functions into two-valued companions,
//! and searches for near-extremal functions whose maximal-operator energy
//! approaches the sharp bound F · omega_p(f^p/F)^p.

pub mod bellman;
pub mod config;
pub mod error;
pub mod gphi;
pub mod inequalities;
pub mod io;
pub mod linearize;
pub mod maximal;
pub mod sampler;
pub mod search;
pub mod stepfn;
pub mod suite;
pub mod tree;

pub use config::LabConfig;
pub use error::{Error, Result};
pub use stepfn::{Moments, StepFunction};
pub use tree::{MeasureTree, NodeId};
