//! Compression of kNN training sets of covariance descriptors (SPD matrices
//! compared by the Jensen-Bregman LogDet divergence) and histogram
//! descriptors (simplex vectors compared by the Sinkhorn distance) into
//! small sets of learned prototypes.

pub mod baselines;
pub mod cg;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod knn;
pub mod metric;
pub mod neighborhood;
pub mod ot;
pub mod scc;
pub mod selfcheck;
pub mod shc;
pub mod spd;

pub use error::{Error, Result};
