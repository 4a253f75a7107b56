//! Diversity-aware k-maximum inner product search (DkMIPS).
//!
//! Given a set of non-negative item vectors and a query vector, DkMIPS selects
//! k items that score high on inner-product relevance while penalizing the
//! average or maximum pairwise inner product within the result. This crate
//! provides:
//!
//! - linear-scan solvers: [`greedy::linear_topk`], [`greedy::greedy`] and
//!   [`greedy::dual_greedy`], all running in O(ndk) via incremental caches;
//! - a ball-cone tree index ([`bctree::BcTree`]) whose node- and point-level
//!   upper bounds prune the per-step argmax without changing its result;
//! - a brute-force oracle and approximation-bound checkers ([`oracle`],
//!   [`verify`]) used by the test and verification suites;
//! - recommendation-quality metrics and a timed sweep harness ([`evalbench`]).
//!
//! With the default `parallel` feature, batch query execution, cache updates
//! and candidate scans fan out across threads via rayon; results are
//! identical to the sequential fallback (`--no-default-features`).

pub mod bctree;
pub mod dataset;
mod error;
pub mod evalbench;
pub mod greedy;
pub mod objective;
pub mod oracle;
mod par;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
