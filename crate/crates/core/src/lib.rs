//! Locates single-trace power side-channel points of interest in
//! constant-time straight-line code.
//!
//! The pipeline is: [`mir::parse`] → [`mir::unroll`] → [`mir::ct_check`] →
//! [`symexec::run`] → [`leakage::Analyzer`] → [`report`]. [`pipeline::lower`]
//! bundles the first four steps. Flagged points can be confirmed
//! statistically with [`tvla`].

pub mod bv;
pub mod leakage;
pub mod mir;
pub mod pipeline;
pub mod report;
pub mod solver;
pub mod symexec;
pub mod tvla;

pub use bv::{BitVector, Env, Expr, Taint, Var};
pub use leakage::{AnalysisConfig, Analyzer, LeakModelKind, PoiRecord, Reason};
pub use mir::{Function, Program};
pub use report::Report;
pub use solver::{BackendKind, SolverConfig};
pub use symexec::{StepRecord, SymbolicState, Trace};
