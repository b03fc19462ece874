//! Front half of the analysis: unrolling, the constant-time gate and
//! symbolic execution.

use thiserror::Error;

use crate::leakage::{AnalysisConfig, Analyzer};
use crate::mir::{ct_check, unroll, Function, LoopBounds, TaintDecl, UnrollError, Violation};
use crate::report::{Report, ReportConfig};
use crate::solver::SolverError;
use crate::symexec::{self, SymexecError, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error(transparent)]
    Unroll(#[from] UnrollError),
    #[error(transparent)]
    Symexec(#[from] SymexecError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Clone, Debug)]
pub struct Lowered {
    /// The function after unrolling.
    pub function: Function,
    pub decl: TaintDecl,
    pub violations: Vec<Violation>,
    /// Present only when there are no violations.
    pub trace: Option<Trace>,
}

/// Unrolls `f`, checks it is constant-time and, if so, executes it
/// symbolically under the taint of its parameter list.
pub fn lower(f: &Function, bounds: &LoopBounds) -> Result<Lowered, LowerError> {
    let function = unroll(f, bounds)?;
    let decl = TaintDecl::from_function(&function);
    let violations = ct_check(&function, &decl);
    let trace = if violations.is_empty() {
        Some(symexec::run(&function, &decl)?)
    } else {
        None
    };
    Ok(Lowered {
        function,
        decl,
        violations,
        trace,
    })
}

/// Runs the whole analysis of `f`. A function that fails the constant-time
/// check yields a report with its violations and no records.
pub fn analyze_function(
    f: &Function,
    source: &str,
    bounds: &LoopBounds,
    cfg: &AnalysisConfig,
) -> Result<(Report, Lowered), LowerError> {
    let low = lower(f, bounds)?;
    let records = match &low.trace {
        Some(t) => Analyzer::new(cfg.clone()).run(t)?,
        None => Vec::new(),
    };
    let report = Report::new(
        &f.name,
        source,
        ReportConfig::new(cfg, bounds.default),
        low.function.body.len(),
        low.violations.clone(),
        records,
    );
    Ok((report, low))
}
