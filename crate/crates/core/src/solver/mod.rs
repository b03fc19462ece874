//! Satisfiability and single-objective optimization over bitvector formulas.
//!
//! Three interchangeable backends implement [`Session`]:
//! an external SMT-LIB2 process, an in-process bit-blaster on a SAT solver,
//! and exhaustive enumeration for small input spaces. Every model a backend
//! returns is re-evaluated locally before it is surfaced.

mod bitblast;
mod brute;
mod smtlib;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bv::{eval, BinOp, BitVector, BvError, CmpOp, Env, Expr, Var};

pub use bitblast::BitblastSession;
pub use brute::BruteForceSession;
pub use smtlib::{to_smtlib, SmtSession};

/// Environment variable naming the external solver binary.
pub const SOLVER_ENV: &str = "LEAKSCOPE_SOLVER";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("solver process: {0}")]
    Process(String),
    #[error("malformed solver output: {0}")]
    Malformed(String),
    #[error("solver returned a model that violates the formula: {0}")]
    InvalidModel(String),
    #[error("{bits} free input bits exceed the brute-force cap of {cap}")]
    OracleInfeasible { bits: u32, cap: u32 },
    #[error(transparent)]
    Expr(#[from] BvError),
}

/// A conjunction of width-1 assertions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Formula {
    pub assertions: Vec<Expr>,
}

impl Formula {
    pub fn new(assertions: Vec<Expr>) -> Self {
        for a in &assertions {
            assert_eq!(a.width(), 1, "assertions must be boolean");
        }
        Formula { assertions }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let roots: Vec<&Expr> = self.assertions.iter().collect();
        Expr::vars_of(&roots)
    }

    /// True when `env` satisfies every assertion and every `extra` constraint.
    pub fn holds(&self, extra: &[Expr], env: &Env) -> Result<bool, BvError> {
        for a in self.assertions.iter().chain(extra) {
            if eval(a, env)?.value() != 1 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Objective {
    pub expr: Expr,
    pub direction: Direction,
    /// Inclusive upper bound on the objective's value.
    pub max: u64,
}

impl Objective {
    pub fn minimize(expr: Expr, max: u64) -> Self {
        Objective {
            expr,
            direction: Direction::Minimize,
            max,
        }
    }

    pub fn maximize(expr: Expr, max: u64) -> Self {
        Objective {
            expr,
            direction: Direction::Maximize,
            max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SatResult {
    Sat(Env),
    Unsat,
    /// Gave up within the time budget.
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptStatus {
    Optimal,
    Suboptimal,
    Unsat,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OptResult {
    pub status: OptStatus,
    pub value: Option<u64>,
    pub model: Option<Env>,
}

impl OptResult {
    fn unsat() -> Self {
        OptResult {
            status: OptStatus::Unsat,
            value: None,
            model: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// In-process bit-blasting onto a SAT solver.
    #[default]
    Builtin,
    /// SMT-LIB2 over a pipe to an external solver.
    External,
    /// Exhaustive enumeration; exact but limited to small input spaces.
    BruteForce,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub backend: BackendKind,
    /// Budget for each satisfiability query.
    pub timeout: Duration,
    /// Maximum number of free input bits the brute-force backend enumerates.
    pub oracle_cap: u32,
    /// External solver binary; falls back to `$LEAKSCOPE_SOLVER`, then `z3`.
    pub solver_path: Option<PathBuf>,
    /// Replaces the default arguments of the external solver.
    pub solver_args: Option<Vec<String>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: BackendKind::Builtin,
            timeout: Duration::from_secs(60),
            oracle_cap: 20,
            solver_path: None,
            solver_args: None,
        }
    }
}

impl SolverConfig {
    pub fn with_backend(backend: BackendKind) -> Self {
        SolverConfig {
            backend,
            ..Default::default()
        }
    }

    pub fn resolved_solver_path(&self) -> PathBuf {
        self.solver_path
            .clone()
            .or_else(|| std::env::var_os(SOLVER_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("z3"))
    }
}

/// Counters for one session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub queries: u32,
    pub timeouts: u32,
}

/// An incremental solving context over a fixed base formula.
pub trait Session: Send {
    fn formula(&self) -> &Formula;

    /// Backend-specific satisfiability check of the base formula plus `extra`.
    fn check_raw(&mut self, extra: &[Expr]) -> Result<SatResult, SolverError>;

    fn stats_mut(&mut self) -> &mut Stats;

    fn stats(&self) -> Stats;

    /// Checks the base formula plus `extra`; models are validated locally.
    fn check(&mut self, extra: &[Expr]) -> Result<SatResult, SolverError> {
        self.stats_mut().queries += 1;
        let r = self.check_raw(extra)?;
        match &r {
            SatResult::Sat(model) => {
                if !self.formula().holds(extra, model)? {
                    return Err(SolverError::InvalidModel(format_env(model)));
                }
            }
            SatResult::Unknown => self.stats_mut().timeouts += 1,
            SatResult::Unsat => {}
        }
        Ok(r)
    }

    /// Optimizes `obj` subject to the base formula.
    fn optimize(&mut self, obj: &Objective) -> Result<OptResult, SolverError> {
        binary_search(self, obj, &[])
    }

    /// Finds the model of base ∧ `extra` whose values of `order` are
    /// lexicographically smallest, comparing variables in the given order as
    /// unsigned numbers. `None` when unsatisfiable.
    fn minimize_inputs(
        &mut self,
        extra: &[Expr],
        order: &[Var],
    ) -> Result<Option<Env>, SolverError> {
        greedy_minimize(self, extra, order)
    }
}

pub(crate) fn format_env(env: &Env) -> String {
    env.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn konst(width: u32, value: u64) -> Expr {
    Expr::constant(BitVector::new(width, value).expect("value fits width"))
}

/// Binary search on the objective value. Uses at most
/// `ceil(log2(max + 1)) + 1` checks.
pub fn binary_search<S: Session + ?Sized>(
    s: &mut S,
    obj: &Objective,
    extra: &[Expr],
) -> Result<OptResult, SolverError> {
    let w = obj.expr.width();
    let value_of = |m: &Env| -> Result<u64, SolverError> { Ok(eval(&obj.expr, m)?.value()) };
    // A tautology over the objective so its variables appear in every model.
    let mut first = extra.to_vec();
    first.push(obj.expr.ule(&konst(w, crate::bv::mask(w))));
    let mut best = match s.check(&first)? {
        SatResult::Unsat => return Ok(OptResult::unsat()),
        SatResult::Unknown => {
            return Ok(OptResult {
                status: OptStatus::Timeout,
                value: None,
                model: None,
            })
        }
        SatResult::Sat(m) => m,
    };
    let mut value = value_of(&best)?;
    let (mut lo, mut hi) = match obj.direction {
        Direction::Maximize => (value, obj.max.max(value)),
        Direction::Minimize => (0, value),
    };
    let mut constraints = extra.to_vec();
    while lo < hi {
        let probe = match obj.direction {
            Direction::Maximize => {
                let mid = lo + (hi - lo).div_ceil(2);
                (
                    mid,
                    Expr::compare(CmpOp::Ule, konst(w, mid), obj.expr.clone())?,
                )
            }
            Direction::Minimize => {
                let mid = lo + (hi - lo) / 2;
                (
                    mid,
                    Expr::compare(CmpOp::Ule, obj.expr.clone(), konst(w, mid))?,
                )
            }
        };
        constraints.push(probe.1);
        let r = s.check(&constraints)?;
        constraints.pop();
        match (r, obj.direction) {
            (SatResult::Sat(m), dir) => {
                value = value_of(&m)?;
                best = m;
                match dir {
                    Direction::Maximize => lo = value,
                    Direction::Minimize => hi = value,
                }
            }
            (SatResult::Unsat, Direction::Maximize) => hi = probe.0 - 1,
            (SatResult::Unsat, Direction::Minimize) => lo = probe.0 + 1,
            (SatResult::Unknown, _) => {
                return Ok(OptResult {
                    status: OptStatus::Suboptimal,
                    value: Some(value),
                    model: Some(best),
                })
            }
        }
    }
    Ok(OptResult {
        status: OptStatus::Optimal,
        value: Some(value),
        model: Some(best),
    })
}

/// Greedy most-significant-bit-first minimization. If a query times out the
/// current (valid, possibly non-minimal) model is returned.
pub fn greedy_minimize<S: Session + ?Sized>(
    s: &mut S,
    extra: &[Expr],
    order: &[Var],
) -> Result<Option<Env>, SolverError> {
    let mut model = match s.check(extra)? {
        SatResult::Sat(m) => m,
        SatResult::Unsat | SatResult::Unknown => return Ok(None),
    };
    let mut fixed: Vec<Expr> = extra.to_vec();
    for var in order {
        let w = var.width();
        let v = Expr::var(var.clone());
        let mut prefix = 0u64;
        for bit in (0..w).rev() {
            let current = model.get(var.name()).map_or(0, |b| (b.value() >> bit) & 1);
            if current == 1 {
                let slice = Expr::extract(w - 1, bit, v.clone())?;
                let mut probe = fixed.clone();
                probe.push(slice.eq_expr(&konst(w - bit, prefix << 1)));
                match s.check(&probe)? {
                    SatResult::Sat(m) => {
                        model = m;
                        prefix <<= 1;
                    }
                    SatResult::Unsat => prefix = (prefix << 1) | 1,
                    SatResult::Unknown => return Ok(Some(model)),
                }
            } else {
                prefix <<= 1;
            }
        }
        fixed.push(v.eq_expr(&konst(w, prefix)));
    }
    Ok(Some(model))
}

/// Opens a session of the configured backend over `formula`.
pub fn open_session(cfg: &SolverConfig, formula: Formula) -> Result<Box<dyn Session>, SolverError> {
    Ok(match cfg.backend {
        BackendKind::Builtin => Box::new(BitblastSession::new(formula, cfg.timeout)),
        BackendKind::External => Box::new(SmtSession::new(formula, cfg)?),
        BackendKind::BruteForce => Box::new(BruteForceSession::new(formula, cfg)?),
    })
}

pub fn check_sat(f: &Formula, cfg: &SolverConfig) -> Result<SatResult, SolverError> {
    open_session(cfg, f.clone())?.check(&[])
}

pub fn optimize(
    f: &Formula,
    obj: &Objective,
    cfg: &SolverConfig,
) -> Result<OptResult, SolverError> {
    open_session(cfg, f.clone())?.optimize(obj)
}

/// Exact optimum by exhaustive enumeration.
pub fn brute_force_opt(f: &Formula, obj: &Objective, cap: u32) -> Result<OptResult, SolverError> {
    let cfg = SolverConfig {
        backend: BackendKind::BruteForce,
        oracle_cap: cap,
        timeout: Duration::MAX,
        ..Default::default()
    };
    BruteForceSession::new(f.clone(), &cfg)?.optimize(obj)
}

/// Bits needed to hold a popcount of an `n`-bit value.
pub fn popcount_width(n: u32) -> u32 {
    u64::BITS - (n as u64).leading_zeros()
}

static POPCOUNT_FAULT: AtomicBool = AtomicBool::new(false);

/// Makes every later popcount encoding ignore bit 0 of its operand. Exists
/// only to check that the brute-force cross-check notices a broken encoding.
#[doc(hidden)]
pub fn inject_popcount_fault(on: bool) {
    POPCOUNT_FAULT.store(on, Ordering::Relaxed);
}

/// Hamming weight of `x` as a `popcount_width(n)`-bit expression, built as a
/// balanced tree of additions over zero-extended single bits.
pub fn encode_popcount(x: &Expr) -> Expr {
    let n = x.width();
    let m = popcount_width(n);
    let skip = u32::from(n > 1 && POPCOUNT_FAULT.load(Ordering::Relaxed));
    let mut layer: Vec<Expr> = (skip..n).map(|i| x.bit(i).zext_to(m)).collect();
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        for pair in layer.chunks(2) {
            next.push(match pair {
                [a, b] => a.add(b),
                [a] => a.clone(),
                _ => unreachable!(),
            });
        }
        layer = next;
    }
    layer.pop().expect("width is at least 1")
}

/// `|a - b|` for equal-width unsigned terms, computed one bit wider so the
/// subtraction cannot wrap.
pub fn abs_diff(a: &Expr, b: &Expr) -> Expr {
    let w = a.width() + 1;
    let (a, b) = (a.zext_to(w), b.zext_to(w));
    Expr::ite(b.ule(&a), a.sub(&b), b.sub(&a)).expect("widths agree")
}

/// `|ω(x) - ω(y)|`.
pub fn encode_diff_hw(x: &Expr, y: &Expr) -> Expr {
    abs_diff(&encode_popcount(x), &encode_popcount(y))
}

/// `ω(x ⊕ y)`.
pub fn encode_hamming_distance(x: &Expr, y: &Expr) -> Expr {
    encode_popcount(&Expr::binary(BinOp::Xor, x.clone(), y.clone()).expect("widths agree"))
}
