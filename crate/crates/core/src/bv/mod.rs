//! Width-exact bitvector values and expressions.
//!
//! [`Expr`] is the unit of all symbolic reasoning in the crate: symbolic
//! execution builds it, the solver backends consume it, and the brute-force
//! oracle evaluates it through a compiled [`Tape`].

mod eval;
mod expr;
mod simplify;
mod value;

pub use eval::{eval, Env, Tape};
pub use expr::{rename_fresh, BinOp, CmpOp, Expr, Node, Taint, Var};
pub use simplify::simplify;
pub use value::{diff_hw, hamming_distance, mask, popcount, BitVector, MAX_WIDTH};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BvError {
    #[error("bitvector width {0} outside 1..=64")]
    InvalidWidth(u32),
    #[error("literal {value:#x} does not fit in {width} bits")]
    LiteralOutOfRange { width: u32, value: u64 },
    #[error("width mismatch in `{op}`: {left} vs {right}")]
    WidthMismatch {
        op: &'static str,
        left: u32,
        right: u32,
    },
    #[error("extract [{hi}:{lo}] out of range for width {width}")]
    BadExtract { hi: u32, lo: u32, width: u32 },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
}
