//! Mini intermediate representation.
//!
//! An assembly-flavored text format with one instruction per line:
//!
//! ```text
//! func cadd(sum: public u8, x: secret i8) {
//!     r0 = sub x, #64      ; comments start with ';'
//!     r1 = asr r0, #7
//!     r2 = not r1
//!     r3 = and r2, x
//!     r4 = add sum, r3
//! }
//! ```
//!
//! Destinations may carry an explicit width (`r2:32 = sbfx r0, #15, #1`);
//! it is required where the width cannot be inferred (`mov #imm`, `load`,
//! extensions). Counted loops are `label L:` ... `br L` with a
//! `loop L [bound N]` declaration.

mod ctcheck;
mod interp;
mod parse;
mod render;
mod unroll;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bv::{BitVector, Taint};

pub use ctcheck::{ct_check, taint_closure, Violation, ViolationKind};
pub use interp::{execute, memory_input_name, ExecError, ExecStep};
pub use parse::parse;
pub use unroll::{unroll, LoopBounds, DEFAULT_UNROLL};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub functions: Vec<Function>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Instruction>,
    /// Declared loop heads; `None` means "use the configured default bound".
    pub loops: BTreeMap<String, Option<u32>>,
}

impl Function {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// True when no labels or branches remain.
    pub fn is_straight_line(&self) -> bool {
        self.body.iter().all(|i| !i.opcode.is_control())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub width: u32,
    pub signed: bool,
    pub taint: Taint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opcode {
    Mov,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Not,
    Shl,
    Lsr,
    Asr,
    Sbfx,
    Ubfx,
    Sext,
    Zext,
    Load,
    Store,
    Brz,
    Br,
    Label,
    Ret,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Not => "not",
            Opcode::Shl => "shl",
            Opcode::Lsr => "lsr",
            Opcode::Asr => "asr",
            Opcode::Sbfx => "sbfx",
            Opcode::Ubfx => "ubfx",
            Opcode::Sext => "sext",
            Opcode::Zext => "zext",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Brz => "brz",
            Opcode::Br => "br",
            Opcode::Label => "label",
            Opcode::Ret => "ret",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        use Opcode::*;
        Some(match s {
            "mov" => Mov,
            "add" => Add,
            "sub" => Sub,
            "mul" => Mul,
            "and" => And,
            "or" => Or,
            "xor" => Xor,
            "not" => Not,
            "shl" => Shl,
            "lsr" => Lsr,
            "asr" => Asr,
            "sbfx" => Sbfx,
            "ubfx" => Ubfx,
            "sext" => Sext,
            "zext" => Zext,
            "load" => Load,
            _ => return None,
        })
    }

    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Brz | Opcode::Br | Opcode::Label)
    }

    /// Arithmetic and logical instructions; only these are analyzed.
    pub fn is_analyzable(self) -> bool {
        !matches!(
            self,
            Opcode::Mov
                | Opcode::Load
                | Opcode::Store
                | Opcode::Brz
                | Opcode::Br
                | Opcode::Label
                | Opcode::Ret
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// A register (or parameter) reference with its resolved width.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Reg {
    pub name: String,
    pub width: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Reg(Reg),
    Imm(BitVector),
    Label(String),
}

impl Operand {
    pub fn as_reg(&self) -> Option<&Reg> {
        match self {
            Operand::Reg(r) => Some(r),
            _ => None,
        }
    }
}

/// Where an instruction came from before unrolling.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub address: u32,
    /// Iteration index of each enclosing loop, outermost first.
    pub iteration: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Instruction {
    pub address: u32,
    pub origin: Origin,
    /// 1-based source line; zero for synthesized instructions.
    pub line: usize,
    pub opcode: Opcode,
    pub dest: Option<Reg>,
    pub operands: Vec<Operand>,
    /// `(hi, lo)` bit range for `sbfx`/`ubfx`, canonicalized from the
    /// `#lsb, #width` source operands.
    pub field: Option<(u32, u32)>,
}

impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.address == other.address
            && self.origin == other.origin
            && self.opcode == other.opcode
            && self.dest == other.dest
            && self.operands == other.operands
            && self.field == other.field
    }
}

impl Eq for Instruction {}

impl Instruction {
    pub fn reg_operands(&self) -> impl Iterator<Item = &Reg> {
        self.operands.iter().filter_map(Operand::as_reg)
    }

    pub fn label(&self) -> Option<&str> {
        self.operands.iter().find_map(|o| match o {
            Operand::Label(l) => Some(l.as_str()),
            _ => None,
        })
    }
}

/// Secret/public classification of every parameter of a function.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaintDecl(pub BTreeMap<String, Taint>);

impl TaintDecl {
    /// The taints written in the function signature.
    pub fn from_function(f: &Function) -> Self {
        TaintDecl(f.params.iter().map(|p| (p.name.clone(), p.taint)).collect())
    }

    /// Checks that every parameter is declared exactly once and nothing else is.
    pub fn validate(&self, f: &Function) -> Result<(), TaintError> {
        for p in &f.params {
            if !self.0.contains_key(&p.name) {
                return Err(TaintError::Missing(p.name.clone()));
            }
        }
        for name in self.0.keys() {
            if f.param(name).is_none() {
                return Err(TaintError::Unknown(name.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Taint> {
        self.0.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaintError {
    #[error("no taint declared for parameter `{0}`")]
    Missing(String),
    #[error("taint declared for unknown parameter `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown opcode `{0}`")]
    UnknownOpcode(String),
    #[error("`{opcode}` expects {expected}")]
    Arity {
        opcode: &'static str,
        expected: &'static str,
    },
    #[error("width mismatch: {0}")]
    Width(String),
    #[error("register `{0}` used before it is defined")]
    UseBeforeDef(String),
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnrollError {
    #[error("backward branch to `{label}` at address {address} has no `loop {label}` declaration")]
    UnboundedLoop { label: String, address: u32 },
    #[error("loop bound for `{0}` must be at least 1")]
    ZeroBound(String),
    #[error("branch to `{label}` at address {address} leaves its enclosing loop")]
    Unstructured { label: String, address: u32 },
}
