//! Symbolic execution of straight-line code into one expression per
//! instruction.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::bv::{simplify, BinOp, BvError, Expr, Taint, Var};
use crate::mir::{
    memory_input_name, Function, Instruction, Opcode, Operand, Origin, TaintDecl, TaintError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymexecError {
    #[error(transparent)]
    Taint(#[from] TaintError),
    #[error("`{opcode}` at address {address}: only straight-line code is supported")]
    ControlFlow { opcode: Opcode, address: u32 },
    #[error("address {address}: memory address does not reduce to a constant")]
    SymbolicAddress { address: u32 },
    #[error("address {address}: {source}")]
    Expr { address: u32, source: BvError },
}

/// What one instruction computes, in terms of the function inputs.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub address: u32,
    pub origin: Origin,
    pub line: usize,
    pub opcode: Opcode,
    pub dest: Option<String>,
    pub width: u32,
    /// Simplified value written to `dest`.
    pub expr: Option<Expr>,
    /// Value `dest` held before this instruction, if it was assigned earlier.
    pub prev: Option<Expr>,
}

impl StepRecord {
    /// Arithmetic/logical instruction whose result depends on a secret.
    pub fn is_candidate(&self) -> bool {
        self.opcode.is_analyzable() && self.expr.as_ref().is_some_and(Expr::is_secret)
    }
}

/// Register file and concrete-address memory during execution.
#[derive(Clone, Debug, Default)]
pub struct SymbolicState {
    regs: HashMap<String, Expr>,
    memory: BTreeMap<u64, Expr>,
    inputs: BTreeSet<Var>,
}

impl SymbolicState {
    pub fn register(&self, name: &str) -> Option<&Expr> {
        self.regs.get(name)
    }

    /// Parameters and memory cells read before being written.
    pub fn inputs(&self) -> &BTreeSet<Var> {
        &self.inputs
    }
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub function: String,
    pub records: Vec<StepRecord>,
    pub inputs: BTreeSet<Var>,
    pub state: SymbolicState,
}

impl Trace {
    pub fn record(&self, address: u32) -> Option<&StepRecord> {
        self.records.iter().find(|r| r.address == address)
    }
}

fn at<T>(address: u32, r: Result<T, BvError>) -> Result<T, SymexecError> {
    r.map_err(|source| SymexecError::Expr { address, source })
}

fn resize(address: u32, e: Expr, width: u32) -> Result<Expr, SymexecError> {
    use std::cmp::Ordering::*;
    match width.cmp(&e.width()) {
        Equal => Ok(e),
        Less => at(address, Expr::extract(width - 1, 0, e)),
        Greater => {
            let by = width - e.width();
            at(address, Expr::zero_ext(by, e))
        }
    }
}

impl SymbolicState {
    fn operand(&self, o: &Operand) -> Expr {
        match o {
            Operand::Reg(r) => self.regs[&r.name].clone(),
            Operand::Imm(v) => Expr::constant(*v),
            Operand::Label(_) => unreachable!("labels only appear on branches"),
        }
    }

    fn concrete_address(&self, inst: &Instruction) -> Result<u64, SymexecError> {
        simplify(&self.operand(&inst.operands[0]))
            .as_const()
            .map(|c| c.value())
            .ok_or(SymexecError::SymbolicAddress {
                address: inst.address,
            })
    }

    fn step(&mut self, inst: &Instruction) -> Result<Option<Expr>, SymexecError> {
        let a = inst.address;
        let dest_w = inst.dest.as_ref().map_or(0, |d| d.width);
        let op = |i: usize| self.operand(&inst.operands[i]);
        let binary = |bop: BinOp| at(a, Expr::binary(bop, op(0), op(1)));
        let e = match inst.opcode {
            Opcode::Mov => op(0),
            Opcode::Add => binary(BinOp::Add)?,
            Opcode::Sub => binary(BinOp::Sub)?,
            Opcode::Mul => binary(BinOp::Mul)?,
            Opcode::And => binary(BinOp::And)?,
            Opcode::Or => binary(BinOp::Or)?,
            Opcode::Xor => binary(BinOp::Xor)?,
            Opcode::Shl => binary(BinOp::Shl)?,
            Opcode::Lsr => binary(BinOp::Lshr)?,
            Opcode::Asr => binary(BinOp::Ashr)?,
            Opcode::Not => Expr::not(op(0)),
            Opcode::Zext => {
                let src = op(0);
                let by = dest_w - src.width();
                at(a, Expr::zero_ext(by, src))?
            }
            Opcode::Sext => {
                let src = op(0);
                let by = dest_w - src.width();
                at(a, Expr::sign_ext(by, src))?
            }
            Opcode::Sbfx | Opcode::Ubfx => {
                let (hi, lo) = inst.field.expect("bitfield range");
                let field = at(a, Expr::extract(hi, lo, op(0)))?;
                let by = dest_w - field.width();
                if inst.opcode == Opcode::Sbfx {
                    at(a, Expr::sign_ext(by, field))?
                } else {
                    at(a, Expr::zero_ext(by, field))?
                }
            }
            Opcode::Load => {
                let addr = self.concrete_address(inst)?;
                match self.memory.get(&addr) {
                    Some(stored) => resize(a, stored.clone(), dest_w)?,
                    None => {
                        let name = memory_input_name(addr, dest_w);
                        let var = at(a, Var::new(&name, dest_w, false, Taint::Public))?;
                        self.inputs.insert(var.clone());
                        Expr::var(var)
                    }
                }
            }
            Opcode::Store => {
                let addr = self.concrete_address(inst)?;
                let value = op(1);
                self.memory.insert(addr, value);
                return Ok(None);
            }
            Opcode::Ret => return Ok(None),
            Opcode::Br | Opcode::Brz | Opcode::Label => {
                return Err(SymexecError::ControlFlow {
                    opcode: inst.opcode,
                    address: a,
                })
            }
        };
        Ok(Some(simplify(&e)))
    }
}

/// Executes a straight-line function. Parameters become input variables with
/// the taint given by `decl`; loads from never-written cells become fresh
/// public inputs.
pub fn run(f: &Function, decl: &TaintDecl) -> Result<Trace, SymexecError> {
    decl.validate(f)?;
    let mut state = SymbolicState::default();
    for p in &f.params {
        let taint = decl.get(&p.name).expect("validated");
        let var = Var::new(&p.name, p.width, p.signed, taint)
            .map_err(|source| SymexecError::Expr { address: 0, source })?;
        state.inputs.insert(var.clone());
        state.regs.insert(p.name.clone(), Expr::var(var));
    }
    let mut records = Vec::with_capacity(f.body.len());
    for inst in &f.body {
        let value = state.step(inst)?;
        let dest = inst.dest.as_ref();
        let prev = match (dest, &value) {
            (Some(d), Some(v)) => state.regs.insert(d.name.clone(), v.clone()),
            _ => None,
        };
        records.push(StepRecord {
            address: inst.address,
            origin: inst.origin.clone(),
            line: inst.line,
            opcode: inst.opcode,
            dest: dest.map(|d| d.name.clone()),
            width: dest.map_or(0, |d| d.width),
            expr: value,
            prev,
        });
    }
    Ok(Trace {
        function: f.name.clone(),
        records,
        inputs: state.inputs.clone(),
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bv::{eval, BitVector, Env};
    use crate::mir::{execute, parse};

    fn trace(src: &str) -> Trace {
        let f = parse(src).unwrap().functions.remove(0);
        run(&f, &TaintDecl::from_function(&f)).unwrap()
    }

    #[test]
    fn conditional_add_taint() {
        let t = trace("func cadd(sum: public u8, x: secret i8) {\n r0 = sub x, #64\n r1 = asr r0, #7\n r2 = not r1\n r3 = and r2, x\n r4 = add sum, r3\n}");
        assert!(t.records.iter().all(StepRecord::is_candidate));
        assert_eq!(
            t.records[0].expr.as_ref().unwrap().to_string(),
            "(x - 0x40)"
        );
        assert_eq!(t.inputs.len(), 2);
    }

    #[test]
    fn public_only_values_are_not_candidates() {
        let t = trace(
            "func f(p: public u8, k: secret u8) {\n r0 = add p, #1\n r1 = xor k, k\n r2 = mov k\n}",
        );
        assert!(!t.records[0].is_candidate());
        assert!(!t.records[1].is_candidate());
        assert!(!t.records[2].is_candidate());
    }

    #[test]
    fn memory_round_trip_and_symbolic_address() {
        let t = trace("func f(k: secret u16) {\n r0:32 = mov #256\n store [r0], k\n r1:8 = load [r0]\n r2:32 = load [r0]\n r3:8 = load [r0]\n r4:16 = mov #4\n r5:8 = load [r4]\n}");
        assert_eq!(t.records[2].width, 8);
        assert!(t.records[3].expr.as_ref().unwrap().is_secret());
        assert_eq!(t.records[3].expr.as_ref().unwrap().width(), 32);
        assert!(!t.records[6].expr.as_ref().unwrap().is_secret());
        assert_eq!(t.inputs.len(), 2);

        let f = parse("func f(p: public u32) {\n r0:8 = load [p]\n}")
            .unwrap()
            .functions
            .remove(0);
        let e = run(&f, &TaintDecl::from_function(&f)).unwrap_err();
        assert!(matches!(e, SymexecError::SymbolicAddress { address: 0 }));
    }

    #[test]
    fn prev_tracks_register_history() {
        let t = trace("func f(x: secret u8) {\n r0 = add x, #1\n r0 = add r0, #1\n}");
        assert!(t.records[0].prev.is_none());
        assert_eq!(t.records[1].prev, t.records[0].expr);
    }

    #[test]
    fn agrees_with_interpreter() {
        let src = "func f(x: secret i16, y: public u16) {\n r0:32 = sbfx x, #15, #1\n r1 = mul x, y\n r2 = lsr r1, y\n r3 = asr r1, #3\n r4:32 = sext r3\n r5 = xor r4, r0\n}";
        let f = parse(src).unwrap().functions.remove(0);
        let t = run(&f, &TaintDecl::from_function(&f)).unwrap();
        for (x, y) in [(0u64, 0u64), (0x8000, 3), (0x1234, 17), (0xffff, 1)] {
            let env: Env = [
                ("x".to_string(), BitVector::new(16, x).unwrap()),
                ("y".to_string(), BitVector::new(16, y).unwrap()),
            ]
            .into();
            let steps = execute(&f, &env).unwrap();
            for (s, r) in steps.iter().zip(&t.records) {
                assert_eq!(s.value, Some(eval(r.expr.as_ref().unwrap(), &env).unwrap()));
            }
        }
    }
}
