use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{Function, Opcode, Operand};
use crate::bv::{mask, BitVector, Env};

/// Name of the input variable standing for a `width`-bit load from a memory
/// cell that was never written.
pub fn memory_input_name(address: u64, width: u32) -> String {
    format!("mem{width}_{address:x}")
}

/// Concrete effect of one instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecStep {
    pub address: u32,
    pub opcode: Opcode,
    pub value: Option<BitVector>,
    /// Value the destination register held before this instruction.
    pub prev: Option<BitVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has width {got}, expected {expected}")]
    InputWidth {
        name: String,
        expected: u32,
        got: u32,
    },
    #[error("`{opcode}` at address {address} is not straight-line code")]
    ControlFlow { opcode: Opcode, address: u32 },
}

fn sext(v: u64, from: u32) -> i64 {
    let s = 64 - from;
    ((v << s) as i64) >> s
}

/// Runs a straight-line function on concrete inputs.
///
/// This is a direct reading of the instruction semantics, kept independent of
/// the expression evaluator so the two can check each other.
pub fn execute(f: &Function, env: &Env) -> Result<Vec<ExecStep>, ExecError> {
    let fetch = |name: &str, width: u32| -> Result<u64, ExecError> {
        let bv = env
            .get(name)
            .ok_or_else(|| ExecError::MissingInput(name.to_string()))?;
        if bv.width() != width {
            return Err(ExecError::InputWidth {
                name: name.to_string(),
                expected: width,
                got: bv.width(),
            });
        }
        Ok(bv.value())
    };

    let mut regs: HashMap<String, u64> = HashMap::new();
    for p in &f.params {
        regs.insert(p.name.clone(), fetch(&p.name, p.width)?);
    }
    let mut memory: BTreeMap<u64, u64> = BTreeMap::new();
    let mut steps = Vec::with_capacity(f.body.len());

    for inst in &f.body {
        if inst.opcode.is_control() {
            return Err(ExecError::ControlFlow {
                opcode: inst.opcode,
                address: inst.address,
            });
        }
        let val = |o: &Operand| match o {
            Operand::Reg(r) => regs[&r.name],
            Operand::Imm(v) => v.value(),
            Operand::Label(_) => unreachable!("labels only appear on branches"),
        };
        let ops: Vec<u64> = inst.operands.iter().map(val).collect();
        let src_width = inst.operands.first().and_then(|o| match o {
            Operand::Reg(r) => Some(r.width),
            Operand::Imm(v) => Some(v.width()),
            Operand::Label(_) => None,
        });
        let w = inst.dest.as_ref().map_or(0, |d| d.width);
        let result: Option<u64> = match inst.opcode {
            Opcode::Mov => Some(ops[0]),
            Opcode::Add => Some(ops[0].wrapping_add(ops[1])),
            Opcode::Sub => Some(ops[0].wrapping_sub(ops[1])),
            Opcode::Mul => Some(ops[0].wrapping_mul(ops[1])),
            Opcode::And => Some(ops[0] & ops[1]),
            Opcode::Or => Some(ops[0] | ops[1]),
            Opcode::Xor => Some(ops[0] ^ ops[1]),
            Opcode::Not => Some(!ops[0]),
            Opcode::Shl => Some(if ops[1] >= w as u64 {
                0
            } else {
                ops[0] << ops[1]
            }),
            Opcode::Lsr => Some(if ops[1] >= w as u64 {
                0
            } else {
                ops[0] >> ops[1]
            }),
            Opcode::Asr => Some((sext(ops[0], w) >> ops[1].min(w as u64 - 1)) as u64),
            Opcode::Zext => Some(ops[0]),
            Opcode::Sext => Some(sext(ops[0], src_width.expect("source")) as u64),
            Opcode::Sbfx | Opcode::Ubfx => {
                let (hi, lo) = inst.field.expect("bitfield range");
                let len = hi - lo + 1;
                let bits = (ops[0] >> lo) & mask(len);
                Some(if inst.opcode == Opcode::Sbfx {
                    sext(bits, len) as u64
                } else {
                    bits
                })
            }
            Opcode::Load => {
                let addr = ops[0];
                Some(match memory.get(&addr) {
                    Some(&v) => v,
                    None => fetch(&memory_input_name(addr, w), w)?,
                })
            }
            Opcode::Store => {
                memory.insert(ops[0], ops[1]);
                None
            }
            Opcode::Ret => None,
            Opcode::Br | Opcode::Brz | Opcode::Label => unreachable!("rejected above"),
        };
        let (value, prev) = match (&inst.dest, result) {
            (Some(d), Some(v)) => {
                let v = v & mask(d.width);
                let prev = regs
                    .insert(d.name.clone(), v)
                    .map(|p| BitVector::from_raw(d.width, p));
                (Some(BitVector::from_raw(d.width, v)), prev)
            }
            _ => (None, None),
        };
        steps.push(ExecStep {
            address: inst.address,
            opcode: inst.opcode,
            value,
            prev,
        });
    }
    Ok(steps)
}
