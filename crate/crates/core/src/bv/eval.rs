use std::collections::{BTreeMap, HashMap};

use super::expr::{BinOp, CmpOp, Expr, Node, Var};
use super::value::{mask, BitVector};
use super::BvError;

/// Concrete assignment of input variables, keyed by variable name.
pub type Env = BTreeMap<String, BitVector>;

#[inline]
fn sign_extend(value: u64, width: u32) -> i64 {
    if width >= 64 {
        value as i64
    } else {
        let shift = 64 - width;
        ((value << shift) as i64) >> shift
    }
}

#[inline]
pub(crate) fn apply_binary(op: BinOp, width: u32, a: u64, b: u64) -> u64 {
    let m = mask(width);
    let r = match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => {
            if b >= width as u64 {
                0
            } else {
                a << b
            }
        }
        BinOp::Lshr => {
            if b >= width as u64 {
                0
            } else {
                a >> b
            }
        }
        BinOp::Ashr => {
            let s = sign_extend(a, width);
            let amount = b.min(width as u64 - 1);
            (s >> amount) as u64
        }
    };
    r & m
}

#[inline]
pub(crate) fn apply_compare(op: CmpOp, width: u32, a: u64, b: u64) -> u64 {
    let r = match op {
        CmpOp::Eq => a == b,
        CmpOp::Ne => a != b,
        CmpOp::Ult => a < b,
        CmpOp::Ule => a <= b,
        CmpOp::Slt => sign_extend(a, width) < sign_extend(b, width),
        CmpOp::Sle => sign_extend(a, width) <= sign_extend(b, width),
    };
    r as u64
}

/// Evaluates `expr` under `env` with two's-complement semantics. Shifts by at
/// least the width produce zero (`shl`, `lshr`) or sign fill (`ashr`).
pub fn eval(expr: &Expr, env: &Env) -> Result<BitVector, BvError> {
    let mut values: HashMap<usize, u64> = HashMap::new();
    for e in Expr::post_order(&[expr]) {
        let get = |x: &Expr| values[&x.id()];
        let w = e.width();
        let v = match e.node() {
            Node::Var(var) => lookup(var, env)?,
            Node::Const(c) => c.value(),
            Node::Not(a) => !get(a) & mask(w),
            Node::Binary(op, a, b) => apply_binary(*op, w, get(a), get(b)),
            Node::Compare(op, a, b) => apply_compare(*op, a.width(), get(a), get(b)),
            Node::Extract { lo, arg, .. } => (get(arg) >> lo) & mask(w),
            Node::ZeroExt { arg, .. } => get(arg),
            Node::SignExt { arg, .. } => sign_extend(get(arg), arg.width()) as u64 & mask(w),
            Node::Concat(hi, lo) => (get(hi) << lo.width()) | get(lo),
            Node::Ite(c, a, b) => {
                if get(c) == 1 {
                    get(a)
                } else {
                    get(b)
                }
            }
        };
        values.insert(e.id(), v);
    }
    Ok(BitVector::from_raw(expr.width(), values[&expr.id()]))
}

fn lookup(var: &Var, env: &Env) -> Result<u64, BvError> {
    let bv = env
        .get(var.name())
        .ok_or_else(|| BvError::UnboundVariable(var.name().to_string()))?;
    if bv.width() != var.width() {
        return Err(BvError::WidthMismatch {
            op: "bind",
            left: var.width(),
            right: bv.width(),
        });
    }
    Ok(bv.value())
}

#[derive(Clone, Debug)]
enum Op {
    Input(usize),
    Const(u64),
    Not {
        a: usize,
        w: u32,
    },
    Bin {
        op: BinOp,
        a: usize,
        b: usize,
        w: u32,
    },
    Cmp {
        op: CmpOp,
        a: usize,
        b: usize,
        w: u32,
    },
    Extract {
        a: usize,
        lo: u32,
        w: u32,
    },
    Copy {
        a: usize,
    },
    Sext {
        a: usize,
        from: u32,
        w: u32,
    },
    Concat {
        hi: usize,
        lo: usize,
        lo_w: u32,
    },
    Ite {
        c: usize,
        a: usize,
        b: usize,
    },
}

/// A set of expressions flattened into a straight-line evaluation program.
///
/// Used for exhaustive enumeration where the same DAG is evaluated millions
/// of times; inputs are passed positionally in [`Tape::inputs`] order.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    inputs: Vec<Var>,
    outputs: Vec<usize>,
    widths: Vec<u32>,
}

impl Tape {
    /// Compiles `roots`; inputs are the union of their variables, sorted.
    pub fn compile(roots: &[&Expr]) -> Tape {
        let inputs: Vec<Var> = Expr::vars_of(roots).into_iter().collect();
        Self::compile_with_inputs(roots, inputs)
    }

    /// Compiles `roots` with a caller-chosen input order. Every variable of
    /// the roots must appear in `inputs`.
    pub fn compile_with_inputs(roots: &[&Expr], inputs: Vec<Var>) -> Tape {
        let input_index: HashMap<&Var, usize> =
            inputs.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let mut ops = Vec::new();
        for e in Expr::post_order(roots) {
            let s = |x: &Expr| slot[&x.id()];
            let w = e.width();
            let op = match e.node() {
                Node::Var(v) => Op::Input(
                    *input_index
                        .get(v)
                        .unwrap_or_else(|| panic!("variable {v} missing from tape inputs")),
                ),
                Node::Const(c) => Op::Const(c.value()),
                Node::Not(a) => Op::Not { a: s(a), w },
                Node::Binary(op, a, b) => Op::Bin {
                    op: *op,
                    a: s(a),
                    b: s(b),
                    w,
                },
                Node::Compare(op, a, b) => Op::Cmp {
                    op: *op,
                    a: s(a),
                    b: s(b),
                    w: a.width(),
                },
                Node::Extract { lo, arg, .. } => Op::Extract {
                    a: s(arg),
                    lo: *lo,
                    w,
                },
                Node::ZeroExt { arg, .. } => Op::Copy { a: s(arg) },
                Node::SignExt { arg, .. } => Op::Sext {
                    a: s(arg),
                    from: arg.width(),
                    w,
                },
                Node::Concat(hi, lo) => Op::Concat {
                    hi: s(hi),
                    lo: s(lo),
                    lo_w: lo.width(),
                },
                Node::Ite(c, a, b) => Op::Ite {
                    c: s(c),
                    a: s(a),
                    b: s(b),
                },
            };
            slot.insert(e.id(), ops.len());
            ops.push(op);
        }
        let outputs = roots.iter().map(|r| slot[&r.id()]).collect();
        let widths = roots.iter().map(|r| r.width()).collect();
        Tape {
            ops,
            inputs,
            outputs,
            widths,
        }
    }

    pub fn inputs(&self) -> &[Var] {
        &self.inputs
    }

    pub fn output_widths(&self) -> &[u32] {
        &self.widths
    }

    /// Scratch buffer sized for [`Tape::run`].
    pub fn scratch(&self) -> Vec<u64> {
        vec![0; self.ops.len()]
    }

    /// Evaluates all ops; read results with [`Tape::output`].
    #[inline]
    pub fn run(&self, inputs: &[u64], slots: &mut [u64]) {
        for (i, op) in self.ops.iter().enumerate() {
            let v = match *op {
                Op::Input(k) => inputs[k],
                Op::Const(c) => c,
                Op::Not { a, w } => !slots[a] & mask(w),
                Op::Bin { op, a, b, w } => apply_binary(op, w, slots[a], slots[b]),
                Op::Cmp { op, a, b, w } => apply_compare(op, w, slots[a], slots[b]),
                Op::Extract { a, lo, w } => (slots[a] >> lo) & mask(w),
                Op::Copy { a } => slots[a],
                Op::Sext { a, from, w } => sign_extend(slots[a], from) as u64 & mask(w),
                Op::Concat { hi, lo, lo_w } => (slots[hi] << lo_w) | slots[lo],
                Op::Ite { c, a, b } => {
                    if slots[c] == 1 {
                        slots[a]
                    } else {
                        slots[b]
                    }
                }
            };
            slots[i] = v;
        }
    }

    #[inline]
    pub fn output(&self, slots: &[u64], index: usize) -> u64 {
        slots[self.outputs[index]]
    }
}
