use std::collections::HashMap;

use super::eval::{apply_binary, apply_compare};
use super::expr::{BinOp, CmpOp, Expr, Node};
use super::value::{mask, BitVector};

/// Semantics-preserving local rewriting: constant folding, double negation,
/// self-cancellation and identity/zero absorption. Constants are moved to the
/// right operand of commutative operators.
pub fn simplify(expr: &Expr) -> Expr {
    let mut memo: HashMap<usize, Expr> = HashMap::new();
    for e in Expr::post_order(&[expr]) {
        let get = |x: &Expr| memo[&x.id()].clone();
        let out = match e.node() {
            Node::Var(_) | Node::Const(_) => e.clone(),
            Node::Not(a) => simplify_not(get(a)),
            Node::Binary(op, a, b) => simplify_binary(*op, get(a), get(b)),
            Node::Compare(op, a, b) => simplify_compare(*op, get(a), get(b)),
            Node::Extract { hi, lo, arg } => simplify_extract(*hi, *lo, get(arg)),
            Node::ZeroExt { by, arg } => {
                let a = get(arg);
                if *by == 0 {
                    a
                } else if let Some(c) = a.as_const() {
                    konst(a.width() + by, c.value())
                } else {
                    Expr::zero_ext(*by, a).expect("width already checked")
                }
            }
            Node::SignExt { by, arg } => {
                let a = get(arg);
                if *by == 0 {
                    a
                } else if let Some(c) = a.as_const() {
                    let w = a.width() + by;
                    konst(w, c.as_signed() as u64)
                } else {
                    Expr::sign_ext(*by, a).expect("width already checked")
                }
            }
            Node::Concat(hi, lo) => {
                let (h, l) = (get(hi), get(lo));
                match (h.as_const(), l.as_const()) {
                    (Some(ch), Some(cl)) => konst(
                        h.width() + l.width(),
                        (ch.value() << l.width()) | cl.value(),
                    ),
                    _ => Expr::concat(h, l).expect("width already checked"),
                }
            }
            Node::Ite(c, a, b) => {
                let (c, a, b) = (get(c), get(a), get(b));
                match c.as_const() {
                    Some(k) if k.value() == 1 => a,
                    Some(_) => b,
                    None if a == b => a,
                    None => Expr::ite(c, a, b).expect("width already checked"),
                }
            }
        };
        memo.insert(e.id(), out);
    }
    memo.remove(&expr.id()).expect("root visited")
}

fn konst(width: u32, value: u64) -> Expr {
    Expr::constant(BitVector::from_raw(width, value))
}

fn is_zero(e: &Expr) -> bool {
    e.as_const().is_some_and(|c| c.value() == 0)
}

fn is_one(e: &Expr) -> bool {
    e.as_const().is_some_and(|c| c.value() == 1)
}

fn is_ones(e: &Expr) -> bool {
    e.as_const().is_some_and(|c| c.value() == mask(c.width()))
}

fn simplify_not(a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        return konst(a.width(), !c.value());
    }
    if let Node::Not(inner) = a.node() {
        return inner.clone();
    }
    Expr::not(a)
}

fn simplify_binary(op: BinOp, a: Expr, b: Expr) -> Expr {
    let w = a.width();
    if let (Some(ca), Some(cb)) = (a.as_const(), b.as_const()) {
        return konst(w, apply_binary(op, w, ca.value(), cb.value()));
    }
    let (a, b) = if op.is_commutative() && a.as_const().is_some() {
        (b, a)
    } else {
        (a, b)
    };
    let zero = || konst(w, 0);
    match op {
        BinOp::Add if is_zero(&b) => a,
        BinOp::Sub if is_zero(&b) => a,
        BinOp::Sub if a == b => zero(),
        BinOp::Mul if is_zero(&b) => zero(),
        BinOp::Mul if is_one(&b) => a,
        BinOp::And if is_zero(&b) => zero(),
        BinOp::And if is_ones(&b) || a == b => a,
        BinOp::Or if is_zero(&b) || a == b => a,
        BinOp::Or if is_ones(&b) => b,
        BinOp::Xor if is_zero(&b) => a,
        BinOp::Xor if a == b => zero(),
        BinOp::Xor if is_ones(&b) => simplify_not(a),
        BinOp::Shl | BinOp::Lshr | BinOp::Ashr => simplify_shift(op, a, b),
        _ => Expr::binary(op, a, b).expect("width already checked"),
    }
}

fn simplify_shift(op: BinOp, a: Expr, b: Expr) -> Expr {
    let w = a.width();
    if is_zero(&a) {
        return a;
    }
    if let Some(amount) = b.as_const() {
        if amount.value() == 0 {
            return a;
        }
        if amount.value() >= w as u64 {
            return match op {
                BinOp::Ashr => {
                    Expr::binary(op, a, konst(w, (w - 1) as u64)).expect("width already checked")
                }
                _ => konst(w, 0),
            };
        }
    }
    Expr::binary(op, a, b).expect("width already checked")
}

fn simplify_compare(op: CmpOp, a: Expr, b: Expr) -> Expr {
    if let (Some(ca), Some(cb)) = (a.as_const(), b.as_const()) {
        return konst(1, apply_compare(op, a.width(), ca.value(), cb.value()));
    }
    if a == b {
        let v = matches!(op, CmpOp::Eq | CmpOp::Ule | CmpOp::Sle);
        return konst(1, v as u64);
    }
    Expr::compare(op, a, b).expect("width already checked")
}

fn simplify_extract(hi: u32, lo: u32, arg: Expr) -> Expr {
    let w = hi - lo + 1;
    if lo == 0 && hi + 1 == arg.width() {
        return arg;
    }
    if let Some(c) = arg.as_const() {
        return konst(w, c.value() >> lo);
    }
    match arg.node() {
        Node::Extract {
            lo: inner_lo,
            arg: inner,
            ..
        } => {
            return simplify_extract(hi + inner_lo, lo + inner_lo, inner.clone());
        }
        Node::ZeroExt { arg: inner, .. } => {
            let iw = inner.width();
            if hi < iw {
                return simplify_extract(hi, lo, inner.clone());
            }
            if lo >= iw {
                return konst(w, 0);
            }
        }
        _ => {}
    }
    Expr::extract(hi, lo, arg).expect("width already checked")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bv::expr::Var;

    fn x8() -> Expr {
        Expr::var(Var::secret("x", 8).unwrap())
    }

    fn c8(v: u64) -> Expr {
        Expr::const_u64(8, v).unwrap()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(simplify(&x8().bvnot().bvnot()), x8());
        assert_eq!(simplify(&c8(3).add(&c8(4))), c8(7));
        assert_eq!(simplify(&x8().xor(&x8())), c8(0));
    }

    #[test]
    fn absorption_rules() {
        assert_eq!(simplify(&x8().and(&c8(0))), c8(0));
        assert_eq!(simplify(&c8(0xff).and(&x8())), x8());
        assert_eq!(simplify(&x8().or(&c8(0xff))), c8(0xff));
        assert_eq!(simplify(&x8().sub(&x8())), c8(0));
        assert_eq!(simplify(&x8().xor(&c8(0xff))), x8().bvnot());
        let sh = Expr::binary(BinOp::Shl, x8(), c8(8)).unwrap();
        assert_eq!(simplify(&sh), c8(0));
    }

    #[test]
    fn constant_moves_right() {
        let e = simplify(&c8(5).xor(&x8()));
        assert_eq!(e, x8().xor(&c8(5)));
    }

    #[test]
    fn taint_drops_when_secret_cancels() {
        let public = Expr::var(Var::public("p", 8).unwrap());
        let e = simplify(&x8().xor(&x8()).add(&public));
        assert!(!e.is_secret());
    }

    #[test]
    fn extract_of_zero_extension() {
        let z = Expr::zero_ext(8, x8()).unwrap();
        assert_eq!(simplify(&Expr::extract(7, 0, z.clone()).unwrap()), x8());
        assert_eq!(simplify(&Expr::extract(15, 8, z).unwrap()), c8(0));
    }
}
