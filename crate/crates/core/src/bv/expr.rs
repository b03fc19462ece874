use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::value::{check_width, BitVector};
use super::BvError;

/// Information-flow label of an input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taint {
    Public,
    Secret,
}

/// A free symbolic input. The signedness flag is only a hint for rendering;
/// operations decide how bits are interpreted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    name: Arc<str>,
    width: u32,
    signed: bool,
    taint: Taint,
}

impl Var {
    pub fn new(name: &str, width: u32, signed: bool, taint: Taint) -> Result<Self, BvError> {
        check_width(width)?;
        Ok(Self {
            name: name.into(),
            width,
            signed,
            taint,
        })
    }

    pub fn secret(name: &str, width: u32) -> Result<Self, BvError> {
        Self::new(name, width, false, Taint::Secret)
    }

    pub fn public(name: &str, width: u32) -> Result<Self, BvError> {
        Self::new(name, width, false, Taint::Public)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn taint(&self) -> Taint {
        self.taint
    }

    pub fn is_secret(&self) -> bool {
        self.taint == Taint::Secret
    }

    /// Same variable under a different name.
    pub fn renamed(&self, name: &str) -> Var {
        Var {
            name: name.into(),
            ..self.clone()
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Ashr,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Lshr => ">>",
            BinOp::Ashr => ">>s",
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(
            self,
            BinOp::Add | BinOp::Mul | BinOp::And | BinOp::Or | BinOp::Xor
        )
    }
}

/// Comparisons produce a 1-bit vector (1 = true).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Ult,
    Ule,
    Slt,
    Sle,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ult => "<u",
            CmpOp::Ule => "<=u",
            CmpOp::Slt => "<s",
            CmpOp::Sle => "<=s",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Var(Var),
    Const(BitVector),
    Not(Expr),
    Binary(BinOp, Expr, Expr),
    Compare(CmpOp, Expr, Expr),
    Extract { hi: u32, lo: u32, arg: Expr },
    ZeroExt { by: u32, arg: Expr },
    SignExt { by: u32, arg: Expr },
    Concat(Expr, Expr),
    Ite(Expr, Expr, Expr),
}

struct Inner {
    node: Node,
    width: u32,
    secret: bool,
    hash: u64,
}

/// Immutable, reference-counted bitvector expression. Cloning is cheap and
/// shared sub-terms stay shared, so traversals that care about size memoize
/// on [`Expr::id`].
#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.width == other.0.width
                && self.0.node == other.0.node)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl Expr {
    fn make(node: Node, width: u32) -> Expr {
        let secret = match &node {
            Node::Var(v) => v.is_secret(),
            Node::Const(_) => false,
            Node::Not(a)
            | Node::Extract { arg: a, .. }
            | Node::ZeroExt { arg: a, .. }
            | Node::SignExt { arg: a, .. } => a.is_secret(),
            Node::Binary(_, a, b) | Node::Compare(_, a, b) | Node::Concat(a, b) => {
                a.is_secret() || b.is_secret()
            }
            Node::Ite(c, a, b) => c.is_secret() || a.is_secret() || b.is_secret(),
        };
        let mut h = DefaultHasher::new();
        width.hash(&mut h);
        node.hash(&mut h);
        let hash = h.finish();
        Expr(Arc::new(Inner {
            node,
            width,
            secret,
            hash,
        }))
    }

    pub fn var(v: Var) -> Expr {
        let w = v.width();
        Self::make(Node::Var(v), w)
    }

    pub fn constant(bv: BitVector) -> Expr {
        Self::make(Node::Const(bv), bv.width())
    }

    pub fn const_u64(width: u32, value: u64) -> Result<Expr, BvError> {
        Ok(Self::constant(BitVector::new(width, value)?))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(arg: Expr) -> Expr {
        let w = arg.width();
        Self::make(Node::Not(arg), w)
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Result<Expr, BvError> {
        if a.width() != b.width() {
            return Err(BvError::WidthMismatch {
                op: op.symbol(),
                left: a.width(),
                right: b.width(),
            });
        }
        let w = a.width();
        Ok(Self::make(Node::Binary(op, a, b), w))
    }

    pub fn compare(op: CmpOp, a: Expr, b: Expr) -> Result<Expr, BvError> {
        if a.width() != b.width() {
            return Err(BvError::WidthMismatch {
                op: op.symbol(),
                left: a.width(),
                right: b.width(),
            });
        }
        Ok(Self::make(Node::Compare(op, a, b), 1))
    }

    pub fn extract(hi: u32, lo: u32, arg: Expr) -> Result<Expr, BvError> {
        if lo > hi || hi >= arg.width() {
            return Err(BvError::BadExtract {
                hi,
                lo,
                width: arg.width(),
            });
        }
        Ok(Self::make(Node::Extract { hi, lo, arg }, hi - lo + 1))
    }

    pub fn zero_ext(by: u32, arg: Expr) -> Result<Expr, BvError> {
        let w = arg.width() + by;
        check_width(w)?;
        Ok(Self::make(Node::ZeroExt { by, arg }, w))
    }

    pub fn sign_ext(by: u32, arg: Expr) -> Result<Expr, BvError> {
        let w = arg.width() + by;
        check_width(w)?;
        Ok(Self::make(Node::SignExt { by, arg }, w))
    }

    pub fn concat(hi: Expr, lo: Expr) -> Result<Expr, BvError> {
        let w = hi.width() + lo.width();
        check_width(w)?;
        Ok(Self::make(Node::Concat(hi, lo), w))
    }

    pub fn ite(cond: Expr, then: Expr, otherwise: Expr) -> Result<Expr, BvError> {
        if cond.width() != 1 {
            return Err(BvError::WidthMismatch {
                op: "ite-cond",
                left: cond.width(),
                right: 1,
            });
        }
        if then.width() != otherwise.width() {
            return Err(BvError::WidthMismatch {
                op: "ite",
                left: then.width(),
                right: otherwise.width(),
            });
        }
        let w = then.width();
        Ok(Self::make(Node::Ite(cond, then, otherwise), w))
    }

    /// Rebuilds `self`'s node with new children, re-checking widths.
    pub(crate) fn with_node(node: Node) -> Result<Expr, BvError> {
        match node {
            Node::Var(v) => Ok(Self::var(v)),
            Node::Const(c) => Ok(Self::constant(c)),
            Node::Not(a) => Ok(Self::not(a)),
            Node::Binary(op, a, b) => Self::binary(op, a, b),
            Node::Compare(op, a, b) => Self::compare(op, a, b),
            Node::Extract { hi, lo, arg } => Self::extract(hi, lo, arg),
            Node::ZeroExt { by, arg } => Self::zero_ext(by, arg),
            Node::SignExt { by, arg } => Self::sign_ext(by, arg),
            Node::Concat(a, b) => Self::concat(a, b),
            Node::Ite(c, a, b) => Self::ite(c, a, b),
        }
    }

    #[inline]
    pub fn node(&self) -> &Node {
        &self.0.node
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.0.width
    }

    /// True iff a secret variable occurs in the expression.
    #[inline]
    pub fn is_secret(&self) -> bool {
        self.0.secret
    }

    /// Identity of this shared node (stable while the expression is alive).
    #[inline]
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn as_const(&self) -> Option<BitVector> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self.node() {
            Node::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Var(_) | Node::Const(_) => vec![],
            Node::Not(a)
            | Node::Extract { arg: a, .. }
            | Node::ZeroExt { arg: a, .. }
            | Node::SignExt { arg: a, .. } => vec![a],
            Node::Binary(_, a, b) | Node::Compare(_, a, b) | Node::Concat(a, b) => vec![a, b],
            Node::Ite(c, a, b) => vec![c, a, b],
        }
    }

    /// Distinct sub-expressions in post-order (children before parents).
    pub fn post_order(roots: &[&Expr]) -> Vec<Expr> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut stack: Vec<(Expr, bool)> =
            roots.iter().rev().map(|e| ((*e).clone(), false)).collect();
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                out.push(e);
                continue;
            }
            if !seen.insert(e.id()) {
                continue;
            }
            stack.push((e.clone(), true));
            for c in e.children().into_iter().rev() {
                if !seen.contains(&c.id()) {
                    stack.push((c.clone(), false));
                }
            }
        }
        out
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        Self::vars_of(&[self])
    }

    pub fn vars_of(roots: &[&Expr]) -> BTreeSet<Var> {
        Self::post_order(roots)
            .into_iter()
            .filter_map(|e| e.as_var().cloned())
            .collect()
    }

    /// Applies `f` to every variable occurrence, preserving sharing.
    pub fn map_vars(&self, f: &mut dyn FnMut(&Var) -> Expr) -> Result<Expr, BvError> {
        let mut memo: HashMap<usize, Expr> = HashMap::new();
        for e in Self::post_order(&[self]) {
            let rebuilt = match e.node() {
                Node::Var(v) => f(v),
                Node::Const(_) => e.clone(),
                node => {
                    let get = |x: &Expr| memo[&x.id()].clone();
                    let new_node = match node {
                        Node::Not(a) => Node::Not(get(a)),
                        Node::Binary(op, a, b) => Node::Binary(*op, get(a), get(b)),
                        Node::Compare(op, a, b) => Node::Compare(*op, get(a), get(b)),
                        Node::Extract { hi, lo, arg } => Node::Extract {
                            hi: *hi,
                            lo: *lo,
                            arg: get(arg),
                        },
                        Node::ZeroExt { by, arg } => Node::ZeroExt {
                            by: *by,
                            arg: get(arg),
                        },
                        Node::SignExt { by, arg } => Node::SignExt {
                            by: *by,
                            arg: get(arg),
                        },
                        Node::Concat(a, b) => Node::Concat(get(a), get(b)),
                        Node::Ite(c, a, b) => Node::Ite(get(c), get(a), get(b)),
                        Node::Var(_) | Node::Const(_) => unreachable!(),
                    };
                    Self::with_node(new_node)?
                }
            };
            memo.insert(e.id(), rebuilt);
        }
        Ok(memo.remove(&self.id()).expect("root visited"))
    }

    /// Replaces variables according to `map`; unmapped variables stay.
    pub fn substitute(&self, map: &HashMap<Var, Expr>) -> Result<Expr, BvError> {
        self.map_vars(&mut |v| map.get(v).cloned().unwrap_or_else(|| Expr::var(v.clone())))
    }

    /// Number of distinct nodes.
    pub fn dag_size(&self) -> usize {
        Self::post_order(&[self]).len()
    }

    // Infallible helpers for call sites whose widths are known to agree.

    pub fn add(&self, rhs: &Expr) -> Expr {
        Self::binary(BinOp::Add, self.clone(), rhs.clone()).expect("add: width mismatch")
    }

    pub fn sub(&self, rhs: &Expr) -> Expr {
        Self::binary(BinOp::Sub, self.clone(), rhs.clone()).expect("sub: width mismatch")
    }

    pub fn and(&self, rhs: &Expr) -> Expr {
        Self::binary(BinOp::And, self.clone(), rhs.clone()).expect("and: width mismatch")
    }

    pub fn or(&self, rhs: &Expr) -> Expr {
        Self::binary(BinOp::Or, self.clone(), rhs.clone()).expect("or: width mismatch")
    }

    pub fn xor(&self, rhs: &Expr) -> Expr {
        Self::binary(BinOp::Xor, self.clone(), rhs.clone()).expect("xor: width mismatch")
    }

    pub fn bvnot(&self) -> Expr {
        Self::not(self.clone())
    }

    pub fn eq_expr(&self, rhs: &Expr) -> Expr {
        Self::compare(CmpOp::Eq, self.clone(), rhs.clone()).expect("eq: width mismatch")
    }

    pub fn ne_expr(&self, rhs: &Expr) -> Expr {
        Self::compare(CmpOp::Ne, self.clone(), rhs.clone()).expect("ne: width mismatch")
    }

    pub fn ule(&self, rhs: &Expr) -> Expr {
        Self::compare(CmpOp::Ule, self.clone(), rhs.clone()).expect("ule: width mismatch")
    }

    pub fn bit(&self, index: u32) -> Expr {
        Self::extract(index, index, self.clone()).expect("bit index out of range")
    }

    pub fn zext_to(&self, width: u32) -> Expr {
        if width == self.width() {
            return self.clone();
        }
        Self::zero_ext(width - self.width(), self.clone()).expect("zext: bad width")
    }
}

/// Returns `expr` with every variable renamed to `name + suffix`; taint and
/// widths are preserved.
pub fn rename_fresh(expr: &Expr, suffix: &str) -> Expr {
    assert!(!suffix.is_empty(), "rename suffix must be nonempty");
    expr.map_vars(&mut |v| Expr::var(v.renamed(&format!("{}{}", v.name(), suffix))))
        .expect("renaming preserves widths")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Var(v) => write!(f, "{}", v.name()),
            Node::Const(c) => {
                if c.value() < 10 {
                    write!(f, "{}", c.value())
                } else {
                    write!(f, "{:#x}", c.value())
                }
            }
            Node::Not(a) => write!(f, "~{a}"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Compare(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Extract { hi, lo, arg } => write!(f, "{arg}[{hi}:{lo}]"),
            Node::ZeroExt { by, arg } => write!(f, "zext{by}({arg})"),
            Node::SignExt { by, arg } => write!(f, "sext{by}({arg})"),
            Node::Concat(a, b) => write!(f, "({a} ++ {b})"),
            Node::Ite(c, a, b) => write!(f, "ite({c}, {a}, {b})"),
        }
    }
}
