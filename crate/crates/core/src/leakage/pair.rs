use crate::bv::{rename_fresh, Expr, Var};
use crate::solver::Formula;

/// Suffix appended to every variable of the second copy.
pub const PRIME: &str = "'";

/// Two copies of an expression that agree on public inputs.
#[derive(Clone, Debug)]
pub struct SelfComposedPair {
    pub left: Expr,
    pub right: Expr,
    /// `p == p'` for every public input `p`.
    pub pins: Vec<Expr>,
    pub publics: Vec<Var>,
    pub secrets: Vec<Var>,
}

pub fn self_compose(expr: &Expr) -> SelfComposedPair {
    let right = rename_fresh(expr, PRIME);
    let (secrets, publics): (Vec<Var>, Vec<Var>) =
        expr.vars().into_iter().partition(Var::is_secret);
    let pins = publics
        .iter()
        .map(|p| Expr::var(p.clone()).eq_expr(&Expr::var(primed(p))))
        .collect();
    SelfComposedPair {
        left: expr.clone(),
        right,
        pins,
        publics,
        secrets,
    }
}

pub(crate) fn primed(v: &Var) -> Var {
    v.renamed(&format!("{}{PRIME}", v.name()))
}

impl SelfComposedPair {
    /// Pins plus `r != r'`.
    pub fn formula(&self) -> Formula {
        let mut a = self.pins.clone();
        a.push(self.left.ne_expr(&self.right));
        Formula::new(a)
    }

    /// Preference order for witness minimization: the left copy's inputs,
    /// then the right copy's secrets.
    pub fn witness_order(&self) -> Vec<Var> {
        let mut order: Vec<Var> = self.left.vars().into_iter().collect();
        order.extend(self.secrets.iter().map(primed));
        order
    }
}
