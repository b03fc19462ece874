use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use super::{
    Direction, Formula, Objective, OptResult, OptStatus, SatResult, Session, SolverConfig,
    SolverError, Stats,
};
use crate::bv::{BitVector, CmpOp, Env, Expr, Node, Tape, Var};

/// Exhaustive enumeration over all free input bits.
///
/// Assertions of the form `a = b` between two variables are substituted away
/// first, so pinned copies do not count against the cap. Enumeration visits
/// assignments in lexicographic order, so the first model found is the
/// smallest one.
pub struct BruteForceSession {
    formula: Formula,
    cap: u32,
    timeout: Duration,
    stats: Stats,
}

impl BruteForceSession {
    pub fn new(formula: Formula, cfg: &SolverConfig) -> Result<Self, SolverError> {
        let s = BruteForceSession {
            formula,
            cap: cfg.oracle_cap,
            timeout: cfg.timeout,
            stats: Stats::default(),
        };
        s.enumerator(&[], None, &[])?;
        Ok(s)
    }

    fn enumerator(
        &self,
        extra: &[Expr],
        objective: Option<&Expr>,
        order: &[Var],
    ) -> Result<Enumerator, SolverError> {
        let assertions: Vec<Expr> = self
            .formula
            .assertions
            .iter()
            .chain(extra)
            .cloned()
            .collect();
        Enumerator::new(&assertions, objective, order, self.cap)
    }

    fn deadline(&self) -> Option<Instant> {
        Instant::now().checked_add(self.timeout)
    }
}

/// Union of variables equated by `a = b` assertions; maps each to a
/// representative.
fn pin_map(assertions: &[Expr]) -> HashMap<Var, Var> {
    let mut rep: HashMap<Var, Var> = HashMap::new();
    fn find(rep: &HashMap<Var, Var>, v: &Var) -> Var {
        let mut cur = v.clone();
        while let Some(next) = rep.get(&cur) {
            cur = next.clone();
        }
        cur
    }
    for a in assertions {
        if let Node::Compare(CmpOp::Eq, l, r) = a.node() {
            if let (Some(x), Some(y)) = (l.as_var(), r.as_var()) {
                let (rx, ry) = (find(&rep, x), find(&rep, y));
                if rx != ry {
                    let (keep, drop) = if rx < ry { (rx, ry) } else { (ry, rx) };
                    rep.insert(drop, keep);
                }
            }
        }
    }
    let keys: Vec<Var> = rep.keys().cloned().collect();
    keys.into_iter()
        .map(|k| {
            let r = find(&rep, &k);
            (k, r)
        })
        .collect()
}

struct Enumerator {
    tape: Tape,
    /// Free variables, most significant first.
    free: Vec<Var>,
    pinned: Vec<(Var, usize)>,
    asserts: usize,
    has_objective: bool,
    bits: u32,
}

impl Enumerator {
    fn new(
        assertions: &[Expr],
        objective: Option<&Expr>,
        order: &[Var],
        cap: u32,
    ) -> Result<Self, SolverError> {
        let pins = pin_map(assertions);
        let subst: HashMap<Var, Expr> = pins
            .iter()
            .map(|(k, v)| (k.clone(), Expr::var(v.clone())))
            .collect();
        let mut roots: Vec<Expr> = Vec::with_capacity(assertions.len() + 1);
        for a in assertions {
            roots.push(a.substitute(&subst)?);
        }
        if let Some(o) = objective {
            roots.push(o.substitute(&subst)?);
        }
        let root_refs: Vec<&Expr> = roots.iter().collect();
        let all: BTreeSet<Var> = Expr::vars_of(&root_refs);

        let rank = |v: &Var| -> usize {
            order
                .iter()
                .position(|o| o == v || pins.get(o) == Some(v))
                .unwrap_or(usize::MAX)
        };
        let mut free: Vec<Var> = all.into_iter().collect();
        free.sort_by_key(|v| rank(v));
        let bits: u32 = free.iter().map(Var::width).sum();
        if bits > cap || bits >= 64 {
            return Err(SolverError::OracleInfeasible { bits, cap });
        }
        let index: HashMap<&Var, usize> = free.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let mut pinned: Vec<(Var, usize)> = Vec::new();
        for (k, r) in &pins {
            if let Some(&i) = index.get(r) {
                pinned.push((k.clone(), i));
            }
        }
        pinned.sort();
        let tape = Tape::compile_with_inputs(&root_refs, free.clone());
        Ok(Enumerator {
            tape,
            free,
            pinned,
            asserts: assertions.len(),
            has_objective: objective.is_some(),
            bits,
        })
    }

    fn model(&self, inputs: &[u64]) -> Env {
        let mut env = Env::new();
        for (v, x) in self.free.iter().zip(inputs) {
            env.insert(
                v.name().to_string(),
                BitVector::new(v.width(), *x).expect("masked"),
            );
        }
        for (v, i) in &self.pinned {
            env.insert(
                v.name().to_string(),
                BitVector::new(v.width(), inputs[*i]).expect("masked"),
            );
        }
        env
    }

    /// Visits satisfying assignments in order until `visit` returns true.
    /// Returns false if the deadline passed first.
    fn run(&self, deadline: Option<Instant>, mut visit: impl FnMut(&[u64], u64) -> bool) -> bool {
        let mut inputs = vec![0u64; self.free.len()];
        let mut slots = self.tape.scratch();
        let total: u64 = 1u64 << self.bits;
        for idx in 0..total {
            if idx & 0xffff == 0xffff {
                if let Some(d) = deadline {
                    if Instant::now() >= d {
                        return false;
                    }
                }
            }
            let mut rest = idx;
            for (slot, v) in inputs.iter_mut().zip(&self.free).rev() {
                let w = v.width();
                *slot = rest & crate::bv::mask(w);
                rest >>= w;
            }
            self.tape.run(&inputs, &mut slots);
            if (0..self.asserts).all(|i| self.tape.output(&slots, i) == 1) {
                let obj = if self.has_objective {
                    self.tape.output(&slots, self.asserts)
                } else {
                    0
                };
                if visit(&inputs, obj) {
                    return true;
                }
            }
        }
        true
    }
}

impl Session for BruteForceSession {
    fn formula(&self) -> &Formula {
        &self.formula
    }

    fn check_raw(&mut self, extra: &[Expr]) -> Result<SatResult, SolverError> {
        let e = self.enumerator(extra, None, &[])?;
        let mut found = None;
        let done = e.run(self.deadline(), |inputs, _| {
            found = Some(e.model(inputs));
            true
        });
        Ok(match found {
            Some(m) => SatResult::Sat(m),
            None if done => SatResult::Unsat,
            None => SatResult::Unknown,
        })
    }

    fn stats_mut(&mut self) -> &mut Stats {
        &mut self.stats
    }

    fn stats(&self) -> Stats {
        self.stats
    }

    /// One exhaustive pass; ties go to the smallest assignment.
    fn optimize(&mut self, obj: &Objective) -> Result<OptResult, SolverError> {
        self.stats.queries += 1;
        let e = self.enumerator(&[], Some(&obj.expr), &[])?;
        let target = match obj.direction {
            Direction::Maximize => obj.max,
            Direction::Minimize => 0,
        };
        let mut best: Option<(u64, Vec<u64>)> = None;
        let done = e.run(self.deadline(), |inputs, v| {
            let better = match (&best, obj.direction) {
                (None, _) => true,
                (Some((b, _)), Direction::Maximize) => v > *b,
                (Some((b, _)), Direction::Minimize) => v < *b,
            };
            if better {
                best = Some((v, inputs.to_vec()));
            }
            v == target
        });
        if !done {
            self.stats.timeouts += 1;
        }
        Ok(match best {
            None if done => OptResult {
                status: OptStatus::Unsat,
                value: None,
                model: None,
            },
            None => OptResult {
                status: OptStatus::Timeout,
                value: None,
                model: None,
            },
            Some((v, inputs)) => OptResult {
                status: if done {
                    OptStatus::Optimal
                } else {
                    OptStatus::Suboptimal
                },
                value: Some(v),
                model: Some(e.model(&inputs)),
            },
        })
    }

    fn minimize_inputs(
        &mut self,
        extra: &[Expr],
        order: &[Var],
    ) -> Result<Option<Env>, SolverError> {
        self.stats.queries += 1;
        let e = self.enumerator(extra, None, order)?;
        let mut found = None;
        e.run(self.deadline(), |inputs, _| {
            found = Some(e.model(inputs));
            true
        });
        Ok(found)
    }
}
