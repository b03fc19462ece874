use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use varisat::{ExtendFormula, Lit, Solver};

use super::{Formula, SatResult, Session, SolverError, Stats};
use crate::bv::{BinOp, BitVector, CmpOp, Env, Expr, Node, Var};

/// Tseitin encoding of bitvector expressions into CNF. Bits are stored
/// least significant first.
struct Encoder {
    solver: Solver<'static>,
    t: Lit,
    cache: HashMap<usize, (Expr, Vec<Lit>)>,
    vars: BTreeMap<Var, Vec<Lit>>,
}

impl Encoder {
    fn new() -> Self {
        let mut solver = Solver::new();
        let t = solver.new_lit();
        solver.add_clause(&[t]);
        Encoder {
            solver,
            t,
            cache: HashMap::new(),
            vars: BTreeMap::new(),
        }
    }

    fn constant(&self, b: bool) -> Lit {
        if b {
            self.t
        } else {
            !self.t
        }
    }

    fn known(&self, l: Lit) -> Option<bool> {
        if l == self.t {
            Some(true)
        } else if l == !self.t {
            Some(false)
        } else {
            None
        }
    }

    fn and(&mut self, a: Lit, b: Lit) -> Lit {
        match (self.known(a), self.known(b)) {
            (Some(false), _) | (_, Some(false)) => return !self.t,
            (Some(true), _) => return b,
            (_, Some(true)) => return a,
            _ => {}
        }
        if a == b {
            return a;
        }
        if a == !b {
            return !self.t;
        }
        let g = self.solver.new_lit();
        self.solver.add_clause(&[!g, a]);
        self.solver.add_clause(&[!g, b]);
        self.solver.add_clause(&[g, !a, !b]);
        g
    }

    fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        match (self.known(a), self.known(b)) {
            (Some(x), _) => return if x { !b } else { b },
            (_, Some(y)) => return if y { !a } else { a },
            _ => {}
        }
        if a == b {
            return !self.t;
        }
        if a == !b {
            return self.t;
        }
        let g = self.solver.new_lit();
        self.solver.add_clause(&[!g, a, b]);
        self.solver.add_clause(&[!g, !a, !b]);
        self.solver.add_clause(&[g, !a, b]);
        self.solver.add_clause(&[g, a, !b]);
        g
    }

    /// `c ? a : b`
    fn mux(&mut self, c: Lit, a: Lit, b: Lit) -> Lit {
        match self.known(c) {
            Some(true) => return a,
            Some(false) => return b,
            None => {}
        }
        if a == b {
            return a;
        }
        let g = self.solver.new_lit();
        self.solver.add_clause(&[!c, !a, g]);
        self.solver.add_clause(&[!c, a, !g]);
        self.solver.add_clause(&[c, !b, g]);
        self.solver.add_clause(&[c, b, !g]);
        g
    }

    fn add_bits(&mut self, a: &[Lit], b: &[Lit], mut carry: Lit) -> (Vec<Lit>, Lit) {
        let mut out = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            let p = self.xor(x, y);
            out.push(self.xor(p, carry));
            let g = self.and(x, y);
            let h = self.and(p, carry);
            carry = self.or(g, h);
        }
        (out, carry)
    }

    /// `a < b` unsigned: no carry out of `a + !b + 1`.
    fn ult(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let nb: Vec<Lit> = b.iter().map(|l| !*l).collect();
        let (_, carry) = self.add_bits(a, &nb, self.t);
        !carry
    }

    fn eq(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let mut acc = self.t;
        for (&x, &y) in a.iter().zip(b) {
            let d = self.xor(x, y);
            acc = self.and(acc, !d);
        }
        acc
    }

    fn flip_msb(bits: &[Lit]) -> Vec<Lit> {
        let mut v = bits.to_vec();
        let last = v.len() - 1;
        v[last] = !v[last];
        v
    }

    fn shift(&mut self, op: BinOp, a: &[Lit], amount: &[Lit]) -> Vec<Lit> {
        let w = a.len();
        let fill = match op {
            BinOp::Ashr => a[w - 1],
            _ => !self.t,
        };
        let mut cur = a.to_vec();
        let mut overflow = !self.t;
        for (k, &bit) in amount.iter().enumerate() {
            let step = 1usize.checked_shl(k as u32).filter(|s| *s < w);
            let Some(step) = step else {
                overflow = self.or(overflow, bit);
                continue;
            };
            let mut next = Vec::with_capacity(w);
            for i in 0..w {
                let shifted = match op {
                    BinOp::Shl => {
                        if i >= step {
                            cur[i - step]
                        } else {
                            fill
                        }
                    }
                    _ => {
                        if i + step < w {
                            cur[i + step]
                        } else {
                            fill
                        }
                    }
                };
                next.push(self.mux(bit, shifted, cur[i]));
            }
            cur = next;
        }
        cur.into_iter()
            .map(|l| self.mux(overflow, fill, l))
            .collect()
    }

    fn mul(&mut self, a: &[Lit], b: &[Lit]) -> Vec<Lit> {
        let w = a.len();
        let mut acc = vec![!self.t; w];
        for (i, &bi) in b.iter().enumerate() {
            let mut partial = vec![!self.t; w];
            for j in i..w {
                partial[j] = self.and(a[j - i], bi);
            }
            acc = self.add_bits(&acc, &partial, !self.t).0;
        }
        acc
    }

    fn encode(&mut self, root: &Expr) -> Vec<Lit> {
        for e in Expr::post_order(&[root]) {
            if self.cache.contains_key(&e.id()) {
                continue;
            }
            let bits = self.encode_node(&e);
            self.cache.insert(e.id(), (e.clone(), bits));
        }
        self.cache[&root.id()].1.clone()
    }

    fn bits(&self, e: &Expr) -> Vec<Lit> {
        self.cache[&e.id()].1.clone()
    }

    fn encode_node(&mut self, e: &Expr) -> Vec<Lit> {
        match e.node() {
            Node::Var(v) => {
                if let Some(bits) = self.vars.get(v) {
                    return bits.clone();
                }
                let bits: Vec<Lit> = (0..v.width()).map(|_| self.solver.new_lit()).collect();
                self.vars.insert(v.clone(), bits.clone());
                bits
            }
            Node::Const(c) => (0..c.width()).map(|i| self.constant(c.bit(i))).collect(),
            Node::Not(a) => self.bits(a).into_iter().map(|l| !l).collect(),
            Node::Binary(op, a, b) => {
                let (a, b) = (self.bits(a), self.bits(b));
                match op {
                    BinOp::Add => self.add_bits(&a, &b, !self.t).0,
                    BinOp::Sub => {
                        let nb: Vec<Lit> = b.iter().map(|l| !*l).collect();
                        self.add_bits(&a, &nb, self.t).0
                    }
                    BinOp::Mul => self.mul(&a, &b),
                    BinOp::And => a.iter().zip(&b).map(|(x, y)| self.and(*x, *y)).collect(),
                    BinOp::Or => a.iter().zip(&b).map(|(x, y)| self.or(*x, *y)).collect(),
                    BinOp::Xor => a.iter().zip(&b).map(|(x, y)| self.xor(*x, *y)).collect(),
                    BinOp::Shl | BinOp::Lshr | BinOp::Ashr => self.shift(*op, &a, &b),
                }
            }
            Node::Compare(op, a, b) => {
                let (a, b) = (self.bits(a), self.bits(b));
                let l = match op {
                    CmpOp::Eq => self.eq(&a, &b),
                    CmpOp::Ne => !self.eq(&a, &b),
                    CmpOp::Ult => self.ult(&a, &b),
                    CmpOp::Ule => !self.ult(&b, &a),
                    CmpOp::Slt => self.ult(&Self::flip_msb(&a), &Self::flip_msb(&b)),
                    CmpOp::Sle => !self.ult(&Self::flip_msb(&b), &Self::flip_msb(&a)),
                };
                vec![l]
            }
            Node::Extract { hi, lo, arg } => self.bits(arg)[*lo as usize..=*hi as usize].to_vec(),
            Node::ZeroExt { by, arg } => {
                let mut v = self.bits(arg);
                v.extend(std::iter::repeat_n(!self.t, *by as usize));
                v
            }
            Node::SignExt { by, arg } => {
                let mut v = self.bits(arg);
                let msb = *v.last().expect("nonempty");
                v.extend(std::iter::repeat_n(msb, *by as usize));
                v
            }
            Node::Concat(hi, lo) => {
                let mut v = self.bits(lo);
                v.extend(self.bits(hi));
                v
            }
            Node::Ite(c, a, b) => {
                let c = self.bits(c)[0];
                let (a, b) = (self.bits(a), self.bits(b));
                a.iter().zip(&b).map(|(x, y)| self.mux(c, *x, *y)).collect()
            }
        }
    }

    fn model(&self) -> Option<Env> {
        let assignment = self.solver.model()?;
        let mut truth = vec![false; assignment.len() + 1];
        for l in &assignment {
            let i = l.var().index();
            if i >= truth.len() {
                truth.resize(i + 1, false);
            }
            truth[i] = l.is_positive();
        }
        let value = |l: Lit| truth.get(l.var().index()).copied().unwrap_or(false) ^ l.is_negative();
        let mut env = Env::new();
        for (var, bits) in &self.vars {
            let mut v = 0u64;
            for (i, &l) in bits.iter().enumerate() {
                if value(l) {
                    v |= 1 << i;
                }
            }
            env.insert(
                var.name().to_string(),
                BitVector::new(var.width(), v).expect("fits"),
            );
        }
        Some(env)
    }
}

type Reply = Result<SatResult, SolverError>;

struct Worker {
    tx: Sender<Vec<Expr>>,
    rx: Receiver<Reply>,
}

fn spawn_worker(formula: Formula) -> Worker {
    let (req_tx, req_rx) = mpsc::channel::<Vec<Expr>>();
    let (rep_tx, rep_rx) = mpsc::channel::<Reply>();
    thread::spawn(move || {
        let mut enc = Encoder::new();
        for a in &formula.assertions {
            let l = enc.encode(a)[0];
            enc.solver.add_clause(&[l]);
        }
        while let Ok(extra) = req_rx.recv() {
            let lits: Vec<Lit> = extra.iter().map(|e| enc.encode(e)[0]).collect();
            enc.solver.assume(&lits);
            let reply = match enc.solver.solve() {
                Ok(true) => enc
                    .model()
                    .map(SatResult::Sat)
                    .ok_or_else(|| SolverError::Process("SAT without a model".into())),
                Ok(false) => Ok(SatResult::Unsat),
                Err(e) => Err(SolverError::Process(e.to_string())),
            };
            if rep_tx.send(reply).is_err() {
                break;
            }
        }
    });
    Worker {
        tx: req_tx,
        rx: rep_rx,
    }
}

/// In-process backend: bit-blasts to CNF and solves with an embedded SAT
/// solver. Extra constraints are passed as assumptions, so learned clauses
/// carry over between queries. A query that exceeds the timeout abandons the
/// worker; the next query starts a fresh one.
pub struct BitblastSession {
    formula: Formula,
    timeout: Duration,
    worker: Option<Worker>,
    stats: Stats,
}

impl BitblastSession {
    pub fn new(formula: Formula, timeout: Duration) -> Self {
        BitblastSession {
            formula,
            timeout,
            worker: None,
            stats: Stats::default(),
        }
    }
}

impl Session for BitblastSession {
    fn formula(&self) -> &Formula {
        &self.formula
    }

    fn check_raw(&mut self, extra: &[Expr]) -> Result<SatResult, SolverError> {
        let formula = &self.formula;
        let worker = self
            .worker
            .get_or_insert_with(|| spawn_worker(formula.clone()));
        worker
            .tx
            .send(extra.to_vec())
            .map_err(|_| SolverError::Process("bit-blasting worker exited".into()))?;
        match worker.rx.recv_timeout(self.timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.worker = None;
                Ok(SatResult::Unknown)
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.worker = None;
                Err(SolverError::Process("bit-blasting worker panicked".into()))
            }
        }
    }

    fn stats_mut(&mut self) -> &mut Stats {
        &mut self.stats
    }

    fn stats(&self) -> Stats {
        self.stats
    }
}
