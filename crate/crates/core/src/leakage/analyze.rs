use std::collections::BTreeSet;

use crate::bv::{eval, BitVector, Env, Expr};
use crate::solver::{
    encode_diff_hw, encode_hamming_distance, encode_popcount, open_session, Formula, Objective,
    OptResult, OptStatus, SatResult, Session, SolverError,
};
use crate::symexec::StepRecord;

use super::entropy::entropy_from_classes;
use super::pair::{primed, self_compose, SelfComposedPair};
use super::{AnalysisConfig, LeakModelKind, MinMax, PoiRecord, Reason, Status, Witness, Witnesses};

/// Destination values found by blocking enumeration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    /// Sorted ascending.
    pub values: Vec<BitVector>,
    /// True when the enumeration ended with an unsatisfiable probe.
    pub complete: bool,
    pub timed_out: bool,
}

/// Enumerates values of `expr` under the session's formula, stopping after
/// `limit + 1` distinct values. A complete domain costs `|domain| + 1` checks.
pub fn enumerate_domain(
    s: &mut dyn Session,
    expr: &Expr,
    limit: usize,
) -> Result<Domain, SolverError> {
    let mut values = Vec::new();
    let mut blocks: Vec<Expr> = Vec::new();
    let (complete, timed_out) = loop {
        match s.check(&blocks)? {
            SatResult::Sat(m) => {
                let v = eval(expr, &complete(m, expr))?;
                values.push(v);
                blocks.push(expr.ne_expr(&Expr::constant(v)));
                if values.len() > limit {
                    break (false, false);
                }
            }
            SatResult::Unsat => break (true, false),
            SatResult::Unknown => break (false, true),
        }
    };
    values.sort();
    Ok(Domain {
        values,
        complete,
        timed_out,
    })
}

/// Models only bind variables the formula mentions; any other input of
/// `expr` is unconstrained and set to zero.
pub(crate) fn complete(mut m: Env, expr: &Expr) -> Env {
    for v in expr.vars() {
        m.entry(v.name().to_string())
            .or_insert_with(|| BitVector::zero(v.width()).expect("valid width"));
    }
    m
}

pub(super) fn blank_record(rec: &StepRecord) -> PoiRecord {
    PoiRecord {
        address: rec.address,
        original_address: rec.origin.address,
        iteration: rec.origin.iteration.clone(),
        opcode: rec.opcode,
        dest: rec.dest.clone().unwrap_or_default(),
        width: rec.width,
        dhw: None,
        hd: None,
        hd_transition: None,
        entropy: None,
        classes: None,
        domain: None,
        determiner: false,
        witnesses: None,
        vulnerable: false,
        reasons: BTreeSet::new(),
        notes: Vec::new(),
        status: Status::Complete,
        queries: 0,
    }
}

fn konst(width: u32, value: u64) -> Expr {
    Expr::constant(BitVector::new(width, value).expect("constant fits"))
}

fn note_status(out: &mut PoiRecord, r: &OptResult) {
    match r.status {
        OptStatus::Suboptimal => out.degrade(Status::Suboptimal),
        OptStatus::Timeout => out.degrade(Status::Timeout),
        OptStatus::Optimal | OptStatus::Unsat => {}
    }
}

fn as_u32(v: Option<u64>) -> Option<u32> {
    v.map(|v| v as u32)
}

/// Runs every enabled model on one candidate record.
pub fn analyze_record(rec: &StepRecord, cfg: &AnalysisConfig) -> Result<PoiRecord, SolverError> {
    let mut out = blank_record(rec);
    let Some(expr) = rec.expr.as_ref() else {
        return Ok(out);
    };
    let n = rec.width;
    let nu = cfg.nu.unwrap_or(n).min(n);

    let pair = self_compose(expr);
    let mut ps = open_session(&cfg.solver, pair.formula())?;
    let mut ss = open_session(&cfg.solver, Formula::default())?;

    let independent = match ps.check(&[])? {
        SatResult::Unsat => true,
        SatResult::Sat(_) => false,
        SatResult::Unknown => {
            out.degrade(Status::Timeout);
            false
        }
    };
    if independent {
        out.notes
            .push("value does not depend on the secret once public inputs are fixed".into());
    }

    if !independent && cfg.enabled(LeakModelKind::Dhw) {
        dhw(&mut *ps, &pair, cfg, nu, &mut out)?;
    }
    if !independent && cfg.enabled(LeakModelKind::HdValue) {
        hd_value(&mut *ps, &pair, nu, &mut out)?;
    }
    if cfg.enabled(LeakModelKind::HdTransition) {
        transition(rec, &mut *ss, nu, &mut out)?;
    }

    let domain = enumerate_domain(&mut *ss, expr, cfg.domain_limit)?;
    if domain.complete {
        out.domain = Some(domain.values.clone());
    } else if domain.timed_out {
        out.degrade(Status::Suboptimal);
    }

    if cfg.enabled(LeakModelKind::Entropy) {
        entropy(expr, &mut *ss, cfg, &mut out)?;
    }

    if out.vulnerable && out.witnesses.is_none() && !independent {
        out.witnesses = witnesses(&mut *ps, &pair, &[])?;
    }
    out.queries = ps.stats().queries + ss.stats().queries;
    Ok(out)
}

/// Adds hd-transition results to a record computed elsewhere.
pub(super) fn transition_only(
    rec: &StepRecord,
    cfg: &AnalysisConfig,
    out: &mut PoiRecord,
) -> Result<(), SolverError> {
    let n = rec.width;
    let nu = cfg.nu.unwrap_or(n).min(n);
    let mut ss = open_session(&cfg.solver, Formula::default())?;
    transition(rec, &mut *ss, nu, out)?;
    out.queries += ss.stats().queries;
    Ok(())
}

/// Smallest-input witness pair whose objective attains `target`.
fn witnesses(
    s: &mut dyn Session,
    pair: &SelfComposedPair,
    extra: &[Expr],
) -> Result<Option<Witnesses>, SolverError> {
    let Some(model) = s.minimize_inputs(extra, &pair.witness_order())? else {
        return Ok(None);
    };
    Ok(Some(witnesses_from_model(pair, &model)?))
}

fn witnesses_from_model(pair: &SelfComposedPair, m: &Env) -> Result<Witnesses, SolverError> {
    let mut a = Env::new();
    let mut b = Env::new();
    for v in pair.left.vars() {
        let p = primed(&v);
        let zero = BitVector::zero(v.width())?;
        let lookup = |name: &str| m.get(name).copied().unwrap_or(zero);
        a.insert(v.name().to_string(), lookup(v.name()));
        b.insert(v.name().to_string(), lookup(p.name()));
    }
    let w1 = Witness {
        value: eval(&pair.left, &a)?,
        inputs: a,
    };
    let w2 = Witness {
        value: eval(&pair.left, &b)?,
        inputs: b,
    };
    let (w1, w2) = if w1.value <= w2.value {
        (w1, w2)
    } else {
        (w2, w1)
    };
    Ok(Witnesses { w1, w2 })
}

/// Algorithm 1: bound `|ω(r) - ω(r')|`, then classify equal bounds.
fn dhw(
    s: &mut dyn Session,
    pair: &SelfComposedPair,
    cfg: &AnalysisConfig,
    nu: u32,
    out: &mut PoiRecord,
) -> Result<(), SolverError> {
    let n = out.width;
    let obj = encode_diff_hw(&pair.left, &pair.right);
    let min = s.optimize(&Objective::minimize(obj.clone(), n as u64))?;
    note_status(out, &min);
    let Some(lo) = as_u32(min.value) else {
        out.dhw = Some(MinMax {
            max: None,
            min: None,
        });
        return Ok(());
    };
    let hi = if lo >= nu {
        out.flag(Reason::ForcedMax);
        Some(lo)
    } else {
        let max = s.optimize(&Objective::maximize(obj.clone(), n as u64))?;
        note_status(out, &max);
        as_u32(max.value)
    };
    out.dhw = Some(MinMax {
        max: hi,
        min: Some(lo),
    });
    let Some(hi) = hi else { return Ok(()) };

    let at_max = obj.eq_expr(&konst(obj.width(), hi as u64));
    out.witnesses = witnesses(s, pair, &[at_max])?;

    if lo != hi {
        return Ok(());
    }
    let bit = cfg.discriminant_bit.unwrap_or(n - 1).min(n - 1);
    let differs = pair.left.bit(bit).xor(&pair.right.bit(bit));
    match s.check(&[differs])? {
        SatResult::Unsat if hi > 0 => out.flag(Reason::DiscriminantUnsat),
        SatResult::Unsat => out.notes.push(format!(
            "all distinct values share bit {bit} and one Hamming weight"
        )),
        SatResult::Unknown => out.degrade(Status::Suboptimal),
        SatResult::Sat(_) => {}
    }

    let Some(w) = out.witnesses.clone() else {
        return Ok(());
    };
    let outside = [
        pair.left.ne_expr(&Expr::constant(w.w1.value)),
        pair.left.ne_expr(&Expr::constant(w.w2.value)),
    ];
    match s.check(&outside)? {
        SatResult::Unsat if hi > 0 => {
            out.flag(Reason::BlockedPairUnsat);
            if hi >= cfg.determiner_floor {
                out.determiner = true;
                out.flag(Reason::TwoClassDeterminer);
            }
        }
        SatResult::Unsat => out
            .notes
            .push("exactly two values with equal Hamming weight".into()),
        SatResult::Unknown => out.degrade(Status::Suboptimal),
        SatResult::Sat(_) => {}
    }
    Ok(())
}

/// Hamming distance between the two runs' values.
fn hd_value(
    s: &mut dyn Session,
    pair: &SelfComposedPair,
    nu: u32,
    out: &mut PoiRecord,
) -> Result<(), SolverError> {
    let n = out.width;
    let obj = encode_hamming_distance(&pair.left, &pair.right);
    let min = s.optimize(&Objective::minimize(obj.clone(), n as u64))?;
    note_status(out, &min);
    let max = s.optimize(&Objective::maximize(obj.clone(), n as u64))?;
    note_status(out, &max);
    let mm = MinMax {
        max: as_u32(max.value),
        min: as_u32(min.value),
    };
    out.hd = Some(mm);
    if mm.min.is_some_and(|lo| lo >= nu) {
        out.flag(Reason::ForcedMax);
    }
    if out.witnesses.is_none() {
        if let Some(hi) = mm.max {
            let at_max = obj.eq_expr(&konst(obj.width(), hi as u64));
            out.witnesses = witnesses(s, pair, &[at_max])?;
        }
    }
    Ok(())
}

/// Distance between the value written and the value overwritten.
fn transition(
    rec: &StepRecord,
    s: &mut dyn Session,
    nu: u32,
    out: &mut PoiRecord,
) -> Result<(), SolverError> {
    let Some(expr) = rec.expr.as_ref() else {
        return Ok(());
    };
    let n = rec.width;
    let prev = match &rec.prev {
        Some(p) => p.clone(),
        None => {
            out.notes
                .push("no previous value; transition measured from zero".into());
            konst(n, 0)
        }
    };
    let obj = encode_hamming_distance(expr, &prev);
    let min = s.optimize(&Objective::minimize(obj.clone(), n as u64))?;
    note_status(out, &min);
    let max = s.optimize(&Objective::maximize(obj, n as u64))?;
    note_status(out, &max);
    let mm = MinMax {
        max: as_u32(max.value),
        min: as_u32(min.value),
    };
    out.hd_transition = Some(mm);
    if mm.min.is_some_and(|lo| lo >= nu) {
        out.flag(Reason::ForcedMax);
    }
    Ok(())
}

/// Algorithm 2: probe every ω class, weight populated classes by their
/// binomial prior and take the entropy.
fn entropy(
    expr: &Expr,
    s: &mut dyn Session,
    cfg: &AnalysisConfig,
    out: &mut PoiRecord,
) -> Result<(), SolverError> {
    let n = out.width;
    let pc = encode_popcount(expr);
    let mut classes = Vec::new();
    let mut sample = None;
    for i in 0..=n {
        match s.check(&[pc.eq_expr(&konst(pc.width(), i as u64))])? {
            SatResult::Sat(m) => {
                classes.push(i);
                if sample.is_none() {
                    sample = Some(eval(expr, &complete(m, expr))?);
                }
            }
            SatResult::Unsat => {}
            SatResult::Unknown => {
                out.degrade(Status::Timeout);
                out.notes.push(format!("weight class {i} undecided"));
                return Ok(());
            }
        }
    }
    match classes.len() {
        0 => {
            out.classes = Some(classes);
            return Ok(());
        }
        1 => {
            let v = sample.expect("populated class has a sample");
            let mut blocks = vec![expr.ne_expr(&Expr::constant(v))];
            let mut extra = 0;
            while extra < 2 {
                match s.check(&blocks)? {
                    SatResult::Sat(m) => {
                        let v = eval(expr, &complete(m, expr))?;
                        blocks.push(expr.ne_expr(&Expr::constant(v)));
                        extra += 1;
                    }
                    _ => break,
                }
            }
            out.notes.push(if extra == 0 {
                "constant value".into()
            } else {
                format!("every value has Hamming weight {}", classes[0])
            });
            out.entropy = Some(0.0);
        }
        _ => {
            let h = entropy_from_classes(n, &classes);
            out.entropy = Some(h);
            if h <= cfg.entropy_threshold + 1e-9 {
                out.flag(Reason::EntropyLow);
            }
        }
    }
    out.classes = Some(classes);
    Ok(())
}
