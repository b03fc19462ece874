//! Reuse of a two-valued register's results for bijective images of it.

use std::collections::HashMap;

use crate::bv::{eval, hamming_distance, popcount, BinOp, Env, Expr, Node, Var};
use crate::symexec::Trace;

use super::analyze::blank_record;
use super::entropy::entropy_from_classes;
use super::{AnalysisConfig, LeakModelKind, MinMax, PoiRecord, Reason, Witness, Witnesses};
use crate::symexec::StepRecord;

const HOLE: &str = "·";

fn hole(width: u32) -> Expr {
    Expr::var(Var::public(HOLE, width).expect("valid width"))
}

/// Splits `expr` into `g(src)` when `g` is a bijection on `src`'s width:
/// complement, xor or addition of a constant, negation, or a rotation.
/// Returns `src` and `g` written over a placeholder variable.
pub fn unary_image(expr: &Expr) -> Option<(Expr, Expr)> {
    let w = expr.width();
    let h = hole(w);
    match expr.node() {
        Node::Not(a) => Some((a.clone(), Expr::not(h))),
        Node::Binary(op @ (BinOp::Xor | BinOp::Add), a, b) => {
            let (src, c) = match (a.as_const(), b.as_const()) {
                (None, Some(_)) => (a, b),
                (Some(_), None) => (b, a),
                _ => return None,
            };
            Some((src.clone(), Expr::binary(*op, h, c.clone()).ok()?))
        }
        Node::Binary(BinOp::Sub, a, b) if a.as_const().is_some_and(|c| c.value() == 0) => {
            Some((b.clone(), Expr::binary(BinOp::Sub, a.clone(), h).ok()?))
        }
        Node::Binary(BinOp::Or, a, b) => {
            let shifts = |x: &Expr| match x.node() {
                Node::Binary(op @ (BinOp::Shl | BinOp::Lshr), s, k) => {
                    Some((*op, s.clone(), k.as_const()?.value()))
                }
                _ => None,
            };
            let (oa, sa, ka) = shifts(a)?;
            let (ob, sb, kb) = shifts(b)?;
            if sa != sb || oa == ob || ka + kb != w as u64 || ka == 0 || kb == 0 {
                return None;
            }
            let g = Expr::binary(
                BinOp::Or,
                Expr::binary(oa, h.clone(), a.children()[1].clone()).ok()?,
                Expr::binary(ob, h, b.children()[1].clone()).ok()?,
            )
            .ok()?;
            Some((sa, g))
        }
        _ => None,
    }
}

/// For each candidate that is a bijective image of an earlier candidate's
/// value, the earlier record's index and the image function.
pub(super) fn sources(trace: &Trace, candidates: &[usize]) -> HashMap<usize, (usize, Expr)> {
    let mut first: HashMap<&Expr, usize> = HashMap::new();
    let mut out = HashMap::new();
    for &i in candidates {
        let Some(e) = trace.records[i].expr.as_ref() else {
            continue;
        };
        if let Some((src, g)) = unary_image(e) {
            if let Some(&j) = first.get(&src) {
                out.insert(i, (j, g));
            }
        }
        first.entry(e).or_insert(i);
    }
    out
}

/// Results for `rec` computed from its source's two values without any
/// solver query. `None` when the source is not a flagged two-valued record.
pub(super) fn propagate(
    rec: &StepRecord,
    src: &PoiRecord,
    g: &Expr,
    cfg: &AnalysisConfig,
) -> Option<PoiRecord> {
    if !src.vulnerable || src.domain.as_ref()?.len() != 2 {
        return None;
    }
    let ws = src.witnesses.as_ref()?;
    let apply = |w: &Witness| -> Option<Witness> {
        let env: Env = [(HOLE.to_string(), w.value)].into();
        Some(Witness {
            inputs: w.inputs.clone(),
            value: eval(g, &env).ok()?,
        })
    };
    let (mut w1, mut w2) = (apply(&ws.w1)?, apply(&ws.w2)?);
    if w2.value < w1.value {
        std::mem::swap(&mut w1, &mut w2);
    }
    let (a, b) = (w1.value, w2.value);
    let (ha, hb) = (popcount(a), popcount(b));
    let delta = ha.abs_diff(hb);

    let mut out = blank_record(rec);
    if cfg.enabled(LeakModelKind::Dhw) {
        out.dhw = Some(MinMax::exact(delta));
    }
    if cfg.enabled(LeakModelKind::HdValue) {
        out.hd = Some(MinMax::exact(hamming_distance(a, b).ok()?));
    }
    let mut classes = vec![ha.min(hb), ha.max(hb)];
    classes.dedup();
    let h = if classes.len() > 1 {
        entropy_from_classes(rec.width, &classes)
    } else {
        0.0
    };
    if cfg.enabled(LeakModelKind::Entropy) {
        out.entropy = Some(h);
        out.classes = Some(classes.clone());
    }
    out.domain = Some(vec![a, b]);
    out.determiner = delta >= cfg.determiner_floor;
    out.witnesses = Some(Witnesses { w1, w2 });
    if delta >= cfg.determiner_floor || (classes.len() > 1 && h <= cfg.entropy_threshold + 1e-9) {
        out.flag(Reason::Continuity);
    }
    out.notes.push(format!(
        "bijective image of the two-valued register at address {}",
        src.address
    ));
    Some(out)
}
