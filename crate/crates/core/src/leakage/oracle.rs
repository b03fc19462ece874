//! Exhaustive reference metrics that never touch the solver layer.
//!
//! For every public assignment the set of destination values reachable by
//! varying the secrets is computed directly; the two-run metrics are then
//! read off these images.

use std::collections::BTreeSet;

use crate::bv::{BitVector, Expr, Tape, Var};
use crate::solver::SolverError;
use crate::symexec::StepRecord;

use super::entropy::entropy_from_classes;
use super::MinMax;

/// Domains larger than this are not recorded.
const DOMAIN_KEEP: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleMetrics {
    /// `None` when no public assignment admits two distinct values.
    pub dhw: Option<MinMax>,
    pub hd: Option<MinMax>,
    pub hd_transition: MinMax,
    pub classes: Vec<u32>,
    /// Zero when fewer than two classes are populated.
    pub entropy: f64,
    /// All values over all inputs, if there are few.
    pub domain: Option<Vec<BitVector>>,
}

fn decode(mut index: u64, vars: &[Var], out: &mut [u64]) {
    for (slot, v) in out.iter_mut().zip(vars).rev() {
        let w = v.width();
        *slot = index & crate::bv::mask(w);
        index = if w >= 64 { 0 } else { index >> w };
    }
}

/// Metrics of `rec` by enumerating every assignment of its inputs. Fails with
/// [`SolverError::OracleInfeasible`] above `cap` input bits.
pub fn brute_force_metrics(rec: &StepRecord, cap: u32) -> Result<OracleMetrics, SolverError> {
    let expr = rec
        .expr
        .as_ref()
        .ok_or_else(|| SolverError::Malformed("record has no value".into()))?;
    let n = rec.width;
    let prev = rec
        .prev
        .clone()
        .unwrap_or_else(|| Expr::constant(BitVector::zero(n).expect("valid width")));
    let all = Expr::vars_of(&[expr, &prev]);
    let (secrets, publics): (Vec<Var>, Vec<Var>) = all.into_iter().partition(Var::is_secret);
    let pbits: u32 = publics.iter().map(Var::width).sum();
    let sbits: u32 = secrets.iter().map(Var::width).sum();
    if pbits + sbits > cap || pbits + sbits >= 64 {
        return Err(SolverError::OracleInfeasible {
            bits: pbits + sbits,
            cap,
        });
    }
    let inputs: Vec<Var> = publics.iter().chain(&secrets).cloned().collect();
    let tape = Tape::compile_with_inputs(&[expr, &prev], inputs);
    let mut slots = tape.scratch();
    let mut buf = vec![0u64; publics.len() + secrets.len()];
    let np = publics.len();

    let mut dhw = (None::<u32>, None::<u32>);
    let mut hd = (None::<u32>, None::<u32>);
    let mut tr = (0u32, n);
    let mut weights = [false; 65];
    let mut domain: BTreeSet<u64> = BTreeSet::new();
    let mut image: Vec<u64> = Vec::with_capacity(1 << sbits.min(20));

    for p in 0..(1u64 << pbits) {
        decode(p, &publics, &mut buf[..np]);
        image.clear();
        for s in 0..(1u64 << sbits) {
            decode(s, &secrets, &mut buf[np..]);
            tape.run(&buf, &mut slots);
            let v = tape.output(&slots, 0);
            let d = (v ^ tape.output(&slots, 1)).count_ones();
            tr = (tr.0.max(d), tr.1.min(d));
            weights[v.count_ones() as usize] = true;
            if domain.len() <= DOMAIN_KEEP {
                domain.insert(v);
            }
            image.push(v);
        }
        image.sort_unstable();
        image.dedup();
        if image.len() < 2 {
            continue;
        }

        let mut ws: Vec<u32> = image.iter().map(|v| v.count_ones()).collect();
        ws.sort_unstable();
        let spread = ws[ws.len() - 1] - ws[0];
        let closest = ws
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .expect("two values");
        dhw.0 = Some(dhw.0.map_or(spread, |m| m.max(spread)));
        dhw.1 = Some(dhw.1.map_or(closest, |m| m.min(closest)));

        // No pair can differ outside the bits that vary across the image.
        let ub = image
            .iter()
            .fold(0, |acc, v| acc | (v ^ image[0]))
            .count_ones();
        let (mut hi, mut lo) = (hd.0.unwrap_or(0), hd.1.unwrap_or(n));
        'pairs: for (i, a) in image.iter().enumerate() {
            for b in &image[i + 1..] {
                let d = (a ^ b).count_ones();
                hi = hi.max(d);
                lo = lo.min(d);
                if hi >= ub && lo == 1 {
                    break 'pairs;
                }
            }
        }
        hd = (Some(hi), Some(lo));
    }

    let classes: Vec<u32> = (0..=n).filter(|&i| weights[i as usize]).collect();
    let entropy = if classes.len() > 1 {
        entropy_from_classes(n, &classes)
    } else {
        0.0
    };
    let domain = (domain.len() <= DOMAIN_KEEP).then(|| {
        domain
            .into_iter()
            .map(|v| BitVector::new(n, v).expect("value fits width"))
            .collect()
    });
    let pack = |(max, min): (Option<u32>, Option<u32>)| max.map(|_| MinMax { max, min });
    Ok(OracleMetrics {
        dhw: pack(dhw),
        hd: pack(hd),
        hd_transition: MinMax {
            max: Some(tr.0),
            min: Some(tr.1),
        },
        classes,
        entropy,
        domain,
    })
}
