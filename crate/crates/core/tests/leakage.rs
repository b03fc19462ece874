mod common;

use leakscope_core::bv::{eval, popcount, BitVector, Env};
use leakscope_core::leakage::{
    binomial, brute_force_metrics, entropy_from_classes, self_compose, unary_image, Analyzer,
    LeakModelKind, PoiRecord, Reason, PRIME,
};
use leakscope_core::mir::parse;
use leakscope_core::pipeline::lower;
use leakscope_core::solver::{BackendKind, SolverConfig};
use leakscope_core::symexec::Trace;
use leakscope_core::AnalysisConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn analyze(trace: &Trace, cfg: AnalysisConfig) -> Vec<PoiRecord> {
    Analyzer::new(cfg).run(trace).unwrap()
}

fn at(recs: &[PoiRecord], address: u32) -> &PoiRecord {
    recs.iter().find(|r| r.address == address).expect("record")
}

fn trace_of(src: &str) -> Trace {
    let f = parse(src).unwrap().functions.remove(0);
    lower(&f, &Default::default()).unwrap().trace.unwrap()
}

fn bv(w: u32, v: u64) -> BitVector {
    BitVector::new(w, v).unwrap()
}

/// Witness values are reproduced by their inputs and their weight gap is the
/// reported maximum.
fn check_witnesses(trace: &Trace, r: &PoiRecord) {
    let Some(ws) = &r.witnesses else { return };
    let expr = trace.record(r.address).unwrap().expr.as_ref().unwrap();
    let run = |inputs: &std::collections::BTreeMap<String, BitVector>| {
        let mut env: Env = inputs.clone().into_iter().collect();
        for v in expr.vars() {
            env.entry(v.name().to_string())
                .or_insert_with(|| BitVector::zero(v.width()).unwrap());
        }
        eval(expr, &env).unwrap()
    };
    assert_eq!(run(&ws.w1.inputs), ws.w1.value, "address {}", r.address);
    assert_eq!(run(&ws.w2.inputs), ws.w2.value, "address {}", r.address);
    assert_ne!(ws.w1.value, ws.w2.value);
    for v in expr.vars().iter().filter(|v| !v.is_secret()) {
        assert_eq!(ws.w1.inputs.get(v.name()), ws.w2.inputs.get(v.name()));
    }
    if let Some(d) = r.dhw {
        if !r.reasons.contains(&Reason::Continuity) {
            let gap = popcount(ws.w1.value).abs_diff(popcount(ws.w2.value));
            assert_eq!(Some(gap), d.max, "address {}", r.address);
        }
    }
}

#[test]
fn masked_conditional_add() {
    let t = common::fixture_trace("cadd");
    let recs = analyze(&t, AnalysisConfig::default());
    let r0 = at(&recs, 0);
    assert_eq!(
        (r0.dhw.unwrap().min, r0.dhw.unwrap().max),
        (Some(0), Some(8))
    );
    assert_eq!((r0.hd.unwrap().min, r0.hd.unwrap().max), (Some(1), Some(8)));
    assert!(!r0.vulnerable);

    let r1 = at(&recs, 1);
    assert_eq!(
        (r1.dhw.unwrap().min, r1.dhw.unwrap().max),
        (Some(8), Some(8))
    );
    assert_eq!((r1.hd.unwrap().min, r1.hd.unwrap().max), (Some(8), Some(8)));
    assert!(r1.vulnerable && r1.reasons.contains(&Reason::ForcedMax) && r1.determiner);
    assert_eq!(r1.domain, Some(vec![bv(8, 0), bv(8, 0xff)]));
    assert_eq!(format!("{:.2}", r1.entropy.unwrap()), "1.00");
    let ws = r1.witnesses.as_ref().unwrap();
    assert_eq!((ws.w1.value, ws.w2.value), (bv(8, 0), bv(8, 0xff)));

    let r2 = at(&recs, 2);
    assert!(r2.reasons.contains(&Reason::Continuity));
    assert_eq!(r2.queries, 0);
    assert_eq!(r2.dhw.unwrap().max, Some(8));

    // r3 = r2 & x is not a bijective image of anything.
    let r3 = at(&recs, 3);
    assert!(r3.queries > 0 && !r3.reasons.contains(&Reason::Continuity));
    for r in &recs {
        check_witnesses(&t, r);
    }
}

#[test]
fn sign_bit_extraction() {
    let t = common::fixture_trace("sbfx");
    let r = &analyze(&t, AnalysisConfig::default())[0];
    assert_eq!(
        (r.dhw.unwrap().min, r.dhw.unwrap().max),
        (Some(32), Some(32))
    );
    assert!(r.vulnerable);
    let ws = r.witnesses.as_ref().unwrap();
    let xs = [ws.w1.inputs["x"], ws.w2.inputs["x"]];
    assert!(xs.contains(&bv(16, 0x8000)) && xs.contains(&bv(16, 0)));
    assert_eq!(format!("{:.2}", r.entropy.unwrap()), "1.00");
}

#[test]
fn speck_rotation_remainder() {
    let t = common::fixture_trace("speck_arx");
    let recs = analyze(&t, AnalysisConfig::default());
    let r3 = at(&recs, 10);
    assert_eq!(r3.dest, "r3");
    assert_eq!(
        (r3.dhw.unwrap().min, r3.dhw.unwrap().max),
        (Some(0), Some(2))
    );
    assert_eq!(r3.domain, Some((0..4).map(|v| bv(32, v)).collect()));
    assert!(!r3.determiner);
    assert!(r3.reasons.contains(&Reason::EntropyLow));
    let oracle = entropy_from_classes(32, &[0, 1, 2]);
    assert!((r3.entropy.unwrap() - oracle).abs() < 1e-12);
    assert!(r3.entropy.unwrap() <= 1.0);
}

#[test]
fn kyber_mask_is_a_determiner() {
    let t = common::fixture_trace("kyber_frommsg");
    for continuity in [true, false] {
        let cfg = AnalysisConfig {
            continuity,
            ..Default::default()
        };
        let recs = analyze(&t, cfg);
        let masks: Vec<_> = recs.iter().filter(|r| r.dest == "rk").collect();
        assert_eq!(masks.len(), 8);
        for r in masks {
            assert!(r.determiner, "address {}", r.address);
            assert_eq!(r.dhw.unwrap().max, Some(16));
            assert_eq!(r.domain, Some(vec![bv(16, 0), bv(16, 0xffff)]));
            if !continuity {
                assert!(r.reasons.contains(&Reason::BlockedPairUnsat));
            }
        }
    }
}

#[test]
fn entropy_reference_values() {
    let full: Vec<u32> = (0..=8).collect();
    assert!((entropy_from_classes(8, &full) - 2.54).abs() < 0.01);
    assert_eq!(entropy_from_classes(8, &[0, 8]), 1.0);
    assert_eq!(entropy_from_classes(32, &[0, 32]), 1.0);
    assert_eq!(binomial(8, 4), 70);
    assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
}

#[test]
fn single_weight_class_is_annotated() {
    let t = trace_of("func f(x: secret u1) {\n    r1:4 = zext x\n    r2 = add r1, #1\n}\n");
    let cfg = AnalysisConfig {
        continuity: false,
        ..Default::default()
    };
    let r2 = at(&analyze(&t, cfg), 1).clone();
    assert_eq!(r2.entropy, Some(0.0));
    assert_eq!(r2.classes, Some(vec![1]));
    assert_eq!(r2.dhw.unwrap().max, Some(0));
    assert!(!r2.vulnerable);
    assert!(r2
        .notes
        .iter()
        .any(|n| n == "every value has Hamming weight 1"));
}

#[test]
fn secret_independent_value_is_noted() {
    let t = trace_of(
        "func f(x: secret u8) {\n    r0 = and x, #1\n    r1 = and x, #2\n    r2 = and r0, r1\n}\n",
    );
    let r2 = at(&analyze(&t, AnalysisConfig::default()), 2).clone();
    assert!(!r2.vulnerable);
    assert!(r2.witnesses.is_none());
    assert!(r2
        .notes
        .iter()
        .any(|n| n.contains("does not depend on the secret")));
}

#[test]
fn self_composition_shape() {
    let t = common::fixture_trace("cadd");
    let e = t.records[4].expr.clone().unwrap();
    let pair = self_compose(&e);
    let left: Vec<_> = pair.left.vars().into_iter().collect();
    let right: Vec<_> = pair.right.vars().into_iter().collect();
    assert!(left.iter().all(|v| !right.contains(v)));
    assert!(right.iter().all(|v| v.name().ends_with(PRIME)));
    assert_eq!(pair.pins.len(), 1);
    let expr0 = t.records[1].expr.clone().unwrap();
    assert!(self_compose(&expr0).pins.is_empty());
}

#[test]
fn unary_images() {
    let t = common::fixture_trace("cadd");
    let (src, _) = unary_image(t.records[2].expr.as_ref().unwrap()).unwrap();
    assert_eq!(&src, t.records[1].expr.as_ref().unwrap());
    assert!(unary_image(t.records[3].expr.as_ref().unwrap()).is_none());
}

#[test]
fn unflagged_source_does_not_propagate() {
    // r0 takes all 256 values, so its complement must be analyzed itself.
    let t = trace_of("func f(x: secret u8) {\n    r0 = add x, #3\n    r1 = not r0\n}\n");
    let recs = analyze(&t, AnalysisConfig::default());
    assert!(!at(&recs, 0).vulnerable);
    assert!(at(&recs, 1).queries > 0);
}

#[test]
fn transition_mode() {
    let t = trace_of("func f(x: secret u8) {\n    r1 = mov x\n    r1 = not r1\n}\n");
    let cfg = AnalysisConfig {
        models: LeakModelKind::ALL.into(),
        continuity: false,
        ..Default::default()
    };
    let r = at(&analyze(&t, cfg), 1).clone();
    let tr = r.hd_transition.unwrap();
    assert_eq!((tr.min, tr.max), (Some(8), Some(8)));
    assert!(r.reasons.contains(&Reason::ForcedMax));
}

#[test]
fn fixtures_agree_with_brute_force() {
    let cfg = AnalysisConfig {
        models: LeakModelKind::ALL.into(),
        continuity: false,
        ..Default::default()
    };
    for name in ["cadd", "cadd_control", "sbfx", "speck_arx", "kyber_frommsg"] {
        let t = common::fixture_trace(name);
        for r in analyze(&t, cfg.clone()) {
            let rec = t.record(r.address).unwrap();
            let Ok(o) = brute_force_metrics(rec, 24) else {
                continue;
            };
            assert_eq!(r.dhw, o.dhw, "{name} {}", r.address);
            assert_eq!(r.hd, o.hd, "{name} {}", r.address);
            assert_eq!(
                r.hd_transition,
                Some(o.hd_transition),
                "{name} {}",
                r.address
            );
            assert_eq!(r.classes.as_ref(), Some(&o.classes), "{name} {}", r.address);
            if let (Some(d), Some(od)) = (&r.domain, &o.domain) {
                assert_eq!(d, od, "{name} {}", r.address);
            }
            check_witnesses(&t, &r);
        }
    }
}

fn random_agreement(seeds: std::ops::Range<u64>, backend: BackendKind) {
    let cfg = AnalysisConfig {
        models: LeakModelKind::ALL.into(),
        continuity: false,
        solver: SolverConfig::with_backend(backend),
        jobs: Some(1),
        ..Default::default()
    };
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(1..=8);
        let src = common::random_program(&mut rng, 12, len);
        let t = trace_of(&src);
        for r in analyze(&t, cfg.clone()) {
            let o = brute_force_metrics(t.record(r.address).unwrap(), 24).unwrap();
            assert_eq!(r.dhw, o.dhw, "{src}\naddress {}", r.address);
            assert_eq!(r.hd, o.hd, "{src}\naddress {}", r.address);
            assert_eq!(
                r.hd_transition,
                Some(o.hd_transition),
                "{src}\naddress {}",
                r.address
            );
            assert_eq!(
                r.classes.as_ref(),
                Some(&o.classes),
                "{src}\naddress {}",
                r.address
            );
            if let Some(h) = r.entropy {
                assert!((h - o.entropy).abs() < 1e-12);
            }
            for m in [r.dhw, r.hd, r.hd_transition].into_iter().flatten() {
                assert!(m.min <= m.max);
            }
            check_witnesses(&t, &r);
        }
    }
}

#[test]
fn random_programs_agree_with_brute_force() {
    random_agreement(0..60, BackendKind::Builtin);
}

#[test]
fn random_programs_agree_with_brute_force_on_z3() {
    if !common::have_z3() {
        eprintln!("z3 not found; skipping");
        return;
    }
    random_agreement(500..515, BackendKind::External);
}

/// Independent entropy: the priors are scaled before normalization.
fn scaled_entropy(n: u32, classes: &[u32], scale: f64) -> f64 {
    let priors: Vec<f64> = classes
        .iter()
        .map(|&k| binomial(n, k) as f64 * scale)
        .collect();
    let total: f64 = priors.iter().sum();
    -priors
        .iter()
        .map(|p| p / total)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

proptest! {
    #[test]
    fn entropy_bounds_and_normalization(
        n in 1u32..=64,
        picks in proptest::collection::btree_set(0u32..=64, 2..10),
        scale in 1e-3f64..1e3,
    ) {
        let classes: Vec<u32> = picks.into_iter().filter(|&k| k <= n).collect();
        prop_assume!(classes.len() >= 2);
        let h = entropy_from_classes(n, &classes);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= ((n + 1) as f64).log2() + 1e-9);
        prop_assert!((h - scaled_entropy(n, &classes, scale)).abs() < 1e-9);
        if classes.len() == 2 {
            prop_assert!(h <= 1.0 + 1e-12);
            let equal = binomial(n, classes[0]) == binomial(n, classes[1]);
            prop_assert_eq!(equal, (h - 1.0).abs() < 1e-12);
        }
    }
}
