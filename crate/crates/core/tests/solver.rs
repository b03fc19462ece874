mod common;

use std::time::Duration;

use leakscope_core::bv::{eval, popcount, BinOp, BitVector, Env, Expr, Var};
use leakscope_core::solver::{
    brute_force_opt, check_sat, encode_diff_hw, encode_popcount, open_session, optimize,
    popcount_width, BackendKind, Direction, Formula, Objective, OptStatus, SatResult, SolverConfig,
    SolverError,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn backends() -> Vec<SolverConfig> {
    let mut v = vec![
        SolverConfig::with_backend(BackendKind::Builtin),
        SolverConfig::with_backend(BackendKind::BruteForce),
    ];
    if common::have_z3() {
        v.push(SolverConfig::with_backend(BackendKind::External));
    } else {
        eprintln!("z3 not found; skipping external backend");
    }
    v
}

fn c(w: u32, v: u64) -> Expr {
    Expr::const_u64(w, v).unwrap()
}

/// `(x - 64) >>a 7` and its renamed copy.
fn mask_pair() -> (Expr, Expr) {
    let mk = |name: &str| {
        let x = Expr::var(Var::secret(name, 8).unwrap());
        Expr::binary(BinOp::Ashr, x.sub(&c(8, 64)), c(8, 7)).unwrap()
    };
    (mk("x"), mk("x'"))
}

#[test]
fn trivial_sat_and_unsat() {
    let x = Expr::var(Var::secret("x", 8).unwrap());
    for cfg in backends() {
        match check_sat(&Formula::new(vec![x.eq_expr(&c(8, 5))]), &cfg).unwrap() {
            SatResult::Sat(m) => assert_eq!(m["x"].value(), 5),
            other => panic!("{other:?}"),
        }
        let r = check_sat(&Formula::new(vec![x.ne_expr(&x)]), &cfg).unwrap();
        assert_eq!(r, SatResult::Unsat, "{:?}", cfg.backend);
    }
}

#[test]
fn mask_has_only_two_weight_classes() {
    let (r, r2) = mask_pair();
    let f = Formula::new(vec![r.ne_expr(&r2), encode_popcount(&r).eq_expr(&c(4, 3))]);
    for cfg in backends() {
        assert_eq!(
            check_sat(&f, &cfg).unwrap(),
            SatResult::Unsat,
            "{:?}",
            cfg.backend
        );
    }
}

#[test]
fn mask_differential_weight_is_forced_to_eight() {
    let (r, r2) = mask_pair();
    let f = Formula::new(vec![r.ne_expr(&r2)]);
    let d = encode_diff_hw(&r, &r2);
    for cfg in backends() {
        let max = optimize(&f, &Objective::maximize(d.clone(), 8), &cfg).unwrap();
        let min = optimize(&f, &Objective::minimize(d.clone(), 8), &cfg).unwrap();
        assert_eq!((max.status, max.value), (OptStatus::Optimal, Some(8)));
        assert_eq!((min.status, min.value), (OptStatus::Optimal, Some(8)));
    }
    let unsat = Formula::new(vec![r.ne_expr(&r)]);
    for cfg in backends() {
        let res = optimize(&unsat, &Objective::maximize(d.clone(), 8), &cfg).unwrap();
        assert_eq!((res.status, res.value), (OptStatus::Unsat, None));
    }
}

#[test]
fn brute_force_cap() {
    let x = Expr::var(Var::secret("x", 1).unwrap());
    let f = Formula::new(vec![c(1, 1)]);
    let r = brute_force_opt(&f, &Objective::maximize(encode_popcount(&x), 1), 20).unwrap();
    assert_eq!(r.value, Some(1));

    let mk = |name: &str| {
        let x = Expr::var(Var::secret(name, 16).unwrap());
        Expr::sign_ext(16, Expr::extract(15, 15, x).unwrap()).unwrap()
    };
    let (a, b) = (mk("x"), mk("x'"));
    let f = Formula::new(vec![a.ne_expr(&b)]);
    let obj = Objective::maximize(encode_diff_hw(&a, &b), 32);
    assert!(matches!(
        brute_force_opt(&f, &obj, 20),
        Err(SolverError::OracleInfeasible { bits: 32, cap: 20 })
    ));
}

#[test]
fn pinned_copies_do_not_count_against_the_cap() {
    let p = Expr::var(Var::public("p", 12).unwrap());
    let p2 = Expr::var(Var::public("p'", 12).unwrap());
    let s = Expr::var(Var::secret("s", 4).unwrap());
    let s2 = Expr::var(Var::secret("s'", 4).unwrap());
    let r = p.add(&s.zext_to(12));
    let r2 = p2.add(&s2.zext_to(12));
    let f = Formula::new(vec![p.eq_expr(&p2), r.ne_expr(&r2)]);
    let obj = Objective::maximize(encode_diff_hw(&r, &r2), 12);
    let res = brute_force_opt(&f, &obj, 20).unwrap();
    let m = res.model.unwrap();
    assert_eq!(m["p"], m["p'"]);
}

#[test]
fn binary_search_query_bound() {
    let (r, r2) = mask_pair();
    let f = Formula::new(vec![r.ne_expr(&r2)]);
    for (w, name) in [(8u32, "y"), (16, "z"), (32, "q")] {
        let v = Expr::var(Var::secret(name, w).unwrap());
        let v2 = Expr::var(Var::secret(&format!("{name}'"), w).unwrap());
        let f2 = Formula::new(vec![v.ne_expr(&v2)]);
        let bound = popcount_width(w) + 1;
        for dir in [Direction::Maximize, Direction::Minimize] {
            let obj = Objective {
                expr: encode_diff_hw(&v, &v2),
                direction: dir,
                max: w as u64,
            };
            let mut s = open_session(&SolverConfig::default(), f2.clone()).unwrap();
            let res = s.optimize(&obj).unwrap();
            let expected = if dir == Direction::Maximize {
                w as u64
            } else {
                0
            };
            assert_eq!(res.value, Some(expected));
            assert!(
                s.stats().queries <= bound,
                "{} > {bound}",
                s.stats().queries
            );
        }
    }
    let mut s = open_session(&SolverConfig::default(), f).unwrap();
    s.optimize(&Objective::maximize(encode_diff_hw(&r, &r2), 8))
        .unwrap();
    assert!(s.stats().queries <= 5);
}

#[test]
fn greedy_minimization_matches_enumeration() {
    let x = Expr::var(Var::secret("x", 8).unwrap());
    let y = Expr::var(Var::secret("y", 8).unwrap());
    let f = Formula::new(vec![x.xor(&y).eq_expr(&c(8, 0x5a)), c(8, 0x10).ule(&x)]);
    let order = [y.as_var().unwrap().clone(), x.as_var().unwrap().clone()];
    let mut results = Vec::new();
    for cfg in backends() {
        let mut s = open_session(&cfg, f.clone()).unwrap();
        let m = s.minimize_inputs(&[], &order).unwrap().unwrap();
        results.push((m["y"].value(), m["x"].value()));
    }
    assert!(results.iter().all(|r| *r == (0, 0x5a)), "{results:?}");
}

#[test]
fn popcount_encoding_exhaustive_at_width_eight() {
    let x = Expr::var(Var::secret("x", 8).unwrap());
    let e = encode_popcount(&x);
    for v in 0..256 {
        let bv = BitVector::new(8, v).unwrap();
        let env: Env = [("x".to_string(), bv)].into();
        assert_eq!(eval(&e, &env).unwrap().value(), popcount(bv) as u64);
    }
}

fn random_problem(seed: u64) -> (Formula, Objective) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves = common::small_leaves();
    let w = 1 + (seed % 8) as u32;
    let target = common::random_expr(&mut rng, &leaves, w, 4);
    let guard = common::random_expr(&mut rng, &leaves, 1, 3);
    let direction = if seed.is_multiple_of(2) {
        Direction::Maximize
    } else {
        Direction::Minimize
    };
    let obj = Objective {
        expr: encode_popcount(&target),
        direction,
        max: w as u64,
    };
    (Formula::new(vec![guard]), obj)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn backends_agree_with_enumeration(seed in any::<u64>()) {
        let (f, obj) = random_problem(seed);
        let oracle = brute_force_opt(&f, &obj, 20).unwrap();
        for cfg in backends() {
            let cfg = SolverConfig { timeout: Duration::from_secs(30), ..cfg };
            let got = optimize(&f, &obj, &cfg).unwrap();
            prop_assert_eq!(got.status, oracle.status);
            prop_assert_eq!(got.value, oracle.value);
            if let Some(m) = &got.model {
                prop_assert_eq!(eval(&obj.expr, m).unwrap().value(), got.value.unwrap());
            }
        }
    }
}
