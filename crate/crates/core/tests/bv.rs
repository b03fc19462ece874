mod common;

use std::collections::BTreeSet;

use leakscope_core::bv::{
    diff_hw, eval, hamming_distance, popcount, rename_fresh, simplify, BitVector, Env, Expr,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_env(rng: &mut ChaCha8Rng, e: &Expr) -> Env {
    e.vars()
        .into_iter()
        .map(|v| {
            let x = rng.gen::<u64>() & leakscope_core::bv::mask(v.width());
            (v.name().to_string(), BitVector::new(v.width(), x).unwrap())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn simplify_preserves_evaluation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rng.gen_range(1..=8);
        let e = common::random_expr(&mut rng, &common::small_leaves(), w, 5);
        let s = simplify(&e);
        prop_assert_eq!(s.width(), e.width());
        for _ in 0..16 {
            let env = random_env(&mut rng, &e);
            prop_assert_eq!(eval(&s, &env).unwrap(), eval(&e, &env).unwrap(), "{} vs {}", e, s);
        }
    }

    #[test]
    fn rename_preserves_evaluation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = common::random_expr(&mut rng, &common::small_leaves(), 6, 4);
        let r = rename_fresh(&e, "'");
        let names: BTreeSet<String> = r.vars().iter().map(|v| v.name().to_string()).collect();
        prop_assert_eq!(names.len(), e.vars().len());
        let env = random_env(&mut rng, &e);
        let renamed: Env = env.iter().map(|(k, v)| (format!("{k}'"), *v)).collect();
        prop_assert_eq!(eval(&r, &renamed).unwrap(), eval(&e, &env).unwrap());
    }
}

#[test]
fn weight_relations_exhaustive_to_width_eight() {
    for w in 1..=8u32 {
        for a in 0..1u64 << w {
            for b in 0..1u64 << w {
                let (x, y) = (BitVector::new(w, a).unwrap(), BitVector::new(w, b).unwrap());
                let hd = hamming_distance(x, y).unwrap();
                assert_eq!(popcount(BitVector::new(w, a ^ b).unwrap()), hd);
                assert!(diff_hw(x, y).unwrap() <= hd);
            }
        }
    }
}
