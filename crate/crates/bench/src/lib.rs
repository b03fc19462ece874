//! Shared inputs for the benchmarks.

use leakscope_core::mir::{parse, Function, LoopBounds};
use leakscope_core::pipeline::lower;
use leakscope_core::symexec::Trace;

pub const FIXTURES: [(&str, &str); 6] = [
    ("cadd", include_str!("../../core/fixtures/cadd.mir")),
    (
        "cadd_control",
        include_str!("../../core/fixtures/cadd_control.mir"),
    ),
    ("sbfx", include_str!("../../core/fixtures/sbfx.mir")),
    (
        "speck_arx",
        include_str!("../../core/fixtures/speck_arx.mir"),
    ),
    (
        "kyber_frommsg",
        include_str!("../../core/fixtures/kyber_frommsg.mir"),
    ),
    (
        "mbedtls_ct_lt",
        include_str!("../../core/fixtures/mbedtls_ct_lt.mir"),
    ),
];

pub fn source(name: &str) -> &'static str {
    FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .unwrap_or_else(|| panic!("unknown fixture {name}"))
}

/// The first function of a fixture, before unrolling.
pub fn function(name: &str) -> Function {
    parse(source(name))
        .expect("fixture parses")
        .functions
        .remove(0)
}

/// The unrolled function and its symbolic trace.
pub fn lowered(name: &str) -> (Function, Trace) {
    let low = lower(&function(name), &LoopBounds::default()).expect("fixture lowers");
    (low.function, low.trace.expect("fixture is constant-time"))
}
