#![allow(dead_code)]

use leakscope_core::bv::{BinOp, CmpOp, Expr, Var};
use rand::Rng;

pub fn have_z3() -> bool {
    std::process::Command::new("z3")
        .arg("-version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn resize(e: Expr, width: u32, signed: bool) -> Expr {
    use std::cmp::Ordering::*;
    match width.cmp(&e.width()) {
        Equal => e,
        Less => Expr::extract(width - 1, 0, e).unwrap(),
        Greater if signed => Expr::sign_ext(width - e.width(), e).unwrap(),
        Greater => Expr::zero_ext(width - e.width(), e).unwrap(),
    }
}

const BINOPS: [BinOp; 9] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::And,
    BinOp::Or,
    BinOp::Xor,
    BinOp::Shl,
    BinOp::Lshr,
    BinOp::Ashr,
];

const CMPOPS: [CmpOp; 6] = [
    CmpOp::Eq,
    CmpOp::Ne,
    CmpOp::Ult,
    CmpOp::Ule,
    CmpOp::Slt,
    CmpOp::Sle,
];

/// Random expression of exactly `width` bits over `leaves`.
pub fn random_expr<R: Rng>(rng: &mut R, leaves: &[Expr], width: u32, depth: u32) -> Expr {
    if depth == 0 || rng.gen_ratio(1, 5) {
        if rng.gen_ratio(1, 4) {
            let v = rng.gen::<u64>() & leakscope_core::bv::mask(width);
            return Expr::const_u64(width, v).unwrap();
        }
        let leaf = leaves[rng.gen_range(0..leaves.len())].clone();
        return resize(leaf, width, rng.gen());
    }
    let d = depth - 1;
    match rng.gen_range(0..8) {
        0 => Expr::not(random_expr(rng, leaves, width, d)),
        1 | 2 => {
            let op = BINOPS[rng.gen_range(0..BINOPS.len())];
            let a = random_expr(rng, leaves, width, d);
            let b = if matches!(op, BinOp::Shl | BinOp::Lshr | BinOp::Ashr) && rng.gen() {
                Expr::const_u64(
                    width,
                    rng.gen_range(0..=width as u64 + 1) & leakscope_core::bv::mask(width),
                )
                .unwrap()
            } else {
                random_expr(rng, leaves, width, d)
            };
            Expr::binary(op, a, b).unwrap()
        }
        3 if width == 1 => {
            let op = CMPOPS[rng.gen_range(0..CMPOPS.len())];
            let w = rng.gen_range(1..=8);
            Expr::compare(
                op,
                random_expr(rng, leaves, w, d),
                random_expr(rng, leaves, w, d),
            )
            .unwrap()
        }
        3 | 4 => {
            let extra = rng.gen_range(0..=4);
            let inner = random_expr(rng, leaves, width + extra, d);
            let lo = rng.gen_range(0..=extra);
            Expr::extract(lo + width - 1, lo, inner).unwrap()
        }
        5 if width > 1 => {
            let from = rng.gen_range(1..width);
            let inner = random_expr(rng, leaves, from, d);
            if rng.gen() {
                Expr::sign_ext(width - from, inner).unwrap()
            } else {
                Expr::zero_ext(width - from, inner).unwrap()
            }
        }
        6 if width > 1 => {
            let lo_w = rng.gen_range(1..width);
            Expr::concat(
                random_expr(rng, leaves, width - lo_w, d),
                random_expr(rng, leaves, lo_w, d),
            )
            .unwrap()
        }
        _ => Expr::ite(
            random_expr(rng, leaves, 1, d),
            random_expr(rng, leaves, width, d),
            random_expr(rng, leaves, width, d),
        )
        .unwrap(),
    }
}

/// Three 4-bit inputs: 12 bits in total.
pub fn small_leaves() -> Vec<Expr> {
    vec![
        Expr::var(Var::secret("a", 4).unwrap()),
        Expr::var(Var::public("b", 4).unwrap()),
        Expr::var(Var::secret("c", 4).unwrap()),
    ]
}

pub fn fixture_src(name: &str) -> String {
    let path = format!("{}/fixtures/{name}.mir", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn fixture_trace(name: &str) -> leakscope_core::symexec::Trace {
    let prog = leakscope_core::mir::parse(&fixture_src(name)).unwrap();
    let lowered = leakscope_core::pipeline::lower(&prog.functions[0], &Default::default()).unwrap();
    lowered.trace.expect("fixture is constant-time")
}

/// Source text of a random straight-line function. Secret parameters hold at
/// most `secret_bits` bits in total; registers are at most 8 bits wide.
pub fn random_program<R: Rng>(rng: &mut R, secret_bits: u32, len: usize) -> String {
    let mut params = Vec::new();
    let mut regs: Vec<(String, u32)> = Vec::new();
    let mut left = secret_bits;
    let mut i = 0;
    while left > 0 && i < 3 {
        let w = rng.gen_range(1..=left.min(8));
        left -= w;
        let sign = if rng.gen() { "i" } else { "u" };
        params.push(format!("s{i}: secret {sign}{w}"));
        regs.push((format!("s{i}"), w));
        i += 1;
    }
    for j in 0..rng.gen_range(0..=2) {
        let w = rng.gen_range(1..=4);
        params.push(format!("p{j}: public u{w}"));
        regs.push((format!("p{j}"), w));
    }
    let nparams = regs.len();
    let mut body = Vec::new();
    for k in 0..len {
        let (src, w) = regs[rng.gen_range(0..regs.len())].clone();
        let same: Vec<String> = regs
            .iter()
            .filter(|(_, rw)| *rw == w)
            .map(|(n, _)| n.clone())
            .collect();
        let other = |rng: &mut R| -> String {
            if rng.gen_ratio(1, 3) {
                format!("#{}", rng.gen::<u64>() & leakscope_core::bv::mask(w))
            } else {
                same[rng.gen_range(0..same.len())].clone()
            }
        };
        let (dest_w, rhs) = match rng.gen_range(0..12) {
            0..=4 => {
                let op = ["add", "sub", "mul", "and", "or", "xor"][rng.gen_range(0..6)];
                (w, format!("{op} {src}, {}", other(rng)))
            }
            5 => (w, format!("not {src}")),
            6 | 7 => {
                let op = ["shl", "lsr", "asr"][rng.gen_range(0..3)];
                let amount = if rng.gen() {
                    format!("#{}", rng.gen_range(0..w))
                } else {
                    other(rng)
                };
                (w, format!("{op} {src}, {amount}"))
            }
            8 => {
                let fw = rng.gen_range(1..=w);
                let lsb = rng.gen_range(0..=w - fw);
                let op = if rng.gen() { "sbfx" } else { "ubfx" };
                (rng.gen_range(fw..=8), format!("{op} {src}, #{lsb}, #{fw}"))
            }
            9 => {
                let op = if rng.gen() { "sext" } else { "zext" };
                (rng.gen_range(w..=8), format!("{op} {src}"))
            }
            10 => (w, format!("mov {src}")),
            _ => {
                let op = ["add", "xor", "and"][rng.gen_range(0..3)];
                (w, format!("{op} {src}, {}", other(rng)))
            }
        };
        // Reuse a register of the same width now and then, so `prev` is set.
        let reusable: Vec<&(String, u32)> = regs[nparams..]
            .iter()
            .filter(|(_, rw)| *rw == dest_w)
            .collect();
        let dest = if !reusable.is_empty() && rng.gen_ratio(1, 3) {
            reusable[rng.gen_range(0..reusable.len())].0.clone()
        } else {
            let name = format!("r{k}");
            regs.push((name.clone(), dest_w));
            name
        };
        body.push(format!("    {dest}:{dest_w} = {rhs}"));
    }
    format!(
        "func rp({}) {{\n{}\n}}\n",
        params.join(", "),
        body.join("\n")
    )
}

/// Uniformly random value for every parameter of `f`.
pub fn random_env<R: Rng>(
    rng: &mut R,
    f: &leakscope_core::mir::Function,
) -> leakscope_core::bv::Env {
    f.params
        .iter()
        .map(|p| {
            let v = rng.gen::<u64>() & leakscope_core::bv::mask(p.width);
            (
                p.name.clone(),
                leakscope_core::bv::BitVector::new(p.width, v).unwrap(),
            )
        })
        .collect()
}
