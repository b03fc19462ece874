//! Statistical confirmation of points of interest on simulated power traces.
//!
//! Two input sets are drawn so that the target register falls into two
//! chosen Hamming-weight classes, the program is executed concretely on each
//! input and every assignment contributes one sample
//! `offset + α·ω(value) + N(0, σ)`. Welch's t-test then compares the two
//! sets point by point.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bv::{eval, popcount, BitVector, BvError, Env, Expr, Var};
use crate::leakage::PoiRecord;
use crate::mir::{execute, ExecError, Function};
use crate::solver::{encode_popcount, open_session, Formula, SatResult, SolverConfig, SolverError};
use crate::symexec::Trace;

/// Conventional TVLA threshold.
pub const T_THRESHOLD_CONVENTIONAL: f64 = 4.5;
pub const T_THRESHOLD_DEFAULT: f64 = 10.0;

/// Magic bytes opening a binary trace file.
pub const TRACE_MAGIC: &[u8; 8] = b"LSTRACE1";

#[derive(Debug, Error)]
pub enum TvlaError {
    #[error("no candidate record at address {0}")]
    NoRecord(u32),
    #[error("record at address {0} has no witnesses")]
    NoWitnesses(u32),
    #[error("test vector count must be at least 1")]
    ZeroCount,
    #[error("weight class {class} is empty for the fixed public inputs")]
    EmptyClass { class: u32 },
    #[error("welch t-test needs at least two traces per set")]
    TooFewTraces,
    #[error("invalid leakage model: {0}")]
    Model(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Expr(#[from] BvError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    /// Hamming weight of the value written.
    #[default]
    Hw,
    /// Hamming weight plus the distance to the overwritten value.
    HdTransition,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakModel {
    pub alpha: f64,
    pub offset: f64,
    pub sigma: f64,
    pub mode: PowerMode,
    pub seed: u64,
}

impl Default for LeakModel {
    fn default() -> Self {
        LeakModel {
            alpha: 1.0,
            offset: 0.0,
            sigma: 1.0,
            mode: PowerMode::Hw,
            seed: 0,
        }
    }
}

/// Inputs whose target value falls in weight class `classes.0` (set A) or
/// `classes.1` (set B). Public inputs are identical across both sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TestVectorSet {
    pub address: u32,
    pub classes: (u32, u32),
    pub a: Vec<Env>,
    pub b: Vec<Env>,
    pub warnings: Vec<String>,
}

/// Samples per trace, one column per executed assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    /// Instruction address of each column.
    pub points: Vec<u32>,
    pub traces: Vec<Vec<f64>>,
    pub model: LeakModel,
}

fn fixed_publics(inputs: &[Var], witness: &Env) -> Env {
    inputs
        .iter()
        .filter(|v| !v.is_secret())
        .map(|v| {
            let bv = witness
                .get(v.name())
                .copied()
                .unwrap_or_else(|| BitVector::zero(v.width()).expect("valid width"));
            (v.name().to_string(), bv)
        })
        .collect()
}

fn random_secrets(rng: &mut ChaCha8Rng, inputs: &[Var], base: &Env) -> Env {
    let mut env = base.clone();
    for v in inputs.iter().filter(|v| v.is_secret()) {
        let raw = rng.gen::<u64>() & crate::bv::mask(v.width());
        env.insert(
            v.name().to_string(),
            BitVector::new(v.width(), raw).expect("masked"),
        );
    }
    env
}

/// Draws `count` inputs for one class: uniform rejection sampling first,
/// then distinct solver models under blocking, repeating cyclically when the
/// class holds fewer than `count` assignments.
struct Sampler<'a> {
    expr: &'a Expr,
    inputs: &'a [Var],
    publics: &'a Env,
    solver: &'a SolverConfig,
}

impl Sampler<'_> {
    fn draw(
        &self,
        class: u32,
        count: usize,
        rng: &mut ChaCha8Rng,
        warnings: &mut Vec<String>,
    ) -> Result<Vec<Env>, TvlaError> {
        let Sampler {
            expr,
            inputs,
            publics,
            solver,
        } = *self;
        let in_class =
            |env: &Env| -> Result<bool, BvError> { Ok(popcount(eval(expr, env)?) == class) };
        let secrets: Vec<&Var> = inputs.iter().filter(|v| v.is_secret()).collect();
        let key =
            |env: &Env| -> Vec<u64> { secrets.iter().map(|v| env[v.name()].value()).collect() };
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(count);
        for _ in 0..256 * count {
            let env = random_secrets(rng, inputs, publics);
            if in_class(&env)? && seen.insert(key(&env)) {
                out.push(env);
                if out.len() == count {
                    return Ok(out);
                }
            }
        }

        // Rare class: enumerate the remaining assignments of the secrets the
        // value depends on, blocking those already drawn.
        let relevant: Vec<Var> = expr.vars().into_iter().filter(Var::is_secret).collect();
        let block_of = |env: &Env| {
            relevant
                .iter()
                .map(|v| Expr::var(v.clone()).eq_expr(&Expr::constant(env[v.name()])))
                .reduce(|a, b| a.and(&b))
                .map(Expr::not)
        };
        let pc = encode_popcount(expr);
        let mut assertions =
            vec![pc.eq_expr(&Expr::constant(BitVector::new(pc.width(), class as u64)?))];
        for (name, bv) in publics {
            if let Some(v) = inputs.iter().find(|v| v.name() == name) {
                assertions.push(Expr::var(v.clone()).eq_expr(&Expr::constant(*bv)));
            }
        }
        let mut session = open_session(solver, Formula::new(assertions))?;
        let mut blocks: Vec<Expr> = out.iter().filter_map(block_of).collect();
        let mut found: Vec<Env> = Vec::new();
        while out.len() + found.len() < count {
            match session.check(&blocks)? {
                SatResult::Sat(m) => {
                    let mut env = random_secrets(rng, inputs, publics);
                    for v in &relevant {
                        if let Some(bv) = m.get(v.name()) {
                            env.insert(v.name().to_string(), *bv);
                        }
                    }
                    if !in_class(&env)? {
                        return Err(
                            SolverError::InvalidModel(format!("class {class} model")).into()
                        );
                    }
                    let block = block_of(&env);
                    found.push(env);
                    match block {
                        Some(b) => blocks.push(b),
                        None => break,
                    }
                }
                SatResult::Unsat | SatResult::Unknown => break,
            }
        }
        out.extend(found);
        if out.is_empty() {
            return Err(TvlaError::EmptyClass { class });
        }
        if out.len() < count {
            warnings.push(format!(
            "class {class} has only {} distinct input(s); repeating them to fill {count} vectors",
            out.len()
        ));
            let n = out.len();
            for i in 0..count - n {
                out.push(out[i % n].clone());
            }
        }
        Ok(out)
    }
}

/// Test vectors for the two weight classes of the record's witnesses.
pub fn gen_test_vectors(
    trace: &Trace,
    poi: &PoiRecord,
    count: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<TestVectorSet, TvlaError> {
    let w = poi
        .witnesses
        .as_ref()
        .ok_or(TvlaError::NoWitnesses(poi.address))?;
    let classes = (popcount(w.w1.value), popcount(w.w2.value));
    gen_test_vectors_for_classes(trace, poi, classes, count, seed, solver)
}

/// Test vectors for an explicit pair of weight classes. Public inputs are
/// fixed to those of the first witness.
pub fn gen_test_vectors_for_classes(
    trace: &Trace,
    poi: &PoiRecord,
    classes: (u32, u32),
    count: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<TestVectorSet, TvlaError> {
    if count == 0 {
        return Err(TvlaError::ZeroCount);
    }
    let w = poi
        .witnesses
        .as_ref()
        .ok_or(TvlaError::NoWitnesses(poi.address))?;
    let expr = trace
        .record(poi.address)
        .and_then(|r| r.expr.clone())
        .ok_or(TvlaError::NoRecord(poi.address))?;
    let inputs: Vec<Var> = trace.inputs.iter().cloned().collect();
    let publics = fixed_publics(&inputs, &w.w1.inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let sampler = Sampler {
        expr: &expr,
        inputs: &inputs,
        publics: &publics,
        solver,
    };
    let a = sampler.draw(classes.0, count, &mut rng, &mut warnings)?;
    let b = sampler.draw(classes.1, count, &mut rng, &mut warnings)?;
    Ok(TestVectorSet {
        address: poi.address,
        classes,
        a,
        b,
        warnings,
    })
}

/// Executes `f` on each input; trace `i` draws its noise from stream
/// `first_index + i` of the model's seed, so any trace can be regenerated
/// on its own.
pub fn simulate_traces(
    f: &Function,
    inputs: &[Env],
    m: &LeakModel,
    first_index: u64,
) -> Result<TraceSet, TvlaError> {
    if m.alpha.is_nan() || m.alpha <= 0.0 || m.sigma.is_nan() || m.sigma < 0.0 {
        return Err(TvlaError::Model(format!(
            "alpha {} sigma {}",
            m.alpha, m.sigma
        )));
    }
    let noise = Normal::new(0.0, m.sigma).map_err(|e| TvlaError::Model(e.to_string()))?;
    let mut points = Vec::new();
    let mut traces = Vec::with_capacity(inputs.len());
    for (i, env) in inputs.iter().enumerate() {
        let steps = execute(f, env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
        rng.set_stream(first_index + i as u64);
        let mut row = Vec::new();
        let mut cols = Vec::new();
        for s in &steps {
            let Some(v) = s.value else { continue };
            let mut hw = popcount(v) as f64;
            if m.mode == PowerMode::HdTransition {
                let prev = s.prev.map_or(0, |p| p.value());
                hw += (v.value() ^ prev).count_ones() as f64;
            }
            row.push(m.offset + m.alpha * hw + noise.sample(&mut rng));
            cols.push(s.address);
        }
        if i == 0 {
            points = cols;
        }
        traces.push(row);
    }
    Ok(TraceSet {
        points,
        traces,
        model: *m,
    })
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n, mean, var)
}

/// Welch's t statistic per column. Columns with zero variance on both sides
/// give 0 when the means agree and `+inf` otherwise.
pub fn welch_t(a: &TraceSet, b: &TraceSet) -> Result<Vec<f64>, TvlaError> {
    if a.traces.len() < 2 || b.traces.len() < 2 {
        return Err(TvlaError::TooFewTraces);
    }
    let cols = a.points.len();
    Ok((0..cols)
        .map(|j| {
            let (na, ma, va) = mean_var(a.traces.iter().map(move |t| t[j]));
            let (nb, mb, vb) = mean_var(b.traces.iter().map(move |t| t[j]));
            let se = (va / na + vb / nb).sqrt();
            if se == 0.0 {
                if ma == mb {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (ma - mb) / se
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointT {
    pub address: u32,
    pub t: f64,
    pub leak: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvlaOutcome {
    pub address: u32,
    pub classes: (u32, u32),
    pub traces_per_set: usize,
    pub threshold: f64,
    /// |t| at the target address.
    pub target_t: f64,
    pub leak: bool,
    /// The same verdict at the conventional threshold.
    pub leak_conventional: bool,
    pub points: Vec<PointT>,
    pub warnings: Vec<String>,
}

/// Generates vectors, simulates both sets and tests every point.
pub fn run_tvla(
    f: &Function,
    vectors: &TestVectorSet,
    model: &LeakModel,
    threshold: f64,
) -> Result<(TvlaOutcome, TraceSet, TraceSet), TvlaError> {
    let a = simulate_traces(f, &vectors.a, model, 0)?;
    let b = simulate_traces(f, &vectors.b, model, vectors.a.len() as u64)?;
    let t = welch_t(&a, &b)?;
    let points: Vec<PointT> = a
        .points
        .iter()
        .zip(&t)
        .map(|(&address, &t)| PointT {
            address,
            t,
            leak: t.abs() >= threshold,
        })
        .collect();
    let target_t = points
        .iter()
        .find(|p| p.address == vectors.address)
        .map_or(0.0, |p| p.t.abs());
    let outcome = TvlaOutcome {
        address: vectors.address,
        classes: vectors.classes,
        traces_per_set: vectors.a.len(),
        threshold,
        target_t,
        leak: target_t >= threshold,
        leak_conventional: target_t >= T_THRESHOLD_CONVENTIONAL,
        points,
        warnings: vectors.warnings.clone(),
    };
    Ok((outcome, a, b))
}

/// One row per trace: set label, trace index, then one column per point.
pub fn write_csv(w: &mut dyn Write, sets: &[(&str, &TraceSet)]) -> io::Result<()> {
    let points = sets.first().map(|s| s.1.points.clone()).unwrap_or_default();
    write!(w, "set,trace")?;
    for p in &points {
        write!(w, ",p{p}")?;
    }
    writeln!(w)?;
    for (label, set) in sets {
        for (i, t) in set.traces.iter().enumerate() {
            write!(w, "{label},{i}")?;
            for x in t {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Magic, then `u64` trace and point counts, `u32` point addresses, one
/// `u8` set index per trace and the samples as row-major `f64`, all little
/// endian.
pub fn write_binary(w: &mut dyn Write, sets: &[&TraceSet]) -> io::Result<()> {
    let points = sets.first().map(|s| s.points.clone()).unwrap_or_default();
    let total: usize = sets.iter().map(|s| s.traces.len()).sum();
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&(total as u64).to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in &points {
        w.write_all(&p.to_le_bytes())?;
    }
    for (k, s) in sets.iter().enumerate() {
        w.write_all(&vec![k as u8; s.traces.len()])?;
    }
    for s in sets {
        for t in &s.traces {
            for x in t {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Contents of a binary trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub points: Vec<u32>,
    /// Index of the set each trace came from.
    pub labels: Vec<u8>,
    pub traces: Vec<Vec<f64>>,
}

/// Inverse of [`write_binary`].
pub fn read_binary(bytes: &[u8]) -> io::Result<TraceFile> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut cur = bytes;
    let mut take = |n: usize| -> io::Result<&[u8]> {
        if cur.len() < n {
            return Err(bad("truncated trace file"));
        }
        let (h, t) = cur.split_at(n);
        cur = t;
        Ok(h)
    };
    if take(8)? != TRACE_MAGIC {
        return Err(bad("not a trace file"));
    }
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let n = u64_at(take(8)?) as usize;
    let m = u64_at(take(8)?) as usize;
    let points = (0..m)
        .map(|_| take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes"))))
        .collect::<io::Result<Vec<_>>>()?;
    let labels = take(n)?.to_vec();
    let mut traces = Vec::with_capacity(n);
    for _ in 0..n {
        let row = (0..m)
            .map(|_| take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect::<io::Result<Vec<_>>>()?;
        traces.push(row);
    }
    Ok(TraceFile {
        points,
        labels,
        traces,
    })
}
