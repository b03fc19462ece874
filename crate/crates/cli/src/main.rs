mod args;

use std::fs;
use std::io::{self, Write};
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::Parser;
use leakscope_core::leakage::{brute_force_metrics, LeakModelKind, PoiRecord};
use leakscope_core::mir::{ct_check, parse, unroll, Function, LoopBounds, TaintDecl, Violation};
use leakscope_core::pipeline::{analyze_function, lower, LowerError};
use leakscope_core::report::exit;
use leakscope_core::solver::{inject_popcount_fault, SolverConfig, SolverError};
use leakscope_core::symexec::{StepRecord, Trace};
use leakscope_core::tvla::{
    gen_test_vectors, gen_test_vectors_for_classes, run_tvla, write_binary, write_csv, LeakModel,
    TestVectorSet, TraceSet, TvlaError, TvlaOutcome, T_THRESHOLD_CONVENTIONAL,
};
use leakscope_core::{AnalysisConfig, Analyzer};

use args::{AnalyzeArgs, ClassChoice, Cli, Command, InputArgs, TvlaArgs};

/// An error together with the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl ToString) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn usage(message: impl ToString) -> Failure {
    fail(exit::USAGE, message)
}

type Outcome = Result<i32, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::USAGE as u8),
            };
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Ctcheck(i) => ctcheck(i),
        Command::Oracle(a) => oracle(a),
        Command::Tvla(t) => tvla(t),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("leakscope: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn load(input: &InputArgs) -> Result<(String, Function), Failure> {
    let path = input.input.display();
    let src = fs::read_to_string(&input.input).map_err(|e| usage(format!("{path}: {e}")))?;
    let mut prog = parse(&src).map_err(|e| usage(format!("{path}: {e}")))?;
    let f = match &input.function {
        Some(name) => prog
            .functions
            .iter()
            .position(|f| &f.name == name)
            .map(|i| prog.functions.swap_remove(i))
            .ok_or_else(|| usage(format!("{path}: no function `{name}`")))?,
        None if prog.functions.is_empty() => return Err(usage(format!("{path}: no functions"))),
        None => prog.functions.remove(0),
    };
    Ok((src, f))
}

fn bounds(input: &InputArgs) -> LoopBounds {
    let mut b = LoopBounds::with_default(input.unroll);
    b.overrides.extend(input.loop_bounds.iter().cloned());
    b
}

fn config(a: &AnalyzeArgs) -> Result<AnalysisConfig, Failure> {
    if a.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    if a.timeout == 0 {
        return Err(usage("--timeout must be at least 1 second"));
    }
    if a.entropy_threshold.is_nan() || a.entropy_threshold < 0.0 {
        return Err(usage("--entropy-threshold must be non-negative"));
    }
    if a.oracle_cap >= 64 {
        return Err(usage("--oracle-cap must be below 64"));
    }
    if !a.solver_args.is_empty() && a.backend() != leakscope_core::solver::BackendKind::External {
        return Err(usage("--solver-arg needs the external backend"));
    }
    inject_popcount_fault(a.corrupt_popcount);
    Ok(AnalysisConfig {
        models: a.model_set().into_iter().collect(),
        nu: a.nu,
        discriminant_bit: a.discriminant_bit,
        entropy_threshold: a.entropy_threshold,
        continuity: !a.no_continuity,
        jobs: a.jobs,
        solver: SolverConfig {
            backend: a.backend(),
            timeout: Duration::from_secs(a.timeout),
            oracle_cap: a.oracle_cap,
            solver_path: a.solver.clone(),
            solver_args: (!a.solver_args.is_empty()).then(|| a.solver_args.clone()),
        },
        ..Default::default()
    })
}

fn lower_failure(e: LowerError) -> Failure {
    match e {
        LowerError::Solver(e) => solver_failure(e),
        e => usage(e),
    }
}

fn solver_failure(e: SolverError) -> Failure {
    match e {
        SolverError::OracleInfeasible { .. } => fail(exit::ORACLE_INFEASIBLE, e),
        e => fail(exit::SOLVER_FAILURE, e),
    }
}

fn emit(a: &AnalyzeArgs, text: &str) -> Result<(), Failure> {
    match &a.output {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| fail(exit::SOLVER_FAILURE, e)),
    }
}

fn report_violations(function: &str, violations: &[Violation]) {
    eprintln!("function {function} is not constant-time:");
    for v in violations {
        eprintln!("  {v}");
    }
}

fn analyze(a: &AnalyzeArgs) -> Outcome {
    let cfg = config(a)?;
    let (src, f) = load(&a.input)?;
    let (report, _) = analyze_function(&f, &src, &bounds(&a.input), &cfg).map_err(lower_failure)?;
    if !report.violations.is_empty() {
        report_violations(&f.name, &report.violations);
    }
    let out = if a.json {
        report.to_json()
    } else {
        report.to_text()
    };
    emit(a, &out)?;
    Ok(report.exit_code())
}

fn ctcheck(input: &InputArgs) -> Outcome {
    let (_, f) = load(input)?;
    let g = unroll(&f, &bounds(input)).map_err(usage)?;
    let violations = ct_check(&g, &TaintDecl::from_function(&g));
    if violations.is_empty() {
        println!("function {}: constant-time", f.name);
        return Ok(exit::CLEAN);
    }
    println!("function {}: {} violations", f.name, violations.len());
    for v in &violations {
        println!("violation: {v}");
    }
    Ok(exit::CT_VIOLATION)
}

/// Lowers and analyzes; constant-time violations end the command early.
fn lowered_records(
    a: &AnalyzeArgs,
    cfg: &AnalysisConfig,
) -> Result<(Function, Trace, Vec<PoiRecord>), Failure> {
    let (_, f) = load(&a.input)?;
    let low = lower(&f, &bounds(&a.input)).map_err(lower_failure)?;
    let Some(trace) = low.trace else {
        report_violations(&f.name, &low.violations);
        return Err(fail(exit::CT_VIOLATION, "analysis skipped"));
    };
    let records = Analyzer::new(cfg.clone())
        .run(&trace)
        .map_err(solver_failure)?;
    Ok((low.function, trace, records))
}

fn input_bits(rec: &StepRecord) -> u32 {
    let roots: Vec<_> = rec.expr.iter().chain(rec.prev.iter()).collect();
    leakscope_core::bv::Expr::vars_of(&roots)
        .iter()
        .map(|v| v.width())
        .sum()
}

fn range(m: Option<leakscope_core::leakage::MinMax>) -> String {
    match m {
        None => "-".into(),
        Some(m) => format!(
            "{}..{}",
            m.min.map_or("?".into(), |v| v.to_string()),
            m.max.map_or("?".into(), |v| v.to_string())
        ),
    }
}

fn oracle(a: &AnalyzeArgs) -> Outcome {
    let mut cfg = config(a)?;
    if a.models.is_empty() {
        cfg.models = LeakModelKind::ALL.into();
    }
    let (_, f) = load(&a.input)?;
    let low = lower(&f, &bounds(&a.input)).map_err(lower_failure)?;
    let Some(trace) = low.trace else {
        report_violations(&f.name, &low.violations);
        return Ok(exit::CT_VIOLATION);
    };
    let too_wide: Vec<(u32, u32)> = trace
        .records
        .iter()
        .filter(|r| r.is_candidate())
        .map(|r| (r.address, input_bits(r)))
        .filter(|&(_, bits)| bits > a.oracle_cap)
        .collect();
    if let Some(&(address, bits)) = too_wide.first() {
        return Err(fail(
            exit::ORACLE_INFEASIBLE,
            format!(
                "address {address} depends on {bits} input bits, above the cap of {}; raise --oracle-cap",
                a.oracle_cap
            ),
        ));
    }
    let records = Analyzer::new(cfg.clone())
        .run(&trace)
        .map_err(solver_failure)?;
    let mut mismatches = 0;
    let mut out = String::new();
    for r in &records {
        let rec = trace.record(r.address).expect("record of this trace");
        let o = brute_force_metrics(rec, a.oracle_cap).map_err(solver_failure)?;
        let mut diffs = Vec::new();
        if cfg.enabled(LeakModelKind::Dhw) && r.dhw != o.dhw {
            diffs.push(format!("dhw {} vs {}", range(r.dhw), range(o.dhw)));
        }
        if cfg.enabled(LeakModelKind::HdValue) && r.hd != o.hd {
            diffs.push(format!("hd {} vs {}", range(r.hd), range(o.hd)));
        }
        if cfg.enabled(LeakModelKind::HdTransition) && r.hd_transition != Some(o.hd_transition) {
            diffs.push(format!(
                "tr {} vs {}",
                range(r.hd_transition),
                range(Some(o.hd_transition))
            ));
        }
        if cfg.enabled(LeakModelKind::Entropy) && r.classes.as_ref() != Some(&o.classes) {
            diffs.push(format!("classes {:?} vs {:?}", r.classes, o.classes));
        }
        let line = format!(
            "{:>5} {:<5} {}:{}",
            r.address,
            r.opcode.mnemonic(),
            r.dest,
            r.width
        );
        if diffs.is_empty() {
            out.push_str(&format!("{line} ok\n"));
        } else {
            mismatches += 1;
            out.push_str(&format!(
                "{line} MISMATCH {} (solver vs enumeration)\n",
                diffs.join(", ")
            ));
        }
    }
    out.push_str(&format!(
        "{} records, {mismatches} mismatches\n",
        records.len()
    ));
    emit(a, &out)?;
    Ok(if mismatches == 0 {
        exit::CLEAN
    } else {
        exit::FLAGGED
    })
}

fn tvla_failure(e: TvlaError) -> Failure {
    match e {
        TvlaError::NoRecord(_) | TvlaError::NoWitnesses(_) => fail(exit::NO_WITNESSES, e),
        TvlaError::Solver(e) => solver_failure(e),
        e => usage(e),
    }
}

/// The flagged record with the largest differential weight, lowest address
/// first among ties.
fn auto_target(records: &[PoiRecord]) -> Option<&PoiRecord> {
    records
        .iter()
        .filter(|r| r.witnesses.is_some())
        .max_by_key(|r| {
            let d = r.dhw.and_then(|m| m.max).unwrap_or(0);
            (r.vulnerable, d, std::cmp::Reverse(r.address))
        })
}

fn tvla(t: &TvlaArgs) -> Outcome {
    let a = &t.analysis;
    if t.traces < 2 {
        return Err(usage("--traces must be at least 2"));
    }
    if t.alpha.is_nan()
        || t.alpha <= 0.0
        || t.sigma.is_nan()
        || t.sigma < 0.0
        || !t.offset.is_finite()
    {
        return Err(usage("--alpha must be positive and --sigma non-negative"));
    }
    if t.t_threshold.is_nan() || t.t_threshold <= 0.0 {
        return Err(usage("--t-threshold must be positive"));
    }
    let cfg = config(a)?;
    let (f, trace, records) = match lowered_records(a, &cfg) {
        Err(e) if e.code == exit::CT_VIOLATION => return Ok(exit::CT_VIOLATION),
        other => other?,
    };
    let poi = match t.address {
        Some(addr) => records
            .iter()
            .find(|r| r.address == addr)
            .ok_or(TvlaError::NoRecord(addr))
            .map_err(tvla_failure)?,
        None => auto_target(&records)
            .ok_or_else(|| fail(exit::NO_WITNESSES, "no record has witnesses to test"))?,
    };
    if poi.witnesses.is_none() {
        return Err(tvla_failure(TvlaError::NoWitnesses(poi.address)));
    }
    let pairs: Vec<Option<(u32, u32)>> = match t.classes {
        None => vec![None],
        Some(ClassChoice::Pair(x, y)) => vec![Some((x, y))],
        Some(ClassChoice::All) => {
            let classes = poi
                .classes
                .as_ref()
                .ok_or_else(|| usage("--classes all needs the entropy model"))?;
            let mut v = Vec::new();
            for (i, &x) in classes.iter().enumerate() {
                for &y in &classes[i + 1..] {
                    v.push(Some((x, y)));
                }
            }
            v
        }
    };
    let model = LeakModel {
        alpha: t.alpha,
        offset: t.offset,
        sigma: t.sigma,
        mode: t.mode.into(),
        seed: t.seed,
    };

    let mut outcomes: Vec<TvlaOutcome> = Vec::new();
    let mut sets: Vec<(String, TraceSet)> = Vec::new();
    for pair in &pairs {
        let vectors: TestVectorSet = match pair {
            None => gen_test_vectors(&trace, poi, t.traces, t.seed, &cfg.solver),
            Some(k) => gen_test_vectors_for_classes(&trace, poi, *k, t.traces, t.seed, &cfg.solver),
        }
        .map_err(tvla_failure)?;
        let (o, sa, sb) = run_tvla(&f, &vectors, &model, t.t_threshold).map_err(tvla_failure)?;
        for w in &o.warnings {
            eprintln!("warning: {w}");
        }
        let prefix = if pairs.len() > 1 {
            format!("{}-{}/", o.classes.0, o.classes.1)
        } else {
            String::new()
        };
        sets.push((format!("{prefix}A"), sa));
        sets.push((format!("{prefix}B"), sb));
        outcomes.push(o);
    }

    if let Some(p) = &t.csv {
        let mut buf = Vec::new();
        let labelled: Vec<(&str, &TraceSet)> = sets.iter().map(|(l, s)| (l.as_str(), s)).collect();
        write_csv(&mut buf, &labelled).expect("writing to memory");
        fs::write(p, buf).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &t.binary {
        let mut buf = Vec::new();
        let all: Vec<&TraceSet> = sets.iter().map(|(_, s)| s).collect();
        write_binary(&mut buf, &all).expect("writing to memory");
        fs::write(p, buf).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }

    let text = if a.json {
        let mut s = serde_json::to_string_pretty(&outcomes).expect("outcomes serialize");
        s.push('\n');
        s
    } else {
        tvla_text(&outcomes)
    };
    emit(a, &text)?;
    Ok(if outcomes.iter().any(|o| o.leak) {
        exit::FLAGGED
    } else {
        exit::CLEAN
    })
}

fn tvla_text(outcomes: &[TvlaOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let verdict = |leak: bool| if leak { "leak" } else { "no leak" };
        s.push_str(&format!(
            "address {} classes {},{}: {} traces per set, |t| = {:.2}, {} at {}, {} at {}\n",
            o.address,
            o.classes.0,
            o.classes.1,
            o.traces_per_set,
            o.target_t,
            verdict(o.leak),
            o.threshold,
            verdict(o.leak_conventional),
            T_THRESHOLD_CONVENTIONAL,
        ));
        for p in &o.points {
            let mark = if p.leak { " *" } else { "" };
            s.push_str(&format!("{:>7} t {:+.2}{mark}\n", p.address, p.t));
        }
    }
    s
}
