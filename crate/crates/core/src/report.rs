//! Serialized analysis results.
//!
//! JSON output is deterministic: fields are emitted in declaration order,
//! maps are ordered, records are sorted by address and nothing time- or
//! environment-dependent is included. The schema lives in
//! `schema/report.schema.json`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::leakage::{AnalysisConfig, LeakModelKind, MinMax, PoiRecord, Status};
use crate::mir::Violation;
use crate::solver::BackendKind;

pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Process exit codes of the command-line tool.
pub mod exit {
    /// Nothing flagged, oracle agreement, or no leak detected.
    pub const CLEAN: i32 = 0;
    /// At least one point of interest flagged, an oracle mismatch, or a
    /// detected leak.
    pub const FLAGGED: i32 = 1;
    pub const CT_VIOLATION: i32 = 2;
    pub const SOLVER_FAILURE: i32 = 3;
    pub const ORACLE_INFEASIBLE: i32 = 4;
    pub const NO_WITNESSES: i32 = 5;
    pub const USAGE: i32 = 64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub models: BTreeSet<LeakModelKind>,
    pub nu: Option<u32>,
    pub determiner_floor: u32,
    pub entropy_threshold: f64,
    /// `None` means the most significant bit of each register.
    pub discriminant_bit: Option<u32>,
    pub domain_limit: usize,
    pub continuity: bool,
    pub unroll: u32,
    pub backend: BackendKind,
    pub timeout_secs: u64,
}

impl ReportConfig {
    pub fn new(cfg: &AnalysisConfig, unroll: u32) -> Self {
        ReportConfig {
            models: cfg.models.clone(),
            nu: cfg.nu,
            determiner_floor: cfg.determiner_floor,
            entropy_threshold: cfg.entropy_threshold,
            discriminant_bit: cfg.discriminant_bit,
            domain_limit: cfg.domain_limit,
            continuity: cfg.continuity,
            unroll,
            backend: cfg.solver.backend,
            timeout_secs: cfg.solver.timeout.as_secs(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    /// Instructions after unrolling.
    pub instructions: usize,
    pub candidates: usize,
    pub vulnerable: usize,
    pub suboptimal: usize,
    pub timeouts: usize,
    pub queries: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub function: String,
    /// SHA-256 of the program text.
    pub source_sha256: String,
    pub config: ReportConfig,
    pub summary: Summary,
    pub violations: Vec<Violation>,
    pub records: Vec<PoiRecord>,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Report {
    pub fn new(
        function: &str,
        source: &str,
        config: ReportConfig,
        instructions: usize,
        violations: Vec<Violation>,
        mut records: Vec<PoiRecord>,
    ) -> Self {
        records.sort_by_key(|r| r.address);
        let summary = Summary {
            instructions,
            candidates: records.len(),
            vulnerable: records.iter().filter(|r| r.vulnerable).count(),
            suboptimal: records
                .iter()
                .filter(|r| r.status == Status::Suboptimal)
                .count(),
            timeouts: records
                .iter()
                .filter(|r| r.status == Status::Timeout)
                .count(),
            queries: records.iter().map(|r| r.queries as u64).sum(),
        };
        Report {
            version: env!("CARGO_PKG_VERSION").to_string(),
            function: function.to_string(),
            source_sha256: sha256_hex(source),
            config,
            summary,
            violations,
            records,
        }
    }

    /// Verdict of an analysis run: violations first, then flags.
    pub fn exit_code(&self) -> i32 {
        if !self.violations.is_empty() {
            exit::CT_VIOLATION
        } else if self.summary.vulnerable > 0 {
            exit::FLAGGED
        } else {
            exit::CLEAN
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Report> {
        serde_json::from_str(text)
    }

    /// One header line, one line per violation and one line per record.
    /// Only flagged records contain the word `vulnerable`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = &self.summary;
        let _ = writeln!(
            out,
            "function {}: {} instructions, {} candidates, {} flagged, {} violations",
            self.function,
            s.instructions,
            s.candidates,
            s.vulnerable,
            self.violations.len()
        );
        for v in &self.violations {
            let _ = writeln!(out, "violation: {v}");
        }
        for r in &self.records {
            let _ = writeln!(out, "{}", record_line(r));
        }
        out
    }
}

fn range(m: &Option<MinMax>) -> String {
    match m {
        None => "-".into(),
        Some(m) => {
            let f = |v: Option<u32>| v.map_or("?".to_string(), |v| v.to_string());
            format!("{}..{}", f(m.min), f(m.max))
        }
    }
}

fn record_line(r: &PoiRecord) -> String {
    let origin = if r.iteration.is_empty() {
        String::new()
    } else {
        let it: Vec<String> = r.iteration.iter().map(u32::to_string).collect();
        format!(" ({}#{})", r.original_address, it.join("."))
    };
    let mut line = format!(
        "{:>5}{origin} {:<5} {}:{} dhw {} hd {} tr {} H {}",
        r.address,
        r.opcode.mnemonic(),
        r.dest,
        r.width,
        range(&r.dhw),
        range(&r.hd),
        range(&r.hd_transition),
        r.entropy.map_or("-".to_string(), |h| format!("{h:.2}")),
    );
    if let Some(d) = &r.domain {
        let vals: Vec<String> = d.iter().map(|v| format!("{:#x}", v.value())).collect();
        let _ = write!(line, " domain {{{}}}", vals.join(","));
    }
    if r.vulnerable {
        let reasons: Vec<String> = r.reasons.iter().map(|x| x.to_string()).collect();
        let _ = write!(line, " vulnerable [{}]", reasons.join(","));
    }
    match r.status {
        Status::Complete => {}
        Status::Suboptimal => line.push_str(" (suboptimal)"),
        Status::Timeout => line.push_str(" (timeout)"),
    }
    line
}
