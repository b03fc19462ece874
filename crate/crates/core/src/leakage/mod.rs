//! Hamming-weight leakage analyses over symbolic trace records.
//!
//! Every secret-tainted arithmetic/logical record is self-composed (two runs
//! sharing public inputs, differing in the value they produce) and the
//! differential Hamming weight, Hamming distance and ω-class entropy of its
//! destination are optimized. A record is a point of interest when the
//! secret splits its value into few, well-separated weight classes.

mod analyze;
mod continuity;
mod entropy;
mod oracle;
mod pair;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bv::BitVector;
use crate::mir::Opcode;
use crate::solver::{SolverConfig, SolverError};
use crate::symexec::Trace;

pub use analyze::{analyze_record, enumerate_domain, Domain};
pub use continuity::unary_image;
pub use entropy::{binomial, entropy_from_classes};
pub use oracle::{brute_force_metrics, OracleMetrics};
pub use pair::{self_compose, SelfComposedPair, PRIME};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeakModelKind {
    /// Differential Hamming weight `|ω(r) - ω(r')|`.
    Dhw,
    /// Hamming distance between two runs, `ω(r ⊕ r')`.
    HdValue,
    /// Hamming distance between the new and previous register value.
    HdTransition,
    /// ω-class sampling entropy.
    Entropy,
}

impl LeakModelKind {
    pub const ALL: [LeakModelKind; 4] = [
        LeakModelKind::Dhw,
        LeakModelKind::HdValue,
        LeakModelKind::HdTransition,
        LeakModelKind::Entropy,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub models: BTreeSet<LeakModelKind>,
    /// Minimum differential weight that flags a record outright; `None`
    /// means the register width.
    pub nu: Option<u32>,
    /// Smallest Δω between the two values of a determiner.
    pub determiner_floor: u32,
    pub entropy_threshold: f64,
    /// Bit compared by the discriminant check; `None` means the MSB.
    pub discriminant_bit: Option<u32>,
    /// Number of destination values enumerated before giving up on an exact
    /// domain.
    pub domain_limit: usize,
    pub continuity: bool,
    pub solver: SolverConfig,
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            models: [
                LeakModelKind::Dhw,
                LeakModelKind::HdValue,
                LeakModelKind::Entropy,
            ]
            .into(),
            nu: None,
            determiner_floor: 2,
            entropy_threshold: 1.0,
            discriminant_bit: None,
            domain_limit: 4,
            continuity: true,
            solver: SolverConfig::default(),
            jobs: None,
        }
    }
}

impl AnalysisConfig {
    pub fn enabled(&self, m: LeakModelKind) -> bool {
        self.models.contains(&m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    /// The minimum differential weight already reaches the threshold.
    ForcedMax,
    /// Exactly two values, at least `determiner_floor` weights apart.
    TwoClassDeterminer,
    /// Min equals max and the two runs cannot differ at the discriminant bit.
    DiscriminantUnsat,
    /// Min equals max and no value outside the witness pair exists.
    BlockedPairUnsat,
    EntropyLow,
    /// Bijective image of a flagged two-valued register.
    Continuity,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reason::ForcedMax => "forced-max",
            Reason::TwoClassDeterminer => "two-class-determiner",
            Reason::DiscriminantUnsat => "discriminant-unsat",
            Reason::BlockedPairUnsat => "blocked-pair-unsat",
            Reason::EntropyLow => "entropy-low",
            Reason::Continuity => "continuity",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinMax {
    pub max: Option<u32>,
    pub min: Option<u32>,
}

impl MinMax {
    pub fn exact(v: u32) -> Self {
        MinMax {
            max: Some(v),
            min: Some(v),
        }
    }

    pub fn spread(&self) -> Option<u32> {
        Some(self.max? - self.min?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// Every input of the destination expression.
    pub inputs: BTreeMap<String, BitVector>,
    pub value: BitVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witnesses {
    pub w1: Witness,
    pub w2: Witness,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Complete,
    /// Some bound is the best found before a timeout.
    Suboptimal,
    /// Some analysis produced no value before timing out.
    Timeout,
}

mod entropy_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_finite() => {
                let raw =
                    RawValue::from_string(format!("{x:.2}")).map_err(serde::ser::Error::custom)?;
                raw.serialize(s)
            }
            _ => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d)
    }
}

/// Analysis results for one secret-tainted instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub address: u32,
    pub original_address: u32,
    pub iteration: Vec<u32>,
    pub opcode: Opcode,
    pub dest: String,
    pub width: u32,
    pub dhw: Option<MinMax>,
    pub hd: Option<MinMax>,
    pub hd_transition: Option<MinMax>,
    #[serde(with = "entropy_serde")]
    pub entropy: Option<f64>,
    /// Populated ω classes, ascending.
    pub classes: Option<Vec<u32>>,
    /// All destination values, when there are at most `domain_limit`.
    pub domain: Option<Vec<BitVector>>,
    pub determiner: bool,
    pub witnesses: Option<Witnesses>,
    pub vulnerable: bool,
    pub reasons: BTreeSet<Reason>,
    pub notes: Vec<String>,
    pub status: Status,
    pub queries: u32,
}

impl PoiRecord {
    pub(crate) fn flag(&mut self, r: Reason) {
        self.vulnerable = true;
        self.reasons.insert(r);
    }

    pub(crate) fn degrade(&mut self, s: Status) {
        if s == Status::Timeout || self.status == Status::Complete {
            self.status = s;
        }
    }
}

/// Runs the enabled analyses over every candidate record of a trace.
pub struct Analyzer {
    pub config: AnalysisConfig,
}

impl Analyzer {
    pub fn new(config: AnalysisConfig) -> Self {
        Analyzer { config }
    }

    /// Records are returned in address order. Records that are bijective
    /// images of earlier candidates are handled after all others, in address
    /// order, so they can reuse their source's results.
    pub fn run(&self, trace: &Trace) -> Result<Vec<PoiRecord>, SolverError> {
        use rayon::prelude::*;

        let candidates: Vec<usize> = trace
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_candidate())
            .map(|(i, _)| i)
            .collect();
        let sources = continuity::sources(trace, &candidates);
        let (chained, independent): (Vec<usize>, Vec<usize>) = candidates
            .iter()
            .partition(|i| self.config.continuity && sources.contains_key(*i));

        let analyze = |i: &usize| analyze_record(&trace.records[*i], &self.config);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs.unwrap_or(0))
            .build()
            .map_err(|e| SolverError::Process(e.to_string()))?;
        let results: Vec<Result<PoiRecord, SolverError>> =
            pool.install(|| independent.par_iter().map(analyze).collect());

        let mut done: BTreeMap<usize, PoiRecord> = BTreeMap::new();
        for (i, r) in independent.iter().zip(results) {
            done.insert(*i, r?);
        }
        for i in chained {
            let rec = &trace.records[i];
            let (src, g) = &sources[&i];
            let propagated = done
                .get(src)
                .and_then(|s| continuity::propagate(rec, s, g, &self.config));
            let out = match propagated {
                Some(mut p) => {
                    if self.config.enabled(LeakModelKind::HdTransition) {
                        analyze::transition_only(rec, &self.config, &mut p)?;
                    }
                    p
                }
                None => analyze_record(rec, &self.config)?,
            };
            done.insert(i, out);
        }
        Ok(done.into_values().collect())
    }
}
