use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leakscope_core::leakage::LeakModelKind;
use leakscope_core::solver::BackendKind;
use leakscope_core::tvla::PowerMode;

#[derive(Parser, Debug)]
#[command(
    name = "leakscope",
    version,
    about = "Finds single-trace power side-channel points of interest in constant-time code",
    after_help = "Exit codes: 0 clean, 1 flagged/mismatch/leak, 2 constant-time violation, \
                  3 solver failure, 4 oracle cap exceeded, 5 point without witnesses, 64 usage"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analyze every secret-dependent instruction and report points of interest.
    Analyze(AnalyzeArgs),
    /// Only run the constant-time check.
    Ctcheck(InputArgs),
    /// Compare the solver results with exhaustive enumeration.
    Oracle(AnalyzeArgs),
    /// Simulate power traces for a point of interest and run Welch's t-test.
    Tvla(TvlaArgs),
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// Program file.
    pub input: PathBuf,
    /// Function to analyze; defaults to the first one in the file.
    #[arg(long)]
    pub function: Option<String>,
    /// Iterations for loops without their own bound.
    #[arg(long, default_value_t = leakscope_core::mir::DEFAULT_UNROLL)]
    pub unroll: u32,
    /// Bound for one loop label, as LABEL=N. Repeatable.
    #[arg(long = "loop-bound", value_name = "LABEL=N", value_parser = parse_bound)]
    pub loop_bounds: Vec<(String, u32)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Dhw,
    Hd,
    HdTransition,
    Entropy,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Builtin,
    External,
    BruteForce,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Builtin => BackendKind::Builtin,
            BackendArg::External => BackendKind::External,
            BackendArg::BruteForce => BackendKind::BruteForce,
        }
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Leakage models; repeat or separate with commas.
    #[arg(long = "model", value_enum, value_delimiter = ',')]
    pub models: Vec<ModelArg>,
    /// Solver backend. Defaults to `external` when --solver is given.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// External SMT-LIB2 solver binary; `$LEAKSCOPE_SOLVER` or `z3` otherwise.
    #[arg(long)]
    pub solver: Option<PathBuf>,
    /// Argument for the external solver, replacing the defaults. Repeatable.
    #[arg(long = "solver-arg", allow_hyphen_values = true)]
    pub solver_args: Vec<String>,
    /// Seconds per solver query.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    /// Largest number of input bits enumerated exhaustively.
    #[arg(long = "oracle-cap", default_value_t = 20)]
    pub oracle_cap: u32,
    /// Differential weight that flags a register outright; defaults to its width.
    #[arg(long)]
    pub nu: Option<u32>,
    /// Bit compared by the discriminant check; defaults to the MSB.
    #[arg(long = "discriminant-bit")]
    pub discriminant_bit: Option<u32>,
    #[arg(long = "entropy-threshold", default_value_t = 1.0)]
    pub entropy_threshold: f64,
    /// Analyze bijective images of two-valued registers from scratch.
    #[arg(long = "no-continuity")]
    pub no_continuity: bool,
    /// Worker threads; 1 gives a serial, fixed query order.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, conflicts_with = "text")]
    pub json: bool,
    #[arg(long)]
    pub text: bool,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long = "corrupt-popcount", hide = true)]
    pub corrupt_popcount: bool,
}

#[derive(Args, Debug)]
pub struct TvlaArgs {
    #[command(flatten)]
    pub analysis: AnalyzeArgs,
    /// Target instruction; defaults to the record with the largest
    /// differential weight.
    #[arg(long)]
    pub address: Option<u32>,
    /// Traces per set.
    #[arg(long, default_value_t = 100)]
    pub traces: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub offset: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value = "hw")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Detection threshold on |t|.
    #[arg(long = "t-threshold", default_value_t = leakscope_core::tvla::T_THRESHOLD_DEFAULT)]
    pub t_threshold: f64,
    /// Weight classes of the two sets as A,B, or `all` for every pair of
    /// populated classes. Defaults to the witnesses' classes.
    #[arg(long, value_parser = parse_classes)]
    pub classes: Option<ClassChoice>,
    /// Write the simulated traces as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the simulated traces in the binary trace format.
    #[arg(long)]
    pub binary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Hw,
    HdTransition,
}

impl From<ModeArg> for PowerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Hw => PowerMode::Hw,
            ModeArg::HdTransition => PowerMode::HdTransition,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassChoice {
    Pair(u32, u32),
    All,
}

fn parse_classes(s: &str) -> Result<ClassChoice, String> {
    if s == "all" {
        return Ok(ClassChoice::All);
    }
    let (a, b) = s.split_once(',').ok_or("expected A,B or all")?;
    let num = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("`{x}`: {e}"));
    Ok(ClassChoice::Pair(num(a)?, num(b)?))
}

fn parse_bound(s: &str) -> Result<(String, u32), String> {
    let (label, n) = s.split_once('=').ok_or("expected LABEL=N")?;
    let n = n.parse::<u32>().map_err(|e| format!("`{n}`: {e}"))?;
    Ok((label.to_string(), n))
}

impl AnalyzeArgs {
    pub fn model_set(&self) -> Vec<LeakModelKind> {
        if self.models.is_empty() {
            return vec![
                LeakModelKind::Dhw,
                LeakModelKind::HdValue,
                LeakModelKind::Entropy,
            ];
        }
        let mut out = Vec::new();
        for m in &self.models {
            match m {
                ModelArg::Dhw => out.push(LeakModelKind::Dhw),
                ModelArg::Hd => out.push(LeakModelKind::HdValue),
                ModelArg::HdTransition => out.push(LeakModelKind::HdTransition),
                ModelArg::Entropy => out.push(LeakModelKind::Entropy),
                ModelArg::All => out.extend(LeakModelKind::ALL),
            }
        }
        out
    }

    pub fn backend(&self) -> BackendKind {
        match (self.backend, &self.solver) {
            (Some(b), _) => b.into(),
            (None, Some(_)) => BackendKind::External,
            (None, None) => BackendKind::Builtin,
        }
    }
}
