use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{Formula, SatResult, Session, SolverConfig, SolverError, Stats};
use crate::bv::{BinOp, BitVector, CmpOp, Env, Expr, Node, Var};

/// Extra wall-clock time granted beyond the solver's own timeout before the
/// process is killed.
const GRACE: Duration = Duration::from_secs(2);

fn quote(name: &str) -> String {
    format!("|{name}|")
}

fn sort(width: u32) -> String {
    format!("(_ BitVec {width})")
}

fn literal(bv: BitVector) -> String {
    let w = bv.width();
    if w.is_multiple_of(4) {
        format!("#x{:0width$x}", bv.value(), width = (w / 4) as usize)
    } else {
        format!("#b{:0width$b}", bv.value(), width = w as usize)
    }
}

/// Emits `define-fun`s for every compound node so shared subterms are
/// written once.
#[derive(Clone, Default)]
struct Emitter {
    names: HashMap<usize, (Expr, String)>,
    declared: BTreeSet<Var>,
    counter: usize,
}

impl Emitter {
    fn term(&self, e: &Expr) -> String {
        match e.node() {
            Node::Var(v) => quote(v.name()),
            Node::Const(c) => literal(*c),
            _ => self.names[&e.id()].1.clone(),
        }
    }

    fn emit(&mut self, root: &Expr, out: &mut String) -> String {
        for e in Expr::post_order(&[root]) {
            if let Node::Var(v) = e.node() {
                if self.declared.insert(v.clone()) {
                    let _ = writeln!(
                        out,
                        "(declare-const {} {})",
                        quote(v.name()),
                        sort(v.width())
                    );
                }
                continue;
            }
            if matches!(e.node(), Node::Const(_)) || self.names.contains_key(&e.id()) {
                continue;
            }
            let t = |x: &Expr| self.term(x);
            let body = match e.node() {
                Node::Not(a) => format!("(bvnot {})", t(a)),
                Node::Binary(op, a, b) => {
                    let f = match op {
                        BinOp::Add => "bvadd",
                        BinOp::Sub => "bvsub",
                        BinOp::Mul => "bvmul",
                        BinOp::And => "bvand",
                        BinOp::Or => "bvor",
                        BinOp::Xor => "bvxor",
                        BinOp::Shl => "bvshl",
                        BinOp::Lshr => "bvlshr",
                        BinOp::Ashr => "bvashr",
                    };
                    format!("({f} {} {})", t(a), t(b))
                }
                Node::Compare(op, a, b) => {
                    let cond = match op {
                        CmpOp::Eq => format!("(= {} {})", t(a), t(b)),
                        CmpOp::Ne => format!("(not (= {} {}))", t(a), t(b)),
                        CmpOp::Ult => format!("(bvult {} {})", t(a), t(b)),
                        CmpOp::Ule => format!("(bvule {} {})", t(a), t(b)),
                        CmpOp::Slt => format!("(bvslt {} {})", t(a), t(b)),
                        CmpOp::Sle => format!("(bvsle {} {})", t(a), t(b)),
                    };
                    format!("(ite {cond} #b1 #b0)")
                }
                Node::Extract { hi, lo, arg } => format!("((_ extract {hi} {lo}) {})", t(arg)),
                Node::ZeroExt { by, arg } => format!("((_ zero_extend {by}) {})", t(arg)),
                Node::SignExt { by, arg } => format!("((_ sign_extend {by}) {})", t(arg)),
                Node::Concat(hi, lo) => format!("(concat {} {})", t(hi), t(lo)),
                Node::Ite(c, a, b) => format!("(ite (= {} #b1) {} {})", t(c), t(a), t(b)),
                Node::Var(_) | Node::Const(_) => unreachable!(),
            };
            let name = quote(&format!(".t{}", self.counter));
            self.counter += 1;
            let _ = writeln!(out, "(define-fun {name} () {} {body})", sort(e.width()));
            self.names.insert(e.id(), (e.clone(), name));
        }
        self.term(root)
    }

    fn assert(&mut self, e: &Expr, out: &mut String) {
        let t = self.emit(e, out);
        let _ = writeln!(out, "(assert (= {t} #b1))");
    }
}

/// A standalone QF_BV script for `formula`, ending in `(check-sat)`.
pub fn to_smtlib(formula: &Formula) -> String {
    let mut out = String::from("(set-logic QF_BV)\n");
    let mut em = Emitter::default();
    for a in &formula.assertions {
        em.assert(a, &mut out);
    }
    out.push_str("(check-sat)\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize_sexp(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' | ')' => {
                toks.push(c.to_string());
                chars.next();
            }
            '|' => {
                chars.next();
                let mut s = String::from("|");
                for d in chars.by_ref() {
                    s.push(d);
                    if d == '|' {
                        break;
                    }
                }
                toks.push(s);
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d == '(' || d == ')' || d.is_whitespace() {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                toks.push(s);
            }
        }
    }
    toks
}

fn parse_sexp(text: &str) -> Result<Sexp, SolverError> {
    fn go(toks: &[String], pos: &mut usize) -> Result<Sexp, SolverError> {
        let tok = toks
            .get(*pos)
            .ok_or_else(|| SolverError::Malformed("unexpected end of s-expression".into()))?;
        *pos += 1;
        match tok.as_str() {
            "(" => {
                let mut items = Vec::new();
                loop {
                    match toks.get(*pos).map(String::as_str) {
                        Some(")") => {
                            *pos += 1;
                            return Ok(Sexp::List(items));
                        }
                        Some(_) => items.push(go(toks, pos)?),
                        None => {
                            return Err(SolverError::Malformed("unbalanced parentheses".into()))
                        }
                    }
                }
            }
            ")" => Err(SolverError::Malformed("unexpected `)`".into())),
            atom => Ok(Sexp::Atom(atom.to_string())),
        }
    }
    let toks = tokenize_sexp(text);
    go(&toks, &mut 0)
}

fn parse_value(s: &Sexp, width: u32) -> Result<BitVector, SolverError> {
    let bad = || SolverError::Malformed(format!("unexpected value {s:?}"));
    let v = match s {
        Sexp::Atom(a) if a.starts_with("#x") => {
            u64::from_str_radix(&a[2..], 16).map_err(|_| bad())?
        }
        Sexp::Atom(a) if a.starts_with("#b") => {
            u64::from_str_radix(&a[2..], 2).map_err(|_| bad())?
        }
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(_)] if u == "_" && bv.starts_with("bv") => {
                bv[2..].parse().map_err(|_| bad())?
            }
            _ => return Err(bad()),
        },
        _ => return Err(bad()),
    };
    BitVector::exact(width, v).map_err(|_| bad())
}

/// Parses a `(get-value ...)` response.
fn parse_model(text: &str, vars: &BTreeSet<Var>) -> Result<Env, SolverError> {
    let by_name: HashMap<&str, &Var> = vars.iter().map(|v| (v.name(), v)).collect();
    let Sexp::List(pairs) = parse_sexp(text)? else {
        return Err(SolverError::Malformed(text.to_string()));
    };
    let mut env = Env::new();
    for p in pairs {
        let Sexp::List(kv) = &p else {
            return Err(SolverError::Malformed(text.to_string()));
        };
        let [Sexp::Atom(k), v] = kv.as_slice() else {
            return Err(SolverError::Malformed(text.to_string()));
        };
        let name = k.trim_matches('|');
        let var = by_name
            .get(name)
            .ok_or_else(|| SolverError::Malformed(format!("unknown symbol {k}")))?;
        env.insert(name.to_string(), parse_value(v, var.width())?);
    }
    Ok(env)
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Process {
    fn spawn(path: &Path, args: &[String]) -> Result<Self, SolverError> {
        let mut child = Command::new(path)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SolverError::Process(format!("cannot start {}: {e}", path.display())))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Process {
            child,
            stdin,
            lines: rx,
        })
    }

    fn send(&mut self, text: &str) -> Result<(), SolverError> {
        self.stdin
            .write_all(text.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| SolverError::Process(e.to_string()))
    }

    /// Reads one complete response, or `None` at the deadline.
    fn response(&mut self, deadline: Instant) -> Result<Option<String>, SolverError> {
        let mut text = String::new();
        let mut depth = 0i64;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(l) => l,
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(SolverError::Process("solver exited unexpectedly".into()))
                }
            };
            if line.trim().is_empty() && text.is_empty() {
                continue;
            }
            for t in tokenize_sexp(&line) {
                match t.as_str() {
                    "(" => depth += 1,
                    ")" => depth -= 1,
                    _ => {}
                }
            }
            text.push_str(&line);
            text.push('\n');
            if depth <= 0 {
                return Ok(Some(text.trim().to_string()));
            }
        }
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// External backend: one long-lived solver process per session, driven
/// incrementally with `push`/`pop`.
pub struct SmtSession {
    formula: Formula,
    path: std::path::PathBuf,
    args: Vec<String>,
    timeout: Duration,
    base: String,
    emitter: Emitter,
    proc: Option<Process>,
    stats: Stats,
}

fn default_args(path: &Path) -> Vec<String> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let v: &[&str] = match stem {
        "z3" => &["-in", "-smt2"],
        "cvc5" | "cvc4" => &["--lang=smt2", "--incremental", "--produce-models"],
        "bitwuzla" | "boolector" => &["--smt2"],
        _ => &[],
    };
    v.iter().map(|s| s.to_string()).collect()
}

impl SmtSession {
    pub fn new(formula: Formula, cfg: &SolverConfig) -> Result<Self, SolverError> {
        let path = cfg.resolved_solver_path();
        let args = cfg
            .solver_args
            .clone()
            .unwrap_or_else(|| default_args(&path));
        let mut base =
            String::from("(set-option :print-success false)\n(set-option :produce-models true)\n");
        let is_z3 = path.file_stem().and_then(|s| s.to_str()) == Some("z3");
        if is_z3 && cfg.timeout < Duration::from_secs(u32::MAX as u64 / 1000) {
            let _ = writeln!(base, "(set-option :timeout {})", cfg.timeout.as_millis());
        }
        base.push_str("(set-logic QF_BV)\n");
        let mut emitter = Emitter::default();
        for a in &formula.assertions {
            emitter.assert(a, &mut base);
        }
        let mut s = SmtSession {
            formula,
            path,
            args,
            timeout: cfg.timeout,
            base,
            emitter,
            proc: None,
            stats: Stats::default(),
        };
        s.process()?;
        Ok(s)
    }

    fn process(&mut self) -> Result<&mut Process, SolverError> {
        if self.proc.is_none() {
            let mut p = Process::spawn(&self.path, &self.args)?;
            p.send(&self.base)?;
            self.proc = Some(p);
        }
        Ok(self.proc.as_mut().expect("just spawned"))
    }

    fn deadline(&self) -> Instant {
        Instant::now()
            .checked_add(self.timeout.saturating_add(GRACE))
            .unwrap_or_else(|| Instant::now() + Duration::from_secs(365 * 24 * 3600))
    }
}

impl Session for SmtSession {
    fn formula(&self) -> &Formula {
        &self.formula
    }

    fn check_raw(&mut self, extra: &[Expr]) -> Result<SatResult, SolverError> {
        let mut scoped = self.emitter.clone();
        let mut script = String::from("(push 1)\n");
        for e in extra {
            scoped.assert(e, &mut script);
        }
        script.push_str("(check-sat)\n");
        let deadline = self.deadline();
        let vars = scoped.declared.clone();
        let proc = self.process()?;
        proc.send(&script)?;
        let Some(answer) = proc.response(deadline)? else {
            self.proc = None;
            return Ok(SatResult::Unknown);
        };
        let result = match answer.as_str() {
            "sat" => {
                if vars.is_empty() {
                    SatResult::Sat(Env::new())
                } else {
                    let names: Vec<String> = vars.iter().map(|v| quote(v.name())).collect();
                    proc.send(&format!("(get-value ({}))\n", names.join(" ")))?;
                    let Some(text) = proc.response(deadline)? else {
                        self.proc = None;
                        return Ok(SatResult::Unknown);
                    };
                    SatResult::Sat(parse_model(&text, &vars)?)
                }
            }
            "unsat" => SatResult::Unsat,
            "unknown" | "timeout" => SatResult::Unknown,
            other => {
                self.proc = None;
                return Err(SolverError::Malformed(other.to_string()));
            }
        };
        proc.send("(pop 1)\n")?;
        Ok(result)
    }

    fn stats_mut(&mut self) -> &mut Stats {
        &mut self.stats
    }

    fn stats(&self) -> Stats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emits_shared_nodes_once() {
        let x = Expr::var(Var::secret("x'", 8).unwrap());
        let s = x.add(&x);
        let f = Formula::new(vec![s.add(&s).ne_expr(&Expr::const_u64(8, 3).unwrap())]);
        let text = to_smtlib(&f);
        assert!(text.contains("(declare-const |x'| (_ BitVec 8))"));
        assert_eq!(text.matches("(bvadd |x'| |x'|)").count(), 1);
        assert!(text.contains("#x03"));
        assert!(text.ends_with("(check-sat)\n"));
    }

    #[test]
    fn parses_values() {
        let vars: BTreeSet<Var> =
            [Var::secret("x", 8).unwrap(), Var::public("y", 3).unwrap()].into();
        let env = parse_model("((|x| #x0a)\n (|y| (_ bv5 3)))", &vars).unwrap();
        assert_eq!(env["x"].value(), 10);
        assert_eq!(env["y"].value(), 5);
        let env = parse_model("((|x| #b00000001) (|y| #b111))", &vars).unwrap();
        assert_eq!(env["x"].value(), 1);
        assert!(parse_model("((|x| #x100))", &vars).is_err());
    }
}
