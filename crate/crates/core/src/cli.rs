//! Command-line surface: argument parsing, text/JSON rendering, corpus runs
//! and the exit-code contract.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::expr::{equivalent_up_to_sign, Expr};
use crate::frontend::{parse, parse_expr, parse_point, render, DaeSystem, Format};
use crate::jacobian::render_matrix;
use crate::pipeline::{
    analyze, regularize, solution_scheme, success_check, AnalysisReport, Iteration, Options, Policy, Tolerances,
    Verdict,
};
use crate::sigma::{signature_matrix, system_offsets, tableau};

pub const EXIT_USAGE: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "sigma-reg", version, about = "Structural analysis and regularization of DAE systems")]
pub struct Cli {
    /// Accepted for compatibility; output is never colored.
    #[arg(long, global = true)]
    pub no_color: bool,
    /// Emit JSON instead of text.
    #[arg(long, global = true, conflicts_with = "tableau")]
    pub json: bool,
    /// Emit text tableaus (the default).
    #[arg(long, global = true)]
    pub tableau: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a system and print it back.
    Parse { file: PathBuf },
    /// Signature matrix, offsets, Jacobian and verdict without conversion.
    Analyze { file: PathBuf },
    /// Regularize by LC and/or ES conversion steps.
    Convert {
        file: PathBuf,
        #[command(flatten)]
        conv: ConvertArgs,
    },
    /// Stage-wise solution scheme.
    Scheme {
        file: PathBuf,
        /// Last stage to list.
        #[arg(long, default_value_t = 0)]
        stages: i64,
    },
    /// Numeric success check at a point.
    Check {
        file: PathBuf,
        /// File of `<atom> = <number>` lines.
        #[arg(long)]
        point: PathBuf,
        /// Relative residual tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol_r: f64,
        /// Absolute determinant threshold (default 1e3·eps·‖J‖∞).
        #[arg(long)]
        tol_s: Option<f64>,
        /// Regularize first and check the converted system.
        #[arg(long)]
        convert: bool,
        #[command(flatten)]
        conv: ConvertArgs,
    },
    /// Run every `.dae` file in a directory against its `.expect` sidecar.
    Corpus { dir: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lc,
    Es,
    Auto,
}

#[derive(Args, Debug, Clone)]
pub struct ConvertArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// With `--method auto`, try ES before LC.
    #[arg(long)]
    pub es_first: bool,
    /// 1-based pivot for the first step.
    #[arg(long)]
    pub pivot: Option<usize>,
    /// Null vector for the first step, e.g. "(0, 0, -1, 1)".
    #[arg(long)]
    pub u: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ConvertArgs {
    fn options(&self, sys: &DaeSystem) -> Result<Options, String> {
        let policy = match (self.method, self.es_first) {
            (MethodArg::Lc, _) => Policy::LcOnly,
            (MethodArg::Es, _) => Policy::EsOnly,
            (MethodArg::Auto, false) => Policy::LcFirst,
            (MethodArg::Auto, true) => Policy::EsFirst,
        };
        let pivot = match self.pivot {
            Some(0) => return Err("--pivot is 1-based".into()),
            Some(k) if k > sys.n() => return Err(format!("--pivot {k} exceeds system size {}", sys.n())),
            p => p.map(|k| k - 1),
        };
        let user_u = self.u.as_deref().map(|s| parse_vector(sys, s)).transpose()?;
        Ok(Options { policy, max_iters: self.max_iters, pivot, user_u, seed: self.seed })
    }
}

/// Parses `(e1, e2, …)` with each entry in the expression syntax of `sys`.
pub fn parse_vector(sys: &DaeSystem, text: &str) -> Result<Vec<Expr>, String> {
    let t = text.trim();
    let t = t.strip_prefix('(').and_then(|s| s.strip_suffix(')')).unwrap_or(t);
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0usize);
    for (k, ch) in t.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&t[start..k]);
                start = k + 1;
            }
            _ => {}
        }
    }
    parts.push(&t[start..]);
    let v: Vec<Expr> =
        parts.iter().map(|p| parse_expr(sys, p).map_err(|e| format!("u entry `{}`: {e}", p.trim()))).collect::<Result<_, _>>()?;
    if v.len() != sys.n() {
        return Err(format!("u has {} entries, system has {} equations", v.len(), sys.n()));
    }
    Ok(v)
}

fn load(path: &Path) -> Result<DaeSystem, String> {
    let src = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&src).map_err(|e| format!("{}:{e}", path.display()))
}

fn iteration_text(it: &Iteration) -> String {
    let mut out = tableau(&it.system, &it.sigma, it.offsets.as_ref());
    if let Some(off) = &it.offsets {
        out.push_str(&format!(
            "nu_S = {}{}, DOF = {}\n",
            crate::sigma::structural_index(off),
            if it.index_reliable() { "" } else { " (unreliable: SA failed)" },
            crate::sigma::dof(off)
        ));
    }
    if let Some(j) = &it.jacobian {
        out.push_str(&render_matrix(&it.system, j));
        if j.constrained {
            out.push_str("(entries reduced modulo the declared zeros)\n");
        }
    }
    out
}

fn report_text(r: &AnalysisReport) -> String {
    let mut out = String::new();
    for (k, it) in r.iterations.iter().enumerate() {
        if r.iterations.len() > 1 {
            out.push_str(&format!("== iteration {k} ==\n"));
        }
        out.push_str(&iteration_text(it));
        if let Some(step) = r.steps.get(k) {
            let sys = &it.system;
            let u: Vec<String> = step.u.iter().map(|e| sys.text(e)).collect();
            let pivot = match step.method {
                crate::lc::Method::Lc => sys.equations[step.pivot].name.clone(),
                crate::lc::Method::Es => sys.column_name(step.pivot).to_string(),
            };
            out.push_str(&format!(
                "{} step: u = ({}), pivot {pivot}, Val {} -> {}\n",
                step.method.name(),
                u.join(", "),
                fmt_opt(step.val_before),
                fmt_opt(step.val_after)
            ));
            out.push_str(&format!(
                "  equivalent if {} != 0{}\n",
                sys.text(&step.conditions[0]),
                if step.always_nonzero { " (always)" } else { "" }
            ));
            if !step.u_in_kernel {
                out.push_str("  u is not a null vector of J; Val decrease not guaranteed\n");
            }
        }
    }
    for m in &r.messages {
        out.push_str(&format!("note: {m}\n"));
    }
    out.push_str(&format!("verdict: {}\n", r.verdict));
    out
}

fn fmt_opt(v: Option<i64>) -> String {
    v.map_or("-inf".into(), |v| v.to_string())
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// exit code.
pub fn run(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), String> {
    out.write_all(text.as_bytes()).map_err(|e| e.to_string())
}

fn emit_json(out: &mut dyn Write, v: &Value) -> Result<(), String> {
    emit(out, &format!("{}\n", serde_json::to_string_pretty(v).expect("json serializes")))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, String> {
    match &cli.command {
        Command::Parse { file } => {
            let sys = load(file)?;
            let fmt = if cli.json { Format::Json } else { Format::Text };
            emit(out, &render(&sys, fmt))?;
            if cli.json {
                emit(out, "\n")?;
            }
            Ok(0)
        }
        Command::Analyze { file } => {
            let sys = load(file)?;
            let r = analyze(&sys);
            if cli.json {
                emit_json(out, &r.to_json())?;
            } else {
                emit(out, &report_text(&r))?;
            }
            Ok(r.verdict.exit_code())
        }
        Command::Convert { file, conv } => {
            let sys = load(file)?;
            let opts = conv.options(&sys)?;
            let r = regularize(&sys, &opts);
            if cli.json {
                let mut v = r.to_json();
                v["system"] = crate::frontend::render_json(r.final_system());
                emit_json(out, &v)?;
            } else {
                emit(out, &report_text(&r))?;
                if !r.steps.is_empty() {
                    emit(out, "== converted system ==\n")?;
                    emit(out, &render(r.final_system(), Format::Text))?;
                }
            }
            Ok(r.verdict.exit_code())
        }
        Command::Scheme { file, stages } => {
            let sys = load(file)?;
            let sig = signature_matrix(&sys);
            let off = system_offsets(&sys, &sig).map_err(|e| e.to_string())?;
            let s = solution_scheme(&off, *stages);
            if cli.json {
                emit_json(out, &s.to_json(&sys))?;
            } else {
                emit(out, &s.render(&sys))?;
            }
            Ok(0)
        }
        Command::Check { file, point, tol_r, tol_s, convert, conv } => {
            let mut sys = load(file)?;
            if *convert {
                let opts = conv.options(&sys)?;
                let r = regularize(&sys, &opts);
                if !matches!(r.verdict, Verdict::Success | Verdict::SymbolicCancellationDetected) {
                    return Err(format!("regularization ended with {}", r.verdict));
                }
                sys = r.final_system().clone();
            }
            let ptext = fs::read_to_string(point).map_err(|e| format!("{}: {e}", point.display()))?;
            let p = parse_point(&sys, &ptext).map_err(|e| format!("{}:{e}", point.display()))?;
            let sig = signature_matrix(&sys);
            let off = system_offsets(&sys, &sig).map_err(|e| e.to_string())?;
            let res = success_check(&sys, &sig, &off, &p, Tolerances { residual: *tol_r, det: *tol_s })
                .map_err(|e| e.to_string())?;
            if cli.json {
                emit_json(out, &res.to_json(&sys))?;
            } else {
                for r in &res.residuals {
                    emit(
                        out,
                        &format!(
                            "k = {:>3}  {:<12} residual {:>12.4e}  {}\n",
                            r.k,
                            format!("{}^({})", sys.equations[r.equation].name, r.order),
                            r.value,
                            if r.ok { "ok" } else { "FAIL" }
                        ),
                    )?;
                }
                emit(out, &format!("det J = {:.6e} (threshold {:.3e})\n", res.det, res.det_threshold))?;
                emit(out, &format!("verdict: {}\n", if res.success { "success" } else { "failure" }))?;
            }
            Ok(if res.success { 0 } else { 2 })
        }
        Command::Corpus { dir } => {
            let entries = corpus_run(dir)?;
            if cli.json {
                emit_json(out, &json!(entries.iter().map(CorpusEntry::to_json).collect::<Vec<_>>()))?;
            } else {
                emit(out, &corpus_table(&entries))?;
            }
            Ok(if entries.iter().all(CorpusEntry::passed) { 0 } else { 2 })
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub key: String,
    pub expected: String,
    pub actual: String,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub file: String,
    pub checks: Vec<Check>,
    /// Parse failure of the system or a malformed sidecar.
    pub error: Option<String>,
}

impl CorpusEntry {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }

    fn to_json(&self) -> Value {
        json!({
            "file": self.file,
            "passed": self.passed(),
            "error": self.error,
            "checks": self.checks.iter().map(|c| json!({
                "key": c.key, "expected": c.expected, "actual": c.actual, "pass": c.pass,
            })).collect::<Vec<_>>(),
        })
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_sidecar(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

const RUN_KEYS: &[&str] = &["policy", "pivot", "u", "mode"];
const CHECK_KEYS: &[&str] = &["val", "final_val", "index", "dof", "verdict", "det", "iterations", "classification"];

/// Runs one system against its expectations.
pub fn corpus_check(name: &str, src: &str, sidecar: &str) -> CorpusEntry {
    let mut entry = CorpusEntry { file: name.to_string(), checks: Vec::new(), error: None };
    let sys = match parse(src) {
        Ok(s) => s,
        Err(e) => {
            entry.error = Some(format!("parse error: {e}"));
            return entry;
        }
    };
    let kv = match parse_sidecar(sidecar) {
        Ok(kv) => kv,
        Err(e) => {
            entry.error = Some(format!("config error: {e}"));
            return entry;
        }
    };
    if let Some((k, _)) = kv.iter().find(|(k, _)| !RUN_KEYS.contains(&k.as_str()) && !CHECK_KEYS.contains(&k.as_str())) {
        entry.error = Some(format!("config error: unknown key `{k}`"));
        return entry;
    }
    let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let mut opts = Options::default();
    match get("policy") {
        None | Some("lc-first") => {}
        Some("es-first") => opts.policy = Policy::EsFirst,
        Some("lc-only") => opts.policy = Policy::LcOnly,
        Some("es-only") => opts.policy = Policy::EsOnly,
        Some(p) => {
            entry.error = Some(format!("config error: unknown policy `{p}`"));
            return entry;
        }
    }
    if let Some(p) = get("pivot") {
        match p.parse::<usize>() {
            Ok(k) if (1..=sys.n()).contains(&k) => opts.pivot = Some(k - 1),
            _ => {
                entry.error = Some(format!("config error: bad pivot `{p}`"));
                return entry;
            }
        }
    }
    if let Some(u) = get("u") {
        match parse_vector(&sys, u) {
            Ok(v) => opts.user_u = Some(v),
            Err(e) => {
                entry.error = Some(format!("config error: {e}"));
                return entry;
            }
        }
    }
    let r = match get("mode") {
        Some("analyze") => analyze(&sys),
        None | Some("regularize") => regularize(&sys, &opts),
        Some(m) => {
            entry.error = Some(format!("config error: unknown mode `{m}`"));
            return entry;
        }
    };
    let last = r.last();
    for (key, expected) in kv.iter().filter(|(k, _)| CHECK_KEYS.contains(&k.as_str())) {
        let actual = match key.as_str() {
            "val" => fmt_opt(r.iterations[0].val()),
            "final_val" => fmt_opt(last.val()),
            "index" => fmt_opt(last.index()),
            "dof" => fmt_opt(last.dof()),
            "verdict" => r.verdict.name().to_string(),
            "iterations" => r.steps.len().to_string(),
            "classification" => last.jacobian.as_ref().map_or("none".into(), |j| j.classification.name().to_string()),
            "det" => last
                .jacobian
                .as_ref()
                .and_then(|j| j.det.as_ref())
                .map_or("none".into(), |d| last.system.text(d)),
            _ => unreachable!(),
        };
        let pass = if key == "det" {
            match (parse_expr(&last.system, expected), last.jacobian.as_ref().and_then(|j| j.det.as_ref())) {
                (Ok(e), Some(d)) => equivalent_up_to_sign(&e, d),
                (Err(e), _) => {
                    entry.error = Some(format!("config error: det `{expected}`: {e}"));
                    false
                }
                _ => false,
            }
        } else {
            actual == *expected
        };
        entry.checks.push(Check { key: key.clone(), expected: expected.clone(), actual, pass });
    }
    entry
}

/// Checks every `.dae` file in `dir` that has a `.expect` sidecar.
pub fn corpus_run(dir: &Path) -> Result<Vec<CorpusEntry>, String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dae"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let sidecar = f.with_extension("expect");
        let Ok(exp) = fs::read_to_string(&sidecar) else { continue };
        let name = f.file_name().unwrap().to_string_lossy().to_string();
        match fs::read_to_string(&f) {
            Ok(src) => out.push(corpus_check(&name, &src, &exp)),
            Err(e) => out.push(CorpusEntry { file: name, checks: Vec::new(), error: Some(e.to_string()) }),
        }
    }
    Ok(out)
}

pub fn corpus_table(entries: &[CorpusEntry]) -> String {
    let w = entries.iter().map(|e| e.file.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:w$}  result  details\n", "file");
    for e in entries {
        let details = match &e.error {
            Some(msg) => msg.clone(),
            None => e
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{}: expected {}, got {}", c.key, c.expected, c.actual))
                .collect::<Vec<_>>()
                .join("; "),
        };
        out.push_str(&format!("{:w$}  {:6}  {details}\n", e.file, if e.passed() { "pass" } else { "FAIL" }));
    }
    let passed = entries.iter().filter(|e| e.passed()).count();
    out.push_str(&format!("{passed}/{} passed\n", entries.len()));
    out
}
