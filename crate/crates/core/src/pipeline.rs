//! End-to-end driver: analysis, iterated conversion, solution scheme and
//! the numeric success check.

use std::fmt;

use num_traits::{Signed, Zero};
use serde::Serialize;
use serde_json::{json, Value};

use crate::expr::{atom_to_text, EvalError, Expr, ValuePoint};
use crate::frontend::DaeSystem;
use crate::jacobian::{
    null_vector, numeric_det, numeric_norm_inf, random_point_det, system_jacobian, Side, SystemJacobian,
};
use crate::lc::{apply_combination, choose_pivot, lc_analyze, lc_step, ConversionStep, Method};
use crate::es::{es_analyze, es_step};
use crate::sigma::{
    canonical_offsets, dof, formal_vs_true, report_json, signature_matrix, structural_index, system_offsets,
    FormalAlternative, FormalReport, Offsets, SignatureMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    LcFirst,
    EsFirst,
    LcOnly,
    EsOnly,
}

impl Policy {
    fn methods(self) -> &'static [Method] {
        match self {
            Policy::LcFirst => &[Method::Lc, Method::Es],
            Policy::EsFirst => &[Method::Es, Method::Lc],
            Policy::LcOnly => &[Method::Lc],
            Policy::EsOnly => &[Method::Es],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Success,
    /// The system Jacobian is singular and no conversion was attempted.
    SaFailed,
    StructurallyIllPosed,
    ConversionStuck,
    /// The written equations cancel symbolically; the simplified system
    /// succeeded.
    SymbolicCancellationDetected,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Success | Verdict::SymbolicCancellationDetected => 0,
            Verdict::SaFailed => 2,
            Verdict::ConversionStuck => 3,
            Verdict::StructurallyIllPosed => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::SaFailed => "sa-failed",
            Verdict::StructurallyIllPosed => "structurally-ill-posed",
            Verdict::ConversionStuck => "conversion-stuck",
            Verdict::SymbolicCancellationDetected => "symbolic-cancellation-detected",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub policy: Policy,
    /// Defaults to `Val(Σ⁰)`.
    pub max_iters: Option<usize>,
    /// Pivot for the first step.
    pub pivot: Option<usize>,
    /// Null vector for the first step instead of the computed one.
    pub user_u: Option<Vec<Expr>>,
    /// Seed for the random-point determinant cross-check.
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options { policy: Policy::LcFirst, max_iters: None, pivot: None, user_u: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Iteration {
    pub system: DaeSystem,
    pub sigma: SignatureMatrix,
    pub offsets: Option<Offsets>,
    pub jacobian: Option<SystemJacobian>,
}

impl Iteration {
    pub fn val(&self) -> Option<i64> {
        self.sigma.val
    }

    pub fn index(&self) -> Option<i64> {
        self.offsets.as_ref().map(structural_index)
    }

    pub fn dof(&self) -> Option<i64> {
        self.offsets.as_ref().map(dof)
    }

    /// The structural index is meaningful only when the Jacobian is
    /// nonsingular.
    pub fn index_reliable(&self) -> bool {
        self.jacobian.as_ref().is_some_and(|j| !j.classification.is_singular())
    }

    pub fn to_json(&self) -> Value {
        let mut v = report_json(&self.sigma, self.offsets.as_ref());
        v["index_reliable"] = json!(self.index_reliable());
        if let Some(j) = &self.jacobian {
            v["jacobian"] = j.to_json(&self.system);
        }
        v
    }
}

#[derive(Clone, Debug)]
pub struct AnalysisReport {
    pub iterations: Vec<Iteration>,
    pub steps: Vec<ConversionStep>,
    pub verdict: Verdict,
    pub formal: FormalReport,
    /// Reasons for refused steps and other remarks.
    pub messages: Vec<String>,
}

impl AnalysisReport {
    pub fn last(&self) -> &Iteration {
        self.iterations.last().expect("at least one iteration")
    }

    pub fn final_system(&self) -> &DaeSystem {
        &self.last().system
    }

    pub fn val_trace(&self) -> Vec<Option<i64>> {
        self.iterations.iter().map(Iteration::val).collect()
    }

    /// Conditions `u_l ≠ 0` under which every step is an equivalence.
    pub fn ledger(&self) -> Vec<(Expr, bool)> {
        self.steps.iter().map(|s| (s.conditions[0].clone(), s.always_nonzero)).collect()
    }

    pub fn to_json(&self) -> Value {
        let parents: Vec<&DaeSystem> = self.iterations.iter().map(|it| &it.system).collect();
        json!({
            "verdict": self.verdict,
            "exit_code": self.verdict.exit_code(),
            "iterations": self.iterations.iter().map(Iteration::to_json).collect::<Vec<_>>(),
            "steps": self.steps.iter().enumerate().map(|(k, s)| s.to_json(parents[k])).collect::<Vec<_>>(),
            "ledger": self.steps.iter().enumerate().map(|(k, s)| json!({
                "condition": format!("{} != 0", parents[k].text(&s.conditions[0])),
                "always_nonzero": s.always_nonzero,
            })).collect::<Vec<_>>(),
            "formal_alternative": match self.formal.alternative {
                FormalAlternative::Same => "same",
                FormalAlternative::EqualValue => "i",
                FormalAlternative::FormalExceeds => "ii",
            },
            "messages": self.messages,
        })
    }
}

fn analyze_once(sys: &DaeSystem, messages: &mut Vec<String>) -> Iteration {
    let sigma = signature_matrix(sys);
    if sigma.val.is_none() {
        return Iteration { system: sys.clone(), sigma, offsets: None, jacobian: None };
    }
    let offsets = match system_offsets(sys, &sigma) {
        Ok(o) => o,
        Err(e) => {
            messages.push(format!("declared offsets rejected ({e}); using canonical offsets"));
            canonical_offsets(&sigma).expect("finite Val has canonical offsets")
        }
    };
    let jacobian = system_jacobian(sys, &sigma, &offsets);
    Iteration { system: sys.clone(), sigma, offsets: Some(offsets), jacobian: Some(jacobian) }
}

fn formal_verdict(formal: &FormalReport, verdict: Verdict) -> Verdict {
    if verdict == Verdict::Success && formal.alternative == FormalAlternative::FormalExceeds {
        Verdict::SymbolicCancellationDetected
    } else {
        verdict
    }
}

/// Single pass of structural analysis without conversion.
pub fn analyze(sys: &DaeSystem) -> AnalysisReport {
    let mut messages = Vec::new();
    let formal = formal_vs_true(sys);
    if formal.alternative == FormalAlternative::FormalExceeds {
        messages.push(format!(
            "formal Val {} exceeds true Val {}; analysing the simplified equations",
            fmt_val(formal.formal.val),
            fmt_val(formal.actual.val)
        ));
    }
    let it = analyze_once(sys, &mut messages);
    let verdict = match &it.jacobian {
        None => Verdict::StructurallyIllPosed,
        Some(j) if j.classification.is_singular() => Verdict::SaFailed,
        Some(_) => Verdict::Success,
    };
    let verdict = formal_verdict(&formal, verdict);
    AnalysisReport { iterations: vec![it], steps: Vec::new(), verdict, formal, messages }
}

fn fmt_val(v: Option<i64>) -> String {
    v.map_or("-inf".to_string(), |v| v.to_string())
}

fn zeros_of(sys: &DaeSystem) -> Vec<crate::expr::Poly> {
    sys.zeros.iter().map(|(_, z)| z.num().clone()).collect()
}

fn try_lc(
    it: &Iteration,
    user_u: Option<&Vec<Expr>>,
    pivot: Option<usize>,
) -> Result<(DaeSystem, ConversionStep), String> {
    let sys = &it.system;
    let off = it.offsets.as_ref().unwrap();
    let jac = it.jacobian.as_ref().unwrap();
    let u = match user_u {
        Some(u) => u.clone(),
        None => null_vector(&jac.entries, Side::Left, &zeros_of(sys)).ok_or("LC: no left null vector")?,
    };
    if u.len() != sys.n() {
        return Err(format!("LC: u has {} entries, expected {}", u.len(), sys.n()));
    }
    let mut a = lc_analyze(sys, off, &u);
    let l = pivot.or_else(|| choose_pivot(&u, &a.candidates)).ok_or("LC: no admissible pivot")?;
    // A computed null vector is only defined up to scale; flip it so a
    // constant pivot coefficient is positive and f_l keeps its sign.
    if user_u.is_none() && u[l].as_constant().is_some_and(|c| c.is_negative()) {
        let flipped: Vec<Expr> = u.iter().map(Expr::neg_ref).collect();
        a = lc_analyze(sys, off, &flipped);
    }
    let u = a.u.clone();
    if user_u.is_some() {
        let (next, step) = apply_combination(sys, off, &u, l).map_err(|e| format!("LC: {e}"))?;
        if step.u_in_kernel {
            // A genuine null vector gets the checked step.
            return lc_step(sys, off, &a, l).map_err(|e| format!("LC: {e}"));
        }
        return Ok((next, step));
    }
    lc_step(sys, off, &a, l).map_err(|e| format!("LC: {e}"))
}

fn try_es(
    it: &Iteration,
    user_u: Option<&Vec<Expr>>,
    pivot: Option<usize>,
) -> Result<(DaeSystem, ConversionStep), String> {
    let sys = &it.system;
    let off = it.offsets.as_ref().unwrap();
    let jac = it.jacobian.as_ref().unwrap();
    let u = match user_u {
        Some(u) => u.clone(),
        None => null_vector(&jac.entries, Side::Right, &zeros_of(sys)).ok_or("ES: no right null vector")?,
    };
    if u.len() != sys.n() {
        return Err(format!("ES: u has {} entries, expected {}", u.len(), sys.n()));
    }
    let a = es_analyze(sys, &it.sigma, off, &u);
    let l = pivot.or_else(|| choose_pivot(&u, &a.support)).ok_or("ES: no admissible pivot")?;
    es_step(sys, &it.sigma, off, &a, l, false).map_err(|e| format!("ES: {e}"))
}

/// Repeated analysis and conversion until SA succeeds, the system turns out
/// ill-posed, or no method applies.
pub fn regularize(sys: &DaeSystem, opts: &Options) -> AnalysisReport {
    let mut messages = Vec::new();
    let formal = formal_vs_true(sys);
    if formal.alternative == FormalAlternative::FormalExceeds {
        messages.push(format!(
            "formal Val {} exceeds true Val {}; continuing with the simplified equations",
            fmt_val(formal.formal.val),
            fmt_val(formal.actual.val)
        ));
    }
    let mut iterations: Vec<Iteration> = Vec::new();
    let mut steps: Vec<ConversionStep> = Vec::new();
    let mut cur = sys.clone();
    let verdict = loop {
        let it = analyze_once(&cur, &mut messages);
        let max_iters = opts.max_iters.unwrap_or_else(|| {
            iterations.first().unwrap_or(&it).val().map_or(0, |v| v.max(0) as usize)
        });
        let done = match &it.jacobian {
            None => {
                if !steps.is_empty() {
                    messages.push("converted system is structurally ill-posed, hence so is the original".into());
                }
                Some(Verdict::StructurallyIllPosed)
            }
            Some(j) if !j.classification.is_singular() => {
                // A free random point ignores declared zeros, so only unconstrained J is cross-checked.
                if !j.constrained && random_point_det(&j.entries, opts.seed).is_some_and(|d| d.is_zero()) {
                    messages.push(format!("det J vanishes at the random point for seed {}", opts.seed));
                }
                Some(Verdict::Success)
            }
            Some(_) if steps.len() >= max_iters => {
                messages.push(format!("iteration limit {max_iters} reached"));
                Some(Verdict::ConversionStuck)
            }
            Some(_) => None,
        };
        iterations.push(it);
        if let Some(v) = done {
            break v;
        }
        let it = iterations.last().unwrap();
        let first = steps.is_empty();
        let user_u = if first { opts.user_u.as_ref() } else { None };
        let pivot = if first { opts.pivot } else { None };
        let mut applied = None;
        for &m in opts.policy.methods() {
            let r = match m {
                Method::Lc => try_lc(it, user_u, pivot),
                Method::Es => try_es(it, user_u, pivot),
            };
            match r {
                Ok(x) => {
                    applied = Some(x);
                    break;
                }
                Err(msg) => messages.push(msg),
            }
        }
        match applied {
            Some((next, step)) => {
                steps.push(step);
                cur = next;
            }
            None => break Verdict::ConversionStuck,
        }
    };
    let verdict = formal_verdict(&formal, verdict);
    AnalysisReport { iterations, steps, verdict, formal, messages }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub k: i64,
    /// `(i, q)` for `f_i^(q)`, `q = c_i + k`.
    pub equations: Vec<(usize, i64)>,
    /// `(j, r)` for `x_j^(r)`, `r = d_j + k`.
    pub unknowns: Vec<(usize, i64)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolutionScheme {
    pub stages: Vec<Stage>,
}

/// Stages `k = −max d_j, …, horizon`.
pub fn solution_scheme(off: &Offsets, horizon: i64) -> SolutionScheme {
    let kd = -off.d.iter().copied().max().unwrap_or(0);
    let stages = (kd..=horizon)
        .map(|k| Stage {
            k,
            equations: (0..off.c.len()).filter(|&i| off.c[i] + k >= 0).map(|i| (i, off.c[i] + k)).collect(),
            unknowns: (0..off.d.len()).filter(|&j| off.d[j] + k >= 0).map(|j| (j, off.d[j] + k)).collect(),
        })
        .collect();
    SolutionScheme { stages }
}

fn equation_text(name: &str, q: i64) -> String {
    match q {
        0..=3 => format!("{name}{}", "'".repeat(q as usize)),
        _ => format!("{name}^({q})"),
    }
}

impl SolutionScheme {
    pub fn render(&self, sys: &DaeSystem) -> String {
        let rows: Vec<(String, String, String)> = self
            .stages
            .iter()
            .map(|s| {
                let eqs = s.equations.iter().map(|&(i, q)| equation_text(&sys.equations[i].name, q));
                let xs = s.unknowns.iter().map(|&(j, r)| atom_to_text(&sys.col_atom(j, r as u32), sys));
                (s.k.to_string(), eqs.collect::<Vec<_>>().join(", "), xs.collect::<Vec<_>>().join(", "))
            })
            .collect();
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(1).max(1);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("solve".len());
        let mut out = format!("{:>w0$} | {:w1$} | for\n", "k", "solve");
        for (k, e, x) in rows {
            out.push_str(&format!("{k:>w0$} | {e:w1$} | {x}\n"));
        }
        out
    }

    pub fn to_json(&self, sys: &DaeSystem) -> Value {
        json!(self
            .stages
            .iter()
            .map(|s| json!({
                "k": s.k,
                "equations": s.equations.iter().map(|&(i, q)| equation_text(&sys.equations[i].name, q)).collect::<Vec<_>>(),
                "unknowns": s.unknowns.iter().map(|&(j, r)| atom_to_text(&sys.col_atom(j, r as u32), sys)).collect::<Vec<_>>(),
            }))
            .collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Relative residual tolerance.
    pub residual: f64,
    /// Absolute determinant threshold; `None` means `1e3·ε·‖J‖∞`.
    pub det: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { residual: 1e-9, det: None }
    }
}

#[derive(Clone, Debug)]
pub struct Residual {
    pub k: i64,
    pub equation: usize,
    pub order: i64,
    pub value: f64,
    pub scale: f64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub residuals: Vec<Residual>,
    pub det: f64,
    pub det_threshold: f64,
    pub success: bool,
}

impl CheckResult {
    pub fn to_json(&self, sys: &DaeSystem) -> Value {
        json!({
            "success": self.success,
            "det": self.det,
            "det_threshold": self.det_threshold,
            "residuals": self.residuals.iter().map(|r| json!({
                "k": r.k,
                "equation": equation_text(&sys.equations[r.equation].name, r.order),
                "value": r.value,
                "ok": r.ok,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Evaluates the stage equations for `k_d ≤ k ≤ 0` and the system Jacobian
/// at a user-supplied point. Constants with declared values are folded first.
pub fn success_check(
    sys: &DaeSystem,
    sig: &SignatureMatrix,
    off: &Offsets,
    p: &ValuePoint,
    tol: Tolerances,
) -> Result<CheckResult, EvalError> {
    let folded = sys.fold_constants();
    let scheme = solution_scheme(off, 0);
    let mut residuals = Vec::new();
    for stage in &scheme.stages {
        for &(i, q) in &stage.equations {
            let e = folded.equations[i].expr.total_derivative(q as u32);
            let value = e.eval_f64(p)?;
            let scale = e.term_scale(p)?.max(1.0);
            residuals.push(Residual {
                k: stage.k,
                equation: i,
                order: q,
                value,
                scale,
                ok: value.abs() <= tol.residual * scale,
            });
        }
    }
    let jac = system_jacobian(&folded, sig, off);
    let det = numeric_det(&jac.entries, p)?;
    let det_threshold = match tol.det {
        Some(t) => t,
        None => 1e3 * f64::EPSILON * numeric_norm_inf(&jac.entries, p)?,
    };
    let success =
        residuals.iter().all(|r| r.ok) && !jac.classification.is_singular() && det.abs() > det_threshold;
    Ok(CheckResult { residuals, det, det_threshold, success })
}
