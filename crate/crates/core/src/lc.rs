//! Linear-combination (LC) conversion: replace one equation by a
//! combination of derivatives of equations, weighted by a left null vector
//! of the system Jacobian.

use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::{Atom, Expr};
use crate::frontend::{DaeSystem, Provenance};
use crate::jacobian::{apply, jacobian_entries, Side};
use crate::sigma::{signature_matrix, Offsets, SignatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "ES")]
    Es,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lc => "LC",
            Method::Es => "ES",
        }
    }
}

/// Record of one conversion step, shared by both methods.
#[derive(Clone, Debug)]
pub struct ConversionStep {
    pub method: Method,
    /// Left null vector for LC, right null vector for ES.
    pub u: Vec<Expr>,
    /// Replaced equation (LC) or eliminated column (ES).
    pub pivot: usize,
    /// `θ` for LC, `C` for ES.
    pub level: i64,
    /// Indices with `u_i ≠ 0`.
    pub support: Vec<usize>,
    /// LC: rows with `c_l = θ`. ES: rows touched by the substitution.
    pub affected: Vec<usize>,
    /// LC: derivative order applied to each equation in the combination.
    pub orders: Vec<u32>,
    /// ES: `(row, replaced atom)` pairs.
    pub substitutions: Vec<(usize, Atom)>,
    /// ES: `(original column, new auxiliary column)` pairs.
    pub aux_cols: Vec<(usize, usize)>,
    /// ES: indices of the appended equations.
    pub added_equations: Vec<usize>,
    /// Offsets `(c, d)` of the system the step was applied to.
    pub offsets: (Vec<i64>, Vec<i64>),
    /// Expressions that must be nonzero for the conversion to be equivalent.
    pub conditions: Vec<Expr>,
    pub always_nonzero: bool,
    pub val_before: Option<i64>,
    pub val_after: Option<i64>,
    pub u_in_kernel: bool,
}

impl ConversionStep {
    /// Report entry; `parent` supplies names for `u`.
    pub fn to_json(&self, parent: &DaeSystem) -> Value {
        let idx = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
        json!({
            "method": self.method,
            "u": self.u.iter().map(|e| parent.text(e)).collect::<Vec<_>>(),
            "pivot": self.pivot + 1,
            "level": self.level,
            "support": idx(&self.support),
            "affected": idx(&self.affected),
            "substitutions": self.substitutions.iter().map(|(i, a)| json!({
                "equation": parent.equations[*i].name,
                "atom": crate::expr::atom_to_text(a, parent),
            })).collect::<Vec<_>>(),
            "aux": self.aux_cols.iter().map(|(j, k)| json!({"for": parent.column_name(*j), "column": k + 1})).collect::<Vec<_>>(),
            "conditions": self.conditions.iter().map(|e| parent.text(e)).collect::<Vec<_>>(),
            "always_nonzero": self.always_nonzero,
            "val_before": self.val_before,
            "val_after": self.val_after,
            "u_in_kernel": self.u_in_kernel,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConversionError {
    #[error("sufficient condition fails: {0}")]
    ConditionFailed(String),
    #[error("pivot {0} is not an admissible choice")]
    BadPivot(usize),
    #[error("u has fewer than two nonzero entries")]
    TooFewNonzeros,
    #[error("u has the wrong length")]
    Shape,
    #[error("Val did not decrease ({before} -> {after})")]
    NoDecrease { before: i64, after: i64 },
    #[error("offsets of the converted system are invalid")]
    InvalidOffsets,
    #[error("system has no finite transversal")]
    IllPosed,
}

/// Highest order of column `j` over all entries of `u`.
pub fn vector_hod(sys: &DaeSystem, u: &[Expr], j: usize) -> Option<i64> {
    u.iter().filter_map(|e| sys.hod(e, j)).max().map(i64::from)
}

/// Preferred pivot: a nonzero constant entry if any, else the first nonzero.
pub fn choose_pivot(u: &[Expr], candidates: &[usize]) -> Option<usize> {
    candidates
        .iter()
        .copied()
        .find(|&l| u[l].is_nonzero_constant())
        .or_else(|| candidates.iter().copied().find(|&l| !u[l].is_zero()))
}

#[derive(Clone, Debug)]
pub struct LcAnalysis {
    pub u: Vec<Expr>,
    /// `I`: rows with `u_i ≠ 0`.
    pub support: Vec<usize>,
    pub theta: i64,
    /// `L`: rows of `I` with `c_l = θ`.
    pub candidates: Vec<usize>,
    /// `hod(x_j, u)` per column.
    pub hod_u: Vec<Option<i64>>,
    pub condition_ok: bool,
    /// Columns violating `hod(x_j, u) < d_j − θ`.
    pub violations: Vec<usize>,
}

pub fn lc_analyze(sys: &DaeSystem, off: &Offsets, u: &[Expr]) -> LcAnalysis {
    let n = sys.n();
    let support: Vec<usize> = (0..n).filter(|&i| !u[i].is_zero()).collect();
    let theta = support.iter().map(|&i| off.c[i]).min().unwrap_or(0);
    let candidates = support.iter().copied().filter(|&i| off.c[i] == theta).collect();
    let hod_u: Vec<Option<i64>> = (0..n).map(|j| vector_hod(sys, u, j)).collect();
    let violations: Vec<usize> =
        (0..n).filter(|&j| hod_u[j].is_some_and(|h| h >= off.d[j] - theta)).collect();
    LcAnalysis {
        u: u.to_vec(),
        support,
        theta,
        candidates,
        hod_u,
        condition_ok: violations.is_empty(),
        violations,
    }
}

/// `Σ_i u_i · f_i^(orders_i)` over the rows with `u_i ≠ 0`.
pub fn combination(sys: &DaeSystem, u: &[Expr], orders: &[u32]) -> Expr {
    sys.equations.iter().enumerate().filter(|(i, _)| !u[*i].is_zero()).fold(Expr::zero(), |acc, (i, eq)| {
        acc.add_ref(&u[i].mul_ref(&eq.expr.total_derivative(orders[i])))
    })
}

fn u_in_left_kernel(sys: &DaeSystem, sig: &SignatureMatrix, off: &Offsets, u: &[Expr]) -> bool {
    let j = jacobian_entries(sys, sig, off);
    let zeros: Vec<_> = sys.zeros.iter().map(|(_, z)| z.num().clone()).collect();
    apply(&j, u, Side::Left, &zeros).iter().all(Expr::is_zero)
}

/// Replaces equation `l` by `Σ_i u_i f_i^(c_i−θ)` with `θ = min c_i` over the
/// support of `u`, without checking that `u` is a null vector or that Val
/// decreases. `lc_step` is the checked form.
pub fn apply_combination(
    sys: &DaeSystem,
    off: &Offsets,
    u: &[Expr],
    l: usize,
) -> Result<(DaeSystem, ConversionStep), ConversionError> {
    let n = sys.n();
    if u.len() != n || off.c.len() != n {
        return Err(ConversionError::Shape);
    }
    if u[l].is_zero() {
        return Err(ConversionError::BadPivot(l));
    }
    let sig = signature_matrix(sys);
    let a = lc_analyze(sys, off, u);
    let orders: Vec<u32> = (0..n).map(|i| if u[i].is_zero() { 0 } else { (off.c[i] - a.theta) as u32 }).collect();
    let fbar = combination(sys, u, &orders);
    let mut out = sys.clone();
    out.equations[l].expr = fbar;
    out.equations[l].raw = None;
    out.offsets = None;
    let val_after = signature_matrix(&out).val;
    let step = ConversionStep {
        method: Method::Lc,
        u: u.to_vec(),
        pivot: l,
        level: a.theta,
        support: a.support.clone(),
        affected: a.candidates.clone(),
        orders,
        substitutions: Vec::new(),
        aux_cols: Vec::new(),
        added_equations: Vec::new(),
        offsets: (off.c.clone(), off.d.clone()),
        conditions: vec![u[l].clone()],
        always_nonzero: u[l].is_nonzero_constant(),
        val_before: sig.val,
        val_after,
        u_in_kernel: u_in_left_kernel(sys, &sig, off, u),
    };
    out.provenance = Some(Provenance { parent: Arc::new(sys.clone()), step: step.clone() });
    Ok((out, step))
}

/// One checked LC step with pivot `l`.
pub fn lc_step(
    sys: &DaeSystem,
    off: &Offsets,
    analysis: &LcAnalysis,
    l: usize,
) -> Result<(DaeSystem, ConversionStep), ConversionError> {
    if analysis.support.len() < 2 {
        return Err(ConversionError::TooFewNonzeros);
    }
    if !analysis.condition_ok {
        let cols: Vec<String> = analysis
            .violations
            .iter()
            .map(|&j| {
                let h = analysis.hod_u[j].expect("violations have finite hod");
                format!("hod({}, u) = {h} >= d{} - theta = {}", sys.column_name(j), j + 1, off.d[j] - analysis.theta)
            })
            .collect();
        return Err(ConversionError::ConditionFailed(cols.join(", ")));
    }
    if !analysis.candidates.contains(&l) {
        return Err(ConversionError::BadPivot(l));
    }
    let (out, step) = apply_combination(sys, off, &analysis.u, l)?;
    if let (Some(before), Some(after)) = (step.val_before, step.val_after) {
        if after >= before {
            return Err(ConversionError::NoDecrease { before, after });
        }
    }
    Ok((out, step))
}

/// Whether the converted system is structurally ill-posed, which makes the
/// original one ill-posed as well.
pub fn detect_ill_posed(converted: &DaeSystem) -> bool {
    signature_matrix(converted).val.is_none()
}

/// Reconstructs the replaced equation from the converted system.
pub fn lc_recover(converted: &DaeSystem, step: &ConversionStep) -> Result<DaeSystem, ConversionError> {
    let l = step.pivot;
    let ul = &step.u[l];
    if ul.is_zero() {
        return Err(ConversionError::BadPivot(l));
    }
    let mut others = step.u.clone();
    others[l] = Expr::zero();
    let rest = combination(converted, &others, &step.orders);
    let fl = converted.equations[l]
        .expr
        .sub_ref(&rest)
        .checked_div(ul)
        .map_err(|_| ConversionError::BadPivot(l))?;
    let mut out = converted.clone();
    out.equations[l].expr = fl;
    out.provenance = None;
    Ok(out)
}
