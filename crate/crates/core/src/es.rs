//! Expression-substitution (ES) conversion: introduce auxiliary unknowns
//! along a right null vector of the system Jacobian and substitute them for
//! the highest derivatives that make it singular.

use std::collections::HashMap;
use std::sync::Arc;

use crate::expr::{Atom, Expr, VarClass};
use crate::frontend::{DaeSystem, Equation, Provenance};
use crate::lc::{vector_hod, ConversionError, ConversionStep, Method};
use crate::sigma::{dominates, signature_matrix, Offsets, SignatureMatrix};

#[derive(Clone, Debug)]
pub struct EsAnalysis {
    pub u: Vec<Expr>,
    /// `L`: columns with `u_j ≠ 0`.
    pub support: Vec<usize>,
    /// `I`: rows where some `j ∈ L` attains `σ_ij = d_j − c_i`.
    pub rows: Vec<usize>,
    /// `C = max c_i` over `I`.
    pub level: i64,
    pub hod_u: Vec<Option<i64>>,
    pub cond_hod_ok: bool,
    pub cond_order_ok: bool,
}

impl EsAnalysis {
    pub fn s(&self) -> usize {
        self.support.len()
    }

    pub fn conditions_ok(&self) -> bool {
        self.cond_hod_ok && self.cond_order_ok
    }
}

pub fn es_analyze(sys: &DaeSystem, sig: &SignatureMatrix, off: &Offsets, u: &[Expr]) -> EsAnalysis {
    let n = sys.n();
    let support: Vec<usize> = (0..n).filter(|&j| !u[j].is_zero()).collect();
    let rows: Vec<usize> = (0..n)
        .filter(|&i| support.iter().any(|&j| sig.entries[i][j] == Some(off.d[j] - off.c[i])))
        .collect();
    let level = rows.iter().map(|&i| off.c[i]).max().unwrap_or(0);
    let hod_u: Vec<Option<i64>> = (0..n).map(|j| vector_hod(sys, u, j)).collect();
    let cond_hod_ok = (0..n).all(|j| {
        let bound = off.d[j] - level - i64::from(support.contains(&j));
        hod_u[j].is_none_or(|h| h <= bound)
    });
    let cond_order_ok = support.iter().all(|&j| off.d[j] - level >= 0);
    EsAnalysis { u: u.to_vec(), support, rows, level, hod_u, cond_hod_ok, cond_order_ok }
}

fn fresh_equation_name(sys: &DaeSystem, base: &str) -> String {
    if sys.equation_index(base).is_none() {
        return base.to_string();
    }
    (2..).map(|k| format!("{base}_{k}")).find(|s| sys.equation_index(s).is_none()).unwrap()
}

/// One ES step with pivot column `l`. With `keep_l` the equation
/// `g_l = −y_l + x_l^(d_l−C)` and its unknown `y_l` are retained.
pub fn es_step(
    sys: &DaeSystem,
    sig: &SignatureMatrix,
    off: &Offsets,
    a: &EsAnalysis,
    l: usize,
    keep_l: bool,
) -> Result<(DaeSystem, ConversionStep), ConversionError> {
    let n = sys.n();
    if a.s() < 2 {
        return Err(ConversionError::TooFewNonzeros);
    }
    if !a.cond_hod_ok {
        let cols: Vec<String> = (0..n)
            .filter_map(|j| {
                let bound = off.d[j] - a.level - i64::from(a.support.contains(&j));
                a.hod_u[j]
                    .filter(|&h| h > bound)
                    .map(|h| format!("hod({}, u) = {h} > {bound}", sys.column_name(j)))
            })
            .collect();
        return Err(ConversionError::ConditionFailed(cols.join(", ")));
    }
    if !a.cond_order_ok {
        let cols: Vec<String> = a
            .support
            .iter()
            .filter(|&&j| off.d[j] - a.level < 0)
            .map(|&j| format!("d{} - C = {}", j + 1, off.d[j] - a.level))
            .collect();
        return Err(ConversionError::ConditionFailed(format!("d_j - C < 0: {}", cols.join(", "))));
    }
    if !a.support.contains(&l) {
        return Err(ConversionError::BadPivot(l));
    }
    let c_big = a.level;
    let u = &a.u;
    let ul = &u[l];
    let xl = sys.col_expr(l, (off.d[l] - c_big) as u32);
    let introduced: Vec<usize> = a.support.iter().copied().filter(|&j| keep_l || j != l).collect();

    let mut out = sys.clone();
    out.offsets = None;
    let mut aux_cols = Vec::new();
    let mut aux_index: HashMap<usize, usize> = HashMap::new();
    for &j in &introduced {
        let name = out.fresh_name(&format!("y{}", j + 1));
        aux_index.insert(j, out.aux.len());
        out.aux.push(name);
        aux_cols.push((j, out.n() - 1));
    }
    let y = |j: usize, k: u32| Expr::aux(aux_index[&j], k);
    let ratio = |j: usize| u[j].checked_div(ul).expect("pivot entry is nonzero");

    // x_j^(d_j−c_i) ← (y_j + (u_j/u_l) x_l^(d_l−C))^(C−c_i), simultaneously.
    let mut substitutions = Vec::new();
    for &i in &a.rows {
        let mut map: HashMap<Atom, Expr> = HashMap::new();
        for &j in a.support.iter().filter(|&&j| j != l) {
            let order = off.d[j] - off.c[i];
            if sig.entries[i][j] != Some(order) {
                continue;
            }
            let atom = sys.col_atom(j, order as u32);
            let repl = y(j, 0).add_ref(&ratio(j).mul_ref(&xl)).total_derivative((c_big - off.c[i]) as u32);
            substitutions.push((i, atom.clone()));
            map.insert(atom, repl);
        }
        if !map.is_empty() {
            out.equations[i].expr = sys.equations[i].expr.substitute(&|at| map.get(at).cloned());
            out.equations[i].raw = None;
        }
    }

    let mut added_equations = Vec::new();
    for &j in &introduced {
        let xj = sys.col_expr(j, (off.d[j] - c_big) as u32);
        let g = if j == l {
            y(j, 0).neg_ref().add_ref(&xj)
        } else {
            y(j, 0).neg_ref().add_ref(&xj).sub_ref(&ratio(j).mul_ref(&xl))
        };
        let name = fresh_equation_name(&out, &format!("g{}", j + 1));
        added_equations.push(out.equations.len());
        out.equations.push(Equation::new(name, g));
    }

    // The extended offsets bound the new matrix from above; they cannot be
    // tight on a transversal once Val has dropped.
    let new_sig = signature_matrix(&out);
    let mut c = off.c.clone();
    let mut d = off.d.clone();
    c.extend(std::iter::repeat_n(c_big, introduced.len()));
    d.extend(std::iter::repeat_n(c_big, introduced.len()));
    if !dominates(&new_sig, &c, &d) {
        return Err(ConversionError::InvalidOffsets);
    }
    if let (Some(before), Some(after)) = (sig.val, new_sig.val) {
        if after >= before {
            return Err(ConversionError::NoDecrease { before, after });
        }
    }
    let step = ConversionStep {
        method: Method::Es,
        u: u.clone(),
        pivot: l,
        level: c_big,
        support: a.support.clone(),
        affected: a.rows.clone(),
        orders: Vec::new(),
        substitutions,
        aux_cols,
        added_equations,
        offsets: (off.c.clone(), off.d.clone()),
        conditions: vec![ul.clone()],
        always_nonzero: ul.is_nonzero_constant(),
        val_before: sig.val,
        val_after: new_sig.val,
        u_in_kernel: true,
    };
    debug_assert!(n <= out.n());
    out.provenance = Some(Provenance { parent: Arc::new(sys.clone()), step: step.clone() });
    Ok((out, step))
}

/// Checks the block relations of the converted signature matrix against
/// the offsets `d̄ = (d, C, …)`, `c̄ = (c, C, …)`.
pub fn es_sigma_blockcheck(converted: &DaeSystem, step: &ConversionStep) -> bool {
    let sig = signature_matrix(converted);
    es_blockcheck_matrix(&sig, step)
}

pub fn es_blockcheck_matrix(sig: &SignatureMatrix, step: &ConversionStep) -> bool {
    let (c, d) = &step.offsets;
    let n = c.len();
    let k = step.aux_cols.len();
    let big = step.level;
    let l = step.pivot;
    let cbar = |i: usize| if i < n { c[i] } else { big };
    let dbar = |j: usize| if j < n { d[j] } else { big };
    let in_l = |j: usize| step.support.contains(&j);
    let le = |i: usize, j: usize| sig.entries[i][j].is_none_or(|s| s <= dbar(j) - cbar(i));
    let lt = |i: usize, j: usize| sig.entries[i][j].is_none_or(|s| s < dbar(j) - cbar(i));
    let eq = |i: usize, j: usize| sig.entries[i][j] == Some(dbar(j) - cbar(i));
    let y_l = step.aux_cols.iter().find(|(j, _)| *j == l).map(|(_, col)| *col);
    for i in 0..n {
        for j in 0..n + k {
            let ok = if j < n && in_l(j) {
                lt(i, j)
            } else if Some(j) == y_l {
                sig.entries[i][j].is_none()
            } else {
                le(i, j)
            };
            if !ok {
                return false;
            }
        }
    }
    for (r, &(jr, ycol)) in step.aux_cols.iter().enumerate() {
        let i = n + r;
        for j in 0..n + k {
            let ok = if j == jr || (j == l && j < n) {
                eq(i, j)
            } else if j < n && in_l(j) {
                lt(i, j)
            } else if j < n {
                if jr == l {
                    sig.entries[i][j].is_none()
                } else {
                    le(i, j)
                }
            } else if j == ycol {
                sig.entries[i][j] == Some(0) && eq(i, j)
            } else {
                sig.entries[i][j].is_none()
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Back-substitutes the auxiliary definitions into the converted equations
/// and drops the appended ones, recovering the original system.
pub fn es_recover(converted: &DaeSystem, step: &ConversionStep) -> Result<DaeSystem, ConversionError> {
    let l = step.pivot;
    let ul = &step.u[l];
    if ul.is_zero() {
        return Err(ConversionError::BadPivot(l));
    }
    let (_, d) = &step.offsets;
    let n = d.len();
    let c_big = step.level;
    let n_states = converted.states.len();
    let xl = converted.col_expr(l, (d[l] - c_big) as u32);
    let mut defs: HashMap<usize, Expr> = HashMap::new();
    for &(j, col) in &step.aux_cols {
        let xj = converted.col_expr(j, (d[j] - c_big) as u32);
        let def = if j == l {
            xj
        } else {
            xj.sub_ref(&step.u[j].checked_div(ul).map_err(|_| ConversionError::BadPivot(l))?.mul_ref(&xl))
        };
        defs.insert(col - n_states, def);
    }
    let first_new_aux = n - n_states;
    let subst = |a: &Atom| match a.as_var() {
        Some((VarClass::Aux, v, k)) if v >= first_new_aux => defs.get(&v).map(|e| e.total_derivative(k)),
        _ => None,
    };
    let mut out = converted.clone();
    out.equations.truncate(n);
    for eq in &mut out.equations {
        eq.expr = eq.expr.substitute(&subst);
        eq.raw = None;
    }
    out.aux.truncate(first_new_aux);
    out.provenance = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{equivalent, equivalent_up_to_sign, is_identically_zero};
    use crate::frontend::{parse, parse_expr};
    use crate::jacobian::{null_vector, system_jacobian, Classification, Side};
    use crate::lc::choose_pivot;
    use crate::sigma::canonical_offsets;

    const ESEXAM1: &str = "system ESexam1;\nvar x1, x2;\ninput g1, g2;\n\
        eq f1: x1 + exp(-x1' - x2*x2'') + g1;\neq f2: x1 + x2*x2' + x2^2 + g2;\n";

    fn analyze(sys: &DaeSystem) -> (SignatureMatrix, Offsets, EsAnalysis) {
        let sig = signature_matrix(sys);
        let off = canonical_offsets(&sig).unwrap();
        let j = system_jacobian(sys, &sig, &off);
        assert!(j.classification.is_singular());
        let u = null_vector(&j.entries, Side::Right, &[]).unwrap();
        let a = es_analyze(sys, &sig, &off, &u);
        (sig, off, a)
    }

    #[test]
    fn esexam1_pivot_two() {
        let sys = parse(ESEXAM1).unwrap();
        let (sig, off, a) = analyze(&sys);
        let u2 = parse_expr(&sys, "x2").unwrap();
        assert!(equivalent_up_to_sign(&a.u[0], &u2));
        assert_eq!((a.support.clone(), a.rows.clone(), a.level), (vec![0, 1], vec![0, 1], 1));
        assert!(a.conditions_ok());
        assert_eq!(choose_pivot(&a.u, &a.support), Some(1));
        let (conv, step) = es_step(&sys, &sig, &off, &a, 1, false).unwrap();
        assert_eq!((step.val_before, step.val_after), (Some(2), Some(1)));
        assert_eq!(conv.aux, vec!["y1"]);
        let f1 = parse_expr(&conv, "x1 + exp(-y1' + x2'^2) + g1").unwrap();
        let f2 = parse_expr(&conv, "y1 + x2^2 + g2").unwrap();
        let g1 = parse_expr(&conv, "-y1 + x1 + x2*x2'").unwrap();
        assert!(equivalent(&conv.equations[0].expr, &f1));
        assert!(equivalent(&conv.equations[1].expr, &f2));
        assert!(equivalent(&conv.equations[2].expr, &g1));
        assert!(es_sigma_blockcheck(&conv, &step));
        let rec = es_recover(&conv, &step).unwrap();
        for (r, o) in rec.equations.iter().zip(&sys.equations) {
            assert!(is_identically_zero(&r.expr.sub_ref(&o.expr)));
        }
        let csig = signature_matrix(&conv);
        let coff = canonical_offsets(&csig).unwrap();
        let cj = system_jacobian(&conv, &csig, &coff);
        assert_eq!(cj.classification, Classification::GenericallyNonsingular);
        let det = parse_expr(&conv, "x2 - 2*exp(-y1' + x2'^2)*(x2 + x2')").unwrap();
        assert!(equivalent_up_to_sign(cj.det.as_ref().unwrap(), &det));
    }

    #[test]
    fn keep_l_block_structure() {
        let sys = parse(ESEXAM1).unwrap();
        let (sig, off, a) = analyze(&sys);
        let (conv, step) = es_step(&sys, &sig, &off, &a, 1, true).unwrap();
        assert_eq!(conv.n(), 4);
        assert!(es_sigma_blockcheck(&conv, &step));
        let y_l = Atom::aux(1, 0);
        for eq in &conv.equations[..2] {
            assert!(!eq.expr.atoms_deep().iter().any(|at| at.as_var() == y_l.as_var()));
        }
        let mut bad = signature_matrix(&conv);
        bad.entries[0][0] = Some(1);
        assert!(!es_blockcheck_matrix(&bad, &step));
    }

    #[test]
    fn esexam1_pivot_one_records_condition() {
        let sys = parse(ESEXAM1).unwrap();
        let (sig, off, a) = analyze(&sys);
        let (_, step) = es_step(&sys, &sig, &off, &a, 0, false).unwrap();
        assert!(!step.always_nonzero);
        assert!(equivalent_up_to_sign(&step.conditions[0], &parse_expr(&sys, "x2").unwrap()));
    }
}
