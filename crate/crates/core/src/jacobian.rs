//! System Jacobian, singularity classification and null vectors.

use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::expr::{random_free_point, EvalError, Expr, Monomial, Number, Poly, Rat, ValuePoint};
use crate::frontend::DaeSystem;
use crate::sigma::{matching_size, Offsets, SignatureMatrix};

/// Largest size for which the determinant is expanded symbolically.
pub const SYMBOLIC_DET_MAX: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    GenericallyNonsingular,
    IdenticallySingular,
    StructurallySingular,
}

impl Classification {
    pub fn is_singular(self) -> bool {
        self != Classification::GenericallyNonsingular
    }

    pub fn name(self) -> &'static str {
        match self {
            Classification::GenericallyNonsingular => "generically nonsingular",
            Classification::IdenticallySingular => "identically singular",
            Classification::StructurallySingular => "structurally singular",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `Jᵀu = 0`
    Left,
    /// `Ju = 0`
    Right,
}

#[derive(Clone, Debug)]
pub struct SystemJacobian {
    pub entries: Vec<Vec<Expr>>,
    pub offsets: Offsets,
    pub classification: Classification,
    /// Symbolic determinant, reduced modulo the declared zeros.
    pub det: Option<Expr>,
    /// Whether declared zeros were applied to the entries.
    pub constrained: bool,
}

impl SystemJacobian {
    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn to_json(&self, sys: &DaeSystem) -> Value {
        json!({
            "entries": self.entries.iter().map(|r| r.iter().map(|e| sys.text(e)).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "classification": self.classification.name(),
            "det": self.det.as_ref().map(|d| sys.text(d)),
        })
    }
}

/// `J_ij = ∂f_i/∂x_j^(d_j−c_i)` where `d_j − c_i = σ_ij`, zero elsewhere.
pub fn jacobian_entries(sys: &DaeSystem, sig: &SignatureMatrix, off: &Offsets) -> Vec<Vec<Expr>> {
    let n = sig.n;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match sig.entries[i][j] {
                    Some(s) if off.d[j] - off.c[i] == s => {
                        sys.equations[i].expr.partial(&sys.col_atom(j, s as u32))
                    }
                    _ => Expr::zero(),
                })
                .collect()
        })
        .collect()
}

fn reduce_all(e: &Expr, zeros: &[Poly]) -> Expr {
    zeros.iter().fold(e.clone(), |acc, z| acc.reduce_modulo(z))
}

/// Builds and classifies the system Jacobian. Declared zeros of `sys` are
/// applied to the entries first.
pub fn system_jacobian(sys: &DaeSystem, sig: &SignatureMatrix, off: &Offsets) -> SystemJacobian {
    let zeros: Vec<Poly> = sys.zeros.iter().map(|(_, z)| z.num().clone()).collect();
    let mut entries = jacobian_entries(sys, sig, off);
    if !zeros.is_empty() {
        for row in &mut entries {
            for e in row.iter_mut() {
                *e = reduce_all(e, &zeros);
            }
        }
    }
    let (classification, det) = classify(&entries, &zeros);
    SystemJacobian { entries, offsets: off.clone(), classification, det, constrained: !zeros.is_empty() }
}

pub fn is_structurally_singular(a: &[Vec<Expr>]) -> bool {
    let n = a.len();
    let adj: Vec<Vec<bool>> = a.iter().map(|r| r.iter().map(|e| !e.is_zero()).collect()).collect();
    let rows: Vec<usize> = (0..n).collect();
    matching_size(&adj, &rows, &vec![false; n]) < n
}

/// Classification plus the determinant when it is computed symbolically.
pub fn classify(a: &[Vec<Expr>], zeros: &[Poly]) -> (Classification, Option<Expr>) {
    let n = a.len();
    if is_structurally_singular(a) {
        return (Classification::StructurallySingular, Some(Expr::zero()));
    }
    if n <= SYMBOLIC_DET_MAX {
        let det = reduce_all(&determinant(a), zeros);
        let class = if det.is_zero() {
            Classification::IdenticallySingular
        } else {
            Classification::GenericallyNonsingular
        };
        return (class, Some(det));
    }
    if generic_rank(a, 0xD1E7, 3) < n {
        (Classification::IdenticallySingular, None)
    } else {
        (Classification::GenericallyNonsingular, None)
    }
}

/// Symbolic determinant by fraction-free elimination. Each row is first
/// scaled by the product of its distinct denominators.
pub fn determinant(a: &[Vec<Expr>]) -> Expr {
    let n = a.len();
    if n == 0 {
        return Expr::one();
    }
    let mut scale = Poly::one();
    let mut m: Vec<Vec<Poly>> = Vec::with_capacity(n);
    for row in a {
        let mut dens: Vec<&Poly> = Vec::new();
        for e in row {
            if !e.den().is_one() && !dens.contains(&e.den()) {
                dens.push(e.den());
            }
        }
        let mult = dens.iter().fold(Poly::one(), |acc, d| acc.mul(d));
        m.push(
            row.iter()
                .map(|e| e.num().mul(&mult.div_exact(e.den()).expect("denominator divides row multiplier")))
                .collect(),
        );
        scale = scale.mul(&mult);
    }
    let det = bareiss(m);
    Expr::from_fraction(det, scale, &[]).expect("row multipliers are nonzero")
}

/// Fraction-free Gaussian elimination over the polynomial ring.
pub fn bareiss(mut m: Vec<Vec<Poly>>) -> Poly {
    let n = m.len();
    let mut prev = Poly::one();
    let mut negate = false;
    for k in 0..n {
        let Some(p) = (k..n).filter(|&i| !m[i][k].is_zero()).min_by_key(|&i| (m[i][k].len(), i)) else {
            return Poly::zero();
        };
        if p != k {
            m.swap(p, k);
            negate = !negate;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let t = m[i][j].mul(&m[k][k]).sub(&m[i][k].mul(&m[k][j]));
                m[i][j] = t.div_exact(&prev).expect("Bareiss division is exact");
            }
            m[i][k] = Poly::zero();
        }
        prev = m[k][k].clone();
    }
    let det = m[n - 1][n - 1].clone();
    if negate {
        det.neg()
    } else {
        det
    }
}

/// Determinant by cofactor expansion, for checking small cases.
pub fn cofactor_det(a: &[Vec<Expr>]) -> Expr {
    let n = a.len();
    if n == 0 {
        return Expr::one();
    }
    let mut acc = Expr::zero();
    for j in 0..n {
        if a[0][j].is_zero() {
            continue;
        }
        let minor: Vec<Vec<Expr>> =
            a[1..].iter().map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, e)| e.clone()).collect()).collect();
        let term = a[0][j].mul_ref(&cofactor_det(&minor));
        acc = if j % 2 == 0 { acc.add_ref(&term) } else { acc.sub_ref(&term) };
    }
    acc
}

fn eval_matrix(a: &[Vec<Expr>], p: &ValuePoint) -> Result<Vec<Vec<Number>>, EvalError> {
    a.iter().map(|r| r.iter().map(|e| e.evaluate(p)).collect()).collect()
}

fn matrix_atoms(a: &[Vec<Expr>]) -> std::collections::BTreeSet<crate::expr::Atom> {
    a.iter().flatten().flat_map(|e| e.atoms()).collect()
}

/// Exact rank of a rational matrix.
pub fn rational_rank(mut m: Vec<Vec<Rat>>) -> usize {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(p, rank);
        for i in 0..rows {
            if i != rank && !m[i][c].is_zero() {
                let f = &m[i][c] / &m[rank][c];
                for k in c..cols {
                    let t = &f * &m[rank][k];
                    m[i][k] -= t;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Largest exact rank over `reps` random rational points of the free
/// algebra; equals the generic rank with high probability.
pub fn generic_rank(a: &[Vec<Expr>], seed: u64, reps: usize) -> usize {
    let atoms = matrix_atoms(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0;
    for _ in 0..reps {
        let p = random_free_point(&atoms, &mut rng);
        let vals: Option<Vec<Vec<Rat>>> = a
            .iter()
            .map(|r| {
                r.iter()
                    .map(|e| match e.eval_free(&p) {
                        Ok(Number::Exact(q)) => Some(q),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        if let Some(vals) = vals {
            best = best.max(rational_rank(vals));
        }
    }
    best
}

/// Exact determinant of the matrix evaluated in the free algebra at a
/// random point. Returns `None` if an entry is undefined there.
pub fn random_point_det(a: &[Vec<Expr>], seed: u64) -> Option<Rat> {
    let atoms = matrix_atoms(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random_free_point(&atoms, &mut rng);
    let m: Vec<Vec<Rat>> = a
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| match e.eval_free(&p) {
                    Ok(Number::Exact(q)) => Some(q),
                    _ => None,
                })
                .collect()
        })
        .collect::<Option<_>>()?;
    Some(rational_det(m))
}

pub fn rational_det(mut m: Vec<Vec<Rat>>) -> Rat {
    let n = m.len();
    let mut det = Rat::one();
    for c in 0..n {
        let Some(p) = (c..n).find(|&i| !m[i][c].is_zero()) else { return Rat::zero() };
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= &m[c][c];
        for i in c + 1..n {
            if !m[i][c].is_zero() {
                let f = &m[i][c] / &m[c][c];
                for k in c..n {
                    let t = &f * &m[c][k];
                    m[i][k] -= t;
                }
            }
        }
    }
    det
}

/// Floating determinant at `p` by LU with partial pivoting.
pub fn numeric_det(a: &[Vec<Expr>], p: &ValuePoint) -> Result<f64, EvalError> {
    let m: Vec<Vec<f64>> = eval_matrix(a, p)?.into_iter().map(|r| r.iter().map(Number::to_f64).collect()).collect();
    Ok(lu_det(m))
}

pub fn lu_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for k in c..n {
                m[i][k] -= f * m[c][k];
            }
        }
    }
    det
}

/// Infinity norm of the matrix evaluated at `p`.
pub fn numeric_norm_inf(a: &[Vec<Expr>], p: &ValuePoint) -> Result<f64, EvalError> {
    Ok(eval_matrix(a, p)?.iter().map(|r| r.iter().map(|x| x.to_f64().abs()).sum::<f64>()).fold(0.0, f64::max))
}

fn transpose(a: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let n = a.len();
    let m = a.first().map_or(0, |r| r.len());
    (0..m).map(|j| (0..n).map(|i| a[i][j].clone()).collect()).collect()
}

/// One kernel vector of `J` (right) or `Jᵀ` (left), in simplest form:
/// polynomial entries with no common content, monomial or listed factor,
/// and a positive leading coefficient in the first nonzero entry.
/// Returns `None` when the matrix has full rank.
pub fn null_vector(a: &[Vec<Expr>], side: Side, zeros: &[Poly]) -> Option<Vec<Expr>> {
    let m = match side {
        Side::Right => a.to_vec(),
        Side::Left => transpose(a),
    };
    let u = kernel_vector(m, zeros)?;
    Some(simplest_form(&u))
}

/// Gauss–Jordan elimination with full pivoting: the pivot is the nonzero
/// entry with the fewest terms, ties broken by lowest (row, col).
fn kernel_vector(mut m: Vec<Vec<Expr>>, zeros: &[Poly]) -> Option<Vec<Expr>> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let mut pivot_col: Vec<usize> = Vec::new();
    let mut is_pivot = vec![false; cols];
    for r in 0..rows {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in r..rows {
            for j in 0..cols {
                if is_pivot[j] || m[i][j].is_zero() {
                    continue;
                }
                let key = (m[i][j].size(), i, j);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        }
        let Some((_, pi, pj)) = best else { break };
        m.swap(r, pi);
        let inv = Expr::one().checked_div(&m[r][pj]).expect("pivot is nonzero");
        for k in 0..cols {
            if !m[r][k].is_zero() {
                m[r][k] = reduce_all(&m[r][k].mul_ref(&inv), zeros);
            }
        }
        for i in 0..rows {
            if i == r || m[i][pj].is_zero() {
                continue;
            }
            let f = m[i][pj].clone();
            for k in 0..cols {
                if !m[r][k].is_zero() {
                    m[i][k] = reduce_all(&m[i][k].sub_ref(&f.mul_ref(&m[r][k])), zeros);
                }
            }
        }
        is_pivot[pj] = true;
        pivot_col.push(pj);
    }
    let free = (0..cols).find(|&j| !is_pivot[j])?;
    let mut u = vec![Expr::zero(); cols];
    u[free] = Expr::one();
    for (r, &pc) in pivot_col.iter().enumerate() {
        u[pc] = m[r][free].neg_ref();
    }
    Some(u)
}

fn rat_gcd(a: &Rat, b: &Rat) -> Rat {
    Rat::new(a.numer().gcd(b.numer()), a.denom().lcm(b.denom()))
}

/// Clears denominators and strips common content, monomial and polynomial
/// factors from a vector of expressions.
pub fn simplest_form(u: &[Expr]) -> Vec<Expr> {
    let mut dens: Vec<Poly> = Vec::new();
    for e in u {
        if !e.den().is_one() && !dens.contains(e.den()) {
            dens.push(e.den().clone());
        }
    }
    let mult = Expr::from_poly(dens.iter().fold(Poly::one(), |acc, d| acc.mul(d)));
    let mut polys: Vec<Poly> = u
        .iter()
        .map(|e| {
            let v = e.mul_ref(&mult);
            assert!(v.is_polynomial(), "denominators cleared");
            v.num().clone()
        })
        .collect();
    let nonzero: Vec<usize> = (0..polys.len()).filter(|&i| !polys[i].is_zero()).collect();
    if nonzero.is_empty() {
        return u.to_vec();
    }
    // Common polynomial factors: try the cleared denominators and the
    // entries themselves as candidates.
    let mut candidates: Vec<Poly> = dens.clone();
    candidates.extend(nonzero.iter().map(|&i| polys[i].clone()));
    for cand in candidates {
        if cand.as_constant().is_some() {
            continue;
        }
        let cand = cand.div_monomial(&cand.monomial_gcd());
        if cand.as_constant().is_some() {
            continue;
        }
        loop {
            let divided: Option<Vec<Poly>> = nonzero.iter().map(|&i| polys[i].div_exact(&cand)).collect();
            let Some(divided) = divided else { break };
            for (k, &i) in nonzero.iter().enumerate() {
                polys[i] = divided[k].clone();
            }
        }
    }
    let mono = nonzero.iter().skip(1).fold(polys[nonzero[0]].monomial_gcd(), |g, &i| g.gcd(&polys[i].monomial_gcd()));
    if mono != Monomial::one() {
        for &i in &nonzero {
            polys[i] = polys[i].div_monomial(&mono);
        }
    }
    let content = nonzero.iter().skip(1).fold(polys[nonzero[0]].content(), |g, &i| rat_gcd(&g, &polys[i].content()));
    let mut k = content.recip();
    if polys[nonzero[0]].leading().is_some_and(|(_, c)| c.is_negative()) {
        k = -k;
    }
    polys.iter().map(|p| Expr::from_poly(p.scale(&k))).collect()
}

/// `J u` or `Jᵀ u`, reduced modulo `zeros`.
pub fn apply(a: &[Vec<Expr>], u: &[Expr], side: Side, zeros: &[Poly]) -> Vec<Expr> {
    let n = a.len();
    (0..n)
        .map(|i| {
            let s = (0..n).fold(Expr::zero(), |acc, k| {
                let entry = match side {
                    Side::Right => &a[i][k],
                    Side::Left => &a[k][i],
                };
                acc.add_ref(&entry.mul_ref(&u[k]))
            });
            reduce_all(&s, zeros)
        })
        .collect()
}

/// Rendering of `J` with its determinant caption.
pub fn render_matrix(sys: &DaeSystem, jac: &SystemJacobian) -> String {
    let cells: Vec<Vec<String>> = jac.entries.iter().map(|r| r.iter().map(|e| sys.text(e)).collect()).collect();
    let width = cells.iter().flatten().map(|s| s.len()).max().unwrap_or(1);
    let mut out = String::new();
    for row in &cells {
        out.push_str("[");
        out.push_str(&row.iter().map(|s| format!("{s:>width$}")).collect::<Vec<_>>().join("  "));
        out.push_str("]\n");
    }
    match &jac.det {
        Some(d) => out.push_str(&format!("det(J) = {}  ({})\n", sys.text(d), jac.classification.name())),
        None => out.push_str(&format!("det(J) not expanded  ({})\n", jac.classification.name())),
    }
    out
}
