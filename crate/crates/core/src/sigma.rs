//! Signature matrix, highest-value transversal (HVT), offsets, structural
//! index and degrees of freedom.

use serde_json::{json, Value};
use thiserror::Error;

use crate::expr::VarClass;
use crate::frontend::DaeSystem;

/// `σ_ij`, with `None` standing for −∞.
pub type Entry = Option<i64>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignatureMatrix {
    pub n: usize,
    pub entries: Vec<Vec<Entry>>,
    /// Column of the HVT in each row; present iff `val` is finite.
    pub hvt: Option<Vec<usize>>,
    pub val: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Offsets {
    pub c: Vec<i64>,
    pub d: Vec<i64>,
    pub canonical: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigmaError {
    #[error("structurally ill-posed: no finite transversal")]
    NoTransversal,
    #[error("offsets have wrong length")]
    Shape,
    #[error("offsets are not valid for this signature matrix")]
    Invalid,
}

impl SignatureMatrix {
    pub fn from_entries(entries: Vec<Vec<Entry>>) -> Self {
        let n = entries.len();
        assert!(entries.iter().all(|r| r.len() == n), "signature matrix must be square");
        let hvt = solve_hvt(&entries);
        let val = hvt.as_ref().map(|t| t.iter().enumerate().map(|(i, &j)| entries[i][j].unwrap()).sum());
        SignatureMatrix { n, entries, hvt, val }
    }

    pub fn get(&self, i: usize, j: usize) -> Entry {
        self.entries[i][j]
    }

    /// Value of a transversal, −∞ if it touches a −∞ cell.
    pub fn transversal_value(&self, cols: &[usize]) -> Option<i64> {
        cols.iter().enumerate().map(|(i, &j)| self.entries[i][j]).sum()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "sigma": self.entries,
            "hvt": self.hvt.as_ref().map(|t| t.iter().enumerate().map(|(i, &j)| [i + 1, j + 1]).collect::<Vec<_>>()),
            "val": self.val,
        })
    }
}

pub fn signature_matrix(sys: &DaeSystem) -> SignatureMatrix {
    let n = sys.n();
    let entries = sys
        .equations
        .iter()
        .map(|eq| (0..n).map(|j| sys.hod(&eq.expr, j).map(i64::from)).collect())
        .collect();
    SignatureMatrix::from_entries(entries)
}

/// Maximum-weight perfect matching over the finite cells, returned as the
/// lexicographically smallest row-to-column map among all maximizers.
fn solve_hvt(a: &[Vec<Entry>]) -> Option<Vec<usize>> {
    let n = a.len();
    if n == 0 {
        return Some(Vec::new());
    }
    let (u, v) = hungarian(a)?;
    // With optimal duals, the optimal transversals are exactly the perfect
    // matchings of the tight cells.
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| a[i][j].is_some_and(|s| -s == u[i] + v[j])).collect())
        .collect();
    let mut chosen = Vec::with_capacity(n);
    let mut used = vec![false; n];
    for i in 0..n {
        let j = (0..n)
            .find(|&j| {
                if used[j] || !tight[i][j] {
                    return false;
                }
                used[j] = true;
                let ok = has_perfect_matching(&tight, i + 1, &used);
                used[j] = false;
                ok
            })
            .expect("tight graph admits a perfect matching");
        used[j] = true;
        chosen.push(j);
    }
    Some(chosen)
}

/// Shortest-augmenting-path assignment on costs `-σ_ij`, with −∞ cells
/// absent from the graph. Returns dual potentials `(u, v)` satisfying
/// `u_i + v_j ≤ -σ_ij` on every finite cell, or `None` if no perfect matching
/// over finite cells exists.
fn hungarian(a: &[Vec<Entry>]) -> Option<(Vec<i64>, Vec<i64>)> {
    let n = a.len();
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv: Vec<Option<i64>> = vec![None; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta: Option<i64> = None;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                if let Some(s) = a[i0 - 1][j - 1] {
                    let cur = -s - u[i0] - v[j];
                    if minv[j].is_none_or(|m| cur < m) {
                        minv[j] = Some(cur);
                        way[j] = j0;
                    }
                }
                if let Some(m) = minv[j] {
                    if delta.is_none_or(|d| m < d) {
                        delta = Some(m);
                        j1 = j;
                    }
                }
            }
            let delta = delta?;
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else if let Some(m) = minv[j].as_mut() {
                    *m -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    Some((u[1..].to_vec(), v[1..].to_vec()))
}

/// Whether rows `from..n` can be matched into the columns not in `used`,
/// using only cells marked in `adj`.
fn has_perfect_matching(adj: &[Vec<bool>], from: usize, used: &[bool]) -> bool {
    let n = adj.len();
    let rows: Vec<usize> = (from..n).collect();
    matching_size(adj, &rows, used) == rows.len()
}

/// Size of a maximum matching of `rows` into the columns not blocked.
pub(crate) fn matching_size(adj: &[Vec<bool>], rows: &[usize], blocked: &[bool]) -> usize {
    let n = adj.first().map_or(0, |r| r.len());
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn augment(
        r: usize,
        adj: &[Vec<bool>],
        blocked: &[bool],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for j in 0..owner.len() {
            if adj[r][j] && !blocked[j] && !seen[j] {
                seen[j] = true;
                if owner[j].is_none_or(|o| augment(o, adj, blocked, seen, owner)) {
                    owner[j] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    let mut size = 0;
    for &r in rows {
        let mut seen = vec![false; n];
        if augment(r, adj, blocked, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Exhaustive HVT over all permutations; the first maximizer in
/// lexicographic order wins. Intended as a test oracle for small `n`.
pub fn hvt_bruteforce(sig: &SignatureMatrix) -> (Option<i64>, Option<Vec<usize>>) {
    assert!(sig.n <= 8, "brute force is limited to n <= 8");
    let n = sig.n;
    let mut best: (Option<i64>, Option<Vec<usize>>) = (None, None);
    let mut perm = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(
        sig: &SignatureMatrix,
        perm: &mut Vec<usize>,
        used: &mut [bool],
        acc: i64,
        best: &mut (Option<i64>, Option<Vec<usize>>),
    ) {
        let i = perm.len();
        if i == sig.n {
            if best.0.is_none_or(|b| acc > b) {
                *best = (Some(acc), Some(perm.clone()));
            }
            return;
        }
        for j in 0..sig.n {
            if let (false, Some(s)) = (used[j], sig.entries[i][j]) {
                used[j] = true;
                perm.push(j);
                rec(sig, perm, used, acc + s, best);
                perm.pop();
                used[j] = false;
            }
        }
    }
    rec(sig, &mut perm, &mut used, 0, &mut best);
    if n == 0 {
        return (Some(0), Some(Vec::new()));
    }
    best
}

/// Smallest valid offsets, by fixed-point iteration along the HVT.
pub fn canonical_offsets(sig: &SignatureMatrix) -> Result<Offsets, SigmaError> {
    let t = sig.hvt.as_ref().ok_or(SigmaError::NoTransversal)?;
    let n = sig.n;
    let mut c = vec![0i64; n];
    let mut d = vec![0i64; n];
    loop {
        for j in 0..n {
            d[j] = (0..n).filter_map(|i| sig.entries[i][j].map(|s| s + c[i])).max().unwrap_or(0);
        }
        let next: Vec<i64> = (0..n).map(|i| d[t[i]] - sig.entries[i][t[i]].unwrap()).collect();
        if next == c {
            break;
        }
        c = next;
    }
    let off = Offsets { c, d, canonical: true };
    validate_offsets(sig, &off.c, &off.d)?;
    Ok(off)
}

/// Checks `c ≥ 0`, `d_j − c_i ≥ σ_ij`, and equality on some (hence every) HVT.
pub fn validate_offsets(sig: &SignatureMatrix, c: &[i64], d: &[i64]) -> Result<(), SigmaError> {
    let n = sig.n;
    if c.len() != n || d.len() != n {
        return Err(SigmaError::Shape);
    }
    if sig.val.is_none() {
        return Err(SigmaError::NoTransversal);
    }
    if c.iter().any(|&x| x < 0) {
        return Err(SigmaError::Invalid);
    }
    let mut eq = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if let Some(s) = sig.entries[i][j] {
                if d[j] - c[i] < s {
                    return Err(SigmaError::Invalid);
                }
                eq[i][j] = d[j] - c[i] == s;
            }
        }
    }
    // Equality on one transversal forces Σd − Σc = Val, so it is an HVT.
    let rows: Vec<usize> = (0..n).collect();
    if matching_size(&eq, &rows, &vec![false; n]) < n {
        return Err(SigmaError::Invalid);
    }
    Ok(())
}

/// `c ≥ 0` and `d_j − c_i ≥ σ_ij` on every finite cell, without requiring
/// equality on a transversal.
pub fn dominates(sig: &SignatureMatrix, c: &[i64], d: &[i64]) -> bool {
    let n = sig.n;
    c.len() == n
        && d.len() == n
        && c.iter().all(|&x| x >= 0)
        && (0..n).all(|i| (0..n).all(|j| sig.entries[i][j].is_none_or(|s| d[j] - c[i] >= s)))
}

pub fn is_valid_offsets(sig: &SignatureMatrix, c: &[i64], d: &[i64]) -> bool {
    validate_offsets(sig, c, d).is_ok()
}

pub fn structural_index(off: &Offsets) -> i64 {
    let m = off.c.iter().copied().max().unwrap_or(0);
    if off.d.contains(&0) {
        m + 1
    } else {
        m
    }
}

pub fn dof(off: &Offsets) -> i64 {
    off.d.iter().sum::<i64>() - off.c.iter().sum::<i64>()
}

/// Offsets to use for `sys`: the declared ones if present, else canonical.
pub fn system_offsets(sys: &DaeSystem, sig: &SignatureMatrix) -> Result<Offsets, SigmaError> {
    match &sys.offsets {
        Some((c, d)) => {
            validate_offsets(sig, c, d)?;
            let canonical = canonical_offsets(sig).is_ok_and(|o| o.c == *c && o.d == *d);
            Ok(Offsets { c: c.clone(), d: d.clone(), canonical })
        }
        None => canonical_offsets(sig),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FormalAlternative {
    /// Formal and true signature matrices coincide.
    Same,
    /// Matrices differ but the values agree.
    EqualValue,
    /// The formal value exceeds the true one.
    FormalExceeds,
}

#[derive(Clone, Debug)]
pub struct FormalReport {
    pub formal: SignatureMatrix,
    pub actual: SignatureMatrix,
    /// `(i, j, σ̃_ij, σ_ij)` for every differing cell.
    pub differing: Vec<(usize, usize, Entry, Entry)>,
    pub alternative: FormalAlternative,
}

/// Compares the signature matrix of the trees as written with that of the
/// normalized equations. Equations without a tree count as already simplified.
pub fn formal_vs_true(sys: &DaeSystem) -> FormalReport {
    let n = sys.n();
    let actual = signature_matrix(sys);
    let entries = sys
        .equations
        .iter()
        .enumerate()
        .map(|(i, eq)| {
            (0..n)
                .map(|j| match &eq.raw {
                    Some(raw) => {
                        let (class, var): (VarClass, usize) = sys.column(j);
                        raw.formal_hod(class, var).map(i64::from)
                    }
                    None => actual.entries[i][j],
                })
                .collect()
        })
        .collect();
    let formal = SignatureMatrix::from_entries(entries);
    let mut differing = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if formal.entries[i][j] != actual.entries[i][j] {
                differing.push((i, j, formal.entries[i][j], actual.entries[i][j]));
            }
        }
    }
    let alternative = if differing.is_empty() {
        FormalAlternative::Same
    } else if formal.val == actual.val {
        FormalAlternative::EqualValue
    } else {
        FormalAlternative::FormalExceeds
    };
    FormalReport { formal, actual, differing, alternative }
}

/// Signature tableau: HVT cells starred, `-` for −∞, `c_i` in the right
/// margin and `d_j` along the bottom.
pub fn tableau(sys: &DaeSystem, sig: &SignatureMatrix, off: Option<&Offsets>) -> String {
    let n = sig.n;
    let col_names: Vec<String> = (0..n).map(|j| sys.column_name(j).to_string()).collect();
    let row_names: Vec<String> = sys.equations.iter().map(|e| e.name.clone()).collect();
    let cell = |i: usize, j: usize| {
        let star = sig.hvt.as_ref().is_some_and(|t| t[i] == j);
        match sig.entries[i][j] {
            Some(s) if star => format!("{s}*"),
            Some(s) => s.to_string(),
            None => "-".to_string(),
        }
    };
    let width = col_names
        .iter()
        .map(|s| s.len())
        .chain((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| cell(i, j).len()))
        .chain(off.into_iter().flat_map(|o| o.d.iter().map(|x| x.to_string().len())))
        .max()
        .unwrap_or(1)
        .max(2);
    let label = row_names.iter().map(|s| s.len()).max().unwrap_or(0).max(2);
    let mut out = format!("{:label$}", "");
    for name in &col_names {
        out.push_str(&format!(" {name:>width$}"));
    }
    if off.is_some() {
        out.push_str(&format!(" {:>3}", "c_i"));
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&format!("{:label$}", row_names[i]));
        for j in 0..n {
            out.push_str(&format!(" {:>width$}", cell(i, j)));
        }
        if let Some(o) = off {
            out.push_str(&format!(" {:>3}", o.c[i]));
        }
        out.push('\n');
    }
    if let Some(o) = off {
        out.push_str(&format!("{:label$}", "d_j"));
        for dj in &o.d {
            out.push_str(&format!(" {dj:>width$}"));
        }
        out.push('\n');
    }
    match sig.val {
        Some(v) => out.push_str(&format!("Val(Sigma) = {v}\n")),
        None => out.push_str("Val(Sigma) = -inf\n"),
    }
    out
}

/// Parses a tableau produced by [`tableau`] back into its matrix, HVT and
/// offsets.
pub fn parse_tableau(text: &str) -> Option<(Vec<Vec<Entry>>, Vec<usize>, Option<Offsets>)> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let header = lines.first()?;
    let has_c = header.split_whitespace().last() == Some("c_i");
    let n = header.split_whitespace().count() - usize::from(has_c);
    let mut entries = Vec::new();
    let mut hvt = Vec::new();
    let mut c = Vec::new();
    for line in lines.iter().skip(1).take(n) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let cells = &toks[1..=n];
        let mut row = Vec::new();
        for (j, t) in cells.iter().enumerate() {
            if let Some(s) = t.strip_suffix('*') {
                hvt.push(j);
                row.push(Some(s.parse().ok()?));
            } else if *t == "-" {
                row.push(None);
            } else {
                row.push(Some(t.parse().ok()?));
            }
        }
        if has_c {
            c.push(toks.get(n + 1)?.parse().ok()?);
        }
        entries.push(row);
    }
    let off = if has_c {
        let dline = lines.get(n + 1)?;
        let d: Vec<i64> = dline.split_whitespace().skip(1).map(|t| t.parse().ok()).collect::<Option<_>>()?;
        Some(Offsets { c, d, canonical: false })
    } else {
        None
    };
    Some((entries, hvt, off))
}

pub fn report_json(sig: &SignatureMatrix, off: Option<&Offsets>) -> Value {
    let mut v = sig.to_json();
    if let Some(o) = off {
        v["c"] = json!(o.c);
        v["d"] = json!(o.d);
        v["index"] = json!(structural_index(o));
        v["dof"] = json!(dof(o));
    }
    v
}
