//! DAE systems, the text format they are written in, and rendering back to
//! text or JSON.

mod lexer;
mod parser;
mod render;

use std::sync::Arc;

use crate::expr::{Atom, AtomKind, Expr, Names, RawExpr, Rat, VarClass};
use crate::lc::ConversionStep;

pub use lexer::Pos;
pub use parser::{lookup_column, parse, parse_expr, parse_point, parse_raw, ParseError, ParseErrorKind};
pub use render::{render, to_json as render_json, Format};

#[derive(Clone, Debug)]
pub struct Equation {
    pub name: String,
    pub expr: Expr,
    /// The tree as written, kept for formal-HOD comparisons.
    pub raw: Option<RawExpr>,
}

impl Equation {
    pub fn new(name: impl Into<String>, expr: Expr) -> Self {
        Equation { name: name.into(), expr, raw: None }
    }
}

/// Link from a converted system to the system and step it came from.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub parent: Arc<DaeSystem>,
    pub step: ConversionStep,
}

/// A square system `f_i(t, x, x', …) = 0` over state and auxiliary unknowns.
/// Columns are the state variables followed by the auxiliaries.
#[derive(Clone, Debug, Default)]
pub struct DaeSystem {
    pub name: String,
    pub states: Vec<String>,
    pub aux: Vec<String>,
    pub funcs: Vec<(String, usize)>,
    pub inputs: Vec<String>,
    pub consts: Vec<(String, Option<Rat>)>,
    pub equations: Vec<Equation>,
    /// Declared vanishing expressions used for constraint-aware structural
    /// zeros, e.g. a holonomic constraint.
    pub zeros: Vec<(String, Expr)>,
    /// User-declared offsets `(c, d)`.
    pub offsets: Option<(Vec<i64>, Vec<i64>)>,
    pub provenance: Option<Provenance>,
}

impl DaeSystem {
    pub fn n(&self) -> usize {
        self.states.len() + self.aux.len()
    }

    pub fn is_square(&self) -> bool {
        self.equations.len() == self.n()
    }

    pub fn column(&self, col: usize) -> (VarClass, usize) {
        if col < self.states.len() {
            (VarClass::State, col)
        } else {
            (VarClass::Aux, col - self.states.len())
        }
    }

    pub fn column_of(&self, class: VarClass, var: usize) -> usize {
        match class {
            VarClass::State => var,
            VarClass::Aux => self.states.len() + var,
        }
    }

    pub fn column_name(&self, col: usize) -> &str {
        if col < self.states.len() {
            &self.states[col]
        } else {
            &self.aux[col - self.states.len()]
        }
    }

    pub fn col_atom(&self, col: usize, order: u32) -> Atom {
        let (class, var) = self.column(col);
        Atom::var(class, var, order)
    }

    pub fn col_expr(&self, col: usize, order: u32) -> Expr {
        Expr::atom(self.col_atom(col, order))
    }

    /// Highest derivative order of column `col` in `e`.
    pub fn hod(&self, e: &Expr, col: usize) -> Option<u32> {
        let (class, var) = self.column(col);
        e.hod(class, var)
    }

    pub fn exprs(&self) -> Vec<Expr> {
        self.equations.iter().map(|e| e.expr.clone()).collect()
    }

    pub fn const_value(&self, name: &str) -> Option<&Rat> {
        self.consts.iter().find(|(n, _)| n == name).and_then(|(_, v)| v.as_ref())
    }

    /// Replaces every constant that has a value by that value.
    pub fn fold_constants(&self) -> DaeSystem {
        let fold = |a: &Atom| match a.kind() {
            AtomKind::Const(name) => self.const_value(name).map(|v| Expr::constant(v.clone())),
            _ => None,
        };
        let mut out = self.clone();
        for eq in &mut out.equations {
            eq.expr = eq.expr.substitute(&fold);
            eq.raw = None;
        }
        for (_, z) in &mut out.zeros {
            *z = z.substitute(&fold);
        }
        out
    }

    /// Fresh auxiliary name derived from `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        let taken = |s: &str| {
            self.states.iter().chain(&self.aux).chain(&self.inputs).any(|n| n == s)
                || self.consts.iter().any(|(n, _)| n == s)
                || self.funcs.iter().any(|(n, _)| n == s)
        };
        if !taken(base) {
            return base.to_string();
        }
        (2..).map(|k| format!("{base}_{k}")).find(|s| !taken(s)).unwrap()
    }

    pub fn equation_index(&self, name: &str) -> Option<usize> {
        self.equations.iter().position(|e| e.name == name)
    }

    /// Chain of conversion steps leading to this system, oldest first.
    pub fn lineage(&self) -> Vec<&ConversionStep> {
        let mut steps = Vec::new();
        let mut cur = self;
        while let Some(p) = &cur.provenance {
            steps.push(&p.step);
            cur = &p.parent;
        }
        steps.reverse();
        steps
    }

    /// The system the lineage starts from.
    pub fn root(&self) -> &DaeSystem {
        let mut cur = self;
        while let Some(p) = &cur.provenance {
            cur = &p.parent;
        }
        cur
    }

    pub fn text(&self, e: &Expr) -> String {
        e.to_text(self)
    }
}

impl Names for DaeSystem {
    fn var_name(&self, class: VarClass, var: usize) -> String {
        match class {
            VarClass::State => self.states.get(var).cloned(),
            VarClass::Aux => self.aux.get(var).cloned(),
        }
        .unwrap_or_else(|| format!("?{var}"))
    }
}
