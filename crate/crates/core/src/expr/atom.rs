use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Expr;

/// Which block of unknowns a derivative atom belongs to.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum VarClass {
    State,
    Aux,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum TransOp {
    Sin,
    Cos,
    Exp,
    Ln,
}

impl TransOp {
    pub fn name(self) -> &'static str {
        match self {
            TransOp::Sin => "sin",
            TransOp::Cos => "cos",
            TransOp::Exp => "exp",
            TransOp::Ln => "ln",
        }
    }

    pub fn from_name(s: &str) -> Option<TransOp> {
        match s {
            "sin" => Some(TransOp::Sin),
            "cos" => Some(TransOp::Cos),
            "exp" => Some(TransOp::Exp),
            "ln" => Some(TransOp::Ln),
            _ => None,
        }
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            TransOp::Sin => v.sin(),
            TransOp::Cos => v.cos(),
            TransOp::Exp => v.exp(),
            TransOp::Ln => v.ln(),
        }
    }
}

impl fmt::Display for TransOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Variant order fixes the variable order of the polynomial ring: unknowns
/// are the most significant variables.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum AtomKind {
    Var { class: VarClass, var: usize, order: u32 },
    Time,
    Driving { name: String, order: u32 },
    Const(String),
    /// `partial[i]` counts differentiations with respect to argument `i`.
    Func { name: String, partial: Vec<u32>, args: Vec<Expr> },
    Trans { op: TransOp, arg: Expr },
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Atom(Arc<AtomKind>);

impl Atom {
    pub fn new(kind: AtomKind) -> Self {
        Atom(Arc::new(kind))
    }

    pub fn kind(&self) -> &AtomKind {
        &self.0
    }

    pub fn var(class: VarClass, var: usize, order: u32) -> Self {
        Atom::new(AtomKind::Var { class, var, order })
    }

    pub fn state(var: usize, order: u32) -> Self {
        Atom::var(VarClass::State, var, order)
    }

    pub fn aux(var: usize, order: u32) -> Self {
        Atom::var(VarClass::Aux, var, order)
    }

    pub fn time() -> Self {
        Atom::new(AtomKind::Time)
    }

    pub fn driving(name: &str, order: u32) -> Self {
        Atom::new(AtomKind::Driving { name: name.to_string(), order })
    }

    pub fn constant(name: &str) -> Self {
        Atom::new(AtomKind::Const(name.to_string()))
    }

    /// The variable and order of a derivative atom.
    pub fn as_var(&self) -> Option<(VarClass, usize, u32)> {
        match self.kind() {
            AtomKind::Var { class, var, order } => Some((*class, *var, *order)),
            _ => None,
        }
    }

    pub fn is_derivative_atom(&self) -> bool {
        self.as_var().is_some()
    }

    /// Direct subexpressions carried by the atom.
    pub fn args(&self) -> &[Expr] {
        match self.kind() {
            AtomKind::Func { args, .. } => args,
            AtomKind::Trans { arg, .. } => std::slice::from_ref(arg),
            _ => &[],
        }
    }
}
