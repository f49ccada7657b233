use std::fmt::{self, Write};

use num_traits::{One, Signed};

use super::{Atom, AtomKind, Expr, Monomial, Poly, Rat, VarClass};

/// Supplies printable names for unknowns.
pub trait Names {
    fn var_name(&self, class: VarClass, var: usize) -> String;
}

/// `x1, x2, …` for state variables and `y1, y2, …` for auxiliaries.
pub struct DefaultNames;

impl Names for DefaultNames {
    fn var_name(&self, class: VarClass, var: usize) -> String {
        match class {
            VarClass::State => format!("x{}", var + 1),
            VarClass::Aux => format!("y{}", var + 1),
        }
    }
}

pub struct ExprDisplay<'a> {
    e: &'a Expr,
    names: &'a dyn Names,
}

impl<'a> ExprDisplay<'a> {
    pub fn new(e: &'a Expr, names: &'a dyn Names) -> Self {
        ExprDisplay { e, names }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(&mut s, self.e, self.names);
        f.write_str(&s)
    }
}

fn write_expr(out: &mut String, e: &Expr, names: &dyn Names) {
    if e.den().is_one() {
        write_poly(out, e.num(), names);
    } else {
        out.push('(');
        write_poly(out, e.num(), names);
        out.push_str(")/(");
        write_poly(out, e.den(), names);
        out.push(')');
    }
}

fn write_rat(out: &mut String, c: &Rat) {
    if c.denom().is_one() {
        write!(out, "{}", c.numer()).unwrap();
    } else {
        write!(out, "{}/{}", c.numer(), c.denom()).unwrap();
    }
}

fn write_poly(out: &mut String, p: &Poly, names: &dyn Names) {
    if p.is_zero() {
        out.push('0');
        return;
    }
    for (k, (m, c)) in p.terms().rev().enumerate() {
        let neg = c.is_negative();
        match (k, neg) {
            (0, true) => out.push('-'),
            (0, false) => {}
            (_, true) => out.push_str(" - "),
            (_, false) => out.push_str(" + "),
        }
        let a = c.abs();
        if m.is_one() {
            write_rat(out, &a);
        } else {
            if !a.is_one() {
                write_rat(out, &a);
                out.push('*');
            }
            write_monomial(out, m, names);
        }
    }
}

fn write_monomial(out: &mut String, m: &Monomial, names: &dyn Names) {
    for (i, (a, e)) in m.factors().iter().enumerate() {
        if i > 0 {
            out.push('*');
        }
        write_atom(out, a, names);
        if *e > 1 {
            write!(out, "^{e}").unwrap();
        }
    }
}

fn write_derivative(out: &mut String, base: &str, order: u32) {
    if order <= 3 {
        out.push_str(base);
        for _ in 0..order {
            out.push('\'');
        }
    } else {
        write!(out, "der({base},{order})").unwrap();
    }
}

pub(crate) fn write_atom(out: &mut String, a: &Atom, names: &dyn Names) {
    match a.kind() {
        AtomKind::Var { class, var, order } => {
            write_derivative(out, &names.var_name(*class, *var), *order)
        }
        AtomKind::Time => out.push('t'),
        AtomKind::Driving { name, order } => write_derivative(out, name, *order),
        AtomKind::Const(name) => out.push_str(name),
        AtomKind::Func { name, partial, args } => {
            if partial.iter().all(|&k| k == 0) {
                out.push_str(name);
            } else {
                write!(out, "D({name}").unwrap();
                for (i, k) in partial.iter().enumerate() {
                    for _ in 0..*k {
                        write!(out, ",{}", i + 1).unwrap();
                    }
                }
                out.push(')');
            }
            out.push('(');
            for (i, arg) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, arg, names);
            }
            out.push(')');
        }
        AtomKind::Trans { op, arg } => {
            write!(out, "{}(", op.name()).unwrap();
            write_expr(out, arg, names);
            out.push(')');
        }
    }
}

/// Renders an atom on its own (used for point files and reports).
pub fn atom_to_text(a: &Atom, names: &dyn Names) -> String {
    let mut s = String::new();
    write_atom(&mut s, a, names);
    s
}
