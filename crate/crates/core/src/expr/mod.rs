//! Exact symbolic expressions over derivative atoms.
//!
//! An [`Expr`] is a quotient of two sparse polynomials with rational
//! coefficients. Atoms stand for derivatives of unknowns, time, driving
//! functions, named constants, applications of uninterpreted functions (and
//! their partial derivatives) and the four supported transcendentals. All atoms
//! are treated as algebraically independent, so `sin(x)^2 + cos(x)^2` does not
//! simplify.
//!
//! The quotient is kept in a heuristically canceled form: rational content and
//! common monomial factors are removed, and exact trial division by the
//! operands' numerators and denominators cancels the common factors that
//! arithmetic tends to create. Zero testing never depends on that heuristic,
//! since `a/b` is zero iff `a` is the zero polynomial.

mod atom;
mod eval;
mod fmt;
mod poly;
mod raw;

use std::collections::{BTreeSet, HashMap};
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use atom::{Atom, AtomKind, TransOp, VarClass};
pub use eval::{random_free_point, EvalError, Number, ValuePoint};
pub use fmt::{atom_to_text, DefaultNames, ExprDisplay, Names};
pub use poly::{Monomial, Poly, Rat};
pub use raw::RawExpr;

/// Repetitions of the randomized identity cross-check.
pub const IDENTITY_TEST_REPS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("division by an identically zero expression")]
    DivisionByZero,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Expr {
    num: Poly,
    den: Poly,
}

impl Default for Expr {
    fn default() -> Self {
        Expr::zero()
    }
}

pub fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

impl Expr {
    pub fn zero() -> Self {
        Expr { num: Poly::zero(), den: Poly::one() }
    }

    pub fn one() -> Self {
        Expr::int(1)
    }

    pub fn int(n: i64) -> Self {
        Expr::constant(rat(n))
    }

    pub fn constant(c: Rat) -> Self {
        Expr { num: Poly::constant(c), den: Poly::one() }
    }

    pub fn from_poly(p: Poly) -> Self {
        Expr { num: p, den: Poly::one() }
    }

    pub fn atom(a: Atom) -> Self {
        Expr::from_poly(Poly::from_atom(a))
    }

    pub fn state(var: usize, order: u32) -> Self {
        Expr::atom(Atom::state(var, order))
    }

    pub fn aux(var: usize, order: u32) -> Self {
        Expr::atom(Atom::aux(var, order))
    }

    pub fn var(class: VarClass, var: usize, order: u32) -> Self {
        Expr::atom(Atom::var(class, var, order))
    }

    pub fn time() -> Self {
        Expr::atom(Atom::time())
    }

    pub fn named_const(name: &str) -> Self {
        Expr::atom(Atom::constant(name))
    }

    pub fn driving(name: &str, order: u32) -> Self {
        Expr::atom(Atom::driving(name, order))
    }

    pub fn func(name: &str, partial: Vec<u32>, args: Vec<Expr>) -> Self {
        debug_assert_eq!(partial.len(), args.len());
        Expr::atom(Atom::new(AtomKind::Func { name: name.to_string(), partial, args }))
    }

    /// Transcendental application; `sin 0`, `cos 0`, `exp 0` and `ln 1` fold.
    pub fn trans(op: TransOp, arg: Expr) -> Self {
        if let Some(c) = arg.as_constant() {
            let folded = match op {
                TransOp::Sin if c.is_zero() => Some(Expr::zero()),
                TransOp::Cos | TransOp::Exp if c.is_zero() => Some(Expr::one()),
                TransOp::Ln if c.is_one() => Some(Expr::zero()),
                _ => None,
            };
            if let Some(e) = folded {
                return e;
            }
        }
        Expr::atom(Atom::new(AtomKind::Trans { op, arg }))
    }

    pub fn num(&self) -> &Poly {
        &self.num
    }

    pub fn den(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_one()
    }

    pub fn as_constant(&self) -> Option<Rat> {
        if !self.den.is_one() {
            return None;
        }
        self.num.as_constant()
    }

    pub fn is_nonzero_constant(&self) -> bool {
        self.as_constant().is_some_and(|c| !c.is_zero())
    }

    /// Number of monomials in numerator and (non-trivial) denominator.
    pub fn size(&self) -> usize {
        self.num.len() + if self.den.is_one() { 0 } else { self.den.len() }
    }

    /// `num/den` in canceled form, trying `candidates` as common factors.
    pub fn from_fraction(num: Poly, den: Poly, candidates: &[&Poly]) -> Result<Expr, ExprError> {
        if den.is_zero() {
            return Err(ExprError::DivisionByZero);
        }
        Ok(Expr::build(num, den, candidates))
    }

    /// Builds `num/den` in canceled form, trying the given polynomials as
    /// common factors.
    fn build(num: Poly, den: Poly, candidates: &[&Poly]) -> Expr {
        assert!(!den.is_zero(), "zero denominator");
        if num.is_zero() {
            return Expr::zero();
        }
        if let Some(c) = den.as_constant() {
            return Expr::from_poly(num.scale(&c.recip()));
        }
        let (mut num, mut den) = (num, den);
        let g = num.monomial_gcd().gcd(&den.monomial_gcd());
        if !g.is_one() {
            num = num.div_monomial(&g);
            den = den.div_monomial(&g);
        }
        if let Some(q) = num.div_exact(&den) {
            return Expr::from_poly(q);
        }
        for cand in candidates {
            if cand.as_constant().is_some() {
                continue;
            }
            while den.as_constant().is_none() {
                let Some(dq) = den.div_exact(cand) else { break };
                let Some(nq) = num.div_exact(cand) else { break };
                num = nq;
                den = dq;
            }
        }
        if num.as_constant().is_none() {
            if let Some(q) = den.div_exact(&num) {
                den = q;
                num = Poly::one();
            }
        }
        if let Some(c) = den.as_constant() {
            return Expr::from_poly(num.scale(&c.recip()));
        }
        let mut k = den.content();
        if den.leading().is_some_and(|(_, c)| c.is_negative()) {
            k = -k;
        }
        let inv = k.recip();
        Expr { num: num.scale(&inv), den: den.scale(&inv) }
    }

    pub fn add_ref(&self, o: &Expr) -> Expr {
        if self.is_zero() {
            return o.clone();
        }
        if o.is_zero() {
            return self.clone();
        }
        if self.den == o.den {
            let den = self.den.clone();
            return Expr::build(self.num.add(&o.num), den, &[]);
        }
        if self.den.is_one() {
            return Expr::build(self.num.mul(&o.den).add(&o.num), o.den.clone(), &[]);
        }
        if o.den.is_one() {
            return Expr::build(self.num.add(&o.num.mul(&self.den)), self.den.clone(), &[]);
        }
        if let Some(q) = o.den.div_exact(&self.den) {
            return Expr::build(self.num.mul(&q).add(&o.num), o.den.clone(), &[&self.den]);
        }
        if let Some(q) = self.den.div_exact(&o.den) {
            return Expr::build(self.num.add(&o.num.mul(&q)), self.den.clone(), &[&o.den]);
        }
        Expr::build(
            self.num.mul(&o.den).add(&o.num.mul(&self.den)),
            self.den.mul(&o.den),
            &[&self.den, &o.den],
        )
    }

    pub fn neg_ref(&self) -> Expr {
        Expr { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn sub_ref(&self, o: &Expr) -> Expr {
        self.add_ref(&o.neg_ref())
    }

    pub fn mul_ref(&self, o: &Expr) -> Expr {
        if self.is_zero() || o.is_zero() {
            return Expr::zero();
        }
        if self.den.is_one() && o.den.is_one() {
            return Expr::from_poly(self.num.mul(&o.num));
        }
        if let Some(c) = self.as_constant() {
            return Expr { num: o.num.scale(&c), den: o.den.clone() };
        }
        if let Some(c) = o.as_constant() {
            return Expr { num: self.num.scale(&c), den: self.den.clone() };
        }
        Expr::build(
            self.num.mul(&o.num),
            self.den.mul(&o.den),
            &[&self.den, &o.den, &self.num, &o.num],
        )
    }

    pub fn scale(&self, k: &Rat) -> Expr {
        if k.is_zero() {
            return Expr::zero();
        }
        Expr { num: self.num.scale(k), den: self.den.clone() }
    }

    pub fn checked_div(&self, o: &Expr) -> Result<Expr, ExprError> {
        if o.is_zero() {
            return Err(ExprError::DivisionByZero);
        }
        if self.is_zero() {
            return Ok(Expr::zero());
        }
        if let Some(c) = o.as_constant() {
            return Ok(self.scale(&c.recip()));
        }
        Ok(Expr::build(
            self.num.mul(&o.den),
            self.den.mul(&o.num),
            &[&self.num, &self.den, &o.num, &o.den],
        ))
    }

    pub fn checked_pow(&self, k: i32) -> Result<Expr, ExprError> {
        let base = if k < 0 { Expr::one().checked_div(self)? } else { self.clone() };
        let e = k.unsigned_abs();
        Ok(Expr { num: base.num.pow(e), den: base.den.pow(e) })
    }

    /// Differentiation using a supplied derivative for every atom.
    fn derive_with(&self, atom_d: &mut dyn FnMut(&Atom) -> Expr) -> Expr {
        let mut cache: HashMap<Atom, Expr> = HashMap::new();
        let mut da = |a: &Atom| -> Expr {
            if let Some(e) = cache.get(a) {
                return e.clone();
            }
            let e = atom_d(a);
            cache.insert(a.clone(), e.clone());
            e
        };
        let dn = poly_derive(&self.num, &mut da);
        if self.den.is_one() {
            return dn;
        }
        let dd = poly_derive(&self.den, &mut da);
        let den = Expr::from_poly(self.den.clone());
        let top = dn.mul_ref(&den).sub_ref(&Expr::from_poly(self.num.clone()).mul_ref(&dd));
        let den2 = Expr::from_poly(self.den.mul(&self.den));
        top.checked_div(&den2).expect("denominator is nonzero")
    }

    /// `d^p/dt^p` of the expression.
    pub fn total_derivative(&self, p: u32) -> Expr {
        let mut e = self.clone();
        for _ in 0..p {
            if e.is_zero() {
                break;
            }
            e = e.derive_with(&mut atom_time_derivative);
        }
        e
    }

    /// Formal partial derivative with respect to a derivative atom; other
    /// atoms are independent, function applications contribute through their
    /// arguments only.
    pub fn partial(&self, x: &Atom) -> Expr {
        debug_assert!(x.is_derivative_atom());
        self.derive_with(&mut |a: &Atom| atom_partial(a, x))
    }

    /// Highest derivative order of variable `(class, var)` in the expression,
    /// `None` standing for −∞.
    pub fn hod(&self, class: VarClass, var: usize) -> Option<u32> {
        let mut best: Option<u32> = None;
        for p in [&self.num, &self.den] {
            for a in p.atoms() {
                best = best.max(atom_hod(&a, class, var));
            }
        }
        best
    }

    /// All atoms, including the ones nested in function arguments.
    pub fn atoms_deep(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        for p in [&self.num, &self.den] {
            for a in p.atoms() {
                for arg in a.args() {
                    arg.collect_atoms(out);
                }
                out.insert(a);
            }
        }
    }

    /// Atoms of the polynomial ring the quotient lives in (not nested).
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut s = self.num.atoms();
        s.extend(self.den.atoms());
        s
    }

    /// Replaces atoms for which `f` returns a value, recursing into arguments.
    pub fn substitute(&self, f: &dyn Fn(&Atom) -> Option<Expr>) -> Expr {
        let mut values: HashMap<Atom, Expr> = HashMap::new();
        let mut changed = false;
        for a in self.atoms() {
            if let Some(v) = f(&a) {
                changed = true;
                values.insert(a, v);
            } else if let Some(v) = rebuild_atom(&a, f) {
                changed = true;
                values.insert(a, v);
            }
        }
        if !changed {
            return self.clone();
        }
        let n = eval_poly_expr(&self.num, &values);
        if self.den.is_one() {
            return n;
        }
        let d = eval_poly_expr(&self.den, &values);
        n.checked_div(&d).expect("substitution annihilated a denominator")
    }

    pub fn substitute_atom(&self, target: &Atom, value: &Expr) -> Expr {
        self.substitute(&|a| (a == target).then(|| value.clone()))
    }

    /// Remainder of the numerator modulo `g` (the denominator is kept).
    pub fn reduce_modulo(&self, g: &Poly) -> Expr {
        if g.is_zero() {
            return self.clone();
        }
        let r = self.num.reduce(g);
        Expr::build(r, self.den.clone(), &[])
    }

    /// Sign-normalized copy: the leading numerator coefficient is positive.
    pub fn sign_normalized(&self) -> Expr {
        if self.num.leading().is_some_and(|(_, c)| c.is_negative()) {
            self.neg_ref()
        } else {
            self.clone()
        }
    }

    pub fn display<'a>(&'a self, names: &'a dyn Names) -> ExprDisplay<'a> {
        ExprDisplay::new(self, names)
    }

    pub fn to_text(&self, names: &dyn Names) -> String {
        self.display(names).to_string()
    }
}

fn poly_derive(p: &Poly, da: &mut dyn FnMut(&Atom) -> Expr) -> Expr {
    let mut acc = Expr::zero();
    for a in p.atoms() {
        let d = da(&a);
        if d.is_zero() {
            continue;
        }
        acc = acc.add_ref(&Expr::from_poly(p.partial_atom(&a)).mul_ref(&d));
    }
    acc
}

fn trans_outer_derivative(op: TransOp, arg: &Expr) -> Expr {
    match op {
        TransOp::Sin => Expr::trans(TransOp::Cos, arg.clone()),
        TransOp::Cos => Expr::trans(TransOp::Sin, arg.clone()).neg_ref(),
        TransOp::Exp => Expr::trans(TransOp::Exp, arg.clone()),
        TransOp::Ln => Expr::one().checked_div(arg).expect("ln of zero"),
    }
}

fn func_chain(
    name: &str,
    partial: &[u32],
    args: &[Expr],
    inner: &mut dyn FnMut(&Expr) -> Expr,
) -> Expr {
    let mut acc = Expr::zero();
    for (i, arg) in args.iter().enumerate() {
        let d = inner(arg);
        if d.is_zero() {
            continue;
        }
        let mut p = partial.to_vec();
        p[i] += 1;
        acc = acc.add_ref(&Expr::func(name, p, args.to_vec()).mul_ref(&d));
    }
    acc
}

fn atom_time_derivative(a: &Atom) -> Expr {
    match a.kind() {
        AtomKind::Var { class, var, order } => Expr::var(*class, *var, order + 1),
        AtomKind::Time => Expr::one(),
        AtomKind::Const(_) => Expr::zero(),
        AtomKind::Driving { name, order } => Expr::driving(name, order + 1),
        AtomKind::Func { name, partial, args } => {
            func_chain(name, partial, args, &mut |e| e.total_derivative(1))
        }
        AtomKind::Trans { op, arg } => {
            let d = arg.total_derivative(1);
            if d.is_zero() {
                return Expr::zero();
            }
            trans_outer_derivative(*op, arg).mul_ref(&d)
        }
    }
}

fn atom_partial(a: &Atom, x: &Atom) -> Expr {
    if a == x {
        return Expr::one();
    }
    match a.kind() {
        AtomKind::Var { .. } | AtomKind::Time | AtomKind::Const(_) | AtomKind::Driving { .. } => {
            Expr::zero()
        }
        AtomKind::Func { name, partial, args } => {
            func_chain(name, partial, args, &mut |e| e.partial(x))
        }
        AtomKind::Trans { op, arg } => {
            let d = arg.partial(x);
            if d.is_zero() {
                return Expr::zero();
            }
            trans_outer_derivative(*op, arg).mul_ref(&d)
        }
    }
}

fn atom_hod(a: &Atom, class: VarClass, var: usize) -> Option<u32> {
    match a.kind() {
        AtomKind::Var { class: c, var: v, order } if *c == class && *v == var => Some(*order),
        _ => a.args().iter().map(|e| e.hod(class, var)).max().flatten(),
    }
}

fn rebuild_atom(a: &Atom, f: &dyn Fn(&Atom) -> Option<Expr>) -> Option<Expr> {
    match a.kind() {
        AtomKind::Func { name, partial, args } => {
            let new: Vec<Expr> = args.iter().map(|e| e.substitute(f)).collect();
            (new != *args).then(|| Expr::func(name, partial.clone(), new))
        }
        AtomKind::Trans { op, arg } => {
            let new = arg.substitute(f);
            (new != *arg).then(|| Expr::trans(*op, new))
        }
        _ => None,
    }
}

fn eval_poly_expr(p: &Poly, values: &HashMap<Atom, Expr>) -> Expr {
    let mut plain = Poly::zero();
    let mut acc = Expr::zero();
    for (m, c) in p.terms() {
        if m.factors().iter().all(|(a, _)| !values.contains_key(a)) {
            plain.add_term(m.clone(), c.clone());
            continue;
        }
        let mut rest = Vec::new();
        let mut t = Expr::one();
        for (a, e) in m.factors() {
            match values.get(a) {
                Some(v) => t = t.mul_ref(&v.checked_pow(*e as i32).expect("nonnegative power")),
                None => rest.push((a.clone(), *e)),
            }
        }
        let base = Expr::from_poly(Poly::from_term(Monomial::from_pairs(rest), c.clone()));
        acc = acc.add_ref(&base.mul_ref(&t));
    }
    acc.add_ref(&Expr::from_poly(plain))
}

/// True iff `e` is the zero rational function.
pub fn is_identically_zero(e: &Expr) -> bool {
    e.is_zero()
}

/// Symbolic equality of two expressions, cross-checked in debug builds by
/// evaluation at random rational points of the free atom algebra.
pub fn equivalent(a: &Expr, b: &Expr) -> bool {
    let same = a.sub_ref(b).is_zero();
    if cfg!(debug_assertions) && same {
        debug_assert!(randomized_equal(a, b, 0x5eed, IDENTITY_TEST_REPS));
    }
    same
}

/// `a = ±b` symbolically.
pub fn equivalent_up_to_sign(a: &Expr, b: &Expr) -> bool {
    equivalent(a, b) || equivalent(a, &b.neg_ref())
}

/// Schwartz–Zippel style test: evaluates both sides at `reps` random points
/// with every atom independent.
pub fn randomized_equal(a: &Expr, b: &Expr, seed: u64, reps: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = a.atoms();
    atoms.extend(b.atoms());
    let mut done = 0;
    let mut attempts = 0;
    while done < reps && attempts < reps * 20 {
        attempts += 1;
        let point = random_free_point(&atoms, &mut rng);
        let (Ok(va), Ok(vb)) = (a.eval_free(&point), b.eval_free(&point)) else {
            continue;
        };
        if va != vb {
            return false;
        }
        done += 1;
    }
    true
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $inner:ident) => {
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, o: &Expr) -> Expr {
                self.$inner(o)
            }
        }
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, o: Expr) -> Expr {
                self.$inner(&o)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, o: &Expr) -> Expr {
                self.$inner(o)
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, o: Expr) -> Expr {
                self.$inner(&o)
            }
        }
    };
}

forward_binop!(Add, add, add_ref);
forward_binop!(Sub, sub, sub_ref);
forward_binop!(Mul, mul, mul_ref);

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.neg_ref()
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.neg_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(j: usize, k: u32) -> Expr {
        Expr::state(j, k)
    }

    #[test]
    fn product_rule_cancels_to_formal_example() {
        // (x1 x2)' - x1' x2 = x1 x2'
        let e = (x(0, 0) * x(1, 0)).total_derivative(1) - x(0, 1) * x(1, 0);
        assert_eq!(e, x(0, 0) * x(1, 1));
        assert_eq!(e.hod(VarClass::State, 0), Some(0));
        assert_eq!(e.hod(VarClass::State, 1), Some(1));
    }

    #[test]
    fn constraint_derivative() {
        let l = Expr::named_const("L");
        let f = x(0, 0) * x(0, 0) + x(1, 0) * x(1, 0) - &l * &l;
        let d = f.total_derivative(1);
        assert_eq!(d, Expr::int(2) * x(0, 0) * x(0, 1) + Expr::int(2) * x(1, 0) * x(1, 1));
        assert_eq!(f.total_derivative(0), f);
    }

    #[test]
    fn function_application_chain_rule() {
        let f = Expr::func("F", vec![0, 0], vec![x(0, 0), x(1, 0)]);
        let d = f.total_derivative(1);
        let f1 = Expr::func("F", vec![1, 0], vec![x(0, 0), x(1, 0)]);
        let f2 = Expr::func("F", vec![0, 1], vec![x(0, 0), x(1, 0)]);
        assert_eq!(d, f1 * x(0, 1) + f2 * x(1, 1));
    }

    #[test]
    fn pendulum_partials() {
        let f = x(0, 2) + x(0, 0) * x(2, 0);
        assert_eq!(f.partial(&Atom::state(0, 2)), Expr::one());
        assert_eq!(f.partial(&Atom::state(2, 0)), x(0, 0));
        assert!(f.partial(&Atom::state(1, 0)).is_zero());
    }

    #[test]
    fn rational_cancellation() {
        let a = Expr::int(2).checked_div(&(Expr::int(2) - x(0, 0) * x(0, 0))).unwrap();
        let b = x(0, 0).checked_div(&(Expr::int(2) - x(0, 0) * x(0, 0))).unwrap();
        let q = a.checked_div(&(&a + &b)).unwrap();
        assert_eq!(q, Expr::int(2).checked_div(&(Expr::int(2) + x(0, 0))).unwrap());
        assert!((&q - &q).is_zero());
        assert!(x(0, 0).checked_div(&Expr::zero()).is_err());
    }

    #[test]
    fn hod_sees_through_transcendentals() {
        let arg = -x(0, 1) - x(1, 0) * x(1, 2);
        let f = x(0, 0) + Expr::trans(TransOp::Exp, arg);
        assert_eq!(f.hod(VarClass::State, 1), Some(2));
        assert_eq!(f.hod(VarClass::State, 0), Some(1));
        assert_eq!(Expr::int(3).hod(VarClass::State, 0), None);
    }

    #[test]
    fn substitution_recurses_into_arguments() {
        let f = Expr::trans(TransOp::Sin, x(0, 2));
        let g = f.substitute_atom(&Atom::state(0, 2), &Expr::zero());
        assert!(g.is_zero());
    }

    #[test]
    fn constraint_reduction() {
        let l = Expr::named_const("L");
        let c = x(0, 0) * x(0, 0) + x(1, 0) * x(1, 0) - &l * &l;
        let det = Expr::int(-2) * (x(0, 0) * x(0, 0) + x(1, 0) * x(1, 0));
        assert_eq!(det.reduce_modulo(c.num()), Expr::int(-2) * &l * &l);
    }
}
