use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

use super::{Atom, AtomKind, Expr, Poly, Rat, TransOp};

/// Exact when every input was exact, floating otherwise.
#[derive(Clone, Debug, PartialEq)]
pub enum Number {
    Exact(Rat),
    Float(f64),
}

impl Number {
    pub fn to_f64(&self) -> f64 {
        match self {
            Number::Exact(r) => rat_to_f64(r),
            Number::Float(v) => *v,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Number::Exact(r) => r.is_zero(),
            Number::Float(v) => *v == 0.0,
        }
    }

    fn add(&self, o: &Number) -> Number {
        match (self, o) {
            (Number::Exact(a), Number::Exact(b)) => Number::Exact(a + b),
            _ => Number::Float(self.to_f64() + o.to_f64()),
        }
    }

    fn mul(&self, o: &Number) -> Number {
        match (self, o) {
            (Number::Exact(a), Number::Exact(b)) => Number::Exact(a * b),
            _ => Number::Float(self.to_f64() * o.to_f64()),
        }
    }

    fn div(&self, o: &Number) -> Result<Number, EvalError> {
        if o.is_zero() {
            return Err(EvalError::ZeroDenominator);
        }
        Ok(match (self, o) {
            (Number::Exact(a), Number::Exact(b)) => Number::Exact(a / b),
            _ => Number::Float(self.to_f64() / o.to_f64()),
        })
    }

    fn powu(&self, e: u32) -> Number {
        match self {
            Number::Exact(r) => Number::Exact(num_traits::pow(r.clone(), e as usize)),
            Number::Float(v) => Number::Float(v.powi(e as i32)),
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Exact(r) => write!(f, "{r}"),
            Number::Float(v) => write!(f, "{v:e}"),
        }
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Scale huge operands down before converting.
            let shift = r.numer().bits().max(r.denom().bits()).saturating_sub(1000);
            let n = (r.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (r.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no value bound for atom {0:?}")]
    MissingBinding(Atom),
    #[error("denominator evaluates to zero")]
    ZeroDenominator,
    #[error("{0} is undefined at the given argument")]
    Domain(TransOp),
}

/// Values for atoms. Transcendental atoms may be bound directly; otherwise
/// they are computed from their argument.
#[derive(Clone, Debug, Default)]
pub struct ValuePoint {
    values: BTreeMap<Atom, Number>,
}

impl ValuePoint {
    pub fn new() -> Self {
        ValuePoint::default()
    }

    pub fn set(&mut self, a: Atom, v: Number) {
        self.values.insert(a, v);
    }

    pub fn get(&self, a: &Atom) -> Option<&Number> {
        self.values.get(a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Atom, &Number)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Independent random rationals with numerator and denominator bounded by 10⁴.
pub fn random_free_point<R: Rng>(atoms: &BTreeSet<Atom>, rng: &mut R) -> ValuePoint {
    let mut p = ValuePoint::new();
    for a in atoms {
        let n: i64 = rng.gen_range(-10_000..=10_000);
        let d: i64 = rng.gen_range(1..=10_000);
        p.set(a.clone(), Number::Exact(Rat::new(BigInt::from(n), BigInt::from(d))));
    }
    p
}

impl Expr {
    /// Numeric value at `p`.
    pub fn evaluate(&self, p: &ValuePoint) -> Result<Number, EvalError> {
        self.eval_mode(p, false)
    }

    pub fn eval_f64(&self, p: &ValuePoint) -> Result<f64, EvalError> {
        self.evaluate(p).map(|v| v.to_f64())
    }

    /// Evaluation in the free atom algebra: every ring atom must be bound.
    pub fn eval_free(&self, p: &ValuePoint) -> Result<Number, EvalError> {
        self.eval_mode(p, true)
    }

    fn eval_mode(&self, p: &ValuePoint, free: bool) -> Result<Number, EvalError> {
        let n = eval_poly(self.num(), p, free)?;
        if self.den().is_one() {
            return Ok(n);
        }
        let d = eval_poly(self.den(), p, free)?;
        n.div(&d)
    }

    /// Largest absolute value among the numerator's terms at `p`; a scale for
    /// relative residual tests.
    pub fn term_scale(&self, p: &ValuePoint) -> Result<f64, EvalError> {
        let mut best = 0.0f64;
        for (m, c) in self.num().terms() {
            let t = eval_poly(&Poly::from_term(m.clone(), c.clone()), p, false)?;
            best = best.max(t.to_f64().abs());
        }
        if !self.den().is_one() {
            let d = eval_poly(self.den(), p, false)?.to_f64().abs();
            if d > 0.0 {
                best /= d;
            }
        }
        Ok(best)
    }
}

fn eval_poly(poly: &Poly, p: &ValuePoint, free: bool) -> Result<Number, EvalError> {
    let mut acc = Number::Exact(Rat::zero());
    for (m, c) in poly.terms() {
        let mut t = Number::Exact(c.clone());
        for (a, e) in m.factors() {
            t = t.mul(&eval_atom(a, p, free)?.powu(*e));
        }
        acc = acc.add(&t);
    }
    Ok(acc)
}

fn eval_atom(a: &Atom, p: &ValuePoint, free: bool) -> Result<Number, EvalError> {
    if let Some(v) = p.get(a) {
        return Ok(v.clone());
    }
    match a.kind() {
        AtomKind::Trans { op, arg } if !free => {
            let v = arg.eval_mode(p, free)?;
            if let Number::Exact(r) = &v {
                match op {
                    TransOp::Sin if r.is_zero() => return Ok(Number::Exact(Rat::zero())),
                    TransOp::Cos | TransOp::Exp if r.is_zero() => {
                        return Ok(Number::Exact(Rat::one()))
                    }
                    TransOp::Ln if r.is_one() => return Ok(Number::Exact(Rat::zero())),
                    _ => {}
                }
            }
            let x = v.to_f64();
            if *op == TransOp::Ln && x <= 0.0 {
                return Err(EvalError::Domain(*op));
            }
            Ok(Number::Float(op.apply(x)))
        }
        _ => Err(EvalError::MissingBinding(a.clone())),
    }
}
