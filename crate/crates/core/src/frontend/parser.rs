use num_bigint::BigInt;
use num_traits::{One, Zero};
use thiserror::Error;

use super::lexer::{tokenize, Pos, Tok};
use super::{DaeSystem, Equation};
use crate::expr::{Atom, AtomKind, Expr, Number, RawExpr, Rat, TransOp, ValuePoint, VarClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undeclared identifier `{0}`")]
    Undeclared(String),
    #[error("`{name}` expects {expected} argument(s), found {found}")]
    Arity { name: String, expected: usize, found: usize },
    #[error("system is not square: {equations} equation(s) for {unknowns} unknown(s)")]
    NonSquare { equations: usize, unknowns: usize },
    #[error("`{0}` is declared twice")]
    Duplicate(String),
    #[error("{0}")]
    Math(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{pos}: {kind}")]
pub struct ParseError {
    pub pos: Pos,
    pub kind: ParseErrorKind,
}

const RESERVED: &[&str] = &["t", "der", "D", "sin", "cos", "exp", "ln"];

struct Parser<'s> {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    sys: &'s mut DaeSystem,
}

type PResult<T> = Result<T, ParseError>;

fn syntax(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError { pos, kind: ParseErrorKind::Syntax(msg.into()) }
}

/// Exact value of a decimal literal such as `1.6e-8`.
pub(crate) fn decimal_to_rat(s: &str) -> Option<Rat> {
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(k) => (&s[..k], s[k + 1..].parse::<i64>().ok()?),
        None => (s, 0),
    };
    let (int, frac) = match mant.find('.') {
        Some(k) => (&mant[..k], &mant[k + 1..]),
        None => (mant, ""),
    };
    if frac.contains('.') {
        return None;
    }
    let digits = format!("{int}{frac}");
    let n: BigInt = if digits.is_empty() { return None } else { digits.parse().ok()? };
    let e = exp - frac.len() as i64;
    let ten = BigInt::from(10);
    Some(if e >= 0 {
        Rat::from_integer(n * num_traits::pow(ten, e as usize))
    } else {
        Rat::new(n, num_traits::pow(ten, (-e) as usize))
    })
}

impl<'s> Parser<'s> {
    fn new(src: &str, sys: &'s mut DaeSystem) -> PResult<Self> {
        let toks = tokenize(src).map_err(|(pos, msg)| syntax(pos, msg))?;
        Ok(Parser { toks, i: 0, sys })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.i + k).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected `{c}`, found {}", self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<(String, Pos)> {
        match self.bump() {
            (Tok::Ident(s), p) => Ok((s, p)),
            (t, p) => Err(syntax(p, format!("expected identifier, found {t}"))),
        }
    }

    fn uint(&mut self) -> PResult<u32> {
        match self.bump() {
            (Tok::Number(s), p) => s.parse().map_err(|_| syntax(p, format!("expected integer, found `{s}`"))),
            (t, p) => Err(syntax(p, format!("expected integer, found {t}"))),
        }
    }

    fn signed_int(&mut self) -> PResult<i64> {
        let neg = self.eat('-');
        let v = self.uint()? as i64;
        Ok(if neg { -v } else { v })
    }

    /// `[-]decimal[/decimal]`
    fn rational(&mut self) -> PResult<Rat> {
        let neg = self.eat('-');
        let (t, p) = self.bump();
        let Tok::Number(s) = t else {
            return Err(syntax(p, format!("expected number, found {t}")));
        };
        let mut v = decimal_to_rat(&s).ok_or_else(|| syntax(p, format!("malformed number `{s}`")))?;
        if self.eat('/') {
            let (t, p) = self.bump();
            let Tok::Number(s) = t else {
                return Err(syntax(p, format!("expected number, found {t}")));
            };
            let d = decimal_to_rat(&s).ok_or_else(|| syntax(p, format!("malformed number `{s}`")))?;
            if d.is_zero() {
                return Err(ParseError { pos: p, kind: ParseErrorKind::Math("division by zero".into()) });
            }
            v /= d;
        }
        Ok(if neg { -v } else { v })
    }

    fn is_declared(&self, name: &str) -> bool {
        self.sys.states.iter().chain(&self.sys.aux).chain(&self.sys.inputs).any(|n| n == name)
            || self.sys.consts.iter().any(|(n, _)| n == name)
            || self.sys.funcs.iter().any(|(n, _)| n == name)
    }

    fn declare_name(&mut self) -> PResult<String> {
        let (name, pos) = self.ident()?;
        if RESERVED.contains(&name.as_str()) {
            return Err(syntax(pos, format!("`{name}` is reserved")));
        }
        if self.is_declared(&name) {
            return Err(ParseError { pos, kind: ParseErrorKind::Duplicate(name) });
        }
        Ok(name)
    }

    fn statement(&mut self) -> PResult<()> {
        let (kw, pos) = self.ident()?;
        match kw.as_str() {
            "system" => {
                self.sys.name = self.ident()?.0;
            }
            "var" | "aux" | "input" => loop {
                let name = self.declare_name()?;
                match kw.as_str() {
                    "var" => self.sys.states.push(name),
                    "aux" => self.sys.aux.push(name),
                    _ => self.sys.inputs.push(name),
                }
                if !self.eat(',') {
                    break;
                }
            },
            "fun" => loop {
                let name = self.declare_name()?;
                self.expect('(')?;
                let arity = self.uint()? as usize;
                self.expect(')')?;
                self.sys.funcs.push((name, arity));
                if !self.eat(',') {
                    break;
                }
            },
            "const" => loop {
                let name = self.declare_name()?;
                let value = if self.eat('=') { Some(self.rational()?) } else { None };
                self.sys.consts.push((name, value));
                if !self.eat(',') {
                    break;
                }
            },
            "eq" | "zero" => {
                let (name, npos) = self.ident()?;
                let taken = if kw == "eq" {
                    self.sys.equations.iter().any(|e| e.name == name)
                } else {
                    self.sys.zeros.iter().any(|(n, _)| *n == name)
                };
                if taken {
                    return Err(ParseError { pos: npos, kind: ParseErrorKind::Duplicate(name) });
                }
                self.expect(':')?;
                let epos = self.pos();
                let raw = self.expr()?;
                let expr = raw
                    .normalize()
                    .map_err(|e| ParseError { pos: epos, kind: ParseErrorKind::Math(e.to_string()) })?;
                if kw == "eq" {
                    self.sys.equations.push(Equation { name, expr, raw: Some(raw) });
                } else {
                    self.sys.zeros.push((name, expr));
                }
            }
            "offsets" => {
                let mut c = None;
                let mut d = None;
                for _ in 0..2 {
                    let (which, wpos) = self.ident()?;
                    self.expect('=')?;
                    self.expect('(')?;
                    let mut v = vec![self.signed_int()?];
                    while self.eat(',') {
                        v.push(self.signed_int()?);
                    }
                    self.expect(')')?;
                    match which.as_str() {
                        "c" => c = Some(v),
                        "d" => d = Some(v),
                        _ => return Err(syntax(wpos, "expected `c` or `d`")),
                    }
                }
                match (c, d) {
                    (Some(c), Some(d)) => self.sys.offsets = Some((c, d)),
                    _ => return Err(syntax(pos, "offsets need both `c` and `d`")),
                }
            }
            _ => return Err(syntax(pos, format!("unknown statement `{kw}`"))),
        }
        self.expect(';')
    }

    pub(crate) fn expr(&mut self) -> PResult<RawExpr> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat('+') {
                terms.push(self.term()?);
            } else if self.eat('-') {
                terms.push(RawExpr::Neg(Box::new(self.term()?)));
            } else {
                break;
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { RawExpr::Add(terms) })
    }

    fn term(&mut self) -> PResult<RawExpr> {
        let mut acc = self.unary()?;
        loop {
            if self.eat('*') {
                let rhs = self.unary()?;
                acc = match acc {
                    RawExpr::Mul(mut xs) => {
                        xs.push(rhs);
                        RawExpr::Mul(xs)
                    }
                    a => RawExpr::Mul(vec![a, rhs]),
                };
            } else if self.eat('/') {
                acc = RawExpr::Div(Box::new(acc), Box::new(self.unary()?));
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> PResult<RawExpr> {
        if self.eat('-') {
            return Ok(RawExpr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> PResult<RawExpr> {
        let base = self.postfix()?;
        if self.eat('^') {
            let neg = self.eat('-');
            let p = self.pos();
            let k = self.uint()?;
            let k = i32::try_from(k).map_err(|_| syntax(p, "exponent too large"))?;
            return Ok(RawExpr::Pow(Box::new(base), if neg { -k } else { k }));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> PResult<RawExpr> {
        let mut e = self.primary()?;
        while self.eat('\'') {
            e = differentiate_raw(e, 1);
        }
        Ok(e)
    }

    fn args(&mut self) -> PResult<Vec<RawExpr>> {
        self.expect('(')?;
        let mut v = vec![self.expr()?];
        while self.eat(',') {
            v.push(self.expr()?);
        }
        self.expect(')')?;
        Ok(v)
    }

    fn arity_of(&self, name: &str) -> Option<usize> {
        self.sys.funcs.iter().find(|(n, _)| n == name).map(|(_, a)| *a)
    }

    fn primary(&mut self) -> PResult<RawExpr> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Number(s) => decimal_to_rat(&s)
                .map(RawExpr::Num)
                .ok_or_else(|| syntax(pos, format!("malformed number `{s}`"))),
            Tok::Punct('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(name, pos),
            t => Err(syntax(pos, format!("unexpected {t}"))),
        }
    }

    fn identifier(&mut self, name: String, pos: Pos) -> PResult<RawExpr> {
        if let Some(op) = TransOp::from_name(&name) {
            let mut a = self.args()?;
            if a.len() != 1 {
                return Err(ParseError {
                    pos,
                    kind: ParseErrorKind::Arity { name, expected: 1, found: a.len() },
                });
            }
            return Ok(RawExpr::Trans(op, Box::new(a.pop().unwrap())));
        }
        match name.as_str() {
            "t" => return Ok(RawExpr::Leaf(Atom::time())),
            "der" => {
                self.expect('(')?;
                let e = self.expr()?;
                let k = if self.eat(',') { self.uint()? } else { 1 };
                self.expect(')')?;
                return Ok(differentiate_raw(e, k));
            }
            "D" if *self.peek() == Tok::Punct('(') => {
                self.expect('(')?;
                let (f, fpos) = self.ident()?;
                let arity = self
                    .arity_of(&f)
                    .ok_or_else(|| ParseError { pos: fpos, kind: ParseErrorKind::Undeclared(f.clone()) })?;
                let mut partial = vec![0u32; arity];
                while self.eat(',') {
                    let ipos = self.pos();
                    let i = self.uint()? as usize;
                    if i == 0 || i > arity {
                        return Err(syntax(ipos, format!("`{f}` has no argument {i}")));
                    }
                    partial[i - 1] += 1;
                }
                self.expect(')')?;
                let args = self.args()?;
                if args.len() != arity {
                    return Err(ParseError {
                        pos,
                        kind: ParseErrorKind::Arity { name: f, expected: arity, found: args.len() },
                    });
                }
                return Ok(RawExpr::Func { name: f, partial, args });
            }
            _ => {}
        }
        if let Some(j) = self.sys.states.iter().position(|n| *n == name) {
            return Ok(RawExpr::Leaf(Atom::state(j, 0)));
        }
        if let Some(j) = self.sys.aux.iter().position(|n| *n == name) {
            return Ok(RawExpr::Leaf(Atom::aux(j, 0)));
        }
        if self.sys.inputs.contains(&name) {
            // `b(t)` is accepted as a spelling of `b`.
            if *self.peek() == Tok::Punct('(')
                && *self.peek_at(1) == Tok::Ident("t".into())
                && *self.peek_at(2) == Tok::Punct(')')
            {
                self.bump();
                self.bump();
                self.bump();
            }
            return Ok(RawExpr::Leaf(Atom::driving(&name, 0)));
        }
        if self.sys.consts.iter().any(|(n, _)| *n == name) {
            return Ok(RawExpr::Leaf(Atom::constant(&name)));
        }
        if let Some(arity) = self.arity_of(&name) {
            let args = self.args()?;
            if args.len() != arity {
                return Err(ParseError {
                    pos,
                    kind: ParseErrorKind::Arity { name, expected: arity, found: args.len() },
                });
            }
            return Ok(RawExpr::Func { name, partial: vec![0; arity], args });
        }
        Err(ParseError { pos, kind: ParseErrorKind::Undeclared(name) })
    }
}

/// Primes on unknowns and inputs raise the atom's order; elsewhere they wrap.
fn differentiate_raw(e: RawExpr, k: u32) -> RawExpr {
    if k == 0 {
        return e;
    }
    if let RawExpr::Leaf(a) = &e {
        match a.kind() {
            AtomKind::Var { class, var, order } => {
                return RawExpr::Leaf(Atom::var(*class, *var, order + k))
            }
            AtomKind::Driving { name, order } => return RawExpr::Leaf(Atom::driving(name, order + k)),
            _ => {}
        }
    }
    if let RawExpr::Der(inner, j) = e {
        return RawExpr::Der(inner, j + k);
    }
    RawExpr::Der(Box::new(e), k)
}

/// Parses a system description.
pub fn parse(source: &str) -> Result<DaeSystem, ParseError> {
    let mut sys = DaeSystem::default();
    let end = {
        let mut p = Parser::new(source, &mut sys)?;
        while *p.peek() != Tok::Eof {
            p.statement()?;
        }
        p.pos()
    };
    if !sys.is_square() {
        return Err(ParseError {
            pos: end,
            kind: ParseErrorKind::NonSquare { equations: sys.equations.len(), unknowns: sys.n() },
        });
    }
    if let Some((c, d)) = &sys.offsets {
        if c.len() != sys.n() || d.len() != sys.n() {
            return Err(syntax(end, "offset vectors must have one entry per equation and unknown"));
        }
    }
    Ok(sys)
}

/// Parses a single expression in the context of `sys`, returning its tree.
pub fn parse_raw(sys: &DaeSystem, text: &str) -> Result<RawExpr, ParseError> {
    let mut scratch = sys.clone();
    let mut p = Parser::new(text, &mut scratch)?;
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(syntax(p.pos(), format!("unexpected {}", p.peek())));
    }
    Ok(e)
}

/// Parses and normalizes a single expression in the context of `sys`.
pub fn parse_expr(sys: &DaeSystem, text: &str) -> Result<Expr, ParseError> {
    parse_raw(sys, text)?
        .normalize()
        .map_err(|e| ParseError { pos: Pos { line: 1, col: 1 }, kind: ParseErrorKind::Math(e.to_string()) })
}

/// Parses `<atom> = <number>` entries, separated by newlines or `;`.
pub fn parse_point(sys: &DaeSystem, text: &str) -> Result<ValuePoint, ParseError> {
    let mut scratch = sys.clone();
    let mut p = Parser::new(text, &mut scratch)?;
    let mut point = ValuePoint::new();
    while *p.peek() != Tok::Eof {
        let pos = p.pos();
        let lhs = p
            .expr()?
            .normalize()
            .map_err(|e| ParseError { pos, kind: ParseErrorKind::Math(e.to_string()) })?;
        let atom = single_atom(&lhs).ok_or_else(|| syntax(pos, "left-hand side must be a single atom"))?;
        p.expect('=')?;
        let v = p.rational()?;
        point.set(atom, Number::Exact(v));
        p.eat(';');
    }
    Ok(point)
}

fn single_atom(e: &Expr) -> Option<Atom> {
    if !e.is_polynomial() || e.num().len() != 1 {
        return None;
    }
    let (m, c) = e.num().terms().next()?;
    if !c.is_one() || m.factors().len() != 1 || m.factors()[0].1 != 1 {
        return None;
    }
    Some(m.factors()[0].0.clone())
}

/// Column for a variable name, if declared.
pub fn lookup_column(sys: &DaeSystem, name: &str) -> Option<usize> {
    sys.states
        .iter()
        .position(|n| n == name)
        .or_else(|| sys.aux.iter().position(|n| n == name).map(|j| sys.column_of(VarClass::Aux, j)))
}
