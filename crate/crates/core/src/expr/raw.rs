use super::{Atom, AtomKind, Expr, ExprError, Rat, TransOp, VarClass};

/// Expression tree exactly as written, before any simplification.
#[derive(Clone, Debug, PartialEq)]
pub enum RawExpr {
    Num(Rat),
    Leaf(Atom),
    Add(Vec<RawExpr>),
    Neg(Box<RawExpr>),
    Mul(Vec<RawExpr>),
    Div(Box<RawExpr>, Box<RawExpr>),
    Pow(Box<RawExpr>, i32),
    Der(Box<RawExpr>, u32),
    Func { name: String, partial: Vec<u32>, args: Vec<RawExpr> },
    Trans(TransOp, Box<RawExpr>),
}

impl RawExpr {
    /// Canonical rational normal form of the tree.
    pub fn normalize(&self) -> Result<Expr, ExprError> {
        Ok(match self {
            RawExpr::Num(r) => Expr::constant(r.clone()),
            RawExpr::Leaf(a) => Expr::atom(a.clone()),
            RawExpr::Add(xs) => {
                let mut acc = Expr::zero();
                for x in xs {
                    acc = acc.add_ref(&x.normalize()?);
                }
                acc
            }
            RawExpr::Neg(x) => x.normalize()?.neg_ref(),
            RawExpr::Mul(xs) => {
                let mut acc = Expr::one();
                for x in xs {
                    acc = acc.mul_ref(&x.normalize()?);
                }
                acc
            }
            RawExpr::Div(a, b) => a.normalize()?.checked_div(&b.normalize()?)?,
            RawExpr::Pow(a, k) => a.normalize()?.checked_pow(*k)?,
            RawExpr::Der(a, k) => a.normalize()?.total_derivative(*k),
            RawExpr::Func { name, partial, args } => {
                let args = args.iter().map(|a| a.normalize()).collect::<Result<Vec<_>, _>>()?;
                Expr::func(name, partial.clone(), args)
            }
            RawExpr::Trans(op, a) => Expr::trans(*op, a.normalize()?),
        })
    }

    /// Formal HOD: the maximum over operands, shifted by `p` under a `p`-fold
    /// derivative, ignoring any cancellation.
    pub fn formal_hod(&self, class: VarClass, var: usize) -> Option<u32> {
        match self {
            RawExpr::Num(_) => None,
            RawExpr::Leaf(a) => match a.kind() {
                AtomKind::Var { class: c, var: v, order } if *c == class && *v == var => {
                    Some(*order)
                }
                _ => None,
            },
            RawExpr::Add(xs) | RawExpr::Mul(xs) => {
                xs.iter().map(|x| x.formal_hod(class, var)).max().flatten()
            }
            RawExpr::Func { args, .. } => {
                args.iter().map(|x| x.formal_hod(class, var)).max().flatten()
            }
            RawExpr::Neg(x) | RawExpr::Pow(x, _) | RawExpr::Trans(_, x) => {
                x.formal_hod(class, var)
            }
            RawExpr::Div(a, b) => a.formal_hod(class, var).max(b.formal_hod(class, var)),
            RawExpr::Der(x, k) => x.formal_hod(class, var).map(|h| h + k),
        }
    }
}
