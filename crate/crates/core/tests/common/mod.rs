//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use sigma_reg::expr::{rat, Atom, Expr, Number, TransOp, ValuePoint};
use sigma_reg::frontend::{parse, parse_expr, DaeSystem};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn corpus_src(name: &str) -> String {
    std::fs::read_to_string(corpus_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load(name: &str) -> DaeSystem {
    parse(&corpus_src(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn ex(sys: &DaeSystem, text: &str) -> Expr {
    parse_expr(sys, text).unwrap_or_else(|e| panic!("`{text}`: {e}"))
}

/// Every `.dae` file in the bundled corpus.
pub fn corpus_files() -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .filter(|n| n.ends_with(".dae"))
        .collect();
    v.sort();
    v
}

/// Random expression over `x1..x3` (orders 0..=2), `t` and small integers.
pub fn random_expr<R: Rng>(rng: &mut R, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return match rng.gen_range(0..5) {
            0 => Expr::int(rng.gen_range(-4..=4)),
            1 => Expr::time(),
            _ => Expr::state(rng.gen_range(0..3), rng.gen_range(0..3)),
        };
    }
    let a = random_expr(rng, depth - 1);
    match rng.gen_range(0..8) {
        0 | 1 => a.add_ref(&random_expr(rng, depth - 1)),
        2 => a.sub_ref(&random_expr(rng, depth - 1)),
        3 | 4 => a.mul_ref(&random_expr(rng, depth - 1)),
        5 => {
            // 1 + b² never vanishes, so the quotient is always defined.
            let b = random_expr(rng, depth - 1);
            a.checked_div(&Expr::one().add_ref(&b.mul_ref(&b))).unwrap()
        }
        6 => Expr::trans(if rng.gen_bool(0.5) { TransOp::Sin } else { TransOp::Cos }, a),
        _ => Expr::trans(TransOp::Exp, a.scale(&(rat(1) / rat(4)))),
    }
}

/// Float point with every atom of `atoms` drawn from `[lo, hi]`.
pub fn float_point<R: Rng>(atoms: impl IntoIterator<Item = Atom>, rng: &mut R, lo: f64, hi: f64) -> ValuePoint {
    let mut p = ValuePoint::new();
    for a in atoms {
        p.set(a, Number::Float(rng.gen_range(lo..hi)));
    }
    p
}

/// `a = ±b` numerically at `reps` random float points, relative tolerance `tol`.
pub fn numeric_equal_up_to_sign<R: Rng>(a: &Expr, b: &Expr, rng: &mut R, reps: usize, tol: f64) -> bool {
    let mut atoms = a.atoms_deep();
    atoms.extend(b.atoms_deep());
    atoms.retain(Atom::is_derivative_atom);
    let mut sign = 0.0;
    for _ in 0..reps {
        let p = float_point(atoms.iter().cloned(), rng, 0.1, 1.3);
        let (Ok(va), Ok(vb)) = (a.eval_f64(&p), b.eval_f64(&p)) else { return false };
        if vb == 0.0 {
            if va.abs() > tol {
                return false;
            }
            continue;
        }
        let r = va / vb;
        if sign == 0.0 {
            sign = r.signum();
        }
        if (r - sign).abs() > tol {
            return false;
        }
    }
    true
}
