//! Expressions are checked against exact rational arithmetic. Every literal
//! and variable is a multiple of 1/8, so its f64 form is exact and the only
//! error is the evaluator's own rounding.

use std::collections::HashMap;

use crystal_core::design::{eval_expression, Expr};
use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: [&str; 4] = ["prev_value", "current_value", "qty", "price"];

enum Tree {
    Lit(i64),
    Var(usize),
    Neg(Box<Tree>),
    Bin(char, Box<Tree>, Box<Tree>),
}

fn eighths(n: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(8))
}

fn gen(rng: &mut ChaCha8Rng, depth: u32) -> Tree {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.5) {
            Tree::Lit(rng.random_range(1..=800))
        } else {
            Tree::Var(rng.random_range(0..VARS.len()))
        };
    }
    if rng.random_bool(0.1) {
        return Tree::Neg(Box::new(gen(rng, depth - 1)));
    }
    let op = ['+', '-', '*', '/'][rng.random_range(0..4)];
    Tree::Bin(
        op,
        Box::new(gen(rng, depth - 1)),
        Box::new(gen(rng, depth - 1)),
    )
}

fn render(t: &Tree) -> String {
    match t {
        Tree::Lit(n) => format!("{}", *n as f64 / 8.0),
        Tree::Var(i) => VARS[*i].to_string(),
        Tree::Neg(e) => format!("-({})", render(e)),
        Tree::Bin(op, a, b) => format!("({} {op} {})", render(a), render(b)),
    }
}

/// Exact value, plus the value with every operand made non-negative and
/// every subtraction turned into addition — a cancellation yardstick.
fn exact(t: &Tree, vars: &[i64]) -> Option<(BigRational, BigRational)> {
    Some(match t {
        Tree::Lit(n) => (eighths(*n), eighths(*n)),
        Tree::Var(i) => (eighths(vars[*i]), eighths(vars[*i])),
        Tree::Neg(e) => {
            let (v, m) = exact(e, vars)?;
            (-v, m)
        }
        Tree::Bin(op, a, b) => {
            let (va, ma) = exact(a, vars)?;
            let (vb, mb) = exact(b, vars)?;
            match op {
                '+' => (va + vb, ma + mb),
                '-' => (va - vb, ma + mb),
                '*' => (va * vb, ma * mb),
                _ => {
                    if vb.is_zero() {
                        return None;
                    }
                    // Dividing by something much smaller than its magnitude
                    // amplifies earlier rounding without bound.
                    if vb.abs() * BigInt::from(1000) < mb {
                        return None;
                    }
                    (va / &vb, ma / vb.abs())
                }
            }
        }
    })
}

#[test]
fn evaluator_matches_rational_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 1000 {
        attempts += 1;
        assert!(attempts < 20_000, "generator too often ill-conditioned");
        let tree = gen(&mut rng, 5);
        let vars: Vec<i64> = (0..VARS.len())
            .map(|_| rng.random_range(1..=4000))
            .collect();
        let Some((value, magnitude)) = exact(&tree, &vars) else {
            continue;
        };
        // Well-conditioned: no catastrophic cancellation at the top level.
        if value.is_zero() || value.abs() * BigInt::from(1000) < magnitude {
            continue;
        }
        let src = render(&tree);
        let expr = Expr::parse(&src).unwrap_or_else(|e| panic!("{src}: {e}"));
        let env: HashMap<String, f64> = VARS
            .iter()
            .zip(&vars)
            .map(|(k, v)| (k.to_string(), *v as f64 / 8.0))
            .collect();
        let got = eval_expression(&expr, &env).unwrap();
        let want = value.to_f64().unwrap();
        let rel = ((got - want) / want).abs();
        assert!(rel <= 1e-12, "{src}: got {got}, exact {want}, rel {rel:e}");
        checked += 1;
    }
}

#[test]
fn display_reparses_to_the_same_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let src = render(&gen(&mut rng, 4));
        let expr = Expr::parse(&src).unwrap();
        assert_eq!(Expr::parse(&expr.to_string()).unwrap(), expr, "{src}");
    }
}

#[test]
fn ieee_edge_cases() {
    let env: HashMap<String, f64> = [("a".to_string(), 0.0), ("b".to_string(), 4.0)].into();
    let eval = |s: &str| eval_expression(&Expr::parse(s).unwrap(), &env).unwrap();
    assert!(eval("(b-a)/a*100").is_infinite());
    assert!(eval("(a-a)/a*100").is_nan());
    assert_eq!(eval("-b--b"), 0.0);
    assert_eq!(eval("2+3*4-6/3"), 12.0);
}
