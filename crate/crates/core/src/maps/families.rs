//! Named map families and the expression grammar that builds them.
//!
//! Families are referenced from configuration by expressions such as
//! `depolarizing(0.2)` or `kraus_scaled(0.7, amplitude_damping(0.4))`:
//!
//! ```text
//! expr   := name | name '(' arg {',' arg} ')'
//! arg    := number | expr
//! name   := identity | depolarizing | amplitude_damping | kraus_scaled
//!         | random_cp | compose
//! ```
//!
//! * `identity` / `identity(d)` - the identity map, default dimension 2.
//! * `depolarizing(p)` / `depolarizing(p, d)` - keeps the input with weight
//!   `1 - p` and mixes in `tr(X) I/d` with weight `p`.
//! * `amplitude_damping(gamma)` - the qubit damping channel.
//! * `kraus_scaled(c)` / `kraus_scaled(c, base)` - the base map (identity
//!   when omitted) scaled by `c > 0`; scaling breaks trace preservation and
//!   shifts every log-increment by `ln c`.
//! * `random_cp(rank, seed)` / `random_cp(rank, seed, d)` - completely
//!   positive map with `rank` Gaussian Kraus operators, reproducible from
//!   the seed; close to trace-preserving in expectation but not exactly.
//! * `compose(f, g)` - the composition `f . g` (apply `g` first).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use super::PositiveMap;
use crate::error::Error;
use crate::rng::{keyed_rng, standard_complex, DOMAIN_FAMILY};
use crate::Result;

/// Identity map on dimension `d`.
pub fn identity(d: usize) -> Result<PositiveMap> {
    PositiveMap::kraus(vec![DMatrix::identity(d, d)])
}

/// Depolarizing channel `X -> (1-p) X + p tr(X) I/d`.
///
/// Kraus form uses the discrete Weyl family: the uniform mixture of all
/// `d^2` Weyl conjugations averages any input to `tr(X) I/d`.
pub fn depolarizing(d: usize, p: f64) -> Result<PositiveMap> {
    if d < 2 {
        return Err(Error::Dimension { expected: 2, found: d });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidMap(format!(
            "depolarizing weight {p} outside [0, 1]"
        )));
    }
    let dd = (d * d) as f64;
    let mut ops = Vec::with_capacity(d * d);
    let keep = (1.0 - p + p / dd).sqrt();
    ops.push(DMatrix::<Complex64>::identity(d, d).scale(keep));
    let spread = p.sqrt() / d as f64;
    if spread > 0.0 {
        for a in 0..d {
            for b in 0..d {
                if a == 0 && b == 0 {
                    continue;
                }
                ops.push(weyl(d, a, b).scale(spread));
            }
        }
    }
    PositiveMap::kraus(ops)
}

/// Qubit amplitude damping with decay weight `gamma`.
pub fn amplitude_damping(gamma: f64) -> Result<PositiveMap> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidMap(format!(
            "damping weight {gamma} outside [0, 1]"
        )));
    }
    let z = Complex64::new(0.0, 0.0);
    let k0 = DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(1.0, 0.0),
            z,
            z,
            Complex64::new((1.0 - gamma).sqrt(), 0.0),
        ],
    );
    let k1 = DMatrix::from_row_slice(
        2,
        2,
        &[z, Complex64::new(gamma.sqrt(), 0.0), z, z],
    );
    PositiveMap::kraus(vec![k0, k1])
}

/// `c . base`: every output scaled by `c > 0`.
pub fn kraus_scaled(c: f64, base: PositiveMap) -> Result<PositiveMap> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidMap(format!("scale {c} must be positive")));
    }
    match base.form() {
        super::MapForm::Kraus(ops) => {
            let root = c.sqrt();
            PositiveMap::kraus(ops.iter().map(|k| k.scale(root)).collect())
        }
        super::MapForm::Superop(s) => PositiveMap::superop(s.scale(c)),
    }
}

/// Completely positive map with `rank` Kraus operators of i.i.d. complex
/// Gaussian entries, scaled so the family is trace-preserving in
/// expectation.  Reproducible from `seed`.
pub fn random_cp(d: usize, rank: usize, seed: u64) -> Result<PositiveMap> {
    if rank == 0 {
        return Err(Error::InvalidMap("random_cp needs rank >= 1".into()));
    }
    let scale = 1.0 / ((2 * rank * d) as f64).sqrt();
    let ops = (0..rank)
        .map(|i| {
            let mut rng = keyed_rng(seed, DOMAIN_FAMILY, i as i64);
            DMatrix::from_fn(d, d, |_, _| standard_complex(&mut rng) * scale)
        })
        .collect();
    PositiveMap::kraus(ops)
}

/// Single-operator conjugation `X -> K X K*`.
pub fn kraus_conjugation(k: DMatrix<Complex64>) -> Result<PositiveMap> {
    PositiveMap::kraus(vec![k])
}

/// Random strictly positive map: full-rank `random_cp` mixed with a
/// depolarizing floor, so the Choi matrix is bounded away from zero.
pub fn random_strictly_positive(d: usize, seed: u64, floor: f64) -> Result<PositiveMap> {
    let raw = random_cp(d, d * d, seed)?;
    let dep = depolarizing(d, 1.0)?;
    let mut rng = keyed_rng(seed, DOMAIN_FAMILY, -1);
    // Vary the mixing weight a little so distinct seeds differ in norm too.
    let w = floor * (1.0 + 0.5 * rng.gen::<f64>());
    let s = raw.superop_matrix().scale(1.0 - w) + dep.superop_matrix().scale(w);
    PositiveMap::superop(s)
}

fn weyl(d: usize, a: usize, b: usize) -> DMatrix<Complex64> {
    let omega = 2.0 * std::f64::consts::PI / d as f64;
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        let phase = omega * (b * k) as f64;
        m[((k + a) % d, k)] = Complex64::new(phase.cos(), phase.sin());
    }
    m
}

/// Parses a family expression; see the module docs for the grammar.
pub fn parse(expr: &str) -> Result<PositiveMap> {
    let mut tokens = tokenize(expr)?;
    tokens.reverse();
    let map = parse_expr(&mut tokens)?;
    if let Some(t) = tokens.last() {
        return Err(Error::ParseFamily(format!(
            "trailing input after expression: {t:?}"
        )));
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Open,
    Close,
    Comma,
}

fn tokenize(s: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some(&(start, ch)) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                out.push(Token::Open);
            }
            ')' => {
                chars.next();
                out.push(Token::Close);
            }
            ',' => {
                chars.next();
                out.push(Token::Comma);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        end = i + c.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(Token::Ident(s[start..end].to_string()));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut end = start;
                while let Some(&(i, c)) = chars.peek() {
                    if c.is_ascii_digit() || "+-.eE".contains(c) {
                        end = i + c.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let text = &s[start..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| Error::ParseFamily(format!("bad number {text:?}")))?;
                out.push(Token::Number(value));
            }
            other => {
                return Err(Error::ParseFamily(format!(
                    "unexpected character {other:?} at byte {start}"
                )))
            }
        }
    }
    Ok(out)
}

enum Arg {
    Number(f64),
    Map(PositiveMap),
}

fn parse_expr(tokens: &mut Vec<Token>) -> Result<PositiveMap> {
    let name = match tokens.pop() {
        Some(Token::Ident(name)) => name,
        other => {
            return Err(Error::ParseFamily(format!(
                "expected a family name, found {other:?}"
            )))
        }
    };
    let mut args = Vec::new();
    if tokens.last() == Some(&Token::Open) {
        tokens.pop();
        loop {
            match tokens.last() {
                Some(Token::Number(_)) => {
                    if let Some(Token::Number(x)) = tokens.pop() {
                        args.push(Arg::Number(x));
                    }
                }
                Some(Token::Ident(_)) => args.push(Arg::Map(parse_expr(tokens)?)),
                other => {
                    return Err(Error::ParseFamily(format!(
                        "expected an argument, found {other:?}"
                    )))
                }
            }
            match tokens.pop() {
                Some(Token::Comma) => continue,
                Some(Token::Close) => break,
                other => {
                    return Err(Error::ParseFamily(format!(
                        "expected ',' or ')', found {other:?}"
                    )))
                }
            }
        }
    }
    build(&name, args)
}

fn build(name: &str, mut args: Vec<Arg>) -> Result<PositiveMap> {
    let arity = args.len();
    let wrong_args = || {
        Error::ParseFamily(format!(
            "{name} does not accept this argument list (got {arity} args)"
        ))
    };
    match name {
        "identity" => match arity {
            0 => identity(2),
            1 => identity(usize_arg(&args[0], "dimension")?),
            _ => Err(wrong_args()),
        },
        "depolarizing" => match arity {
            1 => depolarizing(2, num_arg(&args[0])?),
            2 => depolarizing(usize_arg(&args[1], "dimension")?, num_arg(&args[0])?),
            _ => Err(wrong_args()),
        },
        "amplitude_damping" => match arity {
            1 => amplitude_damping(num_arg(&args[0])?),
            _ => Err(wrong_args()),
        },
        "kraus_scaled" => match arity {
            1 => kraus_scaled(num_arg(&args[0])?, identity(2)?),
            2 => {
                let base = match args.pop() {
                    Some(Arg::Map(m)) => m,
                    _ => return Err(wrong_args()),
                };
                kraus_scaled(num_arg(&args[0])?, base)
            }
            _ => Err(wrong_args()),
        },
        "random_cp" => match arity {
            2 => random_cp(
                2,
                usize_arg(&args[0], "rank")?,
                u64_arg(&args[1], "seed")?,
            ),
            3 => random_cp(
                usize_arg(&args[2], "dimension")?,
                usize_arg(&args[0], "rank")?,
                u64_arg(&args[1], "seed")?,
            ),
            _ => Err(wrong_args()),
        },
        "compose" => match arity {
            2 => {
                let g = match args.pop() {
                    Some(Arg::Map(m)) => m,
                    _ => return Err(wrong_args()),
                };
                let f = match args.pop() {
                    Some(Arg::Map(m)) => m,
                    _ => return Err(wrong_args()),
                };
                f.compose(&g)
            }
            _ => Err(wrong_args()),
        },
        other => Err(Error::ParseFamily(format!("unknown family {other:?}"))),
    }
}

fn num_arg(arg: &Arg) -> Result<f64> {
    match arg {
        Arg::Number(x) => Ok(*x),
        Arg::Map(_) => Err(Error::ParseFamily(
            "expected a number, found a map expression".into(),
        )),
    }
}

fn usize_arg(arg: &Arg, what: &str) -> Result<usize> {
    let x = num_arg(arg)?;
    if x.fract() != 0.0 || x < 0.0 || x > usize::MAX as f64 {
        return Err(Error::ParseFamily(format!("{what} must be a nonnegative integer, got {x}")));
    }
    Ok(x as usize)
}

fn u64_arg(arg: &Arg, what: &str) -> Result<u64> {
    let x = num_arg(arg)?;
    if x.fract() != 0.0 || x < 0.0 || x > u64::MAX as f64 {
        return Err(Error::ParseFamily(format!("{what} must be a nonnegative integer, got {x}")));
    }
    Ok(x as u64)
}
