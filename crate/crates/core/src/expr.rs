//! A small textual grammar for integrands.
//!
//! ```text
//! expr   := NUMBER '*' expr | power
//! power  := call ('^' NUMBER)?
//! call   := 'ind' '(' box ('|' box)* ')'
//!         | 'max' '(' expr (',' expr)* ')'
//!         | 'sep' '(' expr (',' expr)* ')'
//!         | 'sym' '(' expr ')'
//!         | 'zero' '(' INT ')'
//!         | 'cubes' '(' INT ',' law ',' INT ')'
//!         | '(' expr ')'
//! box    := set ('x' set)*
//! set    := '[' NUMBER ',' NUMBER ')' | '{' IDENT (',' IDENT)* '}' | 'hits' '(' INT ')'
//! law    := 'geometric' NUMBER | 'power' NUMBER | 'log-squared'
//! ```
//!
//! `ind([0, 0.5) x [0.5, 1))` is the indicator of a rectangle in the unit square and
//! `2 * sym(ind({a} x {b}))^0.5` scales a symmetrized power of an atom indicator.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrability::{CubeFamily, SideLaw};
use crate::integrand::{Integrand, StepBox};
use crate::measure::{CoordSet, MeasureSpace, Rectangle};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("at offset {offset}: {message}")]
pub struct ExprError {
    /// Byte offset into the source text.
    pub offset: usize,
    pub message: String,
}

impl ExprError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ExprError { offset, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetExpr {
    Interval(f64, f64),
    Atoms(Vec<String>),
    Hits(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Zero(usize),
    /// Indicator of a union of boxes.
    Indicator(Vec<Vec<SetExpr>>),
    Cubes {
        order: usize,
        law: SideLaw,
        count: usize,
    },
    Scale(f64, Box<Expr>),
    Max(Vec<Expr>),
    Separable(Vec<Expr>),
    Pow(Box<Expr>, f64),
    Sym(Box<Expr>),
}

impl Expr {
    /// Order of the integrand the expression denotes.
    pub fn order(&self) -> usize {
        match self {
            Expr::Zero(k) => *k,
            Expr::Indicator(boxes) => boxes[0].len(),
            Expr::Cubes { order, .. } => *order,
            Expr::Scale(_, e) | Expr::Pow(e, _) | Expr::Sym(e) => e.order(),
            Expr::Max(es) => es[0].order(),
            Expr::Separable(es) => es.len(),
        }
    }

    /// Builds the integrand, resolving atom names against `space`.
    pub fn build(&self, space: &MeasureSpace) -> Result<Integrand, ExprError> {
        let f = match self {
            Expr::Zero(k) => Integrand::zero(*k),
            Expr::Indicator(boxes) => {
                let mut steps = Vec::with_capacity(boxes.len());
                for b in boxes {
                    let coords = b.iter().map(|s| resolve(s, space)).collect::<Result<Vec<_>, _>>()?;
                    steps.push(StepBox { rect: Rectangle(coords), value: 1.0 });
                }
                Integrand::step(self.order(), steps)
            }
            Expr::Cubes { order, law, count } => CubeFamily::new(*order, *law).integrand(*count),
            Expr::Scale(c, e) => e.build(space)?.scale(*c),
            Expr::Max(es) => {
                let terms = es.iter().map(|e| e.build(space).map(|f| (1.0, f))).collect::<Result<Vec<_>, _>>()?;
                Integrand::max_of(&terms)
            }
            Expr::Separable(es) => {
                let fs = es.iter().map(|e| e.build(space)).collect::<Result<Vec<_>, _>>()?;
                Integrand::separable(&fs)
            }
            Expr::Pow(e, r) => e.build(space)?.pow(*r),
            Expr::Sym(e) => e.build(space)?.max_symmetrize(),
        };
        Ok(f.with_label(&self.to_string()))
    }
}

fn resolve(set: &SetExpr, space: &MeasureSpace) -> Result<CoordSet, ExprError> {
    match set {
        SetExpr::Interval(a, b) => Ok(CoordSet::Interval(*a, *b)),
        SetExpr::Hits(t) => Ok(CoordSet::Hits(*t)),
        SetExpr::Atoms(ids) => {
            let MeasureSpace::Discrete(d) = space else {
                return Err(ExprError::new(0, "atom sets need a discrete space"));
            };
            let idx = ids
                .iter()
                .map(|id| d.index_of(id).map_err(|_| ExprError::new(0, format!("unknown atom '{id}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(CoordSet::Atoms(idx))
        }
    }
}

impl fmt::Display for SetExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetExpr::Interval(a, b) => write!(f, "[{a}, {b})"),
            SetExpr::Atoms(ids) => write!(f, "{{{}}}", ids.join(", ")),
            SetExpr::Hits(t) => write!(f, "hits({t})"),
        }
    }
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Zero(k) => write!(f, "zero({k})"),
            Expr::Indicator(boxes) => {
                let parts: Vec<String> = boxes.iter().map(|b| join(b, " x ")).collect();
                write!(f, "ind({})", parts.join(" | "))
            }
            Expr::Cubes { order, law, count } => {
                let law = match law {
                    SideLaw::Geometric { ratio } => format!("geometric {ratio}"),
                    SideLaw::Power { exponent } => format!("power {exponent}"),
                    SideLaw::LogSquared => "log-squared".to_string(),
                };
                write!(f, "cubes({order}, {law}, {count})")
            }
            Expr::Scale(c, e) => write!(f, "{c} * {e}"),
            Expr::Max(es) => write!(f, "max({})", join(es, ", ")),
            Expr::Separable(es) => write!(f, "sep({})", join(es, ", ")),
            // a scaled base needs brackets so the exponent binds to the whole term
            Expr::Pow(e, r) if matches!(**e, Expr::Scale(..) | Expr::Pow(..)) => write!(f, "({e})^{r}"),
            Expr::Pow(e, r) => write!(f, "{e}^{r}"),
            Expr::Sym(e) => write!(f, "sym({e})"),
        }
    }
}

/// Parses and order-checks an integrand expression.
pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src, pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != src.len() {
        return Err(ExprError::new(p.pos, "unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ExprError::new(self.pos, format!("expected '{c}'")))
        }
    }

    fn ident(&mut self) -> Option<(usize, &str)> {
        self.skip_ws();
        let start = self.pos;
        let len = self
            .rest()
            .char_indices()
            .find(|&(i, c)| !(c.is_ascii_alphabetic() || c == '_' || (i > 0 && (c.is_ascii_digit() || c == '-'))))
            .map_or(self.rest().len(), |(i, _)| i);
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some((start, &self.src[start..start + len]))
    }

    fn number_at(&mut self) -> Option<(usize, f64)> {
        self.skip_ws();
        let start = self.pos;
        if self.rest().starts_with("inf") {
            self.pos += 3;
            return Some((start, f64::INFINITY));
        }
        let bytes = self.rest().as_bytes();
        let len = (0..bytes.len())
            .find(|&i| {
                let c = bytes[i];
                let sign_ok = (c == b'-' || c == b'+') && (i == 0 || matches!(bytes[i - 1], b'e' | b'E'));
                !(c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || sign_ok)
            })
            .unwrap_or(bytes.len());
        let v = self.rest()[..len].parse::<f64>().ok()?;
        self.pos += len;
        Some((start, v))
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let here = self.pos;
        self.number_at().map(|(_, v)| v).ok_or_else(|| ExprError::new(here, "expected a number"))
    }

    fn integer(&mut self) -> Result<usize, ExprError> {
        self.skip_ws();
        let here = self.pos;
        let v = self.number()?;
        if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
            Ok(v as usize)
        } else {
            Err(ExprError::new(here, "expected a nonnegative integer"))
        }
    }

    fn starts_number(&mut self) -> bool {
        matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.' || c == '-' || c == '+')
            || self.rest().starts_with("inf")
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        if self.starts_number() {
            let here = self.pos;
            let c = self.number()?;
            if !(c >= 0.0 && c.is_finite()) {
                return Err(ExprError::new(here, "scale must be finite and nonnegative"));
            }
            self.expect('*')?;
            let e = self.expr()?;
            return Ok(Expr::Scale(c, Box::new(e)));
        }
        let base = self.call()?;
        if self.eat('^') {
            let here = self.pos;
            let r = self.number()?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(ExprError::new(here, "power must be positive"));
            }
            return Ok(Expr::Pow(Box::new(base), r));
        }
        Ok(base)
    }

    fn list(&mut self) -> Result<Vec<Expr>, ExprError> {
        let mut out = vec![self.expr()?];
        while self.eat(',') {
            out.push(self.expr()?);
        }
        self.expect(')')?;
        Ok(out)
    }

    fn call(&mut self) -> Result<Expr, ExprError> {
        if self.eat('(') {
            let e = self.expr()?;
            self.expect(')')?;
            return Ok(e);
        }
        let here = self.pos;
        let Some((at, name)) = self.ident() else {
            return Err(ExprError::new(here, "expected an integrand"));
        };
        let name = name.to_string();
        self.expect('(')?;
        match name.as_str() {
            "zero" => {
                let k = self.integer()?;
                if k == 0 {
                    return Err(ExprError::new(at, "order must be at least 1"));
                }
                self.expect(')')?;
                Ok(Expr::Zero(k))
            }
            "ind" => {
                let mut boxes = vec![self.rect()?];
                while self.eat('|') {
                    boxes.push(self.rect()?);
                }
                self.expect(')')?;
                if boxes.iter().any(|b| b.len() != boxes[0].len()) {
                    return Err(ExprError::new(at, "boxes of one indicator must have the same order"));
                }
                Ok(Expr::Indicator(boxes))
            }
            "cubes" => {
                let order = self.integer()?;
                self.expect(',')?;
                let law_at = self.pos;
                let law = match self.ident().map(|(_, s)| s.to_string()).as_deref() {
                    Some("geometric") => {
                        let ratio = self.number()?;
                        if !(ratio > 0.0 && ratio < 1.0) {
                            return Err(ExprError::new(law_at, "geometric ratio must lie in (0, 1)"));
                        }
                        SideLaw::Geometric { ratio }
                    }
                    Some("power") => {
                        let exponent = self.number()?;
                        if !(exponent > 0.0) {
                            return Err(ExprError::new(law_at, "power exponent must be positive"));
                        }
                        SideLaw::Power { exponent }
                    }
                    Some("log-squared") => SideLaw::LogSquared,
                    _ => return Err(ExprError::new(law_at, "expected geometric, power or log-squared")),
                };
                self.expect(',')?;
                let count = self.integer()?;
                self.expect(')')?;
                if order == 0 {
                    return Err(ExprError::new(at, "order must be at least 1"));
                }
                Ok(Expr::Cubes { order, law, count })
            }
            "max" => {
                let es = self.list()?;
                if es.iter().any(|e| e.order() != es[0].order()) {
                    return Err(ExprError::new(at, "max of integrands with different orders"));
                }
                Ok(Expr::Max(es))
            }
            "sep" => {
                let es = self.list()?;
                if es.iter().any(|e| e.order() != 1) {
                    return Err(ExprError::new(at, "separable factors must have order 1"));
                }
                Ok(Expr::Separable(es))
            }
            "sym" => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(Expr::Sym(Box::new(e)))
            }
            other => Err(ExprError::new(at, format!("unknown integrand '{other}'"))),
        }
    }

    fn rect(&mut self) -> Result<Vec<SetExpr>, ExprError> {
        let mut sets = vec![self.set()?];
        loop {
            self.skip_ws();
            let save = self.pos;
            match self.ident() {
                Some((_, "x")) => sets.push(self.set()?),
                _ => {
                    self.pos = save;
                    return Ok(sets);
                }
            }
        }
    }

    fn set(&mut self) -> Result<SetExpr, ExprError> {
        let here = self.pos;
        if self.eat('[') {
            let a = self.number()?;
            self.expect(',')?;
            let b = self.number()?;
            self.expect(')')?;
            if !(b > a) || a.is_nan() {
                return Err(ExprError::new(here, "interval must satisfy lo < hi"));
            }
            return Ok(SetExpr::Interval(a, b));
        }
        if self.eat('{') {
            let mut ids = Vec::new();
            loop {
                let here = self.pos;
                let id = self.atom_id().ok_or_else(|| ExprError::new(here, "expected an atom name"))?;
                ids.push(id);
                if !self.eat(',') {
                    break;
                }
            }
            self.expect('}')?;
            return Ok(SetExpr::Atoms(ids));
        }
        match self.ident() {
            Some((_, "hits")) => {
                self.expect('(')?;
                let t = self.integer()?;
                self.expect(')')?;
                Ok(SetExpr::Hits(t as u64))
            }
            _ => Err(ExprError::new(here, "expected '[lo, hi)', '{atoms}' or 'hits(t)'")),
        }
    }

    fn atom_id(&mut self) -> Option<String> {
        self.skip_ws();
        let len = self
            .rest()
            .char_indices()
            .find(|&(_, c)| !(c.is_alphanumeric() || c == '_' || c == '-' || c == '.'))
            .map_or(self.rest().len(), |(i, _)| i);
        if len == 0 {
            return None;
        }
        let id = self.rest()[..len].to_string();
        self.pos += len;
        Some(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{make_discrete_space, make_unit_interval, Point};
    use proptest::prelude::*;

    #[test]
    fn rectangle_indicator() {
        let e = parse_expr("ind([0, 0.5) x [0.5, 1))").unwrap();
        assert_eq!(e.order(), 2);
        let f = e.build(&make_unit_interval(None).unwrap()).unwrap();
        assert_eq!(f.eval_reals(&[0.2, 0.7]), 1.0);
        assert_eq!(f.eval_reals(&[0.7, 0.2]), 0.0);
        assert_eq!(f.label(), "ind([0, 0.5) x [0.5, 1))");
    }

    #[test]
    fn combinators() {
        let unit = make_unit_interval(None).unwrap();
        let f = parse_expr("2 * sym(ind([0, 0.5) x [0.5, 1)))^2").unwrap().build(&unit).unwrap();
        assert_eq!(f.eval_reals(&[0.7, 0.2]), 2.0 * 1.0);
        let g = parse_expr("(2 * ind([0, 0.5)))^2").unwrap().build(&unit).unwrap();
        assert_eq!(g.eval_reals(&[0.1]), 4.0);
        let s = parse_expr("sep(ind([0, 0.5)), 3 * ind([0.5, 1)))").unwrap();
        assert_eq!(s.order(), 2);
        assert_eq!(s.build(&unit).unwrap().eval_reals(&[0.1, 0.6]), 3.0);
        let m = parse_expr("max(ind([0,0.5)), 0.5 * ind([0.25, 1)))").unwrap().build(&unit).unwrap();
        assert_eq!(m.eval_reals(&[0.3]), 1.0);
        assert_eq!(m.eval_reals(&[0.8]), 0.5);
    }

    #[test]
    fn atoms_resolve_against_space() {
        let sp = make_discrete_space(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]).unwrap();
        let f = parse_expr("ind({a} x {b, c} | {c} x {a})").unwrap().build(&sp).unwrap();
        let (a, b, c) = (Point::Atom(0), Point::Atom(1), Point::Atom(2));
        assert_eq!(f.eval(&[&a, &c]), 1.0);
        assert_eq!(f.eval(&[&c, &a]), 1.0);
        assert_eq!(f.eval(&[&b, &a]), 0.0);
        let err = parse_expr("ind({z} x {a})").unwrap().build(&sp).unwrap_err();
        assert!(err.message.contains("unknown atom"));
    }

    #[test]
    fn cubes_and_zero() {
        let e = parse_expr("cubes(2, log-squared, 16)").unwrap();
        assert_eq!(e, Expr::Cubes { order: 2, law: SideLaw::LogSquared, count: 16 });
        assert_eq!(parse_expr("cubes(2, geometric 0.5, 4)").unwrap().order(), 2);
        assert_eq!(parse_expr("zero(3)").unwrap().order(), 3);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_expr("max(ind([0,1)), ind([0,1) x [1,2)))").unwrap_err();
        assert_eq!(e.offset, 0);
        let e = parse_expr("ind([0, 1) x [1, 2)) junk").unwrap_err();
        assert_eq!(e.offset, 21);
        let e = parse_expr("ind([1, 0))").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(parse_expr("foo(1)").is_err());
        assert!(parse_expr("sep(ind([0,1) x [1,2)))").is_err());
        assert!(parse_expr("ind([0,1))^0").is_err());
        assert!(parse_expr("zero(0)").is_err());
    }

    fn arb_set() -> impl Strategy<Value = SetExpr> {
        prop_oneof![
            (-10.0f64..10.0, 0.001f64..5.0).prop_map(|(a, w)| SetExpr::Interval(a, a + w)),
            prop::collection::vec("[a-z][a-z0-9]{0,3}", 1..3).prop_map(SetExpr::Atoms),
            (0u64..1000).prop_map(SetExpr::Hits),
        ]
    }

    fn arb_expr(k: usize) -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            Just(Expr::Zero(k)),
            prop::collection::vec(prop::collection::vec(arb_set(), k..=k), 1..3).prop_map(Expr::Indicator),
        ];
        leaf.prop_recursive(3, 16, 3, move |inner| {
            prop_oneof![
                (0.0f64..10.0, inner.clone()).prop_map(|(c, e)| Expr::Scale(c, Box::new(e))),
                prop::collection::vec(inner.clone(), 1..3).prop_map(Expr::Max),
                (inner.clone(), 0.1f64..4.0).prop_map(|(e, r)| Expr::Pow(Box::new(e), r)),
                inner.prop_map(|e| Expr::Sym(Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn display_round_trips(e in (1usize..4).prop_flat_map(arb_expr)) {
            let text = e.to_string();
            prop_assert_eq!(parse_expr(&text).unwrap(), e);
        }
    }
}
