//! Nonnegative k-variate integrands that vanish on diagonals.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::measure::{CoordSet, MeasureSpace, OffDiagonalSet, Point, Rectangle};

type EvalFn = Arc<dyn Fn(&[&Point]) -> f64 + Send + Sync>;

/// One constant piece of a step integrand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBox {
    pub rect: Rectangle,
    pub value: f64,
}

/// A k-variate integrand. Evaluation returns 0 on any tuple with a repeated point.
#[derive(Clone)]
pub struct Integrand {
    k: usize,
    label: String,
    raw: EvalFn,
    log_raw: Option<EvalFn>,
    symmetric: bool,
    envelope: Option<f64>,
    steps: Option<Vec<StepBox>>,
    projections: Option<Vec<CoordSet>>,
    breakpoints: Vec<f64>,
    factors: Option<Arc<Vec<Integrand>>>,
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrand")
            .field("k", &self.k)
            .field("label", &self.label)
            .field("symmetric", &self.symmetric)
            .field("envelope", &self.envelope)
            .field("steps", &self.steps.as_ref().map(|s| s.len()))
            .finish()
    }
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..k).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

fn has_repeat(pts: &[&Point]) -> bool {
    (0..pts.len()).any(|i| (i + 1..pts.len()).any(|j| pts[i] == pts[j]))
}

fn steps_eval(steps: &[StepBox], pts: &[&Point]) -> f64 {
    steps.iter().filter(|b| b.rect.contains(pts)).map(|b| b.value).fold(0.0, f64::max)
}

pub(crate) fn intersect_coord(a: &CoordSet, b: &CoordSet) -> Option<CoordSet> {
    match (a, b) {
        (CoordSet::Atoms(x), CoordSet::Atoms(y)) => {
            let v: Vec<usize> = x.iter().copied().filter(|i| y.contains(i)).collect();
            (!v.is_empty()).then_some(CoordSet::Atoms(v))
        }
        (CoordSet::Interval(a0, a1), CoordSet::Interval(b0, b1)) => {
            let (lo, hi) = (a0.max(*b0), a1.min(*b1));
            (hi > lo).then_some(CoordSet::Interval(lo, hi))
        }
        (CoordSet::Hits(s), CoordSet::Hits(t)) => (s == t).then_some(CoordSet::Hits(*s)),
        _ => None,
    }
}

fn box_breakpoints(steps: &[StepBox]) -> Vec<f64> {
    let mut v = Vec::new();
    for b in steps {
        for c in &b.rect.0 {
            if let CoordSet::Interval(lo, hi) = c {
                v.push(*lo);
                if hi.is_finite() {
                    v.push(*hi);
                }
            }
        }
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

impl Integrand {
    /// Integrand from an evaluation closure; the closure need not handle diagonals.
    pub fn new<F>(k: usize, label: &str, f: F) -> Self
    where
        F: Fn(&[&Point]) -> f64 + Send + Sync + 'static,
    {
        assert!(k >= 1, "integrand order must be at least 1");
        Integrand {
            k,
            label: label.to_string(),
            raw: Arc::new(f),
            log_raw: None,
            symmetric: false,
            envelope: None,
            steps: None,
            projections: None,
            breakpoints: Vec::new(),
            factors: None,
        }
    }

    /// Max-combination of constant boxes: `f = max { value : rect contains x }`.
    pub fn step(k: usize, boxes: Vec<StepBox>) -> Self {
        for b in &boxes {
            assert_eq!(b.rect.0.len(), k, "box order mismatch");
            assert!(b.value >= 0.0, "step values must be nonnegative");
        }
        let boxes: Vec<StepBox> = boxes.into_iter().filter(|b| b.value > 0.0).collect();
        let shared = Arc::new(boxes.clone());
        let envelope = boxes.iter().map(|b| b.value).fold(0.0, f64::max);
        let label = format!("step[{}]", boxes.len());
        let mut out = Integrand::new(k, &label, move |pts| steps_eval(&shared, pts));
        out.envelope = Some(envelope);
        out.breakpoints = box_breakpoints(&boxes);
        out.steps = Some(boxes);
        out
    }

    pub fn zero(k: usize) -> Self {
        Integrand::step(k, Vec::new()).with_symmetric(true).with_label("0")
    }

    /// Indicator of one rectangle.
    pub fn indicator(rect: Rectangle) -> Self {
        let k = rect.0.len();
        Integrand::step(k, vec![StepBox { rect, value: 1.0 }])
    }

    /// Indicator of a finite union of rectangles.
    pub fn indicator_of(k: usize, set: &OffDiagonalSet) -> Self {
        Integrand::step(k, set.rects.iter().map(|r| StepBox { rect: r.clone(), value: 1.0 }).collect())
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    /// Declares the integrand symmetric. Callers are trusted; see [`Integrand::probe_symmetry`].
    pub fn with_symmetric(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn with_envelope(mut self, bound: f64) -> Self {
        self.envelope = Some(bound);
        self
    }

    pub fn with_projections(mut self, sets: Vec<CoordSet>) -> Self {
        self.projections = Some(sets);
        self
    }

    /// Points where the integrand jumps or blows up, used to split quadrature panels.
    pub fn with_breakpoints(mut self, pts: Vec<f64>) -> Self {
        self.breakpoints.extend(pts);
        self.breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        self.breakpoints.dedup();
        self
    }

    /// Log of the raw evaluation, for integrands whose values overflow.
    pub fn with_log_eval<F>(mut self, f: F) -> Self
    where
        F: Fn(&[&Point]) -> f64 + Send + Sync + 'static,
    {
        self.log_raw = Some(Arc::new(f));
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn envelope(&self) -> Option<f64> {
        self.envelope
    }

    pub fn steps(&self) -> Option<&[StepBox]> {
        self.steps.as_deref()
    }

    /// Univariate factors when built by [`Integrand::separable`].
    pub fn separable_factors(&self) -> Option<&[Integrand]> {
        self.factors.as_deref().map(|v| v.as_slice())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn eval(&self, pts: &[&Point]) -> f64 {
        debug_assert_eq!(pts.len(), self.k);
        if has_repeat(pts) {
            return 0.0;
        }
        (self.raw)(pts)
    }

    /// `ln f`, `-inf` where `f = 0`.
    pub fn log_eval(&self, pts: &[&Point]) -> f64 {
        if has_repeat(pts) {
            return f64::NEG_INFINITY;
        }
        match &self.log_raw {
            Some(g) => g(pts),
            None => (self.raw)(pts).ln(),
        }
    }

    /// Evaluation on real coordinates (interval spaces).
    pub fn eval_reals(&self, xs: &[f64]) -> f64 {
        let pts: Vec<Point> = xs.iter().map(|&x| Point::Real(x)).collect();
        let refs: Vec<&Point> = pts.iter().collect();
        self.eval(&refs)
    }

    pub fn log_eval_reals(&self, xs: &[f64]) -> f64 {
        let pts: Vec<Point> = xs.iter().map(|&x| Point::Real(x)).collect();
        let refs: Vec<&Point> = pts.iter().collect();
        self.log_eval(&refs)
    }

    /// Evaluation on atom indices (discrete spaces).
    pub fn eval_atoms(&self, ids: &[usize]) -> f64 {
        let pts: Vec<Point> = ids.iter().map(|&a| Point::Atom(a)).collect();
        let refs: Vec<&Point> = pts.iter().collect();
        self.eval(&refs)
    }

    /// Union of the coordinate projections of the support, when known.
    pub fn coordinate_projections(&self) -> Option<Vec<CoordSet>> {
        if let Some(p) = &self.projections {
            return Some(p.clone());
        }
        let steps = self.steps.as_ref()?;
        let mut out: Vec<CoordSet> = Vec::new();
        for b in steps {
            for c in &b.rect.0 {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        Some(out)
    }

    /// `c * f`.
    pub fn scale(&self, c: f64) -> Integrand {
        assert!(c >= 0.0, "scale must be nonnegative");
        if let Some(steps) = &self.steps {
            let boxes = steps.iter().map(|b| StepBox { rect: b.rect.clone(), value: c * b.value }).collect();
            return Integrand::step(self.k, boxes)
                .with_symmetric(self.symmetric)
                .with_label(&format!("{c}*{}", self.label));
        }
        let inner = self.raw.clone();
        let mut out = self.derived(&format!("{c}*{}", self.label), move |p| c * inner(p));
        out.envelope = self.envelope.map(|m| c * m);
        if let Some(lg) = self.log_raw.clone() {
            let lc = c.ln();
            out.log_raw = Some(Arc::new(move |p| lc + lg(p)));
        }
        out
    }

    /// `f^r`; integrating `f^r` at index `alpha / r` yields the `r`-th power of the integral.
    pub fn pow(&self, r: f64) -> Integrand {
        assert!(r > 0.0, "power must be positive");
        if let Some(steps) = &self.steps {
            let boxes = steps.iter().map(|b| StepBox { rect: b.rect.clone(), value: b.value.powf(r) }).collect();
            return Integrand::step(self.k, boxes)
                .with_symmetric(self.symmetric)
                .with_label(&format!("pow({},{r})", self.label));
        }
        let inner = self.raw.clone();
        let mut out = self.derived(&format!("pow({},{r})", self.label), move |p| inner(p).powf(r));
        out.envelope = self.envelope.map(|m| m.powf(r));
        if let Some(lg) = self.log_raw.clone() {
            out.log_raw = Some(Arc::new(move |p| r * lg(p)));
        }
        out
    }

    /// Pointwise `max_i c_i f_i` over integrands of one order.
    pub fn max_of(terms: &[(f64, Integrand)]) -> Integrand {
        assert!(!terms.is_empty(), "max of an empty family");
        let k = terms[0].1.k;
        assert!(terms.iter().all(|(c, f)| f.k == k && *c >= 0.0));
        let symmetric = terms.iter().all(|(_, f)| f.symmetric);
        let label =
            format!("max({})", terms.iter().map(|(c, f)| format!("{c}*{}", f.label)).collect::<Vec<_>>().join(","));
        if terms.iter().all(|(_, f)| f.steps.is_some()) {
            let mut boxes = Vec::new();
            for (c, f) in terms {
                for b in f.steps.as_ref().unwrap() {
                    boxes.push(StepBox { rect: b.rect.clone(), value: c * b.value });
                }
            }
            return Integrand::step(k, boxes).with_symmetric(symmetric).with_label(&label);
        }
        let parts: Vec<(f64, EvalFn)> = terms.iter().map(|(c, f)| (*c, f.raw.clone())).collect();
        let mut out = Integrand::new(k, &label, move |p| parts.iter().map(|(c, g)| c * g(p)).fold(0.0, f64::max));
        out.symmetric = symmetric;
        out.envelope = terms
            .iter()
            .map(|(c, f)| f.envelope.map(|m| c * m))
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.into_iter().fold(0.0, f64::max));
        out.breakpoints = merged_breakpoints(terms.iter().map(|(_, f)| f));
        out
    }

    /// Pointwise sum `f + g`.
    pub fn sum(&self, other: &Integrand) -> Integrand {
        assert_eq!(self.k, other.k);
        let (a, b) = (self.raw.clone(), other.raw.clone());
        let mut out = Integrand::new(self.k, &format!("({}+{})", self.label, other.label), move |p| a(p) + b(p));
        out.symmetric = self.symmetric && other.symmetric;
        out.envelope = self.envelope.zip(other.envelope).map(|(x, y)| x + y);
        out.breakpoints = merged_breakpoints([self, other]);
        out
    }

    /// Pointwise `min(f, g)`.
    pub fn min_with(&self, other: &Integrand) -> Integrand {
        self.combine(other, "min", f64::min)
    }

    /// Pointwise `f g`.
    pub fn product_with(&self, other: &Integrand) -> Integrand {
        self.combine(other, "prod", |a, b| a * b)
    }

    /// Pointwise `op(f, g)` for an `op` that is monotone in each argument and vanishes with either.
    fn combine(&self, other: &Integrand, name: &str, op: fn(f64, f64) -> f64) -> Integrand {
        assert_eq!(self.k, other.k);
        let label = format!("{name}({},{})", self.label, other.label);
        let symmetric = self.symmetric && other.symmetric;
        if let (Some(fs), Some(gs)) = (&self.steps, &other.steps) {
            let mut boxes = Vec::new();
            for a in fs {
                for b in gs {
                    let parts: Option<Vec<CoordSet>> =
                        a.rect.0.iter().zip(&b.rect.0).map(|(x, y)| intersect_coord(x, y)).collect();
                    if let Some(parts) = parts {
                        boxes.push(StepBox { rect: Rectangle(parts), value: op(a.value, b.value) });
                    }
                }
            }
            return Integrand::step(self.k, boxes).with_symmetric(symmetric).with_label(&label);
        }
        let (a, b) = (self.raw.clone(), other.raw.clone());
        let mut out = Integrand::new(self.k, &label, move |p| {
            let x = a(p);
            if x == 0.0 {
                0.0
            } else {
                op(x, b(p))
            }
        });
        out.symmetric = symmetric;
        out.envelope = self.envelope.zip(other.envelope).map(|(x, y)| op(x, y));
        out.breakpoints = merged_breakpoints([self, other]);
        out
    }

    /// `(f ⊗ g)(x, y) = f(x) g(y)`, of order `p + q`.
    pub fn tensor(&self, other: &Integrand) -> Integrand {
        let (p, q) = (self.k, other.k);
        let label = format!("tensor({},{})", self.label, other.label);
        if let (Some(fs), Some(gs)) = (&self.steps, &other.steps) {
            let mut boxes = Vec::with_capacity(fs.len() * gs.len());
            for a in fs {
                for b in gs {
                    let mut rect = a.rect.0.clone();
                    rect.extend(b.rect.0.iter().cloned());
                    boxes.push(StepBox { rect: Rectangle(rect), value: a.value * b.value });
                }
            }
            return Integrand::step(p + q, boxes).with_label(&label);
        }
        let (a, b) = (self.raw.clone(), other.raw.clone());
        let mut out = Integrand::new(p + q, &label, move |pts| {
            let x = a(&pts[..p]);
            if x == 0.0 {
                0.0
            } else {
                x * b(&pts[p..])
            }
        });
        out.envelope = self.envelope.zip(other.envelope).map(|(x, y)| x * y);
        out.breakpoints = merged_breakpoints([self, other]);
        if let (Some(la), Some(lb)) = (self.log_raw.clone(), other.log_raw.clone()) {
            out.log_raw = Some(Arc::new(move |pts| la(&pts[..p]) + lb(&pts[p..])));
        }
        out
    }

    /// `phi_1 ⊗ ... ⊗ phi_k` from univariate factors.
    pub fn separable(factors: &[Integrand]) -> Integrand {
        assert!(!factors.is_empty());
        assert!(factors.iter().all(|f| f.k == 1), "separable factors must be univariate");
        let mut out = factors[0].clone();
        for f in &factors[1..] {
            out = out.tensor(f);
        }
        out.factors = Some(Arc::new(factors.to_vec()));
        out
    }

    /// `f~(u) = max over permutations pi of f(u_pi)`.
    pub fn max_symmetrize(&self) -> Integrand {
        if self.symmetric {
            return self.clone();
        }
        let k = self.k;
        let perms = permutations(k);
        let label = format!("sym({})", self.label);
        if let Some(steps) = &self.steps {
            let mut boxes = Vec::with_capacity(steps.len() * perms.len());
            for b in steps {
                for pi in &perms {
                    let rect = Rectangle(pi.iter().map(|&i| b.rect.0[i].clone()).collect());
                    let sb = StepBox { rect, value: b.value };
                    if !boxes.contains(&sb) {
                        boxes.push(sb);
                    }
                }
            }
            return Integrand::step(k, boxes).with_symmetric(true).with_label(&label);
        }
        let inner = self.raw.clone();
        let mut out = Integrand::new(k, &label, move |pts| {
            let mut best = 0.0f64;
            let mut buf: Vec<&Point> = Vec::with_capacity(k);
            for pi in &perms {
                buf.clear();
                buf.extend(pi.iter().map(|&i| pts[i]));
                best = best.max(inner(&buf));
            }
            best
        });
        out.symmetric = true;
        out.envelope = self.envelope;
        out.breakpoints = self.breakpoints.clone();
        out
    }

    /// `f * 1_B`.
    pub fn restrict_to(&self, set: &OffDiagonalSet) -> Integrand {
        let label = format!("{}|set", self.label);
        if let Some(steps) = &self.steps {
            let mut boxes = Vec::new();
            for b in steps {
                for r in &set.rects {
                    let parts: Option<Vec<CoordSet>> =
                        b.rect.0.iter().zip(&r.0).map(|(x, y)| intersect_coord(x, y)).collect();
                    if let Some(parts) = parts {
                        boxes.push(StepBox { rect: Rectangle(parts), value: b.value });
                    }
                }
            }
            return Integrand::step(self.k, boxes).with_label(&label);
        }
        let inner = self.raw.clone();
        let owned = set.clone();
        let mut out = Integrand::new(self.k, &label, move |p| if owned.contains(p) { inner(p) } else { 0.0 });
        out.envelope = self.envelope;
        let mut bp = self.breakpoints.clone();
        bp.extend(box_breakpoints(
            &set.rects.iter().map(|r| StepBox { rect: r.clone(), value: 1.0 }).collect::<Vec<_>>(),
        ));
        out.breakpoints = bp;
        out.breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.breakpoints.dedup();
        out
    }

    fn derived<F>(&self, label: &str, f: F) -> Integrand
    where
        F: Fn(&[&Point]) -> f64 + Send + Sync + 'static,
    {
        let mut out = Integrand::new(self.k, label, f);
        out.symmetric = self.symmetric;
        out.breakpoints = self.breakpoints.clone();
        out.projections = self.projections.clone();
        out
    }

    /// Fraction of random tuples with a repeated point where `f` is nonzero. Always 0 by construction.
    pub fn probe_diagonal(&self, space: &MeasureSpace, rng: &mut dyn RngCore, trials: usize) -> usize {
        let mut bad = 0;
        for _ in 0..trials {
            let mut pts: Vec<Point> = (0..self.k).map(|_| space.sample_point(rng)).collect();
            if self.k >= 2 {
                let i = (rng.next_u32() as usize) % self.k;
                let j = (i + 1 + (rng.next_u32() as usize) % (self.k - 1)) % self.k;
                pts[j] = pts[i].clone();
            }
            let refs: Vec<&Point> = pts.iter().collect();
            if self.k >= 2 && self.eval(&refs) != 0.0 {
                bad += 1;
            }
        }
        bad
    }

    /// Number of random tuples on which a permutation changes the value.
    pub fn probe_symmetry(&self, space: &MeasureSpace, rng: &mut dyn RngCore, trials: usize) -> usize {
        let perms = permutations(self.k);
        let mut bad = 0;
        for _ in 0..trials {
            let pts: Vec<Point> = (0..self.k).map(|_| space.sample_point(rng)).collect();
            let refs: Vec<&Point> = pts.iter().collect();
            let base = self.eval(&refs);
            for pi in &perms {
                let permuted: Vec<&Point> = pi.iter().map(|&i| refs[i]).collect();
                if self.eval(&permuted) != base {
                    bad += 1;
                    break;
                }
            }
        }
        bad
    }
}

fn merged_breakpoints<'a, I: IntoIterator<Item = &'a Integrand>>(fs: I) -> Vec<f64> {
    let mut v: Vec<f64> = fs.into_iter().flat_map(|f| f.breakpoints.iter().copied()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// `[a, b)` as a coordinate set.
pub fn interval(a: f64, b: f64) -> CoordSet {
    CoordSet::Interval(a, b)
}
