//! Tail constants of extremal integrals and their products, independence
//! criteria, empirical tail fits, and small-ball asymptotics for products of
//! exponentials.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{derive_seed, mean_se, par_map_seeds};
use crate::integrability::{moment_l_alpha, IntegrabilityError};
use crate::integrals::{sampling_space, IntegralError};
use crate::integrand::{intersect_coord, Integrand, StepBox};
use crate::lepage::{lepage_sup, LePageStream, TruncationPolicy};
use crate::measure::{CoordSet, MeasureSpace, Point, Rectangle, SpaceError};

/// Tail fits need at least this many samples.
pub const MIN_TAIL_SAMPLES: usize = 100_000;
/// Trace points with fewer exceedances are dropped.
pub const MIN_EXCEEDANCES: usize = 10;
/// Default relative tolerance of a final-window comparison.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 0.25;
/// Below this an interval-space overlap integral counts as zero.
pub const OVERLAP_ZERO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TailError {
    #[error("integrands have different orders ({0} vs {1})")]
    OrderMismatch(usize, usize),
    #[error("empty integrand family")]
    Empty,
    #[error("thresholds must be positive and match the family size")]
    BadThresholds,
    #[error("symmetrized integrand is not alpha-integrable ({0})")]
    NotIntegrable(String),
    #[error("need at least {MIN_TAIL_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("inner moment did not converge for r = {r}: {unconverged} of {draws} draws hit the truncation cap")]
    InnerMoment { r: usize, unconverged: usize, draws: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Integrability(#[from] IntegrabilityError),
    #[error(transparent)]
    Integral(#[from] IntegralError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// `k alpha^{k-1} / (k!)^2`.
pub fn mrv_prefactor(k: usize, alpha: f64) -> f64 {
    let fact = factorial(k);
    k as f64 * alpha.powi(k as i32 - 1) / (fact * fact)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn symmetrized(f: &Integrand) -> Integrand {
    if f.is_symmetric() {
        f.clone()
    } else {
        f.max_symmetrize()
    }
}

fn shared_order(fs: &[Integrand]) -> Result<usize, TailError> {
    let k = fs.first().ok_or(TailError::Empty)?.k();
    if let Some(f) = fs.iter().find(|f| f.k() != k) {
        return Err(TailError::OrderMismatch(k, f.k()));
    }
    Ok(k)
}

/// Limit of `x^alpha (ln x)^{-(k-1)} P(I(f_i) > x x_i for some i)` as `x` grows:
/// `k alpha^{k-1} (k!)^{-2} int max_i (f~_i / x_i)^alpha dmu^k`.
pub fn mrv_constant(fs: &[Integrand], xs: &[f64], alpha: f64, space: &MeasureSpace) -> Result<f64, TailError> {
    let k = shared_order(fs)?;
    if xs.len() != fs.len() || xs.iter().any(|&x| !(x > 0.0)) {
        return Err(TailError::BadThresholds);
    }
    let terms: Vec<(f64, Integrand)> = fs.iter().zip(xs).map(|(f, &x)| (1.0 / x, symmetrized(f))).collect();
    let envelope = Integrand::max_of(&terms);
    let v = moment_l_alpha(&envelope, space, alpha)?;
    if !v.is_finite() {
        return Err(TailError::NotIntegrable(format!("{:?}", v.status)));
    }
    Ok(mrv_prefactor(k, alpha) * v.value)
}

/// `sum_i x_i^{-alpha} int f~_i^alpha`, which equals [`mrv_constant`] exactly when the
/// family is pairwise extremally independent.
pub fn additive_mrv_constant(fs: &[Integrand], xs: &[f64], alpha: f64, space: &MeasureSpace) -> Result<f64, TailError> {
    let k = shared_order(fs)?;
    if xs.len() != fs.len() {
        return Err(TailError::BadThresholds);
    }
    let mut total = 0.0;
    for (f, &x) in fs.iter().zip(xs) {
        total += mrv_constant(std::slice::from_ref(f), &[x], alpha, space)?;
    }
    debug_assert!(k >= 1);
    Ok(total)
}

/// One threshold of a tail fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub threshold: f64,
    /// Nominal exceedance level of the quantile the threshold came from.
    pub level: f64,
    pub exceedances: usize,
    /// `t^alpha (ln t)^{-power} P_n(X > t)`.
    pub fitted: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub alpha: f64,
    pub log_power: f64,
    pub samples: usize,
    pub analytic_constant: Option<f64>,
    pub trace: Vec<TailPoint>,
    /// Exceedance-weighted estimate over the top decile of thresholds, with its s.e.
    pub final_window: Option<(f64, f64)>,
    pub relative_error: Option<f64>,
    pub tolerance: f64,
    pub matched: bool,
}

impl TailReport {
    /// Compares the final window against `constant` at relative tolerance `tol`.
    pub fn compare(mut self, constant: f64, tol: f64) -> Self {
        self.analytic_constant = Some(constant);
        self.tolerance = tol;
        self.relative_error = self.final_window.map(|(v, _)| (v - constant).abs() / constant.abs().max(1e-300));
        self.matched = self.relative_error.is_some_and(|e| e <= tol);
        self
    }

    /// `(threshold, fitted)` pairs for trend tests.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.trace.iter().map(|p| (p.threshold, p.fitted)).collect()
    }

    /// Writes the trace as CSV with columns `threshold,level,exceedances,fitted,se`.
    pub fn write_csv(&self, path: &Path) -> Result<(), TailError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| TailError::Csv(e.to_string()))?;
        for p in &self.trace {
            w.serialize(p).map_err(|e| TailError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| TailError::Csv(e.to_string()))
    }
}

/// Exceedance levels `10^{-1} .. 10^{-4}`, log-spaced.
pub fn tail_levels() -> Vec<f64> {
    (0..16).map(|j| 10f64.powf(-1.0 - 3.0 * j as f64 / 15.0)).collect()
}

/// Empirical `t^alpha (ln t)^{-power} P(X > t)` at quantile thresholds between the 90th and
/// 99.99th percentile.
pub fn tail_fit(samples: &[f64], alpha: f64, power: f64) -> Result<TailReport, TailError> {
    let n = samples.len();
    if n < MIN_TAIL_SAMPLES {
        return Err(TailError::TooFewSamples(n));
    }
    let mut sorted: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let mut trace = Vec::new();
    for level in tail_levels() {
        let idx = m - ((level * m as f64).ceil() as usize).clamp(1, m);
        let t = sorted[idx];
        if !(t > 0.0) || (power > 0.0 && t <= 1.0) {
            continue;
        }
        let count = m - sorted.partition_point(|&x| x <= t);
        if count < MIN_EXCEEDANCES {
            continue;
        }
        let scale = t.powf(alpha) * if power != 0.0 { t.ln().powf(-power) } else { 1.0 };
        let fitted = scale * count as f64 / n as f64;
        trace.push(TailPoint { threshold: t, level, exceedances: count, fitted, se: fitted / (count as f64).sqrt() });
    }
    let final_window = final_window(&trace);
    Ok(TailReport {
        alpha,
        log_power: power,
        samples: n,
        analytic_constant: None,
        trace,
        final_window,
        relative_error: None,
        tolerance: DEFAULT_TAIL_TOLERANCE,
        matched: false,
    })
}

fn final_window(trace: &[TailPoint]) -> Option<(f64, f64)> {
    if trace.is_empty() {
        return None;
    }
    let w = trace.len().div_ceil(10).max(2).min(trace.len());
    let window = &trace[trace.len() - w..];
    let total: usize = window.iter().map(|p| p.exceedances).sum();
    let v = window.iter().map(|p| p.fitted * p.exceedances as f64).sum::<f64>() / total as f64;
    // neighbouring points share most exceedances, so the smallest count sets the noise
    let floor = window.iter().map(|p| p.exceedances).min().unwrap();
    Some((v, v / (floor as f64).sqrt()))
}

/// Budget of the nested Monte Carlo behind `C_r`, `r >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductTailConfig {
    pub outer: usize,
    pub inner: usize,
    pub seed: u64,
    pub workers: usize,
    pub policy: TruncationPolicy,
    pub depth: usize,
    /// Largest tolerated fraction of inner draws whose truncation did not converge.
    pub max_unconverged: f64,
}

impl Default for ProductTailConfig {
    fn default() -> Self {
        ProductTailConfig {
            outer: 1000,
            inner: 1000,
            seed: 0,
            workers: crate::harness::default_workers(),
            policy: TruncationPolicy::default(),
            depth: 0,
            max_unconverged: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductTailConstants {
    pub p: usize,
    pub q: usize,
    pub alpha: f64,
    /// `C_0 .. C_{min(p, q)}`.
    pub c_r: Vec<f64>,
    /// Monte Carlo standard errors; zero for exact entries.
    pub c_r_se: Vec<f64>,
    pub k_r_alpha: Vec<f64>,
    pub dominant_r: usize,
}

impl ProductTailConstants {
    /// Tail exponent of the product: `alpha` when `r = 0`, else `alpha / 2`.
    pub fn exponent(&self) -> f64 {
        if self.dominant_r == 0 {
            self.alpha
        } else {
            self.alpha / 2.0
        }
    }

    /// Power of `ln x` in the product tail.
    pub fn log_power(&self) -> f64 {
        if self.dominant_r == 0 {
            (self.p + self.q - 1) as f64
        } else {
            (self.dominant_r - 1) as f64
        }
    }

    /// `k_{r,alpha} C_r` at the dominant `r`.
    pub fn leading_constant(&self) -> f64 {
        self.k_r_alpha[self.dominant_r] * self.c_r[self.dominant_r]
    }
}

/// `k_{r,alpha}`: `alpha^{p+q-1} / ((p+q-1)! (p+q)!)` at `r = 0`, else `(alpha/2)^{r-1} / (r! (r-1)!)`.
pub fn product_prefactor(r: usize, p: usize, q: usize, alpha: f64) -> f64 {
    if r == 0 {
        let n = p + q;
        alpha.powi(n as i32 - 1) / (factorial(n - 1) * factorial(n))
    } else {
        (alpha / 2.0).powi(r as i32 - 1) / (factorial(r) * factorial(r - 1))
    }
}

/// `h_r(s, u, v) = f(s, u) g(s, v)` with `s` of length `r`, as an integrand of order `p + q - r`.
pub fn overlap_integrand(f: &Integrand, g: &Integrand, r: usize) -> Integrand {
    let (p, q) = (f.k(), g.k());
    assert!(r <= p.min(q));
    let order = p + q - r;
    let label = format!("h{r}({},{})", f.label(), g.label());
    if let (Some(fs), Some(gs)) = (f.steps(), g.steps()) {
        let mut boxes = Vec::new();
        for a in fs {
            for b in gs {
                let shared: Option<Vec<CoordSet>> =
                    (0..r).map(|i| intersect_coord(&a.rect.0[i], &b.rect.0[i])).collect();
                if let Some(mut rect) = shared {
                    rect.extend(a.rect.0[r..].iter().cloned());
                    rect.extend(b.rect.0[r..].iter().cloned());
                    boxes.push(StepBox { rect: Rectangle(rect), value: a.value * b.value });
                }
            }
        }
        return Integrand::step(order, boxes).with_label(&label);
    }
    let (f, g) = (f.clone(), g.clone());
    Integrand::new(order, &label, move |pts| {
        let x = f.eval(&pts[..p]);
        if x == 0.0 {
            return 0.0;
        }
        let mut tail: Vec<&Point> = pts[..r].to_vec();
        tail.extend_from_slice(&pts[p..]);
        x * g.eval(&tail)
    })
}

/// The section `u -> h_r(s, u)` of order `p + q - 2r`.
fn section(f: &Integrand, g: &Integrand, r: usize, s: &[Point]) -> Integrand {
    let (p, q) = (f.k(), g.k());
    let order = p + q - 2 * r;
    let label = format!("h{r}(s,.)");
    let sref: Vec<&Point> = s.iter().collect();
    if let (Some(fs), Some(gs)) = (f.steps(), g.steps()) {
        let fa: Vec<&StepBox> =
            fs.iter().filter(|b| b.rect.0[..r].iter().zip(&sref).all(|(c, x)| c.contains(x))).collect();
        let gb: Vec<&StepBox> =
            gs.iter().filter(|b| b.rect.0[..r].iter().zip(&sref).all(|(c, x)| c.contains(x))).collect();
        let mut boxes = Vec::with_capacity(fa.len() * gb.len());
        for a in &fa {
            for b in &gb {
                let mut rect = a.rect.0[r..].to_vec();
                rect.extend(b.rect.0[r..].iter().cloned());
                boxes.push(StepBox { rect: Rectangle(rect), value: a.value * b.value });
            }
        }
        return Integrand::step(order, boxes).with_label(&label);
    }
    let envelope = f.envelope().zip(g.envelope()).map(|(a, b)| a * b);
    let cuts = [f.breakpoints(), g.breakpoints()].concat();
    let (f, g, s) = (f.clone(), g.clone(), s.to_vec());
    let mut out = Integrand::new(order, &label, move |pts| {
        let mut fa: Vec<&Point> = s.iter().collect();
        fa.extend_from_slice(&pts[..p - r]);
        let x = f.eval(&fa);
        if x == 0.0 {
            return 0.0;
        }
        let mut gb: Vec<&Point> = s.iter().collect();
        gb.extend_from_slice(&pts[p - r..]);
        x * g.eval(&gb)
    })
    .with_breakpoints(cuts);
    if let Some(e) = envelope {
        out = out.with_envelope(e);
    }
    out
}

/// Whether `h` is nonzero on a set of positive measure.
fn charges(h: &Integrand, space: &MeasureSpace, alpha: f64) -> Result<bool, TailError> {
    if let Some(steps) = h.steps() {
        if steps.is_empty() {
            return Ok(false);
        }
    }
    let v = moment_l_alpha(h, space, alpha)?;
    Ok(v.value.is_nan() || v.value > 0.0)
}

/// `C_0 .. C_{min(p,q)}` with the matching prefactors and the dominant index.
pub fn product_tail_constants(
    f: &Integrand,
    g: &Integrand,
    alpha: f64,
    space: &MeasureSpace,
    cfg: &ProductTailConfig,
) -> Result<ProductTailConstants, TailError> {
    let f = symmetrized(f);
    let g = symmetrized(g);
    let (p, q) = (f.k(), g.k());
    let top = p.min(q);
    // keep the shorter integrand first so sections split as (shared, f-rest, g-rest)
    let (f, g) = if p <= q { (f, g) } else { (g, f) };
    let mut c_r = Vec::with_capacity(top + 1);
    let mut c_r_se = Vec::with_capacity(top + 1);

    let h0 = f.tensor(&g).max_symmetrize();
    let c0 = moment_l_alpha(&h0, space, alpha)?;
    if !c0.is_finite() {
        return Err(TailError::NotIntegrable(format!("C_0: {:?}", c0.status)));
    }
    c_r.push(c0.value);
    c_r_se.push(0.0);

    for r in 1..=top {
        if !charges(&overlap_integrand(&f, &g, r), space, alpha)? {
            c_r.push(0.0);
            c_r_se.push(0.0);
            continue;
        }
        if 2 * r == p + q {
            let v = moment_l_alpha(&f.product_with(&g), space, alpha / 2.0)?;
            if !v.is_finite() {
                return Err(TailError::NotIntegrable(format!("C_{r}: {:?}", v.status)));
            }
            c_r.push(v.value);
            c_r_se.push(0.0);
        } else {
            let (v, se) = nested_moment(&f, &g, r, alpha, space, cfg)?;
            c_r.push(v);
            c_r_se.push(se);
        }
    }
    let dominant_r = (0..=top).rev().find(|&r| c_r[r] != 0.0).unwrap_or(0);
    let k_r_alpha = (0..=top).map(|r| product_prefactor(r, p, q, alpha)).collect();
    Ok(ProductTailConstants { p, q, alpha, c_r, c_r_se, k_r_alpha, dominant_r })
}

/// `int_{E^r} E I(h_r(s, .))^{alpha/2} mu^r(ds)`: outer draws from the reference measure
/// weighted by `psi`, inner LePage draws on independent streams.
fn nested_moment(
    f: &Integrand,
    g: &Integrand,
    r: usize,
    alpha: f64,
    space: &MeasureSpace,
    cfg: &ProductTailConfig,
) -> Result<(f64, f64), TailError> {
    let space = sampling_space(space, cfg.depth)?;
    let rows = par_map_seeds(cfg.outer, cfg.seed, cfg.workers, |seed, _| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<Point> = (0..r).map(|_| space.sample_point(&mut rng)).collect();
        let weight: f64 = s.iter().map(|x| space.psi(x)).product();
        let h = section(f, g, r, &s);
        if h.steps().is_some_and(|b| b.is_empty()) {
            return (0.0, 0usize);
        }
        let mut acc = 0.0;
        let mut bad = 0;
        for j in 0..cfg.inner {
            let mut stream = LePageStream::new(derive_seed(seed, j as u64), &space);
            let (v, rep) = lepage_sup(&h, alpha, &mut stream, cfg.policy);
            if !rep.converged {
                bad += 1;
            }
            acc += v.powf(alpha / 2.0);
        }
        (weight * acc / cfg.inner as f64, bad)
    });
    let unconverged: usize = rows.iter().map(|r| r.1).sum();
    let draws = cfg.outer * cfg.inner;
    if unconverged as f64 > cfg.max_unconverged * draws as f64 {
        return Err(TailError::InnerMoment { r, unconverged, draws });
    }
    let vals: Vec<f64> = rows.into_iter().map(|r| r.0).collect();
    Ok(mean_se(&vals))
}

/// A coordinate of a witness point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessCoord {
    Atom(usize),
    Real(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapWitness {
    pub pair: (usize, usize),
    pub point: Vec<WitnessCoord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceCheck {
    pub independent: bool,
    /// `int f~_i^alpha ^ f~_j^alpha` for every pair `i < j`.
    pub overlaps: Vec<((usize, usize), f64)>,
    pub witness: Option<OverlapWitness>,
}

/// Pairwise extremal independence: every `int f~_i^alpha ^ f~_j^alpha` vanishes.
pub fn extremal_independence_check(
    fs: &[Integrand],
    space: &MeasureSpace,
    alpha: f64,
) -> Result<IndependenceCheck, TailError> {
    shared_order(fs)?;
    let sym: Vec<Integrand> = fs.iter().map(symmetrized).collect();
    let zero = if matches!(space, MeasureSpace::Discrete(_)) { 0.0 } else { OVERLAP_ZERO };
    let mut overlaps = Vec::new();
    let mut witness = None;
    for i in 0..sym.len() {
        for j in i + 1..sym.len() {
            let both = sym[i].min_with(&sym[j]);
            let v = if both.steps().is_some_and(|b| b.is_empty()) {
                0.0
            } else {
                moment_l_alpha(&both, space, alpha)?.value
            };
            let charged = v.is_nan() || v > zero;
            if charged && witness.is_none() {
                witness = find_witness(&both, space).map(|point| OverlapWitness { pair: (i, j), point });
            }
            overlaps.push(((i, j), v));
        }
    }
    let independent = overlaps.iter().all(|(_, v)| !(v.is_nan() || *v > zero));
    Ok(IndependenceCheck { independent, overlaps, witness })
}

fn find_witness(h: &Integrand, space: &MeasureSpace) -> Option<Vec<WitnessCoord>> {
    if let Some(steps) = h.steps() {
        let b = steps.first()?;
        return b
            .rect
            .0
            .iter()
            .map(|c| match c {
                CoordSet::Atoms(ids) => ids.first().map(|&a| WitnessCoord::Atom(a)),
                CoordSet::Interval(lo, hi) if hi.is_finite() => Some(WitnessCoord::Real(0.5 * (lo + hi))),
                CoordSet::Interval(lo, _) => Some(WitnessCoord::Real(lo + 1.0)),
                CoordSet::Hits(_) => None,
            })
            .collect();
    }
    let space = sampling_space(space, 0).ok()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..100_000 {
        let pts: Vec<Point> = (0..h.k()).map(|_| space.sample_point(&mut rng)).collect();
        let refs: Vec<&Point> = pts.iter().collect();
        if h.eval(&refs) > 0.0 {
            return pts
                .iter()
                .map(|p| match p {
                    Point::Atom(a) => Some(WitnessCoord::Atom(*a)),
                    Point::Real(x) => Some(WitnessCoord::Real(*x)),
                    Point::Path(_) => None,
                })
                .collect();
        }
    }
    None
}

/// Coordinate projections of the support, enumerated on discrete spaces when not recorded.
fn projections(f: &Integrand, space: &MeasureSpace) -> Result<Vec<CoordSet>, TailError> {
    if let Some(p) = f.coordinate_projections() {
        return Ok(p);
    }
    match space {
        MeasureSpace::Discrete(d) => {
            let k = f.k();
            let n = d.len();
            let mut hit = vec![false; n];
            let mut ids = vec![0usize; k];
            let total = n
                .checked_pow(k as u32)
                .filter(|&t| t <= 1 << 24)
                .ok_or_else(|| TailError::Unsupported(format!("{n}^{k} tuples are too many to enumerate")))?;
            for code in 0..total {
                let mut c = code;
                for slot in ids.iter_mut() {
                    *slot = c % n;
                    c /= n;
                }
                if f.eval_atoms(&ids) > 0.0 {
                    for &a in &ids {
                        hit[a] = true;
                    }
                }
            }
            Ok(vec![CoordSet::Atoms((0..n).filter(|&a| hit[a]).collect())])
        }
        _ => Err(TailError::Unsupported(format!("support projections of {} are not computable here", f.label()))),
    }
}

/// Full independence of `I_p(f)` and `I_q(g)`: the coordinate projections of the supports are disjoint.
pub fn full_independence_check(f: &Integrand, g: &Integrand, space: &MeasureSpace) -> Result<bool, TailError> {
    let pf = projections(f, space)?;
    let pg = projections(g, space)?;
    Ok(!pf.iter().any(|a| pg.iter().any(|b| a.overlaps(b))))
}

/// Small-ball asymptote of a product of `n` i.i.d. variables with `P(X <= x) ~ c x^alpha`:
/// `alpha^{n-1} c^n / (n-1)! * x^alpha (ln 1/x)^{n-1}`.
pub fn small_ball_product(n: usize, c: f64, alpha: f64, x: f64) -> f64 {
    assert!(n >= 1 && x > 0.0 && x < 1.0);
    alpha.powi(n as i32 - 1) * c.powi(n as i32) / factorial(n - 1) * x.powf(alpha) * (1.0 / x).ln().powi(n as i32 - 1)
}

/// `P(E_1 ... E_n <= x)` for unit exponentials, by Monte Carlo; returns `(estimate, se)`.
pub fn empirical_small_ball(n: usize, x: f64, draws: usize, seed: u64, workers: usize) -> (f64, f64) {
    const CHUNK: usize = 1 << 16;
    let chunks = draws.div_ceil(CHUNK);
    let counts = par_map_seeds(chunks, seed, workers, |s, i| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let len = CHUNK.min(draws - i * CHUNK);
        (0..len)
            .filter(|_| {
                let prod: f64 = (0..n).map(|_| -> f64 { Exp1.sample(&mut rng) }).product();
                prod <= x
            })
            .count()
    });
    let hits: usize = counts.iter().sum();
    let p = hits as f64 / draws as f64;
    (p, (p * (1.0 - p) / draws as f64).sqrt())
}

/// `P(X > t, Y > t) / P(X > t)` at quantile thresholds of `X`, for extremal-dependence traces.
pub fn joint_exceedance_trace(pairs: &[(f64, f64)], levels: &[f64]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = xs.len();
    let mut out = Vec::new();
    for &level in levels {
        let idx = m - ((level * m as f64).ceil() as usize).clamp(1, m);
        let (tx, ty) = (xs[idx], ys[idx]);
        let single = pairs.iter().filter(|p| p.0 > tx).count();
        if single == 0 {
            continue;
        }
        let joint = pairs.iter().filter(|p| p.0 > tx && p.1 > ty).count();
        out.push((1.0 / level, joint as f64 / single as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::interval;
    use crate::measure::{make_discrete_space, make_unit_interval};
    use proptest::prelude::*;

    fn rect(sides: &[(f64, f64)]) -> Rectangle {
        Rectangle(sides.iter().map(|&(a, b)| interval(a, b)).collect())
    }

    fn frechet(n: usize, scale: f64, alpha: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                scale * e.powf(-1.0 / alpha)
            })
            .collect()
    }

    #[test]
    fn prefactors() {
        assert_eq!(mrv_prefactor(1, 0.7), 1.0);
        assert!((mrv_prefactor(2, 1.0) - 0.5).abs() < 1e-15);
        assert!((mrv_prefactor(3, 2.0) - 3.0 * 4.0 / 36.0).abs() < 1e-15);
        assert!((product_prefactor(0, 1, 1, 1.0) - 0.5).abs() < 1e-15);
        assert!((product_prefactor(0, 2, 2, 0.5) - 0.125 / (6.0 * 24.0)).abs() < 1e-15);
        assert_eq!(product_prefactor(1, 2, 2, 1.3), 1.0);
        assert!((product_prefactor(2, 2, 2, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_indicator_constant_is_mass() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5)]));
        let c = mrv_constant(&[f], &[1.0], 1.3, &space).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_rectangle_constant() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5), (0.5, 1.0)]));
        let c = mrv_constant(&[f], &[1.0], 1.0, &space).unwrap();
        assert!((c - 0.25).abs() < 1e-12, "{c}");
    }

    #[test]
    fn disjoint_family_splits() {
        let space = make_unit_interval(None).unwrap();
        let f1 = Integrand::indicator(rect(&[(0.0, 0.25), (0.25, 0.5)]));
        let f2 = Integrand::indicator(rect(&[(0.5, 0.75), (0.75, 1.0)])).scale(2.0);
        let fs = [f1, f2];
        let xs = [1.0, 3.0];
        let joint = mrv_constant(&fs, &xs, 1.5, &space).unwrap();
        let split = additive_mrv_constant(&fs, &xs, 1.5, &space).unwrap();
        assert!((joint - split).abs() < 1e-12);
        assert!(extremal_independence_check(&fs, &space, 1.5).unwrap().independent);
    }

    #[test]
    fn threshold_errors() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5)]));
        assert_eq!(mrv_constant(std::slice::from_ref(&f), &[0.0], 1.0, &space), Err(TailError::BadThresholds));
        assert_eq!(mrv_constant(&[], &[], 1.0, &space), Err(TailError::Empty));
        let g = Integrand::indicator(rect(&[(0.0, 0.5), (0.5, 1.0)]));
        assert_eq!(mrv_constant(&[f, g], &[1.0, 1.0], 1.0, &space), Err(TailError::OrderMismatch(1, 2)));
    }

    #[test]
    fn frechet_fit_recovers_scale() {
        let (s, alpha) = (2.0, 1.5);
        let xs = frechet(400_000, s, alpha, 11);
        let rep = tail_fit(&xs, alpha, 0.0).unwrap().compare(s.powf(alpha), 0.25);
        assert_eq!(rep.trace.len(), 16);
        let (v, se) = rep.final_window.unwrap();
        assert!((v - s.powf(alpha)).abs() < 3.0 * se, "{v} +- {se}");
        assert!(rep.matched);
        assert!(rep.trace.windows(2).all(|w| w[0].threshold < w[1].threshold));
    }

    #[test]
    fn zero_samples_fit_is_empty() {
        let rep = tail_fit(&vec![0.0; MIN_TAIL_SAMPLES], 1.0, 1.0).unwrap().compare(0.25, 0.25);
        assert!(rep.trace.is_empty());
        assert!(!rep.matched);
        assert_eq!(tail_fit(&[1.0; 10], 1.0, 0.0), Err(TailError::TooFewSamples(10)));
    }

    #[test]
    fn fit_csv_roundtrip() {
        let xs = frechet(MIN_TAIL_SAMPLES, 1.0, 1.0, 3);
        let rep = tail_fit(&xs, 1.0, 0.0).unwrap();
        let dir = std::env::temp_dir().join(format!("tail-fit-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.csv");
        rep.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("threshold,level,exceedances,fitted,se"));
        assert_eq!(text.lines().count(), rep.trace.len() + 1);
    }

    #[test]
    fn disjoint_projections_have_no_overlap_terms() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5)]));
        let g = Integrand::indicator(rect(&[(0.5, 1.0)]));
        let cfg = ProductTailConfig { outer: 10, inner: 10, workers: 1, ..Default::default() };
        let pc = product_tail_constants(&f, &g, 1.0, &space, &cfg).unwrap();
        assert_eq!(pc.dominant_r, 0);
        assert_eq!(pc.c_r[1], 0.0);
        // h~_0 = 1 on A x B and B x A
        assert!((pc.c_r[0] - 0.5).abs() < 1e-12);
        assert_eq!(pc.exponent(), 1.0);
        assert_eq!(pc.log_power(), 1.0);
        assert!(full_independence_check(&f, &g, &space).unwrap());
    }

    #[test]
    fn first_order_overlap_is_mass() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.3)]));
        let cfg = ProductTailConfig { outer: 10, inner: 10, workers: 1, ..Default::default() };
        let pc = product_tail_constants(&f, &f, 0.8, &space, &cfg).unwrap();
        assert_eq!(pc.dominant_r, 1);
        assert!((pc.c_r[1] - 0.3).abs() < 1e-12);
        assert_eq!(pc.exponent(), 0.4);
        assert_eq!(pc.log_power(), 0.0);
    }

    #[test]
    fn zero_factor_kills_every_term() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5), (0.5, 1.0)]));
        let g = Integrand::zero(2);
        let cfg = ProductTailConfig { outer: 10, inner: 10, workers: 1, ..Default::default() };
        let pc = product_tail_constants(&f, &g, 1.0, &space, &cfg).unwrap();
        assert!(pc.c_r.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn overlapping_squares_constants() {
        // f = g = 1 on A x B and B x A with A = [0, 1/2), B = [1/2, 1)
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5), (0.5, 1.0)])).max_symmetrize();
        let cfg = ProductTailConfig { outer: 200, inner: 50, workers: 1, seed: 5, ..Default::default() };
        let pc = product_tail_constants(&f, &f, 1.0, &space, &cfg).unwrap();
        assert_eq!(pc.dominant_r, 2);
        assert!((pc.c_r[2] - 0.5).abs() < 1e-12);
        assert!(pc.c_r[1] > 0.0 && pc.c_r_se[1] > 0.0);
        assert!((pc.k_r_alpha[2] - 0.25).abs() < 1e-15);
        // s in A leaves u, v in B: I_2 of 1_{B x B} restricted off the diagonal
        assert!(pc.c_r[0] > 0.0);
    }

    #[test]
    fn order_one_nested_moment_matches_frechet() {
        // p = 1, q = 2, r = 1: h_1(s, v) = f(s) g(s, v); with f = 1_A, g = 1_{A x B} sym,
        // C_1 = int_A E I_1(1_B)^{alpha/2} = mu(A) Gamma(1 - 1/2) mu(B)^{1/2}
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5)]));
        let g = Integrand::indicator(rect(&[(0.0, 0.5), (0.5, 1.0)])).max_symmetrize();
        let cfg = ProductTailConfig { outer: 400, inner: 100, workers: 1, seed: 9, ..Default::default() };
        let pc = product_tail_constants(&f, &g, 1.0, &space, &cfg).unwrap();
        let expect = 0.5 * std::f64::consts::PI.sqrt() * 0.5f64.sqrt();
        assert!((pc.c_r[1] - expect).abs() < 4.0 * pc.c_r_se[1] + 0.02, "{} vs {expect}", pc.c_r[1]);
        assert_eq!(pc.dominant_r, 1);
    }

    #[test]
    fn extremal_checks() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(rect(&[(0.0, 0.5), (0.5, 1.0)]));
        let same = extremal_independence_check(&[f.clone(), f.clone()], &space, 1.0).unwrap();
        assert!(!same.independent);
        let w = same.witness.unwrap();
        assert_eq!(w.pair, (0, 1));
        assert_eq!(w.point.len(), 2);
        let swapped = Integrand::indicator(rect(&[(0.5, 1.0), (0.0, 0.5)]));
        let sw = extremal_independence_check(&[f, swapped], &space, 1.0).unwrap();
        assert!(!sw.independent);
        assert!((sw.overlaps[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn witness_for_closure_integrands() {
        let space = make_unit_interval(None).unwrap();
        let f = Integrand::new(1, "x", |p| p[0].as_real().unwrap());
        let chk = extremal_independence_check(&[f.clone(), f], &space, 1.0).unwrap();
        assert!(!chk.independent);
        assert!(chk.witness.is_some());
    }

    #[test]
    fn full_checks() {
        let space = make_unit_interval(None).unwrap();
        let a = (0.0, 0.3);
        let b = (0.3, 0.6);
        let c = (0.6, 1.0);
        let fa = Integrand::indicator(rect(&[a, a]));
        let gb = Integrand::indicator(rect(&[b, b]));
        assert!(full_independence_check(&fa, &gb, &space).unwrap());
        let fab = Integrand::indicator(rect(&[a, b]));
        let gbc = Integrand::indicator(rect(&[b, c]));
        assert!(!full_independence_check(&fab, &gbc, &space).unwrap());
        let smooth = Integrand::new(1, "x", |p| p[0].as_real().unwrap());
        assert!(matches!(full_independence_check(&smooth, &smooth, &space), Err(TailError::Unsupported(_))));
    }

    #[test]
    fn discrete_projections_enumerated() {
        let space = make_discrete_space(&[("a", 1.0), ("b", 1.0), ("c", 1.0), ("d", 1.0)]).unwrap();
        let f = Integrand::new(2, "ab", |p| {
            let (x, y) = (p[0].as_atom().unwrap(), p[1].as_atom().unwrap());
            (x < 2 && y < 2 && x != y) as u8 as f64
        });
        let g = Integrand::new(2, "cd", |p| {
            let (x, y) = (p[0].as_atom().unwrap(), p[1].as_atom().unwrap());
            (x >= 2 && y >= 2 && x != y) as u8 as f64
        });
        assert!(full_independence_check(&f, &g, &space).unwrap());
        assert!(!full_independence_check(&f, &f, &space).unwrap());
    }

    #[test]
    fn small_ball_values() {
        assert!((small_ball_product(1, 2.0, 1.5, 0.1) - 2.0 * 0.1f64.powf(1.5)).abs() < 1e-15);
        let v = small_ball_product(2, 1.0, 1.0, 0.01);
        assert!((v - 0.01 * 100f64.ln()).abs() < 1e-15);
        assert!((v - 0.04605).abs() < 1e-5);
    }

    #[test]
    fn small_ball_single_exponential() {
        let (p, se) = empirical_small_ball(1, 0.05, 200_000, 1, 1);
        let exact = 1.0 - (-0.05f64).exp();
        assert!((p - exact).abs() < 4.0 * se);
    }

    #[test]
    fn joint_trace_of_identical_pairs() {
        let xs = frechet(10_000, 1.0, 1.0, 2);
        let pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x)).collect();
        let tr = joint_exceedance_trace(&pairs, &[0.1, 0.01]);
        assert!(tr.iter().all(|&(_, r)| r == 1.0));
    }

    fn discrete_family() -> impl Strategy<Value = (Vec<Vec<u8>>, u8)> {
        (prop::collection::vec(prop::collection::vec(0u8..3, 9), 2..4), 1u8..4)
    }

    fn grid_integrand(values: &[u8]) -> Integrand {
        let vals: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        Integrand::new(2, "grid", move |p| {
            let (x, y) = (p[0].as_atom().unwrap(), p[1].as_atom().unwrap());
            if x == y {
                0.0
            } else {
                vals[3 * x + y]
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn homogeneity(c in 0.2f64..5.0, alpha in 0.3f64..2.5, x in 0.5f64..3.0) {
            let space = make_unit_interval(None).unwrap();
            let f = Integrand::indicator(rect(&[(0.0, 0.4), (0.4, 0.9)]));
            let g = Integrand::indicator(rect(&[(0.1, 0.3), (0.6, 1.0)])).scale(2.0);
            let fs = [f, g];
            let base = mrv_constant(&fs, &[x, 1.0], alpha, &space).unwrap();
            let scaled = mrv_constant(&fs, &[c * x, c], alpha, &space).unwrap();
            prop_assert!((scaled - c.powf(-alpha) * base).abs() <= 1e-12 * base);
        }

        #[test]
        fn additive_split_iff_disjoint((fam, scale) in discrete_family(), alpha in 0.5f64..2.0) {
            let space = make_discrete_space(&[("a", 1.0), ("b", 0.5), ("c", 2.0)]).unwrap();
            let fs: Vec<Integrand> = fam.iter().map(|v| grid_integrand(v)).collect();
            let xs: Vec<f64> = (0..fs.len()).map(|i| 1.0 + (i as f64) * scale as f64).collect();
            let joint = mrv_constant(&fs, &xs, alpha, &space).unwrap();
            let split = additive_mrv_constant(&fs, &xs, alpha, &space).unwrap();
            let indep = extremal_independence_check(&fs, &space, alpha).unwrap().independent;
            let equal = (joint - split).abs() <= 1e-12 * split.max(1e-300);
            prop_assert_eq!(indep, equal);
        }

        #[test]
        fn full_implies_extremal(
            fa in prop::collection::vec(0usize..6, 1..4),
            gb in prop::collection::vec(0usize..6, 1..4),
        ) {
            let space = make_discrete_space(&[("0", 1.0), ("1", 1.0), ("2", 1.0), ("3", 1.0), ("4", 1.0), ("5", 1.0)])
                .unwrap();
            let f = Integrand::indicator(Rectangle(vec![CoordSet::Atoms(fa.clone()), CoordSet::Atoms(fa)]));
            let g = Integrand::indicator(Rectangle(vec![CoordSet::Atoms(gb.clone()), CoordSet::Atoms(gb)]));
            if full_independence_check(&f, &g, &space).unwrap() {
                prop_assert!(extremal_independence_check(&[f, g], &space, 1.0).unwrap().independent);
            }
        }
    }
}
