//! Base measure spaces, their reference probability measures and densities.
//!
//! Each space carries a sigma-finite measure `mu`, an equivalent probability
//! measure `m` used for sampling base points, and the density
//! `psi = d mu / d m`.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad;
use crate::regenerative::renewal::{renewal_mass, ConditionedWindow, RenewalPath, RenewalSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("atom list is empty")]
    EmptyAtoms,
    #[error("atom `{id}` has non-positive or non-finite weight {weight}")]
    BadWeight { id: String, weight: f64 },
    #[error("duplicate atom id `{0}`")]
    DuplicateAtom(String),
    #[error("unknown atom id `{0}`")]
    UnknownAtom(String),
    #[error("density is not integrable on the domain; declare an exhausting sequence")]
    NonIntegrable,
    #[error("invalid domain [{0}, {1})")]
    BadDomain(f64, f64),
    #[error("set meets the diagonal with positive mass")]
    DiagonalMass,
    #[error("set has order {found}, expected {expected}")]
    OrderMismatch { expected: usize, found: usize },
    #[error("coordinate set does not belong to this space kind")]
    KindMismatch,
    #[error("operation unsupported on this space: {0}")]
    Unsupported(String),
    #[error("reference measure is invalid: {0}")]
    BadReference(String),
    #[error("exhaustion depth {0} out of range")]
    BadDepth(usize),
}

/// A base point drawn from a space.
#[derive(Clone, Debug)]
pub enum Point {
    Atom(usize),
    Real(f64),
    Path(Arc<RenewalPath>),
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Point::Atom(a), Point::Atom(b)) => a == b,
            (Point::Real(a), Point::Real(b)) => a == b,
            // distinct draws are distinct points of the path space
            (Point::Path(a), Point::Path(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Point {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Point::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_atom(&self) -> Option<usize> {
        match self {
            Point::Atom(a) => Some(*a),
            _ => None,
        }
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A positive function on the real line, used as a density.
#[derive(Clone)]
pub struct DensityFn {
    label: String,
    eval: RealFn,
    log_eval: Option<RealFn>,
    constant: bool,
    total: Option<f64>,
    inverse_cdf: Option<RealFn>,
}

impl fmt::Debug for DensityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityFn").field("label", &self.label).field("constant", &self.constant).finish()
    }
}

impl DensityFn {
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(label: &str, f: F) -> Self {
        DensityFn {
            label: label.to_string(),
            eval: Arc::new(f),
            log_eval: None,
            constant: false,
            total: None,
            inverse_cdf: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        DensityFn {
            label: format!("const({c})"),
            eval: Arc::new(move |_| c),
            log_eval: Some(Arc::new(move |_| c.ln())),
            constant: true,
            total: None,
            inverse_cdf: None,
        }
    }

    /// Log-density; used where the density itself overflows.
    pub fn with_log<F: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, f: F) -> Self {
        self.log_eval = Some(Arc::new(f));
        self
    }

    /// Declares the integral over the domain and the inverse of the normalized CDF.
    pub fn with_sampler<F: Fn(f64) -> f64 + Send + Sync + 'static>(mut self, total: f64, inverse_cdf: F) -> Self {
        self.total = Some(total);
        self.inverse_cdf = Some(Arc::new(inverse_cdf));
        self
    }

    /// `(p + 1) x^p` on [0, 1].
    pub fn power(p: f64) -> Self {
        assert!(p > -1.0, "power density needs p > -1");
        DensityFn::new(&format!("power({p})"), move |x| (p + 1.0) * x.powf(p))
            .with_log(move |x| (p + 1.0).ln() + p * x.ln())
            .with_sampler(1.0, move |u| u.powf(1.0 / (p + 1.0)))
    }

    /// Probability density `C^-1 exp(-(ln 1/x)^2)` on (0, 1).
    pub fn log_squeezed() -> Self {
        let norm = log_squeezed_constant();
        let log_norm = norm.ln();
        // s = ln(1/x) is N(-1/2, 1/2) conditioned on s > 0
        let sigma = std::f64::consts::FRAC_1_SQRT_2;
        let a = 0.5 / sigma;
        let tail_a = 0.5 * statrs::function::erf::erfc(a / std::f64::consts::SQRT_2);
        DensityFn::new("log-squeezed", move |x: f64| {
            let l = -x.ln();
            (-(l * l) - log_norm).exp()
        })
        .with_log(move |x: f64| {
            let l = -x.ln();
            -(l * l) - log_norm
        })
        .with_sampler(1.0, move |u: f64| {
            let p = ((1.0 - u) * tail_a).max(1e-300);
            let z = std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
            let s = -0.5 + sigma * z;
            (-s.max(0.0)).exp()
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn log_eval(&self, x: f64) -> f64 {
        match &self.log_eval {
            Some(f) => f(x),
            None => (self.eval)(x).ln(),
        }
    }

    pub fn declared_total(&self) -> Option<f64> {
        self.total
    }
}

/// `int_0^1 exp(-(ln 1/x)^2) dx = e^{1/4} sqrt(pi)/2 erfc(1/2)`.
pub fn log_squeezed_constant() -> f64 {
    0.25f64.exp() * std::f64::consts::PI.sqrt() / 2.0 * statrs::function::erf::erfc(0.5)
}

/// Discrete atoms with positive weights.
#[derive(Debug, Clone)]
pub struct DiscreteSpace {
    ids: Vec<String>,
    weights: Vec<f64>,
    total: f64,
    reference: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscreteSpace {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize, SpaceError> {
        self.ids.iter().position(|x| x == id).ok_or_else(|| SpaceError::UnknownAtom(id.to_string()))
    }

    /// Reference probabilities `m({a})`.
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn psi_at(&self, atom: usize) -> f64 {
        self.weights[atom] / self.reference[atom]
    }
}

/// Inverse CDF of the reference measure, by tabulation when no closed form exists.
#[derive(Clone)]
struct Tabulated {
    lo: f64,
    hi: f64,
    density: DensityFn,
    cumulative: Arc<Vec<f64>>,
}

const TABLE_PANELS: usize = 2048;

impl Tabulated {
    fn build(density: &DensityFn, lo: f64, hi: f64) -> Self {
        let h = (hi - lo) / TABLE_PANELS as f64;
        let mut cumulative = Vec::with_capacity(TABLE_PANELS);
        let mut acc = 0.0;
        for p in 0..TABLE_PANELS {
            let a = lo + h * p as f64;
            acc += quad::integrate(|x| density.eval(x), a, a + h, 1);
            cumulative.push(acc);
        }
        Tabulated { lo, hi, density: density.clone(), cumulative: Arc::new(cumulative) }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn invert(&self, u: f64) -> f64 {
        let target = u * self.total();
        let h = (self.hi - self.lo) / TABLE_PANELS as f64;
        let idx = self.cumulative.partition_point(|&c| c < target).min(TABLE_PANELS - 1);
        let base = if idx == 0 { 0.0 } else { self.cumulative[idx - 1] };
        let (mut a, mut b) = (self.lo + h * idx as f64, self.lo + h * (idx + 1) as f64);
        let left = a;
        let partial = |x: f64| base + quad::integrate(|t| self.density.eval(t), left, x, 1);
        let mut x = 0.5 * (a + b);
        for _ in 0..60 {
            let fx = partial(x) - target;
            if fx.abs() <= 1e-14 * self.total() {
                break;
            }
            if fx > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let d = self.density.eval(x);
            let newton = x - fx / d;
            x = if d > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
            if b - a < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }
}

#[derive(Clone)]
enum Sampler {
    Uniform { lo: f64, hi: f64 },
    Closed { lo: f64, hi: f64, inverse: RealFn },
    Table(Tabulated),
}

impl Sampler {
    fn draw(&self, u: f64) -> f64 {
        match self {
            Sampler::Uniform { lo, hi } => lo + u * (hi - lo),
            Sampler::Closed { lo, hi, inverse } => lo + (hi - lo) * inverse(u),
            Sampler::Table(t) => t.invert(u),
        }
    }
}

/// Reference probability on an interval space.
#[derive(Clone)]
pub enum Reference {
    /// `m = mu / mu(E)`, so `psi` is the constant total mass.
    Normalized,
    /// An explicit probability density with its sampler.
    Custom { density: DensityFn, psi_bound: Option<f64> },
}

/// An interval of the real line with `mu = density * Lebesgue`.
#[derive(Clone)]
pub struct IntervalSpace {
    lo: f64,
    hi: f64,
    density: Option<DensityFn>,
    total: f64,
    exhaustion: Vec<(f64, f64)>,
    reference: Reference,
    sampler: Option<Sampler>,
}

impl fmt::Debug for IntervalSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntervalSpace")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("density", &self.density.as_ref().map(|d| d.label().to_string()))
            .field("total", &self.total)
            .finish()
    }
}

impl IntervalSpace {
    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn density(&self) -> Option<&DensityFn> {
        self.density.as_ref()
    }

    pub fn mu_density(&self, x: f64) -> f64 {
        self.density.as_ref().map_or(1.0, |d| d.eval(x))
    }

    pub fn log_mu_density(&self, x: f64) -> f64 {
        self.density.as_ref().map_or(0.0, |d| d.log_eval(x))
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    pub fn exhaustion(&self) -> &[(f64, f64)] {
        &self.exhaustion
    }

    /// Log of `dm / dx` at `x`.
    pub fn log_m_density(&self, x: f64) -> f64 {
        match &self.reference {
            Reference::Normalized => self.log_mu_density(x) - self.total.ln(),
            Reference::Custom { density, .. } => density.log_eval(x),
        }
    }

    /// `mu([a, b))`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        if !(b > a) {
            return 0.0;
        }
        match &self.density {
            None => b - a,
            Some(d) if d.is_constant() => d.eval(a) * (b - a),
            Some(d) => {
                if b.is_infinite() {
                    return f64::INFINITY;
                }
                quad::integrate(|x| d.eval(x), a, b, 16)
            }
        }
    }
}

/// Window paths of a stationary renewal model.
#[derive(Debug, Clone)]
pub struct RenewalPathSpace {
    window: ConditionedWindow,
}

impl RenewalPathSpace {
    pub fn window(&self) -> &ConditionedWindow {
        &self.window
    }

    pub fn spec(&self) -> &RenewalSpec {
        self.window.spec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceKind {
    FiniteDiscrete,
    Interval,
    RenewalPath,
}

/// A supported base space together with its reference probability.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum MeasureSpace {
    Discrete(DiscreteSpace),
    Interval(IntervalSpace),
    Renewal(RenewalPathSpace),
}

/// Finite space from `(id, weight)` pairs; `m` is the normalized weight.
pub fn make_discrete_space<S: AsRef<str>>(atoms: &[(S, f64)]) -> Result<MeasureSpace, SpaceError> {
    if atoms.is_empty() {
        return Err(SpaceError::EmptyAtoms);
    }
    let mut seen = HashSet::new();
    let mut ids = Vec::with_capacity(atoms.len());
    let mut weights = Vec::with_capacity(atoms.len());
    for (id, w) in atoms {
        let id = id.as_ref().to_string();
        if !(*w > 0.0 && w.is_finite()) {
            return Err(SpaceError::BadWeight { id, weight: *w });
        }
        if !seen.insert(id.clone()) {
            return Err(SpaceError::DuplicateAtom(id));
        }
        ids.push(id);
        weights.push(*w);
    }
    let total: f64 = weights.iter().sum();
    let reference: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let cumulative = cumulative_of(&reference);
    Ok(MeasureSpace::Discrete(DiscreteSpace { ids, weights, total, reference, cumulative }))
}

fn cumulative_of(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// `[0, 1]` with `mu = density * Lebesgue` (Lebesgue when `density` is `None`).
pub fn make_unit_interval(density: Option<DensityFn>) -> Result<MeasureSpace, SpaceError> {
    make_interval(0.0, 1.0, density)
}

/// Finite-mass interval `[lo, hi)`.
pub fn make_interval(lo: f64, hi: f64, density: Option<DensityFn>) -> Result<MeasureSpace, SpaceError> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(SpaceError::BadDomain(lo, hi));
    }
    let (total, sampler) = match &density {
        None => (hi - lo, Sampler::Uniform { lo, hi }),
        Some(d) if d.is_constant() => (d.eval(lo) * (hi - lo), Sampler::Uniform { lo, hi }),
        Some(d) => match (d.total, &d.inverse_cdf) {
            (Some(t), Some(inv)) => (t, Sampler::Closed { lo, hi, inverse: inv.clone() }),
            _ => {
                let table = Tabulated::build(d, lo, hi);
                let t = table.total();
                if !t.is_finite() || !integrable_near_edges(d, lo, hi) {
                    return Err(SpaceError::NonIntegrable);
                }
                (t, Sampler::Table(table))
            }
        },
    };
    if !(total > 0.0 && total.is_finite()) {
        return Err(SpaceError::NonIntegrable);
    }
    Ok(MeasureSpace::Interval(IntervalSpace {
        lo,
        hi,
        density,
        total,
        exhaustion: Vec::new(),
        reference: Reference::Normalized,
        sampler: Some(sampler),
    }))
}

/// Edge contributions must shrink as the cutoff approaches the endpoints.
fn integrable_near_edges(d: &DensityFn, lo: f64, hi: f64) -> bool {
    let width = hi - lo;
    let mut prev: Option<f64> = None;
    let mut growth = 0;
    for j in 4..40 {
        let eps = width * 2f64.powi(-j);
        let piece = quad::integrate(|x| d.eval(x), lo + eps, lo + 2.0 * eps, 1)
            + quad::integrate(|x| d.eval(x), hi - 2.0 * eps, hi - eps, 1);
        if !piece.is_finite() {
            return false;
        }
        if let Some(p) = prev {
            if piece > 0.9 * p && piece > 1e-12 {
                growth += 1;
                if growth >= 3 {
                    return false;
                }
            } else {
                growth = 0;
            }
        }
        prev = Some(piece);
    }
    true
}

/// Infinite-mass interval with an explicit exhausting sequence `E_n = [a_n, b_n)`.
pub fn make_sigma_finite_interval(
    lo: f64,
    hi: f64,
    density: Option<DensityFn>,
    exhaustion: Vec<(f64, f64)>,
) -> Result<MeasureSpace, SpaceError> {
    if !(lo.is_finite() && hi > lo) {
        return Err(SpaceError::BadDomain(lo, hi));
    }
    if exhaustion.is_empty() {
        return Err(SpaceError::NonIntegrable);
    }
    for w in exhaustion.windows(2) {
        if !(w[1].0 <= w[0].0 && w[1].1 >= w[0].1) {
            return Err(SpaceError::BadDomain(w[1].0, w[1].1));
        }
    }
    for &(a, b) in &exhaustion {
        if !(a >= lo && b <= hi && b > a && b.is_finite()) {
            return Err(SpaceError::BadDomain(a, b));
        }
    }
    Ok(MeasureSpace::Interval(IntervalSpace {
        lo,
        hi,
        density,
        total: f64::INFINITY,
        exhaustion,
        reference: Reference::Normalized,
        sampler: None,
    }))
}

/// Window paths on `{0..=n}`; `mu` has total mass `w_n`.
pub fn make_renewal_space(spec: &RenewalSpec, n: u64) -> MeasureSpace {
    MeasureSpace::Renewal(RenewalPathSpace { window: ConditionedWindow::new(spec, n) })
}

impl MeasureSpace {
    pub fn kind(&self) -> SpaceKind {
        match self {
            MeasureSpace::Discrete(_) => SpaceKind::FiniteDiscrete,
            MeasureSpace::Interval(_) => SpaceKind::Interval,
            MeasureSpace::Renewal(_) => SpaceKind::RenewalPath,
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            MeasureSpace::Discrete(d) => d.total,
            MeasureSpace::Interval(s) => s.total,
            MeasureSpace::Renewal(r) => r.window.mass(),
        }
    }

    pub fn is_sigma_finite(&self) -> bool {
        self.total_mass().is_infinite()
    }

    /// Replaces `m` on an interval space; `psi` becomes `mu-density / density`.
    pub fn with_reference(self, density: DensityFn, psi_bound: Option<f64>) -> Result<MeasureSpace, SpaceError> {
        match self {
            MeasureSpace::Interval(mut s) => {
                let inv = density
                    .inverse_cdf
                    .clone()
                    .ok_or_else(|| SpaceError::BadReference("reference density needs a sampler".into()))?;
                if let Some(t) = density.total {
                    if (t - 1.0).abs() > 1e-9 {
                        return Err(SpaceError::BadReference(format!("reference mass is {t}, not 1")));
                    }
                }
                if s.hi.is_infinite() {
                    s.sampler = Some(Sampler::Closed { lo: 0.0, hi: 1.0, inverse: inv });
                } else {
                    s.sampler = Some(Sampler::Closed { lo: s.lo, hi: s.hi, inverse: rescale(inv, s.lo, s.hi) });
                }
                s.reference = Reference::Custom { density, psi_bound };
                Ok(MeasureSpace::Interval(s))
            }
            MeasureSpace::Discrete(_) | MeasureSpace::Renewal(_) => {
                Err(SpaceError::Unsupported("use with_atom_reference for discrete spaces".into()))
            }
        }
    }

    /// Replaces `m` on a discrete space by explicit probabilities.
    pub fn with_atom_reference(self, probs: &[f64]) -> Result<MeasureSpace, SpaceError> {
        match self {
            MeasureSpace::Discrete(mut d) => {
                if probs.len() != d.len() || probs.iter().any(|&p| !(p > 0.0)) {
                    return Err(SpaceError::BadReference("need one positive probability per atom".into()));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(SpaceError::BadReference(format!("probabilities sum to {s}")));
                }
                d.reference = probs.to_vec();
                d.cumulative = cumulative_of(probs);
                Ok(MeasureSpace::Discrete(d))
            }
            _ => Err(SpaceError::KindMismatch),
        }
    }

    /// Restriction of a sigma-finite interval space to `E_depth`, with normalized reference.
    pub fn restrict(&self, depth: usize) -> Result<MeasureSpace, SpaceError> {
        match self {
            MeasureSpace::Interval(s) if s.total.is_infinite() => {
                let &(a, b) = s.exhaustion.get(depth).ok_or(SpaceError::BadDepth(depth))?;
                make_interval(a, b, s.density.clone())
            }
            _ => Ok(self.clone()),
        }
    }

    /// One draw from `m`.
    pub fn sample_point(&self, rng: &mut dyn RngCore) -> Point {
        match self {
            MeasureSpace::Discrete(d) => {
                let u: f64 = rng.random();
                let idx = d.cumulative.partition_point(|&c| c <= u).min(d.len() - 1);
                Point::Atom(idx)
            }
            MeasureSpace::Interval(s) => {
                let sampler = s.sampler.as_ref().expect("sigma-finite space sampled without a reference measure");
                let u: f64 = rng.random();
                Point::Real(sampler.draw(u))
            }
            MeasureSpace::Renewal(r) => Point::Path(Arc::new(r.window.sample_dyn(rng))),
        }
    }

    /// Whether `m` can be sampled on the whole space.
    pub fn can_sample(&self) -> bool {
        match self {
            MeasureSpace::Interval(s) => s.sampler.is_some(),
            _ => true,
        }
    }

    pub fn psi(&self, p: &Point) -> f64 {
        match (self, p) {
            (MeasureSpace::Discrete(d), Point::Atom(a)) => d.psi_at(*a),
            (MeasureSpace::Interval(s), Point::Real(x)) => match &s.reference {
                Reference::Normalized => s.total,
                Reference::Custom { density, .. } => (s.log_mu_density(*x) - density.log_eval(*x)).exp(),
            },
            (MeasureSpace::Renewal(r), Point::Path(_)) => r.window.mass(),
            _ => f64::NAN,
        }
    }

    pub fn log_psi(&self, p: &Point) -> f64 {
        match (self, p) {
            (MeasureSpace::Interval(s), Point::Real(x)) => match &s.reference {
                Reference::Normalized => s.total.ln(),
                Reference::Custom { density, .. } => s.log_mu_density(*x) - density.log_eval(*x),
            },
            _ => self.psi(p).ln(),
        }
    }

    /// A finite upper bound on `psi`, if one is known.
    pub fn psi_bound(&self) -> Option<f64> {
        match self {
            MeasureSpace::Discrete(d) => Some((0..d.len()).map(|a| d.psi_at(a)).fold(0.0, f64::max)),
            MeasureSpace::Interval(s) => match &s.reference {
                Reference::Normalized => s.total.is_finite().then_some(s.total),
                Reference::Custom { psi_bound, .. } => *psi_bound,
            },
            MeasureSpace::Renewal(r) => Some(r.window.mass()),
        }
    }

    /// `mu` of a single coordinate set.
    pub fn coord_mass(&self, set: &CoordSet) -> Result<f64, SpaceError> {
        match (self, set) {
            (MeasureSpace::Discrete(d), CoordSet::Atoms(ids)) => {
                let uniq: HashSet<usize> = ids.iter().copied().collect();
                if uniq.iter().any(|&a| a >= d.len()) {
                    return Err(SpaceError::KindMismatch);
                }
                Ok(uniq.iter().map(|&a| d.weights[a]).sum())
            }
            (MeasureSpace::Interval(s), CoordSet::Interval(a, b)) => Ok(s.mass(*a, *b)),
            (MeasureSpace::Renewal(r), CoordSet::Hits(t)) => {
                if *t > r.window.window() {
                    return Ok(0.0);
                }
                let spec = r.spec();
                let u = renewal_mass(spec, *t as usize);
                Ok((0..=*t as usize).map(|d| spec.survival(d as u64) * u[*t as usize - d]).sum())
            }
            _ => Err(SpaceError::KindMismatch),
        }
    }

    /// `mu^k(set)` for a finite union of rectangles.
    pub fn product_mass(&self, k: usize, set: &OffDiagonalSet) -> Result<f64, SpaceError> {
        for r in &set.rects {
            if r.0.len() != k {
                return Err(SpaceError::OrderMismatch { expected: k, found: r.0.len() });
            }
        }
        match self {
            MeasureSpace::Discrete(d) => {
                let tuples = set.atom_tuples(d.len())?;
                Ok(tuples.iter().map(|t| t.iter().map(|&a| d.weights[a]).product::<f64>()).sum())
            }
            MeasureSpace::Interval(s) => interval_union_mass(s, k, &set.rects),
            MeasureSpace::Renewal(_) => {
                if k == 1 && set.rects.len() == 1 {
                    self.coord_mass(&set.rects[0].0[0])
                } else {
                    Err(SpaceError::Unsupported("product sets of renewal paths".into()))
                }
            }
        }
    }
}

fn rescale(inv: RealFn, lo: f64, hi: f64) -> RealFn {
    Arc::new(move |u| (inv(u) - lo) / (hi - lo))
}

fn interval_union_mass(s: &IntervalSpace, k: usize, rects: &[Rectangle]) -> Result<f64, SpaceError> {
    let mut boxes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(rects.len());
    for r in rects {
        let mut b = Vec::with_capacity(k);
        for c in &r.0 {
            match c {
                CoordSet::Interval(lo, hi) => b.push((*lo, *hi)),
                _ => return Err(SpaceError::KindMismatch),
            }
        }
        if b.iter().all(|(lo, hi)| hi > lo) {
            boxes.push(b);
        }
    }
    let disjoint = boxes
        .iter()
        .enumerate()
        .all(|(i, bi)| boxes[i + 1..].iter().all(|bj| bi.iter().zip(bj).any(|(x, y)| x.1 <= y.0 || y.1 <= x.0)));
    if disjoint {
        return Ok(boxes.iter().map(|b| b.iter().map(|&(lo, hi)| s.mass(lo, hi)).product::<f64>()).sum());
    }
    // coordinate compression
    let mut grids: Vec<Vec<f64>> = vec![Vec::new(); k];
    for b in &boxes {
        for (axis, &(lo, hi)) in b.iter().enumerate() {
            grids[axis].push(lo);
            grids[axis].push(hi);
        }
    }
    for g in &mut grids {
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
        g.dedup();
    }
    let cell_mass: Vec<Vec<f64>> = grids.iter().map(|g| g.windows(2).map(|w| s.mass(w[0], w[1])).collect()).collect();
    let dims: Vec<usize> = grids.iter().map(|g| g.len().saturating_sub(1)).collect();
    if dims.contains(&0) {
        return Ok(0.0);
    }
    let mut idx = vec![0usize; k];
    let mut total = 0.0;
    loop {
        let mid: Vec<f64> = (0..k).map(|a| 0.5 * (grids[a][idx[a]] + grids[a][idx[a] + 1])).collect();
        let covered = boxes.iter().any(|b| b.iter().zip(&mid).all(|(&(lo, hi), &x)| x >= lo && x < hi));
        if covered {
            total += (0..k).map(|a| cell_mass[a][idx[a]]).product::<f64>();
        }
        let mut axis = 0;
        loop {
            idx[axis] += 1;
            if idx[axis] < dims[axis] {
                break;
            }
            idx[axis] = 0;
            axis += 1;
            if axis == k {
                return Ok(total);
            }
        }
    }
}

/// A coordinate set of a product rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordSet {
    /// Atom indices.
    Atoms(Vec<usize>),
    /// Half-open interval `[lo, hi)`.
    Interval(f64, f64),
    /// Renewal paths through the given time.
    Hits(u64),
}

impl CoordSet {
    pub fn contains(&self, p: &Point) -> bool {
        match (self, p) {
            (CoordSet::Atoms(ids), Point::Atom(a)) => ids.contains(a),
            (CoordSet::Interval(lo, hi), Point::Real(x)) => *x >= *lo && *x < *hi,
            (CoordSet::Hits(t), Point::Path(path)) => path.contains(*t),
            _ => false,
        }
    }

    /// Whether two coordinate sets share a point of positive mass.
    pub fn overlaps(&self, other: &CoordSet) -> bool {
        match (self, other) {
            (CoordSet::Atoms(a), CoordSet::Atoms(b)) => a.iter().any(|x| b.contains(x)),
            (CoordSet::Interval(a0, a1), CoordSet::Interval(b0, b1)) => a0.max(*b0) < a1.min(*b1),
            (CoordSet::Hits(_), CoordSet::Hits(_)) => true,
            _ => false,
        }
    }
}

/// A product `C_1 x ... x C_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle(pub Vec<CoordSet>);

impl Rectangle {
    pub fn contains(&self, pts: &[&Point]) -> bool {
        self.0.len() == pts.len() && self.0.iter().zip(pts).all(|(c, p)| c.contains(p))
    }

    /// Whether the coordinate sets are pairwise disjoint.
    pub fn is_off_diagonal(&self) -> bool {
        (0..self.0.len()).all(|i| (i + 1..self.0.len()).all(|j| !self.0[i].overlaps(&self.0[j])))
    }
}

/// A finite union of rectangles in `E^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OffDiagonalSet {
    pub rects: Vec<Rectangle>,
}

impl OffDiagonalSet {
    pub fn new(rects: Vec<Rectangle>) -> Self {
        OffDiagonalSet { rects }
    }

    pub fn contains(&self, pts: &[&Point]) -> bool {
        self.rects.iter().any(|r| r.contains(pts))
    }

    /// Distinct atom tuples of the union; errors if any tuple repeats an atom.
    pub fn atom_tuples(&self, n_atoms: usize) -> Result<Vec<Vec<usize>>, SpaceError> {
        let mut out: HashSet<Vec<usize>> = HashSet::new();
        for r in &self.rects {
            let mut lists = Vec::with_capacity(r.0.len());
            for c in &r.0 {
                match c {
                    CoordSet::Atoms(ids) => {
                        if ids.iter().any(|&a| a >= n_atoms) {
                            return Err(SpaceError::KindMismatch);
                        }
                        let mut v = ids.clone();
                        v.sort_unstable();
                        v.dedup();
                        lists.push(v);
                    }
                    _ => return Err(SpaceError::KindMismatch),
                }
            }
            for t in cartesian(&lists) {
                let uniq: HashSet<usize> = t.iter().copied().collect();
                if uniq.len() < t.len() {
                    return Err(SpaceError::DiagonalMass);
                }
                out.insert(t);
            }
        }
        let mut v: Vec<Vec<usize>> = out.into_iter().collect();
        v.sort();
        Ok(v)
    }
}

pub(crate) fn cartesian(lists: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for l in lists {
        let mut next = Vec::with_capacity(out.len() * l.len());
        for prefix in &out {
            for &x in l {
                let mut t = prefix.clone();
                t.push(x);
                next.push(t);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iv(a: f64, b: f64) -> CoordSet {
        CoordSet::Interval(a, b)
    }

    #[test]
    fn discrete_normalization() {
        let s = make_discrete_space(&[("a", 1.0), ("b", 1.0)]).unwrap();
        assert_eq!(s.total_mass(), 2.0);
        assert_eq!(s.psi(&Point::Atom(0)), 2.0);
        assert_eq!(s.psi(&Point::Atom(1)), 2.0);
        let s = make_discrete_space(&[("a", 3.0)]).unwrap();
        assert_eq!(s.psi(&Point::Atom(0)), 3.0);
        let s = make_discrete_space(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]).unwrap();
        if let MeasureSpace::Discrete(d) = &s {
            let want = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
            for (p, w) in d.reference().iter().zip(want) {
                assert!((p - w).abs() < 1e-15);
            }
        }
        for a in 0..3 {
            assert!((s.psi(&Point::Atom(a)) - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_errors() {
        let empty: [(&str, f64); 0] = [];
        assert_eq!(make_discrete_space(&empty).unwrap_err(), SpaceError::EmptyAtoms);
        assert!(matches!(make_discrete_space(&[("a", 0.0)]), Err(SpaceError::BadWeight { .. })));
        assert!(matches!(make_discrete_space(&[("a", -1.0)]), Err(SpaceError::BadWeight { .. })));
    }

    #[test]
    fn lebesgue_unit_interval_is_probability() {
        let s = make_unit_interval(None).unwrap();
        assert_eq!(s.total_mass(), 1.0);
        assert_eq!(s.psi(&Point::Real(0.3)), 1.0);
    }

    #[test]
    fn linear_density_normalized_reference() {
        let s = make_unit_interval(Some(DensityFn::new("2x", |x| 2.0 * x))).unwrap();
        assert!((s.total_mass() - 1.0).abs() < 1e-12);
        assert!((s.psi(&Point::Real(0.4)) - 1.0).abs() < 1e-12);
        // m has CDF x^2
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let below = (0..n).filter(|_| s.sample_point(&mut rng).as_real().unwrap() <= 0.5).count();
        let p = below as f64 / n as f64;
        assert!((p - 0.25).abs() < 3.5 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn linear_density_uniform_reference() {
        let uniform = DensityFn::constant(1.0).with_sampler(1.0, |u| u);
        let s = make_unit_interval(Some(DensityFn::new("2x", |x| 2.0 * x)))
            .unwrap()
            .with_reference(uniform, Some(2.0))
            .unwrap();
        assert!((s.psi(&Point::Real(0.3)) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn dueling_references_differ() {
        let lebesgue = make_unit_interval(None).unwrap();
        let squeezed = lebesgue.clone().with_reference(DensityFn::log_squeezed(), None).unwrap();
        let x = 0.01;
        let l = (1.0f64 / x).ln();
        let want = log_squeezed_constant() * (l * l).exp();
        assert!((squeezed.psi(&Point::Real(x)) / want - 1.0).abs() < 1e-10);
        assert_eq!(lebesgue.psi(&Point::Real(x)), 1.0);
        let c = crate::quad::integrate(|t| (-(t.ln() * t.ln())).exp(), 0.0, 1.0, 400);
        assert!((c / log_squeezed_constant() - 1.0).abs() < 1e-6);
        // squeezed sampler matches its CDF at 1/2: P(x <= 1/2) = P(s >= ln 2)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let below = (0..n).filter(|_| squeezed.sample_point(&mut rng).as_real().unwrap() <= 0.5).count();
        let cdf = crate::quad::integrate(|t| (-(t.ln() * t.ln())).exp(), 0.0, 0.5, 400) / c;
        let p = below as f64 / n as f64;
        assert!((p - cdf).abs() < 3.5 * (cdf * (1.0 - cdf) / n as f64).sqrt(), "{p} vs {cdf}");
    }

    #[test]
    fn non_integrable_density_rejected() {
        let r = make_unit_interval(Some(DensityFn::new("1/x", |x| 1.0 / x)));
        assert_eq!(r.unwrap_err(), SpaceError::NonIntegrable);
        let ok = make_sigma_finite_interval(
            0.0,
            1.0,
            Some(DensityFn::new("1/x", |x| 1.0 / x)),
            vec![(0.5, 1.0), (0.25, 1.0)],
        );
        assert!(ok.unwrap().is_sigma_finite());
    }

    #[test]
    fn rectangle_mass_lebesgue() {
        let s = make_unit_interval(None).unwrap();
        let set = OffDiagonalSet::new(vec![Rectangle(vec![iv(0.0, 0.5), iv(0.5, 1.0)])]);
        assert!((s.product_mass(2, &set).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rectangle_mass_discrete() {
        let s = make_discrete_space(&[("a", 1.0), ("b", 2.0)]).unwrap();
        let set = OffDiagonalSet::new(vec![Rectangle(vec![CoordSet::Atoms(vec![0]), CoordSet::Atoms(vec![1])])]);
        assert_eq!(s.product_mass(2, &set).unwrap(), 2.0);
        let diag = OffDiagonalSet::new(vec![Rectangle(vec![CoordSet::Atoms(vec![0]), CoordSet::Atoms(vec![0, 1])])]);
        assert_eq!(s.product_mass(2, &diag).unwrap_err(), SpaceError::DiagonalMass);
    }

    #[test]
    fn cube_union_mass_matches_direct_sum() {
        // cubes [2i, 2i+a) x [2i+1, 2i+1+a) with a_i = i^{-1}
        let exhaust = vec![(0.0, 64.0)];
        let s = make_sigma_finite_interval(0.0, f64::INFINITY, None, exhaust).unwrap();
        let mut rects = Vec::new();
        let mut oracle = 0.0;
        for i in 1..=10 {
            let a = 1.0 / i as f64;
            let base = 2.0 * i as f64;
            rects.push(Rectangle(vec![iv(base, base + a), iv(base + 1.0, base + 1.0 + a)]));
            oracle += a * a;
        }
        let got = s.product_mass(2, &OffDiagonalSet::new(rects)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn overlapping_boxes_counted_once() {
        let s = make_unit_interval(None).unwrap();
        let a = Rectangle(vec![iv(0.0, 0.5), iv(0.5, 1.0)]);
        let b = Rectangle(vec![iv(0.25, 0.5), iv(0.5, 0.75)]);
        let c = Rectangle(vec![iv(0.4, 0.6), iv(0.8, 0.9)]);
        let got = s.product_mass(2, &OffDiagonalSet::new(vec![a, b, c])).unwrap();
        // inclusion-exclusion: 0.25 + 0.02 - overlap([0.4,0.5)x[0.8,0.9)) = 0.01
        assert!((got - (0.25 + 0.02 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn renewal_hitting_mass_is_one() {
        let spec = RenewalSpec::power_tail(0.4).unwrap();
        let s = make_renewal_space(&spec, 200);
        for t in [0u64, 1, 17, 200] {
            assert!((s.coord_mass(&CoordSet::Hits(t)).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn monte_carlo_mass_agrees_for_each_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 100_000;
        let check = |space: &MeasureSpace, set: &OffDiagonalSet, k: usize, rng: &mut ChaCha8Rng| {
            let exact = space.product_mass(k, set).unwrap();
            let total = space.total_mass();
            let mut hits = 0usize;
            for _ in 0..n {
                let pts: Vec<Point> = (0..k).map(|_| space.sample_point(rng)).collect();
                let refs: Vec<&Point> = pts.iter().collect();
                if set.contains(&refs) {
                    hits += 1;
                }
            }
            let p = hits as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt() * total.powi(k as i32);
            let est = p * total.powi(k as i32);
            assert!((est - exact).abs() <= 4.0 * se.max(1e-12), "{est} vs {exact}");
        };
        let d = make_discrete_space(&[("a", 1.0), ("b", 2.0), ("c", 0.5)]).unwrap();
        let dset = OffDiagonalSet::new(vec![Rectangle(vec![CoordSet::Atoms(vec![0, 2]), CoordSet::Atoms(vec![1])])]);
        check(&d, &dset, 2, &mut rng);
        let u = make_unit_interval(Some(DensityFn::power(1.0))).unwrap();
        let uset = OffDiagonalSet::new(vec![Rectangle(vec![iv(0.1, 0.4), iv(0.6, 0.9)])]);
        check(&u, &uset, 2, &mut rng);
        let spec = RenewalSpec::power_tail(0.5).unwrap();
        let r = make_renewal_space(&spec, 30);
        let rset = OffDiagonalSet::new(vec![Rectangle(vec![CoordSet::Hits(12)])]);
        check(&r, &rset, 1, &mut rng);
    }

    #[test]
    fn psi_positive_on_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spaces = vec![
            make_discrete_space(&[("a", 0.1), ("b", 5.0)]).unwrap(),
            make_unit_interval(Some(DensityFn::power(2.0))).unwrap(),
            make_unit_interval(None).unwrap().with_reference(DensityFn::log_squeezed(), None).unwrap(),
            make_renewal_space(&RenewalSpec::power_tail(0.3).unwrap(), 20),
        ];
        for s in &spaces {
            for _ in 0..10_000 {
                let p = s.sample_point(&mut rng);
                let v = s.psi(&p);
                assert!(v > 0.0 && v.is_finite(), "{v}");
            }
        }
    }
}
