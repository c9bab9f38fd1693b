//! Moment functionals that govern integrability, verdicts built on them, and
//! Monte Carlo divergence diagnostics.
//!
//! Functionals are evaluated exactly on discrete spaces and for bounded step
//! integrands, and otherwise by tensor Gauss-Legendre quadrature on log charts
//! around every endpoint and breakpoint. Refinement levels cut the charts at
//! `s = 4, 8, ..., 256`; a functional is declared infinite when the partial
//! values grow geometrically or their increments stop shrinking.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{mean_se, par_map_seeds};
use crate::integrals::sampling_space;
use crate::integrand::{interval, Integrand};
use crate::lepage::{lepage_sup, lepage_sup_fixed, Enumeration, LePageStream, TruncationPolicy};
use crate::measure::{
    make_sigma_finite_interval, make_unit_interval, CoordSet, DensityFn, IntervalSpace, MeasureSpace, Point, Rectangle,
    Reference, SpaceError,
};
use crate::quad::gauss_legendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrabilityError {
    #[error("functional needs order {expected}, integrand has order {found}")]
    OrderMismatch { expected: usize, found: usize },
    #[error("quadrature on interval spaces supports orders up to 3, got {0}")]
    OrderTooLarge(usize),
    #[error("moment functionals are not available on renewal-path spaces")]
    UnsupportedSpace,
    #[error("infinite-mass space has no exhausting sequence")]
    NoExhaustion,
    #[error("reference measure: {0}")]
    Reference(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Finiteness {
    Finite,
    Infinite,
    Inconclusive,
}

/// A functional value with its finiteness call and the partial values behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub value: f64,
    pub status: Finiteness,
    /// Cumulative values per refinement level; a single entry for exact evaluations.
    pub levels: Vec<f64>,
}

impl FunctionalValue {
    pub fn exact(value: f64) -> Self {
        let status = if value.is_nan() {
            Finiteness::Inconclusive
        } else if value.is_infinite() {
            Finiteness::Infinite
        } else {
            Finiteness::Finite
        };
        FunctionalValue { value, status, levels: vec![value] }
    }

    pub fn infinite() -> Self {
        FunctionalValue { value: f64::INFINITY, status: Finiteness::Infinite, levels: Vec::new() }
    }

    pub fn is_finite(&self) -> bool {
        self.status == Finiteness::Finite
    }

    pub fn is_infinite(&self) -> bool {
        self.status == Finiteness::Infinite
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    SufficientUnderGivenM,
    NecessaryHoldsOnly,
    FailsNecessary,
    Inconclusive,
}

/// Which equivalent probability `m` the sufficient functional is evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MChoice {
    /// The space's own reference on finite spaces; on infinite-mass spaces an attached
    /// reference if any, else the separable construction, else the exhaustion density.
    #[default]
    Default,
    /// Exactly the reference attached to the space.
    Space,
    /// `dm/dmu` proportional to `(sum_i phi_i)^alpha` plus a positive base density.
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub order: usize,
    pub alpha: f64,
    /// `int f^alpha dmu^k`.
    pub l_alpha: FunctionalValue,
    /// `int f^alpha (1 + (ln_+ f)^{k-1}) dmu^k`.
    pub l_alpha_logk: FunctionalValue,
    /// `int f^alpha (1 + ln_+ f ln_+ |ln f|) dmu^2`, order 2 only.
    pub l_alpha_logloglog: Option<FunctionalValue>,
    /// The marginal-normalized double integral, order 2 only.
    pub i2: Option<FunctionalValue>,
    /// `L^alpha ln^{k-1} L` of `f (psi^{(x)k})^{1/alpha}` under `m`.
    pub sufficient: Option<FunctionalValue>,
    pub reference: String,
    pub verdict: Verdict,
    pub note: Option<String>,
}

const OPEN_QUESTION: &str = "The integrand is in L^alpha but the sufficient moment condition fails under this \
reference measure. For order k >= 2 it is not known in general whether that condition is also necessary, so \
integrability is left undecided here.";

fn verdict_of(l_alpha: &FunctionalValue, sufficient: Option<&FunctionalValue>) -> (Verdict, Option<String>) {
    match l_alpha.status {
        Finiteness::Infinite => (Verdict::FailsNecessary, None),
        Finiteness::Inconclusive => (Verdict::Inconclusive, None),
        Finiteness::Finite => match sufficient.map(|s| s.status) {
            Some(Finiteness::Finite) => (Verdict::SufficientUnderGivenM, None),
            Some(Finiteness::Infinite) => (Verdict::NecessaryHoldsOnly, Some(OPEN_QUESTION.to_string())),
            _ => (Verdict::Inconclusive, None),
        },
    }
}

/// Declares `+inf` on geometric growth of the partial values or on increments
/// that fail to shrink by 1.5 over the last three levels.
pub fn assess_levels(levels: &[f64]) -> FunctionalValue {
    let last = *levels.last().unwrap_or(&0.0);
    let levels_out = levels.to_vec();
    if levels.iter().any(|v| v.is_nan()) {
        return FunctionalValue { value: f64::NAN, status: Finiteness::Inconclusive, levels: levels_out };
    }
    if levels.iter().any(|v| v.is_infinite()) {
        return FunctionalValue { value: f64::INFINITY, status: Finiteness::Infinite, levels: levels_out };
    }
    let n = levels.len();
    if n < 4 {
        return FunctionalValue { value: last, status: Finiteness::Finite, levels: levels_out };
    }
    let inc: Vec<f64> = levels.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    if inc[inc.len() - 1] <= 1e-9 * last.abs() {
        return FunctionalValue { value: last, status: Finiteness::Finite, levels: levels_out };
    }
    let grows = (n - 4..n - 1).all(|i| levels[i] > 0.0 && levels[i + 1] >= 1.5 * levels[i]);
    let m = inc.len();
    let stalls = (m - 3..m - 1).all(|i| inc[i + 1] > 0.0 && inc[i] < 1.5 * inc[i + 1]);
    if grows || stalls {
        FunctionalValue { value: f64::INFINITY, status: Finiteness::Infinite, levels: levels_out }
    } else {
        FunctionalValue { value: last, status: Finiteness::Finite, levels: levels_out }
    }
}

type LogDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The reference `m`, expressed as log densities against Lebesgue or per-atom probabilities.
#[derive(Clone)]
enum RefModel {
    Atoms(Vec<f64>),
    Density { log_m: LogDensity, psi_const: Option<f64>, cuts: Vec<f64> },
}

struct Built {
    model: Option<RefModel>,
    label: String,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

type Piece = (Vec<(f64, f64)>, f64, f64);

/// Lebesgue log density of a positive probability on the space, built from the
/// total mass or, on infinite-mass spaces, from the exhausting sequence.
fn base_density(s: &IntervalSpace) -> Result<(LogDensity, Vec<f64>), IntegrabilityError> {
    let (lo, hi) = s.bounds();
    let total = s.mass(lo, hi);
    if total.is_finite() {
        let space = s.clone();
        let lt = total.ln();
        return Ok((Arc::new(move |x| space.log_mu_density(x) - lt), Vec::new()));
    }
    let ex = s.exhaustion().to_vec();
    if ex.is_empty() {
        return Err(IntegrabilityError::NoExhaustion);
    }
    // piece n gets mass 2^-(n+1), spread like mu; the remainder gets 2^-N
    // (intervals, probability, mu mass)
    let mut pieces: Vec<Piece> = Vec::new();
    for (n, &(a, b)) in ex.iter().enumerate() {
        let parts = if n == 0 { vec![(a, b)] } else { vec![(a, ex[n - 1].0), (ex[n - 1].1, b)] };
        let parts: Vec<(f64, f64)> = parts.into_iter().filter(|(x, y)| y > x).collect();
        let mass: f64 = parts.iter().map(|&(x, y)| s.mass(x, y)).sum();
        if mass > 0.0 && mass.is_finite() {
            pieces.push((parts, 0.5f64.powi(n as i32 + 1), mass));
        }
    }
    let (la, lb) = *ex.last().unwrap();
    let rest = 0.5f64.powi(ex.len() as i32);
    let left = la > lo;
    let right = lb < hi;
    let share = if left && right { 0.5 * rest } else { rest };
    let assigned: f64 = pieces.iter().map(|p| p.1).sum::<f64>() + if left || right { rest } else { 0.0 };
    let norm = assigned.ln();
    let space = s.clone();
    let mut cuts: Vec<f64> = ex.iter().flat_map(|&(a, b)| [a, b]).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let f = move |x: f64| -> f64 {
        for (parts, p, mass) in &pieces {
            if parts.iter().any(|&(a, b)| x >= a && x < b) {
                return p.ln() - mass.ln() + space.log_mu_density(x) - norm;
            }
        }
        if left && x < la {
            return share.ln() - (la - lo).ln() - norm;
        }
        if right && x >= lb {
            if hi.is_infinite() {
                return share.ln() - (x - lb) - norm;
            }
            return share.ln() - (hi - lb).ln() - norm;
        }
        f64::NEG_INFINITY
    };
    Ok((Arc::new(f), cuts))
}

fn space_reference(s: &IntervalSpace) -> Option<(RefModel, String)> {
    let (lo, hi) = s.bounds();
    match s.reference() {
        Reference::Normalized => {
            let total = s.mass(lo, hi);
            if !total.is_finite() {
                return None;
            }
            let space = s.clone();
            let lt = total.ln();
            let log_m: LogDensity = Arc::new(move |x| space.log_mu_density(x) - lt);
            Some((RefModel::Density { log_m, psi_const: Some(total), cuts: Vec::new() }, "normalized".into()))
        }
        Reference::Custom { density, .. } => {
            let d = density.clone();
            let label = format!("custom({})", d.label());
            let log_m: LogDensity = Arc::new(move |x| d.log_eval(x));
            Some((RefModel::Density { log_m, psi_const: None, cuts: Vec::new() }, label))
        }
    }
}

fn separable_interval(f: &Integrand, s: &IntervalSpace, alpha: f64) -> Result<Built, IntegrabilityError> {
    let factors: Vec<Integrand> = f
        .separable_factors()
        .ok_or_else(|| IntegrabilityError::Reference("integrand is not separable".into()))?
        .to_vec();
    let (log_g, mut cuts) = base_density(s)?;
    cuts.extend_from_slice(f.breakpoints());
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let space = s.clone();
    let log_load = move |x: f64| -> f64 {
        let sum: f64 = factors.iter().map(|phi| phi.eval_reals(&[x])).sum();
        alpha * sum.ln() + space.log_mu_density(x)
    };
    let nodes = chart_nodes(s, &cuts, 0);
    let mut per_level = [0.0f64; LEVELS];
    for (x, lw, lev) in &nodes {
        per_level[*lev] += (log_load(*x) + lw).exp();
    }
    let z = assess_levels(&cumulate(&per_level));
    if !z.is_finite() {
        return Ok(Built { model: None, label: "separable-construction (unavailable)".into() });
    }
    let log_z = (z.value + 1.0).ln();
    let log_m: LogDensity = Arc::new(move |x| log_add(log_load(x), log_g(x)) - log_z);
    Ok(Built {
        model: Some(RefModel::Density { log_m, psi_const: None, cuts }),
        label: "separable-construction".into(),
    })
}

fn separable_atoms(f: &Integrand, w: &[f64], alpha: f64) -> Result<Built, IntegrabilityError> {
    let factors =
        f.separable_factors().ok_or_else(|| IntegrabilityError::Reference("integrand is not separable".into()))?;
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = (0..w.len())
        .map(|a| {
            let sum: f64 = factors.iter().map(|phi| phi.eval_atoms(&[a])).sum();
            sum.powf(alpha) * w[a] + w[a] / total
        })
        .collect();
    let z: f64 = p.iter().sum();
    if !z.is_finite() {
        return Ok(Built { model: None, label: "separable-construction (unavailable)".into() });
    }
    p.iter_mut().for_each(|v| *v /= z);
    Ok(Built { model: Some(RefModel::Atoms(p)), label: "separable-construction".into() })
}

fn build_model(f: &Integrand, space: &MeasureSpace, alpha: f64, choice: MChoice) -> Result<Built, IntegrabilityError> {
    match space {
        MeasureSpace::Discrete(d) => match choice {
            MChoice::Default | MChoice::Space => {
                Ok(Built { model: Some(RefModel::Atoms(d.reference().to_vec())), label: "space-reference".into() })
            }
            MChoice::Separable => separable_atoms(f, d.weights(), alpha),
        },
        MeasureSpace::Interval(s) => {
            let finite = space.total_mass().is_finite();
            match choice {
                MChoice::Space => {
                    let (model, label) = space_reference(s).ok_or_else(|| {
                        IntegrabilityError::Reference("infinite-mass space has no normalized reference".into())
                    })?;
                    Ok(Built { model: Some(model), label })
                }
                MChoice::Separable => separable_interval(f, s, alpha),
                MChoice::Default => {
                    if finite || matches!(s.reference(), Reference::Custom { .. }) {
                        let (model, label) = space_reference(s).expect("finite or custom reference");
                        return Ok(Built { model: Some(model), label });
                    }
                    if f.separable_factors().is_some() {
                        return separable_interval(f, s, alpha);
                    }
                    let (log_m, cuts) = base_density(s)?;
                    Ok(Built {
                        model: Some(RefModel::Density { log_m, psi_const: None, cuts }),
                        label: "exhaustion-density".into(),
                    })
                }
            }
        }
        MeasureSpace::Renewal(_) => Err(IntegrabilityError::UnsupportedSpace),
    }
}

const LEVELS: usize = 7;

const PANELS: [(f64, f64, usize); 9] = [
    (0.0, 1.0, 0),
    (1.0, 2.0, 0),
    (2.0, 4.0, 0),
    (4.0, 8.0, 1),
    (8.0, 16.0, 2),
    (16.0, 32.0, 3),
    (32.0, 64.0, 4),
    (64.0, 128.0, 5),
    (128.0, 256.0, 6),
];

fn cumulate(per_level: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    per_level
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Log-chart nodes `(x, ln weight, level)` covering the space, split at `cuts`.
///
/// `axis` picks a rule with `20 - axis` points so that different coordinates never
/// share abscissae.
fn chart_nodes(s: &IntervalSpace, cuts: &[f64], axis: usize) -> Vec<(f64, f64, usize)> {
    let (lo, hi) = s.bounds();
    let (gx, gw) = gauss_legendre(20 - axis);
    let mut pts = vec![lo];
    pts.extend(cuts.iter().copied().filter(|&c| c > lo && c < hi));
    if hi.is_finite() {
        pts.push(hi);
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let mut out = Vec::new();
    let mut push_chart = |base: f64, scale: f64, sign: f64, grow: bool, a: f64, b: f64| {
        for &(s0, s1, lev) in &PANELS {
            let half = 0.5 * (s1 - s0);
            let mid = 0.5 * (s0 + s1);
            for (t, w) in gx.iter().zip(&gw) {
                let t = mid + half * t;
                let (x, lw) = if grow {
                    (base + scale * t.exp(), (half * w * scale).ln() + t)
                } else {
                    (base + sign * scale * (-t).exp(), (half * w * scale).ln() - t)
                };
                if x > a && x < b && x.is_finite() {
                    out.push((x, lw, lev));
                }
            }
        }
    };
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = 0.5 * (b - a);
        push_chart(a, h, 1.0, false, a, b);
        push_chart(b, h, -1.0, false, a, b);
    }
    if hi.is_infinite() {
        let a = *pts.last().unwrap();
        push_chart(a, 1.0, 1.0, false, a, a + 1.0);
        push_chart(a, 1.0, 1.0, true, a + 1.0 - 1e-12, f64::INFINITY);
    }
    out
}

#[derive(Clone)]
struct Node {
    pt: Point,
    lw_mu: f64,
    lw_m: f64,
    level: usize,
    cell: usize,
}

enum Source<'a> {
    Eval(&'a Integrand),
    Cells { vals: Vec<f64>, c: usize },
}

struct Plan<'a> {
    axes: Vec<Vec<Node>>,
    source: Source<'a>,
    levels: usize,
}

impl Plan<'_> {
    fn lnf(&self, idx: &[usize]) -> f64 {
        match &self.source {
            Source::Eval(f) => {
                let pts: Vec<&Point> = idx.iter().enumerate().map(|(a, &i)| &self.axes[a][i].pt).collect();
                f.log_eval(&pts)
            }
            Source::Cells { vals, c } => {
                let mut flat = 0usize;
                for (a, &i) in idx.iter().enumerate().rev() {
                    flat = flat * c + self.axes[a][i].cell;
                }
                vals[flat]
            }
        }
    }
}

fn finite_step_grid(f: &Integrand) -> Option<Vec<f64>> {
    let steps = f.steps()?;
    let mut grid = Vec::new();
    for b in steps {
        for c in &b.rect.0 {
            match c {
                CoordSet::Interval(lo, hi) if lo.is_finite() && hi.is_finite() => {
                    grid.push(*lo);
                    grid.push(*hi);
                }
                _ => return None,
            }
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    Some(grid)
}

fn paint(f: &Integrand, grid: &[f64], k: usize) -> Option<Vec<f64>> {
    let c = grid.len().checked_sub(1)?;
    let size = c.checked_pow(k as u32)?;
    if size > 20_000_000 {
        return None;
    }
    let mut vals = vec![0.0f64; size];
    let locate = |x: f64| grid.partition_point(|&g| g < x);
    for b in f.steps()? {
        let ranges: Vec<(usize, usize)> = b
            .rect
            .0
            .iter()
            .map(|side| match side {
                CoordSet::Interval(lo, hi) => (locate(*lo), locate(*hi)),
                _ => (0, 0),
            })
            .collect();
        if ranges.iter().any(|(a, b)| b <= a) {
            continue;
        }
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let mut flat = 0usize;
            for a in (0..k).rev() {
                flat = flat * c + idx[a];
            }
            if b.value > vals[flat] {
                vals[flat] = b.value;
            }
            for a in 0..k {
                idx[a] += 1;
                if idx[a] < ranges[a].1 {
                    continue 'outer;
                }
                idx[a] = ranges[a].0;
            }
            break;
        }
    }
    Some(vals.into_iter().map(f64::ln).collect())
}

fn model_log_m(model: Option<&RefModel>) -> Option<LogDensity> {
    match model {
        Some(RefModel::Density { log_m, .. }) => Some(log_m.clone()),
        _ => None,
    }
}

fn plan<'a>(f: &'a Integrand, space: &MeasureSpace, model: Option<&RefModel>) -> Result<Plan<'a>, IntegrabilityError> {
    let k = f.k();
    match space {
        MeasureSpace::Discrete(d) => {
            let w = d.weights();
            let nodes: Vec<Node> = (0..d.len())
                .map(|a| {
                    let lw_mu = w[a].ln();
                    let lw_m = match model {
                        Some(RefModel::Atoms(p)) => p[a].ln(),
                        _ => lw_mu,
                    };
                    Node { pt: Point::Atom(a), lw_mu, lw_m, level: 0, cell: a }
                })
                .collect();
            Ok(Plan { axes: vec![nodes; k], source: Source::Eval(f), levels: 1 })
        }
        MeasureSpace::Interval(s) => {
            let log_m = model_log_m(model);
            let psi_const = match model {
                Some(RefModel::Density { psi_const, .. }) => *psi_const,
                _ => Some(1.0),
            };
            if let Some(grid) = finite_step_grid(f) {
                if grid.len() < 2 {
                    return Ok(Plan { axes: vec![Vec::new(); k], source: Source::Eval(f), levels: 1 });
                }
                let mut nodes = Vec::new();
                for (i, w) in grid.windows(2).enumerate() {
                    let (a, b) = (w[0], w[1]);
                    if let Some(c) = psi_const {
                        let lw_mu = s.mass(a, b).ln();
                        nodes.push(Node {
                            pt: Point::Real(0.5 * (a + b)),
                            lw_mu,
                            lw_m: lw_mu - c.ln(),
                            level: 0,
                            cell: i,
                        });
                    } else {
                        let (gx, gw) = gauss_legendre(4);
                        let half = 0.5 * (b - a);
                        for (t, wt) in gx.iter().zip(&gw) {
                            let x = 0.5 * (a + b) + half * t;
                            let lw = (half * wt).ln();
                            let lw_m = lw + log_m.as_ref().map_or(s.log_mu_density(x), |g| g(x));
                            nodes.push(Node {
                                pt: Point::Real(x),
                                lw_mu: lw + s.log_mu_density(x),
                                lw_m,
                                level: 0,
                                cell: i,
                            });
                        }
                    }
                }
                let source = match paint(f, &grid, k) {
                    Some(vals) => Source::Cells { vals, c: grid.len() - 1 },
                    None => Source::Eval(f),
                };
                return Ok(Plan { axes: vec![nodes; k], source, levels: 1 });
            }
            if k > 3 {
                return Err(IntegrabilityError::OrderTooLarge(k));
            }
            let mut cuts = f.breakpoints().to_vec();
            if let Some(RefModel::Density { cuts: c, .. }) = model {
                cuts.extend_from_slice(c);
            }
            let axes = (0..k)
                .map(|axis| {
                    chart_nodes(s, &cuts, axis)
                        .into_iter()
                        .map(|(x, lw, level)| Node {
                            pt: Point::Real(x),
                            lw_mu: lw + s.log_mu_density(x),
                            lw_m: lw + log_m.as_ref().map_or(s.log_mu_density(x), |g| g(x)),
                            level,
                            cell: 0,
                        })
                        .collect()
                })
                .collect();
            Ok(Plan { axes, source: Source::Eval(f), levels: LEVELS })
        }
        MeasureSpace::Renewal(_) => Err(IntegrabilityError::UnsupportedSpace),
    }
}

#[derive(Clone, Default)]
struct Acc {
    alpha: [f64; LEVELS],
    logk: [f64; LEVELS],
    lll: [f64; LEVELS],
    suff: [f64; LEVELS],
}

impl Acc {
    fn merge(&mut self, o: &Acc) {
        for l in 0..LEVELS {
            self.alpha[l] += o.alpha[l];
            self.logk[l] += o.logk[l];
            self.lll[l] += o.lll[l];
            self.suff[l] += o.suff[l];
        }
    }
}

fn lp(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
fn add_terms(acc: &mut Acc, level: usize, k: usize, alpha: f64, lnf: f64, lw_mu: f64, lpsi: f64) {
    if lnf == f64::NEG_INFINITY || lw_mu == f64::NEG_INFINITY {
        return;
    }
    let base = (alpha * lnf + lw_mu).exp();
    let l = lp(lnf);
    let e = k as i32 - 1;
    acc.alpha[level] += base;
    acc.logk[level] += base * (1.0 + l.powi(e));
    acc.lll[level] += base * (1.0 + l * lp(lnf.abs().ln()));
    acc.suff[level] += base * (1.0 + lp(lnf + lpsi / alpha).powi(e));
}

struct Evaluation {
    l_alpha: FunctionalValue,
    logk: FunctionalValue,
    lll: FunctionalValue,
    suff: FunctionalValue,
    i2: Option<FunctionalValue>,
}

fn finish(per_level: &[f64; LEVELS], levels: usize) -> FunctionalValue {
    if levels == 1 {
        return FunctionalValue::exact(per_level[0]);
    }
    assess_levels(&cumulate(&per_level[..levels]))
}

fn evaluate(
    f: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
    model: Option<&RefModel>,
) -> Result<Evaluation, IntegrabilityError> {
    assert!(alpha > 0.0, "alpha must be positive");
    let k = f.k();
    let p = plan(f, space, model)?;
    let n0 = p.axes[0].len();
    let (acc, i2) = if k == 2 {
        let n1 = p.axes[1].len();
        let rows: Vec<Vec<f64>> = (0..n0).into_par_iter().map(|i| (0..n1).map(|j| p.lnf(&[i, j])).collect()).collect();
        let mut acc = Acc::default();
        for (i, row) in rows.iter().enumerate() {
            let a = &p.axes[0][i];
            for (j, &v) in row.iter().enumerate() {
                let b = &p.axes[1][j];
                let lpsi = (a.lw_mu - a.lw_m) + (b.lw_mu - b.lw_m);
                add_terms(&mut acc, a.level.max(b.level), 2, alpha, v, a.lw_mu + b.lw_mu, lpsi);
            }
        }
        let i2 = condition_i2_from(&rows, &p, alpha);
        (acc, Some(i2))
    } else {
        let parts: Vec<Acc> = (0..n0)
            .into_par_iter()
            .map(|i| {
                let mut acc = Acc::default();
                let mut idx = vec![0usize; k];
                idx[0] = i;
                if (1..k).any(|a| p.axes[a].is_empty()) {
                    return acc;
                }
                loop {
                    let v = p.lnf(&idx);
                    let (mut lw, mut lpsi, mut lev) = (0.0, 0.0, 0);
                    for (a, &j) in idx.iter().enumerate() {
                        let nd = &p.axes[a][j];
                        lw += nd.lw_mu;
                        lpsi += nd.lw_mu - nd.lw_m;
                        lev = lev.max(nd.level);
                    }
                    add_terms(&mut acc, lev, k, alpha, v, lw, lpsi);
                    let mut a = 1;
                    loop {
                        if a == k {
                            return acc;
                        }
                        idx[a] += 1;
                        if idx[a] < p.axes[a].len() {
                            break;
                        }
                        idx[a] = 0;
                        a += 1;
                    }
                }
            })
            .collect();
        let mut acc = Acc::default();
        for part in &parts {
            acc.merge(part);
        }
        (acc, None)
    };
    Ok(Evaluation {
        l_alpha: finish(&acc.alpha, p.levels),
        logk: finish(&acc.logk, p.levels),
        lll: finish(&acc.lll, p.levels),
        suff: finish(&acc.suff, p.levels),
        i2,
    })
}

fn condition_i2_from(rows: &[Vec<f64>], p: &Plan<'_>, alpha: f64) -> FunctionalValue {
    let (a0, a1) = (&p.axes[0], &p.axes[1]);
    let mut left = vec![0.0f64; a0.len()];
    let mut right = vec![0.0f64; a1.len()];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            left[i] += (alpha * v + a1[j].lw_mu).exp();
            right[j] += (alpha * v + a0[i].lw_mu).exp();
        }
    }
    let mut per_level = [0.0f64; LEVELS];
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            let base = (alpha * v + a0[i].lw_mu + a1[j].lw_mu).exp();
            let ratio = v - (left[i].ln() + right[j].ln()) / alpha;
            let ratio = if ratio.is_nan() { 0.0 } else { ratio };
            per_level[a0[i].level.max(a1[j].level)] += base * (1.0 + lp(ratio));
        }
    }
    finish(&per_level, p.levels)
}

fn need_order(f: &Integrand, k: usize) -> Result<(), IntegrabilityError> {
    if f.k() != k {
        return Err(IntegrabilityError::OrderMismatch { expected: k, found: f.k() });
    }
    Ok(())
}

/// `int f^alpha dmu^k`.
pub fn moment_l_alpha(f: &Integrand, space: &MeasureSpace, alpha: f64) -> Result<FunctionalValue, IntegrabilityError> {
    Ok(evaluate(f, space, alpha, None)?.l_alpha)
}

/// `int f^alpha (1 + (ln_+ f)^{k-1}) dmu^k`.
pub fn moment_lalpha_logk(
    f: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
    k: usize,
) -> Result<FunctionalValue, IntegrabilityError> {
    need_order(f, k)?;
    Ok(evaluate(f, space, alpha, None)?.logk)
}

/// `int f^alpha (1 + ln_+ f * ln_+ |ln f|) dmu^2`.
pub fn moment_llog_loglog(
    f: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
) -> Result<FunctionalValue, IntegrabilityError> {
    need_order(f, 2)?;
    Ok(evaluate(f, space, alpha, None)?.lll)
}

/// The double integral of `f^alpha (1 + ln_+(f / (row marginal * column marginal)^{1/alpha}))`,
/// with marginals `int f(s, .)^alpha dmu` and `int f(., t)^alpha dmu`; 0/0 counts as 1.
pub fn condition_i2(f: &Integrand, space: &MeasureSpace, alpha: f64) -> Result<FunctionalValue, IntegrabilityError> {
    need_order(f, 2)?;
    Ok(evaluate(f, space, alpha, None)?.i2.expect("order-2 evaluation carries the marginal functional"))
}

/// `L^alpha ln^{k-1} L` of `f (psi^{(x)k})^{1/alpha}` under the reference chosen by `choice`.
pub fn sufficient_functional(
    f: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
    choice: MChoice,
) -> Result<Option<FunctionalValue>, IntegrabilityError> {
    let built = build_model(f, space, alpha, choice)?;
    match built.model {
        Some(m) => Ok(Some(evaluate(f, space, alpha, Some(&m))?.suff)),
        None => Ok(None),
    }
}

/// All functionals plus a verdict from the sufficient and the necessary moment conditions.
pub fn classify_integrability(
    f: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
    choice: MChoice,
) -> Result<MomentReport, IntegrabilityError> {
    let k = f.k();
    let built = build_model(f, space, alpha, choice)?;
    let ev = evaluate(f, space, alpha, built.model.as_ref())?;
    let sufficient = built.model.as_ref().map(|_| ev.suff.clone());
    let (verdict, note) = verdict_of(&ev.l_alpha, sufficient.as_ref());
    Ok(MomentReport {
        order: k,
        alpha,
        l_alpha: ev.l_alpha,
        l_alpha_logk: ev.logk,
        l_alpha_logloglog: (k == 2).then_some(ev.lll),
        i2: ev.i2,
        sufficient,
        reference: built.label,
        verdict,
        note,
    })
}

/// The integrand and the two reference measures of the measure-sensitivity example:
/// `f(x, y) = g(x) g(y)` on `(0, e^{-e})^2` with `g(x) = 1 / (x ln(1/x)^3)`, and `f = 1`
/// elsewhere on the unit square.
pub struct DuelingSetup {
    pub integrand: Integrand,
    /// Lebesgue measure with the uniform reference, `psi = 1`.
    pub uniform: MeasureSpace,
    /// Lebesgue measure with reference density `exp(-(ln 1/x)^2) / C`.
    pub squeezed: MeasureSpace,
}

pub fn dueling_example() -> DuelingSetup {
    let cut = (-std::f64::consts::E).exp();
    let log_g = |x: f64| {
        let l = -x.ln();
        l - 3.0 * l.ln()
    };
    let raw = move |pts: &[&Point]| -> f64 {
        let (x, y) = (pts[0].as_real().unwrap_or(f64::NAN), pts[1].as_real().unwrap_or(f64::NAN));
        if x < cut && y < cut {
            (log_g(x) + log_g(y)).exp()
        } else {
            1.0
        }
    };
    let integrand = Integrand::new(2, "dueling", raw)
        .with_log_eval(move |pts| {
            let (x, y) = (pts[0].as_real().unwrap_or(f64::NAN), pts[1].as_real().unwrap_or(f64::NAN));
            if x < cut && y < cut {
                log_g(x) + log_g(y)
            } else {
                0.0
            }
        })
        .with_symmetric(true)
        .with_breakpoints(vec![cut]);
    let uniform = make_unit_interval(None).expect("unit interval");
    let squeezed = make_unit_interval(None)
        .and_then(|s| s.with_reference(DensityFn::log_squeezed(), None))
        .expect("squeezed reference");
    DuelingSetup { integrand, uniform, squeezed }
}

/// How the side lengths `a_i` of a cube family decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum SideLaw {
    /// `a_i = ratio^i`, `i >= 1`.
    Geometric { ratio: f64 },
    /// `a_i = i^{-exponent}`, `i >= 1`.
    Power { exponent: f64 },
    /// `a_i^k = 1 / (i ln(i+1)^2)`, `i >= 2` (so that every `a_i < 1`).
    LogSquared,
}

/// Disjoint off-diagonal cubes `A_i = prod_j [k i + j, k i + j + a_i)` on the half line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubeFamily {
    pub order: usize,
    pub law: SideLaw,
}

/// Terms summed explicitly before the analytic tail takes over.
const SERIES_TERMS: usize = 1 << 20;

impl CubeFamily {
    pub fn new(order: usize, law: SideLaw) -> Self {
        assert!(order >= 1);
        CubeFamily { order, law }
    }

    /// The divergent family: finite product mass, infinite integral.
    pub fn divergent(order: usize) -> Self {
        CubeFamily::new(order, SideLaw::LogSquared)
    }

    pub fn first_index(&self) -> usize {
        match self.law {
            SideLaw::LogSquared => 2,
            _ => 1,
        }
    }

    /// Side length of the `n`-th cube (0-based).
    pub fn side(&self, n: usize) -> f64 {
        let i = (n + self.first_index()) as f64;
        match self.law {
            SideLaw::Geometric { ratio } => ratio.powf(i),
            SideLaw::Power { exponent } => i.powf(-exponent),
            SideLaw::LogSquared => (1.0 / (i * (i + 1.0).ln().powi(2))).powf(1.0 / self.order as f64),
        }
    }

    pub fn cube(&self, n: usize) -> Rectangle {
        let k = self.order;
        let i = (n + self.first_index()) as f64;
        let a = self.side(n);
        Rectangle((0..k).map(|j| interval(k as f64 * i + j as f64, k as f64 * i + j as f64 + a)).collect())
    }

    /// Indicator of the first `n` cubes.
    pub fn integrand(&self, n: usize) -> Integrand {
        let boxes = (0..n).map(|i| crate::integrand::StepBox { rect: self.cube(i), value: 1.0 }).collect();
        Integrand::step(self.order, boxes).with_label(&format!("cubes[{n}]"))
    }

    /// Lebesgue half line exhausted by `[0, 2^j)`.
    pub fn space(&self) -> MeasureSpace {
        let ex = (1..=48).map(|j| (0.0, 2f64.powi(j))).collect();
        make_sigma_finite_interval(0.0, f64::INFINITY, None, ex).expect("half line")
    }

    fn partial<F: Fn(f64) -> f64>(&self, term: F) -> f64 {
        let mut s = 0.0;
        for n in 0..SERIES_TERMS {
            let t = term(self.side(n));
            s += t;
            if matches!(self.law, SideLaw::Geometric { .. }) && t < 1e-18 * s {
                break;
            }
        }
        s
    }

    /// `lambda^k(A) = sum a_i^k`.
    pub fn product_mass(&self) -> FunctionalValue {
        let k = self.order as f64;
        let n = (SERIES_TERMS + self.first_index()) as f64;
        let head = self.partial(|a| a.powf(k));
        match self.law {
            SideLaw::Geometric { .. } => FunctionalValue::exact(head),
            SideLaw::Power { exponent } => {
                let q = exponent * k;
                if q <= 1.0 {
                    FunctionalValue::infinite()
                } else {
                    FunctionalValue::exact(head + n.powf(1.0 - q) / (q - 1.0))
                }
            }
            // int_n^inf dx / (x ln(x+1)^2) lies between 1/ln(n+1) and 1/ln(n)
            SideLaw::LogSquared => FunctionalValue::exact(head + 0.5 * (1.0 / n.ln() + 1.0 / (n + 1.0).ln())),
        }
    }

    /// `sum a_i^k |ln a_i|^{k-1}`.
    pub fn log_weighted_mass(&self) -> FunctionalValue {
        let k = self.order as f64;
        let head = self.partial(|a| a.powf(k) * a.ln().abs().powf(k - 1.0));
        match self.law {
            SideLaw::Geometric { .. } => FunctionalValue::exact(head),
            SideLaw::Power { exponent } if exponent * k > 1.0 => FunctionalValue::exact(head),
            SideLaw::Power { .. } => FunctionalValue::infinite(),
            SideLaw::LogSquared if self.order >= 2 => FunctionalValue::infinite(),
            SideLaw::LogSquared => FunctionalValue::exact(head),
        }
    }

    /// Both conditions of the divergent construction hold: finite product mass,
    /// infinite log-weighted mass, every side below 1.
    pub fn integral_diverges(&self) -> bool {
        let below_one = match self.law {
            SideLaw::Geometric { ratio } => ratio < 1.0,
            SideLaw::Power { .. } => false,
            SideLaw::LogSquared => true,
        };
        below_one && self.product_mass().is_finite() && self.log_weighted_mass().is_infinite()
    }

    /// The order-2 marginal functional: `sum a_i^2 (1 + (2/alpha) ln_+(1/a_i))`.
    pub fn condition_i2(&self, alpha: f64) -> FunctionalValue {
        assert_eq!(self.order, 2);
        let mass = self.product_mass();
        if !mass.is_finite() {
            return mass;
        }
        let head = self.partial(|a| a * a * (1.0 + 2.0 / alpha * lp(-a.ln())));
        match self.law {
            SideLaw::LogSquared => FunctionalValue::infinite(),
            _ => FunctionalValue::exact(head),
        }
    }

    /// Report for the full infinite union under the exhaustion reference of [`CubeFamily::space`].
    ///
    /// `psi` equals `2^{2n+1}` on `[2^n, 2^{n+1})`, so a cube at height `~k i` carries
    /// `ln_+ F ~ (2k/alpha) ln i`; that series and the indicator series are summed
    /// explicitly and their tails decided from the side law.
    pub fn report(&self, alpha: f64) -> MomentReport {
        let k = self.order;
        let mass = self.product_mass();
        let i2 = (k == 2).then(|| self.condition_i2(alpha));
        let dyadic_log_psi = |x: f64| {
            if x < 2.0 {
                2f64.ln() * 2.0
            } else {
                let n = x.log2().floor();
                (2.0 * n + 1.0) * 2f64.ln()
            }
        };
        let head: f64 = (0..SERIES_TERMS.min(1 << 16))
            .map(|n| {
                let rect = self.cube(n);
                let lpsi: f64 = rect
                    .0
                    .iter()
                    .map(|c| match c {
                        CoordSet::Interval(lo, _) => dyadic_log_psi(*lo),
                        _ => 0.0,
                    })
                    .sum();
                let a = self.side(n);
                a.powf(k as f64) * (1.0 + lp(lpsi / alpha).powi(k as i32 - 1))
            })
            .sum();
        let weighted = self.log_weighted_mass();
        // the extra factor grows like (ln i)^{k-1}, matching |ln a_i|^{k-1} up to constants
        let sufficient = if !mass.is_finite() {
            mass.clone()
        } else {
            match self.law {
                SideLaw::LogSquared if k >= 2 => FunctionalValue::infinite(),
                SideLaw::Power { exponent } if exponent * k as f64 <= 1.0 => FunctionalValue::infinite(),
                _ if weighted.is_infinite() => FunctionalValue::infinite(),
                _ => FunctionalValue::exact(head),
            }
        };
        let (verdict, mut note) = verdict_of(&mass, Some(&sufficient));
        if self.integral_diverges() {
            note = Some(format!("{} The integral of this union is almost surely infinite.", note.unwrap_or_default()));
        }
        MomentReport {
            order: k,
            alpha,
            l_alpha: mass.clone(),
            l_alpha_logk: mass.clone(),
            l_alpha_logloglog: (k == 2).then(|| mass.clone()),
            i2,
            sufficient: Some(sufficient),
            reference: "exhaustion-density".into(),
            verdict,
            note,
        }
    }
}

/// Settings for [`divergence_probe`] and [`cube_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Truncation sizes, typically doubling.
    pub schedule: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub workers: usize,
    pub thresholds: Vec<f64>,
    /// Relative growth over the second half of the schedule that still counts as a plateau.
    pub plateau_tol: f64,
    /// Exhaustion depth used when the space has no global reference.
    pub depth: usize,
}

impl ProbeConfig {
    pub fn doubling(from_exp: u32, to_exp: u32, replicates: usize, seed: u64) -> Self {
        ProbeConfig {
            schedule: (from_exp..=to_exp).map(|e| 1usize << e).collect(),
            replicates,
            seed,
            workers: crate::harness::default_workers(),
            thresholds: vec![1e3],
            plateau_tol: 1e-2,
            depth: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub schedule: Vec<usize>,
    /// One nondecreasing trace per replicate.
    pub traces: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    /// The median passes every threshold somewhere along the schedule.
    pub diverges: bool,
    pub plateaus: bool,
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn summarize(schedule: &[usize], traces: Vec<Vec<f64>>, cfg: &ProbeConfig) -> ProbeTrace {
    let median: Vec<f64> = (0..schedule.len()).map(|j| median_of(traces.iter().map(|t| t[j]).collect())).collect();
    let top = median.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let diverges = !cfg.thresholds.is_empty() && cfg.thresholds.iter().all(|&t| top > t);
    let mid = median.len() / 2;
    let plateaus = match (median.get(mid), median.last()) {
        (Some(&a), Some(&b)) if a > 0.0 => (b - a) / a <= cfg.plateau_tol,
        (Some(&a), Some(&b)) => a == 0.0 && b == 0.0,
        _ => false,
    };
    ProbeTrace { schedule: schedule.to_vec(), traces, median, diverges, plateaus }
}

/// LePage sups over the first `N` arrivals for each `N` in the schedule, per replicate.
pub fn divergence_probe(
    f: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
    cfg: &ProbeConfig,
) -> Result<ProbeTrace, IntegrabilityError> {
    let space = sampling_space(space, cfg.depth)?;
    let mut schedule = cfg.schedule.clone();
    schedule.sort_unstable();
    let traces: Vec<Vec<f64>> = par_map_seeds(cfg.replicates, cfg.seed, cfg.workers, |seed, _| {
        let mut stream = LePageStream::new(seed, &space);
        let mut best = 0.0f64;
        schedule
            .iter()
            .map(|&n| {
                best = best.max(lepage_sup_fixed(f, alpha, &mut stream, n, Enumeration::Pruned));
                best
            })
            .collect()
    });
    Ok(summarize(&schedule, traces, cfg))
}

/// Exact truncated integrals of a cube union: the running max over the first `N`
/// cubes of `a_i^{k/alpha}` times a product of `k` independent standard Frechet variables.
pub fn cube_probe(family: &CubeFamily, alpha: f64, cfg: &ProbeConfig) -> ProbeTrace {
    let mut schedule = cfg.schedule.clone();
    schedule.sort_unstable();
    let last = schedule.last().copied().unwrap_or(0);
    let k = family.order;
    let scales: Vec<f64> = (0..last).map(|n| family.side(n).powf(k as f64 / alpha)).collect();
    let traces = par_map_seeds(cfg.replicates, cfg.seed, cfg.workers, |seed, _| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = 0.0f64;
        let mut out = Vec::with_capacity(schedule.len());
        let mut next = 0;
        for (n, &c) in scales.iter().enumerate() {
            let mut prod = c;
            for _ in 0..k {
                let e: f64 = Exp1.sample(&mut rng);
                prod *= e.powf(-1.0 / alpha);
            }
            best = best.max(prod);
            while next < schedule.len() && schedule[next] == n + 1 {
                out.push(best);
                next += 1;
            }
        }
        while out.len() < schedule.len() {
            out.push(best);
        }
        out
    });
    summarize(&schedule, traces, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub index: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub rows: Vec<CouplingRow>,
    /// Verdict for the dominating integrand.
    pub dominating: Verdict,
}

/// Estimates `E|I(f_n) - I(f)|^r` with every integral on the same LePage stream per replicate.
#[allow(clippy::too_many_arguments)]
pub fn coupled_convergence_check(
    seq: &[Integrand],
    f: &Integrand,
    dominating: &Integrand,
    space: &MeasureSpace,
    alpha: f64,
    r: f64,
    replicates: usize,
    seed: u64,
    policy: TruncationPolicy,
) -> Result<CouplingTrace, IntegrabilityError> {
    let dom = match classify_integrability(dominating, space, alpha, MChoice::Default) {
        Ok(rep) => rep.verdict,
        Err(_) => Verdict::Inconclusive,
    };
    let space = sampling_space(space, 0)?;
    let draws: Vec<Vec<f64>> = par_map_seeds(replicates, seed, crate::harness::default_workers(), |s, _| {
        let mut stream = LePageStream::new(s, &space);
        let (target, _) = lepage_sup(f, alpha, &mut stream, policy);
        seq.iter()
            .map(|g| {
                let (v, _) = lepage_sup(g, alpha, &mut stream, policy);
                let d = (v - target).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d.powf(r)
                }
            })
            .collect()
    });
    let rows = (0..seq.len())
        .map(|n| {
            let col: Vec<f64> = draws.iter().map(|d| d[n]).collect();
            let (mean, se) = mean_se(&col);
            CouplingRow { index: n + 1, mean, se }
        })
        .collect();
    Ok(CouplingTrace { rows, dominating: dom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::StepBox;
    use crate::measure::{make_discrete_space, make_interval};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    fn constant(k: usize, c: f64) -> Integrand {
        Integrand::new(k, "const", move |_| c).with_envelope(c).with_symmetric(true)
    }

    #[test]
    fn indicator_functional_is_mass() {
        let unit = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(Rectangle(vec![interval(0.0, 0.5), interval(0.5, 1.0)]));
        let v = moment_lalpha_logk(&f, &unit, 1.3, 2).unwrap();
        assert!(close(v.value, 0.25, 1e-12), "{v:?}");
        let w = moment_llog_loglog(&f, &unit, 0.7).unwrap();
        assert!(close(w.value, 0.25, 1e-12));
    }

    #[test]
    fn constant_integrands_on_probability_square() {
        let unit = make_unit_interval(None).unwrap();
        for &(c, alpha) in &[(3.0f64, 1.0f64), (5.0, 0.5)] {
            let v = moment_lalpha_logk(&constant(2, c), &unit, alpha, 2).unwrap();
            let want = c.powf(alpha) * (1.0 + c.ln());
            assert!(close(v.value, want, 1e-9), "{} vs {want}", v.value);
        }
        let v3 = moment_lalpha_logk(&constant(3, 4.0), &unit, 1.0, 3).unwrap();
        assert!(close(v3.value, 4.0 * (1.0 + 4f64.ln().powi(2)), 1e-8));
        let e = std::f64::consts::E;
        let w = moment_llog_loglog(&constant(2, e), &unit, 1.5).unwrap();
        assert!(close(w.value, e.powf(1.5), 1e-9));
        let ee = e.powf(e);
        let w = moment_llog_loglog(&constant(2, ee), &unit, 0.8).unwrap();
        assert!(close(w.value, (e * 0.8).exp() * (1.0 + e), 1e-9));
    }

    #[test]
    fn geometric_cubes_have_mass_one_third() {
        let fam = CubeFamily::new(2, SideLaw::Geometric { ratio: 0.5 });
        let f = fam.integrand(60);
        let v = moment_lalpha_logk(&f, &fam.space(), 1.0, 2).unwrap();
        assert!(close(v.value, 1.0 / 3.0, 1e-12), "{v:?}");
        assert!(close(fam.product_mass().value, 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn separable_i2_closed_form() {
        // phi(x) = x on [0, 1], alpha = 1: c = 1/2, value c^2 (1 + ln 4)
        let unit = make_unit_interval(None).unwrap();
        let phi = Integrand::new(1, "x", |p| p[0].as_real().unwrap());
        let f = Integrand::separable(&[phi.clone(), phi]);
        let v = condition_i2(&f, &unit, 1.0).unwrap();
        assert!(close(v.value, 0.25 * (1.0 + 4f64.ln()), 1e-8), "{v:?}");
    }

    #[test]
    fn disjoint_rectangle_i2() {
        let unit = make_unit_interval(None).unwrap();
        let (ma, mb) = (0.25, 0.5);
        let f = Integrand::indicator(Rectangle(vec![interval(0.0, ma), interval(0.5, 0.5 + mb)]));
        for &alpha in &[1.0, 0.5, 2.0] {
            let v = condition_i2(&f, &unit, alpha).unwrap();
            let want = ma * mb * (1.0 + (1.0f64 / (ma * mb)).ln() / alpha);
            assert!(close(v.value, want, 1e-12), "{alpha}: {} vs {want}", v.value);
            // 20 x 20 discretization oracle: atoms of mass 1/20
            let atoms: Vec<(String, f64)> = (0..20).map(|i| (format!("c{i}"), 0.05)).collect();
            let disc = make_discrete_space(&atoms).unwrap();
            let fd = Integrand::new(2, "cells", move |p| {
                let (i, j) = (p[0].as_atom().unwrap(), p[1].as_atom().unwrap());
                if i < 5 && (10..20).contains(&j) {
                    1.0
                } else {
                    0.0
                }
            });
            let d = condition_i2(&fd, &disc, alpha).unwrap();
            assert!(close(d.value, want, 1e-12));
        }
    }

    #[test]
    fn zero_integrand_is_zero() {
        let unit = make_unit_interval(None).unwrap();
        let z = Integrand::zero(2);
        assert_eq!(condition_i2(&z, &unit, 1.0).unwrap().value, 0.0);
        let r = classify_integrability(&z, &unit, 1.0, MChoice::Default).unwrap();
        assert_eq!(r.verdict, Verdict::SufficientUnderGivenM);
    }

    #[test]
    fn log_divergence_is_detected() {
        // int_0^{1/2} dx / (x ln(1/x)) diverges like ln ln
        let unit = make_unit_interval(None).unwrap();
        let f = Integrand::new(1, "loglog", |p| {
            let x = p[0].as_real().unwrap();
            if x < 0.5 {
                1.0 / (x * (-x.ln()))
            } else {
                0.0
            }
        })
        .with_log_eval(|p| {
            let x = p[0].as_real().unwrap();
            if x < 0.5 {
                -x.ln() - (-x.ln()).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .with_breakpoints(vec![0.5]);
        assert!(moment_l_alpha(&f, &unit, 1.0).unwrap().is_infinite());
        // with a squared log it converges to 1/ln 2
        let g = Integrand::new(1, "log2", |p| {
            let x = p[0].as_real().unwrap();
            if x < 0.5 {
                1.0 / (x * x.ln().powi(2))
            } else {
                0.0
            }
        })
        .with_breakpoints(vec![0.5]);
        let v = moment_l_alpha(&g, &unit, 1.0).unwrap();
        assert!(v.is_finite(), "{v:?}");
        assert!(close(v.value, 1.0 / 2f64.ln(), 1e-2), "{}", v.value);
        // power blow-up
        let h = Integrand::new(1, "pow", |p| p[0].as_real().unwrap().powf(-1.5));
        assert!(moment_l_alpha(&h, &unit, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn dueling_measures_disagree() {
        let d = dueling_example();
        let a = classify_integrability(&d.integrand, &d.uniform, 1.0, MChoice::Default).unwrap();
        let b = classify_integrability(&d.integrand, &d.squeezed, 1.0, MChoice::Default).unwrap();
        assert!(a.l_alpha.is_finite());
        assert!(a.sufficient.as_ref().unwrap().is_finite(), "{:?}", a.sufficient);
        assert!(b.sufficient.as_ref().unwrap().is_infinite(), "{:?}", b.sufficient);
        assert_eq!(a.verdict, Verdict::SufficientUnderGivenM);
        assert_eq!(b.verdict, Verdict::NecessaryHoldsOnly);
        assert!(b.note.is_some());
        // the inner-square mass: (int_e^inf t^-3 dt)^2 = 1/(4 e^4); charts stop at
        // ln(1/x) ~ 256, which drops a tail of relative size ~1e-6
        let cut = (-std::f64::consts::E).exp();
        let want = 0.25 * (-4.0f64).exp() + 1.0 - cut * cut;
        assert!(close(a.l_alpha.value, want, 1e-5), "{} vs {want}", a.l_alpha.value);
    }

    #[test]
    fn divergent_cubes_are_necessary_only() {
        let fam = CubeFamily::divergent(2);
        assert!(fam.integral_diverges());
        let r = fam.report(1.0);
        assert_eq!(r.verdict, Verdict::NecessaryHoldsOnly);
        assert!(r.i2.unwrap().is_infinite());
        let g = CubeFamily::new(2, SideLaw::Geometric { ratio: 0.5 }).report(1.0);
        assert_eq!(g.verdict, Verdict::SufficientUnderGivenM);
    }

    #[test]
    fn separable_default_reference_certifies() {
        // phi(x) = x^{-1/2}: in L^1 but unbounded; the constructed m still certifies
        let half =
            make_sigma_finite_interval(0.0, f64::INFINITY, None, vec![(0.0, 1.0), (0.0, 2.0), (0.0, 4.0), (0.0, 8.0)])
                .unwrap();
        let phi = Integrand::new(1, "phi", |p| {
            let x = p[0].as_real().unwrap();
            if x < 1.0 {
                x.powf(-0.5)
            } else {
                (-x).exp()
            }
        })
        .with_breakpoints(vec![1.0]);
        let f = Integrand::separable(&[phi.clone(), phi.clone()]);
        let r = classify_integrability(&f, &half, 1.0, MChoice::Default).unwrap();
        assert_eq!(r.reference, "separable-construction");
        assert_eq!(r.verdict, Verdict::SufficientUnderGivenM, "{r:?}");
        // not in L^1: fails the necessary condition
        let psi = Integrand::new(1, "heavy", |p| 1.0 / (1.0 + p[0].as_real().unwrap()));
        let g = Integrand::separable(&[psi.clone(), psi]);
        let r = classify_integrability(&g, &half, 1.0, MChoice::Default).unwrap();
        assert_eq!(r.verdict, Verdict::FailsNecessary, "{r:?}");
    }

    #[test]
    fn normalized_reference_on_weighted_interval() {
        let sp = make_interval(0.0, 2.0, Some(DensityFn::constant(1.5))).unwrap();
        let f = constant(2, 2.0);
        let r = classify_integrability(&f, &sp, 1.0, MChoice::Default).unwrap();
        // F = 2 * 3^2 under m uniform; sufficient = F (1 + ln F)
        let big: f64 = 2.0 * 9.0;
        assert!(close(r.sufficient.unwrap().value, big * (1.0 + big.ln()), 1e-9));
        assert!(close(r.l_alpha.value, 2.0 * 9.0, 1e-9));
    }

    #[test]
    fn probes_plateau_and_zero() {
        let unit = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(Rectangle(vec![interval(0.0, 0.5), interval(0.5, 1.0)]));
        let mut cfg = ProbeConfig::doubling(4, 12, 16, 3);
        cfg.workers = 1;
        let t = divergence_probe(&f, &unit, 1.0, &cfg).unwrap();
        assert!(t.plateaus && !t.diverges);
        for tr in &t.traces {
            assert!(tr.windows(2).all(|w| w[1] >= w[0]));
        }
        let z = divergence_probe(&Integrand::zero(2), &unit, 1.0, &cfg).unwrap();
        assert!(z.traces.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn coupling_trivial_and_scaled() {
        let unit = make_unit_interval(None).unwrap();
        let f = Integrand::indicator(Rectangle(vec![interval(0.0, 0.5), interval(0.5, 1.0)]));
        let same = vec![f.clone(); 3];
        let t = coupled_convergence_check(&same, &f, &f, &unit, 1.0, 1.0, 50, 1, TruncationPolicy::default()).unwrap();
        assert!(t.rows.iter().all(|r| r.mean == 0.0));
        assert_eq!(t.dominating, Verdict::SufficientUnderGivenM);
        let seq: Vec<Integrand> = (1..=6).map(|n| f.scale(1.0 - 1.0 / (n as f64 * 4.0))).collect();
        let t = coupled_convergence_check(&seq, &f, &f, &unit, 1.0, 0.5, 200, 2, TruncationPolicy::default()).unwrap();
        assert!(t.rows.windows(2).all(|w| w[1].mean < w[0].mean));
    }

    fn random_discrete(seed: u64) -> (MeasureSpace, Integrand) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let n = rng.random_range(2..7usize);
        let atoms: Vec<(String, f64)> = (0..n).map(|i| (format!("a{i}"), rng.random_range(0.05..3.0))).collect();
        let space = make_discrete_space(&atoms).unwrap();
        let table: Vec<f64> = (0..n * n)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(0.0..1.0),
                2 => rng.random_range(1.0..50.0f64).exp(),
                _ => rng.random_range(0.0..3.0),
            })
            .collect();
        let f = Integrand::new(2, "table", move |p| table[p[0].as_atom().unwrap() * n + p[1].as_atom().unwrap()]);
        (space, f)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ladder_holds_on_discrete(seed in any::<u64>(), alpha in 0.3f64..3.0) {
            let (space, f) = random_discrete(seed);
            let lll = moment_llog_loglog(&f, &space, alpha).unwrap();
            let logk = moment_lalpha_logk(&f, &space, alpha, 2).unwrap();
            let i2 = condition_i2(&f, &space, alpha).unwrap();
            let la = moment_l_alpha(&f, &space, alpha).unwrap();
            prop_assert!(!lll.is_finite() || logk.is_finite());
            prop_assert!(!logk.is_finite() || i2.is_finite());
            prop_assert!(!i2.is_finite() || la.is_finite());
            prop_assert!(la.value <= logk.value * (1.0 + 1e-12));
        }

        #[test]
        fn step_cells_match_discretized_oracle(lo in 0.0f64..0.4, w in 0.05f64..0.5, v in 0.5f64..20.0) {
            let unit = make_unit_interval(None).unwrap();
            let f = Integrand::step(2, vec![StepBox { rect: Rectangle(vec![interval(lo, lo + w), interval(0.95 - w, 0.95)]), value: v }]);
            if lo + w <= 0.95 - w {
                let got = moment_lalpha_logk(&f, &unit, 1.0, 2).unwrap().value;
                let want = w * w * v * (1.0 + lp(v.ln()));
                prop_assert!(close(got, want, 1e-12));
            }
        }
    }
}
