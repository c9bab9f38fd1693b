//! Samplers for single and multiple extremal integrals and their variants.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::derive_seed;
use crate::integrand::Integrand;
use crate::lepage::{
    lepage_sup, step_fast_path, step_value, sup_over, truncation_bound, upper_weights, LePageStream, TruncationPolicy,
    TruncationReport,
};
use crate::measure::{CoordSet, MeasureSpace, OffDiagonalSet, Point, Rectangle, SpaceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegralError {
    #[error("integrands have different orders ({0} vs {1})")]
    OrderMismatch(usize, usize),
    #[error("empty integrand family")]
    Empty,
    #[error("truncation did not converge within {0} arrivals")]
    NotConverged(usize),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Per-draw sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub seed: u64,
    pub policy: TruncationPolicy,
    /// Exhaustion depth used on infinite-mass spaces without a global reference measure.
    pub depth: usize,
    /// Fail instead of flagging when the adaptive policy hits its cap.
    pub strict: bool,
}

impl SampleConfig {
    pub fn seeded(seed: u64) -> Self {
        SampleConfig { seed, policy: TruncationPolicy::default(), depth: 0, strict: false }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SampleConfig { seed, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub values: Vec<f64>,
    pub stream_seed: u64,
    pub reports: Vec<TruncationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDecomposition {
    /// `S^(0) .. S^(min(p, q))`.
    pub terms: Vec<f64>,
    pub max: f64,
}

/// The space actually sampled: infinite-mass spaces without a reference are cut at `depth`.
pub fn sampling_space(space: &MeasureSpace, depth: usize) -> Result<MeasureSpace, SpaceError> {
    if space.can_sample() {
        Ok(space.clone())
    } else {
        space.restrict(depth)
    }
}

fn check(report: &TruncationReport, cfg: &SampleConfig) -> Result<(), IntegralError> {
    if cfg.strict && !report.converged {
        return Err(IntegralError::NotConverged(report.n_used));
    }
    Ok(())
}

/// One draw of the extremal integral of `f`.
pub fn sample_integral(
    f: &Integrand,
    alpha: f64,
    space: &MeasureSpace,
    cfg: &SampleConfig,
) -> Result<(f64, TruncationReport), IntegralError> {
    let space = sampling_space(space, cfg.depth)?;
    let mut stream = LePageStream::new(cfg.seed, &space);
    let (v, r) = lepage_sup(f, alpha, &mut stream, cfg.policy);
    check(&r, cfg)?;
    Ok((v, r))
}

/// Integrals of several integrands on one realization.
pub fn sample_joint(
    fs: &[Integrand],
    alpha: f64,
    space: &MeasureSpace,
    cfg: &SampleConfig,
) -> Result<JointSample, IntegralError> {
    let pairs: Vec<(&Integrand, f64)> = fs.iter().map(|f| (f, alpha)).collect();
    sample_joint_indexed(&pairs, space, cfg)
}

/// Joint draw with a separate stability index per integrand (power transforms).
pub fn sample_joint_indexed(
    fs: &[(&Integrand, f64)],
    space: &MeasureSpace,
    cfg: &SampleConfig,
) -> Result<JointSample, IntegralError> {
    let space = sampling_space(space, cfg.depth)?;
    let mut stream = LePageStream::new(cfg.seed, &space);
    joint_on_stream(fs, &mut stream, cfg)
}

/// Joint draw on a caller-owned stream.
pub fn joint_on_stream(
    fs: &[(&Integrand, f64)],
    stream: &mut LePageStream,
    cfg: &SampleConfig,
) -> Result<JointSample, IntegralError> {
    let mut values = Vec::with_capacity(fs.len());
    let mut reports = Vec::with_capacity(fs.len());
    for (f, alpha) in fs {
        let (v, r) = lepage_sup(f, *alpha, stream, cfg.policy);
        check(&r, cfg)?;
        values.push(v);
        reports.push(r);
    }
    Ok(JointSample { values, stream_seed: stream.seed(), reports })
}

/// Max-symmetrization; see [`Integrand::max_symmetrize`].
pub fn max_symmetrize(f: &Integrand) -> Integrand {
    f.max_symmetrize()
}

/// Seeds of the independent streams used by the decoupled sampler.
pub fn decoupled_seeds(seed: u64, k: usize) -> Vec<u64> {
    (0..k).map(|r| derive_seed(seed ^ 0x6465_636f_7570_6c65, r as u64)).collect()
}

fn decoupled_fixed(f: &Integrand, alpha: f64, streams: &mut [LePageStream], n: usize) -> f64 {
    let k = f.k();
    for s in streams.iter_mut() {
        s.ensure(n);
    }
    let w: Vec<Vec<f64>> = streams.iter().map(|s| s.weights(alpha, n)).collect();
    if step_fast_path(f) {
        // sides are disjoint, so points drawn for different sides never coincide
        let steps = f.steps().unwrap();
        let mut best = 0.0f64;
        for b in steps {
            let mut prod = b.value;
            for (axis, side) in b.rect.0.iter().enumerate() {
                let pts = &streams[axis].points()[..n];
                let m = pts.iter().zip(&w[axis]).filter(|(p, _)| side.contains(p)).map(|(_, &x)| x).fold(0.0, f64::max);
                prod *= m;
            }
            best = best.max(prod);
        }
        return best;
    }
    let upper: Option<Vec<Vec<f64>>> =
        streams.iter().map(|s| upper_weights(f, alpha, s, n)).collect::<Option<Vec<_>>>();
    let env = f.envelope();
    let mut best = 0.0f64;
    let mut idx = vec![0usize; k];
    grid_search(f, streams, &w, upper.as_deref(), env, 0, 1.0, &mut idx, &mut best);
    best
}

#[allow(clippy::too_many_arguments)]
fn grid_search(
    f: &Integrand,
    streams: &[LePageStream],
    w: &[Vec<f64>],
    upper: Option<&[Vec<f64>]>,
    env: Option<f64>,
    depth: usize,
    partial: f64,
    idx: &mut Vec<usize>,
    best: &mut f64,
) {
    let k = f.k();
    if depth == k {
        let pts: Vec<&Point> = (0..k).map(|a| &streams[a].points()[idx[a]]).collect();
        let v = f.eval(&pts) * partial;
        if v > *best {
            *best = v;
        }
        return;
    }
    let n = w[depth].len();
    for j in 0..n {
        if let (Some(u), Some(m)) = (upper, env) {
            let mut cap = m * partial * u[depth][j];
            for ua in u.iter().skip(depth + 1) {
                cap *= ua[0];
            }
            if cap <= *best {
                break;
            }
        }
        idx[depth] = j;
        grid_search(f, streams, w, upper, env, depth + 1, partial * w[depth][j], idx, best);
    }
}

/// One draw of the decoupled integral: `k` independent streams, indices over the full grid.
pub fn sample_decoupled(
    f: &Integrand,
    alpha: f64,
    space: &MeasureSpace,
    cfg: &SampleConfig,
) -> Result<(f64, TruncationReport), IntegralError> {
    let k = f.k();
    let space = sampling_space(space, cfg.depth)?;
    let mut streams: Vec<LePageStream> =
        decoupled_seeds(cfg.seed, k).into_iter().map(|s| LePageStream::new(s, &space)).collect();
    if f.envelope() == Some(0.0) {
        return Ok((0.0, TruncationReport { n_used: 0, remainder_bound: Some(0.0), converged: true }));
    }
    let env = f.envelope().zip(space.psi_bound()).map(|(m, ps)| m * ps.powf(k as f64 / alpha));
    let (mut n, rel_tol, cap) = match cfg.policy {
        TruncationPolicy::Fixed { n } => (n.max(1), f64::INFINITY, n.max(1)),
        TruncationPolicy::Adaptive { rel_tol, initial_n, cap } => (initial_n.max(1), rel_tol, cap),
    };
    loop {
        let v = decoupled_fixed(f, alpha, &mut streams, n);
        let bound = env.map(|m| {
            for s in streams.iter_mut() {
                s.ensure(n + 1);
            }
            let g1 = streams.iter().map(|s| s.gammas()[0]).fold(f64::INFINITY, f64::min);
            let gn = streams.iter().map(|s| s.gammas()[n]).fold(f64::INFINITY, f64::min);
            truncation_bound(m, alpha, k, g1, gn)
        });
        let done = match bound {
            Some(b) => b <= (1.0 + rel_tol) * v,
            None => false,
        };
        if done || n >= cap || bound.is_none() {
            let r = TruncationReport { n_used: n, remainder_bound: bound, converged: done };
            check(&r, cfg)?;
            return Ok((v, r));
        }
        n = (2 * n).min(cap);
    }
}

/// Product-formula terms `S^(r)` for symmetric `f` (order p) and `g` (order q) on one stream.
///
/// Asymmetric inputs are max-symmetrized first.
pub fn sample_product_decomposition(
    f: &Integrand,
    g: &Integrand,
    alpha: f64,
    space: &MeasureSpace,
    cfg: &SampleConfig,
) -> Result<ProductDecomposition, IntegralError> {
    let f = if f.is_symmetric() { f.clone() } else { f.max_symmetrize() };
    let g = if g.is_symmetric() { g.clone() } else { g.max_symmetrize() };
    let space = sampling_space(space, cfg.depth)?;
    let mut stream = LePageStream::new(cfg.seed, &space);
    let (_, rf) = lepage_sup(&f, alpha, &mut stream, cfg.policy);
    let (_, rg) = lepage_sup(&g, alpha, &mut stream, cfg.policy);
    check(&rf, cfg)?;
    check(&rg, cfg)?;
    let n = rf.n_used.max(rg.n_used);
    Ok(decomposition_on_stream(&f, &g, alpha, &mut stream, n))
}

/// Nonzero increasing tuples of `f` on the first `n` arrivals, sorted by decreasing value.
fn ranked_tuples(f: &Integrand, points: &[Point], w: &[f64]) -> Vec<(f64, Vec<usize>)> {
    let k = f.k();
    let mut out = Vec::new();
    for t in crate::lepage::enumerate_offdiag(k, points.len(), true) {
        let pts: Vec<&Point> = t.iter().map(|&j| &points[j]).collect();
        let v = f.eval(&pts);
        if v > 0.0 {
            let weight = t.iter().fold(1.0, |acc, &j| acc * w[j]);
            out.push((v * weight, t));
        }
    }
    out.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    out
}

fn subsets(t: &[usize], r: usize) -> Vec<Vec<usize>> {
    crate::lepage::enumerate_offdiag(r, t.len(), true).map(|s| s.iter().map(|&i| t[i]).collect()).collect()
}

/// `S^(r)` as the maximum over tuple pairs sharing exactly `r` arrivals.
pub fn decomposition_on_stream(
    f: &Integrand,
    g: &Integrand,
    alpha: f64,
    stream: &mut LePageStream,
    n: usize,
) -> ProductDecomposition {
    let (p, q) = (f.k(), g.k());
    let rmax = p.min(q);
    stream.ensure(n);
    let w = stream.weights(alpha, n);
    let points = &stream.points()[..n];
    let fr = ranked_tuples(f, points, &w);
    let gr = ranked_tuples(g, points, &w);
    let mut terms = vec![0.0f64; rmax + 1];
    if fr.is_empty() || gr.is_empty() {
        return ProductDecomposition { terms, max: 0.0 };
    }
    // g tuples indexed by each of their sub-tuples, in decreasing value order
    let mut by_subset: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for (i, (_, t)) in gr.iter().enumerate() {
        for r in 1..=rmax {
            for s in subsets(t, r) {
                by_subset.entry(s).or_default().push(i);
            }
        }
    }
    let g_top = gr[0].0;
    for (vf, tf) in &fr {
        let floor = terms.iter().copied().fold(f64::INFINITY, f64::min);
        if vf * g_top <= floor {
            break;
        }
        for (r, term) in terms.iter_mut().enumerate() {
            if vf * g_top <= *term {
                continue;
            }
            let exact_overlap = |tg: &[usize]| tg.iter().filter(|j| tf.contains(j)).count() == r;
            if r == 0 {
                if let Some((vg, _)) = gr.iter().find(|(_, tg)| exact_overlap(tg)) {
                    *term = term.max(vf * vg);
                }
                continue;
            }
            for s in subsets(tf, r) {
                if let Some(list) = by_subset.get(&s) {
                    if let Some(&i) = list.iter().find(|&&i| exact_overlap(&gr[i].1)) {
                        *term = term.max(vf * gr[i].0);
                    }
                }
            }
        }
    }
    let max = terms.iter().copied().fold(0.0, f64::max);
    ProductDecomposition { terms, max }
}

/// Componentwise maximum of the label-restricted integrals `zeta^(r)`, `r = 1..n`.
///
/// Each arrival receives an independent uniform label; `zeta^(r)` only uses tuples whose
/// arrivals all carry label `r`.
pub fn maxid_thinned_sample(
    fs: &[Integrand],
    n_labels: usize,
    alpha: f64,
    space: &MeasureSpace,
    cfg: &SampleConfig,
) -> Result<Vec<f64>, IntegralError> {
    assert!(n_labels >= 1, "label count must be positive");
    if fs.is_empty() {
        return Err(IntegralError::Empty);
    }
    let space = sampling_space(space, cfg.depth)?;
    let mut stream = LePageStream::new(cfg.seed, &space);
    let mut n = 0;
    for f in fs {
        let (_, r) = lepage_sup(f, alpha, &mut stream, cfg.policy);
        check(&r, cfg)?;
        n = n.max(r.n_used);
    }
    stream.ensure(n);
    let labels = crate::lepage::labels(&stream, n_labels, n);
    let w = stream.weights(alpha, n);
    let mut out = vec![0.0f64; fs.len()];
    for label in 0..n_labels {
        let keep: Vec<usize> = (0..n).filter(|&j| labels[j] == label).collect();
        let pts: Vec<Point> = keep.iter().map(|&j| stream.points()[j].clone()).collect();
        let wl: Vec<f64> = keep.iter().map(|&j| w[j]).collect();
        for (i, f) in fs.iter().enumerate() {
            let upper = upper_weights(f, alpha, &stream, n).map(|u| keep.iter().map(|&j| u[j]).collect::<Vec<_>>());
            let v = sup_over(f, &pts, &wl, upper.as_deref());
            out[i] = out[i].max(v);
        }
    }
    Ok(out)
}

/// The sup measure `M^(k)(B)` of an off-diagonal set on a stream.
pub fn sup_measure(
    k: usize,
    set: &OffDiagonalSet,
    alpha: f64,
    stream: &mut LePageStream,
    policy: TruncationPolicy,
) -> f64 {
    lepage_sup(&Integrand::indicator_of(k, set), alpha, stream, policy).0
}

/// Singleton-rectangle cover of a set of atom tuples.
pub fn decompose_offdiagonal_set(space: &MeasureSpace, set: &OffDiagonalSet) -> Result<Vec<Rectangle>, SpaceError> {
    let MeasureSpace::Discrete(d) = space else {
        return Err(SpaceError::KindMismatch);
    };
    let tuples = set.atom_tuples(d.len())?;
    Ok(tuples.into_iter().map(|t| Rectangle(t.into_iter().map(|a| CoordSet::Atoms(vec![a])).collect())).collect())
}

/// Step-integrand supremum on an explicit list of weighted points (used by oracles).
pub fn step_sup(f: &Integrand, points: &[Point], w: &[f64]) -> Option<f64> {
    step_fast_path(f).then(|| step_value(f, points, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::interval;
    use crate::lepage::{lepage_sup_fixed, Enumeration};
    use crate::measure::{make_discrete_space, make_unit_interval};

    fn unit() -> MeasureSpace {
        make_unit_interval(None).unwrap()
    }

    fn rect(parts: &[(f64, f64)]) -> Rectangle {
        Rectangle(parts.iter().map(|&(a, b)| interval(a, b)).collect())
    }

    #[test]
    fn zero_integrand_is_zero() {
        let cfg = SampleConfig::seeded(3);
        assert_eq!(sample_integral(&Integrand::zero(1), 1.0, &unit(), &cfg).unwrap().0, 0.0);
        assert_eq!(sample_decoupled(&Integrand::zero(2), 1.0, &unit(), &cfg).unwrap().0, 0.0);
    }

    #[test]
    fn decoupled_order_one_uses_one_stream() {
        let f = Integrand::indicator(rect(&[(0.0, 0.5)]));
        let cfg = SampleConfig::seeded(11);
        let (a, _) = sample_decoupled(&f, 1.0, &unit(), &cfg).unwrap();
        let seed = decoupled_seeds(11, 1)[0];
        let (b, _) = sample_integral(&f, 1.0, &unit(), &cfg.with_seed(seed)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decoupled_generic_matches_fast_path() {
        let f = Integrand::indicator(rect(&[(0.0, 0.4), (0.5, 0.9)]));
        let g = Integrand::new(2, "generic", {
            let f = f.clone();
            move |p| f.eval(p)
        })
        .with_envelope(1.0);
        for seed in 0..50 {
            let cfg = SampleConfig { policy: TruncationPolicy::Fixed { n: 24 }, ..SampleConfig::seeded(seed) };
            let a = sample_decoupled(&f, 1.0, &unit(), &cfg).unwrap().0;
            let b = sample_decoupled(&g, 1.0, &unit(), &cfg).unwrap().0;
            assert!((a - b).abs() <= 1e-14 * a.max(1e-300));
        }
    }

    #[test]
    fn product_decomposition_single_order() {
        // p = q = 1, f = g = 1_A: S1 is the largest squared weight inside A
        let space = unit();
        let f = Integrand::indicator(rect(&[(0.0, 0.5)]));
        for seed in 0..30 {
            let mut s = LePageStream::new(seed, &space);
            let d = decomposition_on_stream(&f, &f, 1.0, &mut s, 5);
            let w = s.weights(1.0, 5);
            let inside: Vec<f64> = (0..5).filter(|&j| s.points()[j].as_real().unwrap() < 0.5).map(|j| w[j]).collect();
            let s1 = inside.iter().map(|x| x * x).fold(0.0, f64::max);
            let mut s0 = 0.0f64;
            for a in 0..inside.len() {
                for b in 0..inside.len() {
                    if a != b {
                        s0 = s0.max(inside[a] * inside[b]);
                    }
                }
            }
            assert!((d.terms[1] - s1).abs() <= 1e-15 * s1.max(1e-300));
            assert!((d.terms[0] - s0).abs() <= 1e-15 * s0.max(1e-300));
        }
    }

    #[test]
    fn product_decomposition_max_is_pathwise_product() {
        let space = unit();
        let f = Integrand::indicator(rect(&[(0.0, 0.3), (0.3, 0.6)])).max_symmetrize();
        let g = Integrand::indicator(rect(&[(0.2, 0.5), (0.6, 1.0)])).max_symmetrize();
        for seed in 0..100 {
            let mut s = LePageStream::new(seed, &space);
            let n = 30;
            let d = decomposition_on_stream(&f, &g, 1.5, &mut s, n);
            let a = lepage_sup_fixed(&f, 1.5, &mut s, n, Enumeration::Pruned);
            let b = lepage_sup_fixed(&g, 1.5, &mut s, n, Enumeration::Pruned);
            assert!((d.max - a * b).abs() <= 1e-12 * (a * b).max(1e-300), "{} vs {}", d.max, a * b);
        }
    }

    #[test]
    fn product_decomposition_zero_factor() {
        let f = Integrand::indicator(rect(&[(0.0, 0.5)])).with_symmetric(true);
        let d = sample_product_decomposition(&f, &Integrand::zero(1), 1.0, &unit(), &SampleConfig::seeded(1)).unwrap();
        assert!(d.terms.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn single_label_thinning_is_identity() {
        let space = unit();
        let f1 = Integrand::indicator(rect(&[(0.0, 0.5)]));
        let f2 = Integrand::indicator(rect(&[(0.1, 0.4), (0.5, 0.8)])).max_symmetrize();
        for seed in 0..50 {
            let cfg = SampleConfig::seeded(seed);
            let thinned = maxid_thinned_sample(&[f1.clone(), f2.clone()], 1, 1.0, &space, &cfg).unwrap();
            let joint = sample_joint(&[f1.clone(), f2.clone()], 1.0, &space, &cfg).unwrap();
            assert_eq!(thinned, joint.values);
        }
    }

    #[test]
    fn decomposition_singletons() {
        let space = make_discrete_space(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]).unwrap();
        let one = OffDiagonalSet::new(vec![Rectangle(vec![CoordSet::Atoms(vec![0]), CoordSet::Atoms(vec![1])])]);
        assert_eq!(decompose_offdiagonal_set(&space, &one).unwrap().len(), 1);
        let all = OffDiagonalSet::new(
            (0..3)
                .flat_map(|a| (0..3).filter(move |&b| b != a).map(move |b| (a, b)))
                .map(|(a, b)| Rectangle(vec![CoordSet::Atoms(vec![a]), CoordSet::Atoms(vec![b])]))
                .collect(),
        );
        assert_eq!(decompose_offdiagonal_set(&space, &all).unwrap().len(), 6);
        let diag = OffDiagonalSet::new(vec![Rectangle(vec![CoordSet::Atoms(vec![0]), CoordSet::Atoms(vec![0])])]);
        assert_eq!(decompose_offdiagonal_set(&space, &diag).unwrap_err(), SpaceError::DiagonalMass);
    }
}
