//! LePage ingredients and truncated suprema over off-diagonal index tuples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::integrand::{permutations, Integrand};
use crate::measure::{MeasureSpace, Point};

/// How many Poisson arrivals to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", deny_unknown_fields)]
pub enum TruncationPolicy {
    /// Double `n` until the omitted terms cannot move the value by more than `rel_tol`.
    Adaptive { rel_tol: f64, initial_n: usize, cap: usize },
    /// Exactly `n` arrivals.
    Fixed { n: usize },
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy::Adaptive { rel_tol: 1e-6, initial_n: 16, cap: 1 << 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub n_used: usize,
    /// Bound on every omitted term; `None` when no envelope is available.
    pub remainder_bound: Option<f64>,
    pub converged: bool,
}

/// Arrival times of a unit-rate Poisson process.
pub fn poisson_arrivals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = gamma_rng(seed);
    let mut acc = 0.0;
    (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            acc += e;
            acc
        })
        .collect()
}

fn gamma_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(0);
    r
}

fn point_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

/// `M * gamma_first^{-(k-1)/alpha} * gamma_next^{-1/alpha}`.
pub fn truncation_bound(envelope: f64, alpha: f64, k: usize, gamma_first: f64, gamma_next: f64) -> f64 {
    if envelope == 0.0 {
        return 0.0;
    }
    envelope * gamma_first.powf(-((k - 1) as f64) / alpha) * gamma_next.powf(-1.0 / alpha)
}

/// Index tuples of distinct entries in `0..n`, increasing when `ordered`.
pub fn enumerate_offdiag(k: usize, n: usize, ordered: bool) -> OffDiagIter {
    OffDiagIter { k, n, ordered, cur: None, done: k == 0 || k > n }
}

pub struct OffDiagIter {
    k: usize,
    n: usize,
    ordered: bool,
    cur: Option<Vec<usize>>,
    done: bool,
}

impl OffDiagIter {
    fn first(&self) -> Vec<usize> {
        (0..self.k).collect()
    }

    fn advance(&self, cur: &mut [usize]) -> bool {
        let (k, n) = (self.k, self.n);
        if self.ordered {
            let mut i = k;
            while i > 0 {
                i -= 1;
                if cur[i] < n - k + i {
                    cur[i] += 1;
                    for j in i + 1..k {
                        cur[j] = cur[j - 1] + 1;
                    }
                    return true;
                }
            }
            false
        } else {
            // odometer over [n]^k skipping tuples with repeats
            loop {
                let mut i = k;
                loop {
                    if i == 0 {
                        return false;
                    }
                    i -= 1;
                    cur[i] += 1;
                    if cur[i] < n {
                        break;
                    }
                    cur[i] = 0;
                }
                if (0..k).all(|a| (a + 1..k).all(|b| cur[a] != cur[b])) {
                    return true;
                }
            }
        }
    }
}

impl Iterator for OffDiagIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        match &mut self.cur {
            None => {
                let f = self.first();
                self.cur = Some(f.clone());
                Some(f)
            }
            Some(_) => {
                let mut c = self.cur.take().unwrap();
                if self.advance(&mut c) {
                    self.cur = Some(c.clone());
                    Some(c)
                } else {
                    self.done = true;
                    None
                }
            }
        }
    }
}

/// A seeded realization of `(Gamma_j, T_j, psi(T_j))`, extended lazily.
#[derive(Debug, Clone)]
pub struct LePageStream {
    seed: u64,
    space: MeasureSpace,
    gamma_rng: ChaCha8Rng,
    point_rng: ChaCha8Rng,
    gammas: Vec<f64>,
    points: Vec<Point>,
    log_psi: Vec<f64>,
}

impl LePageStream {
    pub fn new(seed: u64, space: &MeasureSpace) -> Self {
        assert!(space.can_sample(), "space has no sampling measure; restrict it first");
        LePageStream {
            seed,
            space: space.clone(),
            gamma_rng: gamma_rng(seed),
            point_rng: point_rng(seed),
            gammas: Vec::new(),
            points: Vec::new(),
            log_psi: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn space(&self) -> &MeasureSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// Extends the prefix to at least `n` arrivals.
    pub fn ensure(&mut self, n: usize) {
        let mut acc = self.gammas.last().copied().unwrap_or(0.0);
        while self.gammas.len() < n {
            let e: f64 = Exp1.sample(&mut self.gamma_rng);
            acc += e;
            self.gammas.push(acc);
            let p = self.space.sample_point(&mut self.point_rng);
            self.log_psi.push(self.space.log_psi(&p));
            self.points.push(p);
        }
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn psi(&self, j: usize) -> f64 {
        self.log_psi[j].exp()
    }

    /// Series weights `(psi(T_j) / Gamma_j)^{1/alpha}` for `j < n`.
    pub fn weights(&self, alpha: f64, n: usize) -> Vec<f64> {
        (0..n).map(|j| ((self.log_psi[j] - self.gammas[j].ln()) / alpha).exp()).collect()
    }

    /// A uniform draw from the point stream's generator, for auxiliary marks.
    pub fn mark_rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(2);
        r
    }
}

/// Index-set enumeration used by [`lepage_sup_fixed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    /// Increasing tuples with branch-and-bound pruning (all orders evaluated for asymmetric `f`).
    Pruned,
    /// Every ordered tuple of distinct indices, no pruning.
    AllOrders,
    /// Increasing tuples, no pruning.
    Increasing,
}

pub(crate) fn step_fast_path(f: &Integrand) -> bool {
    f.steps().is_some_and(|s| s.iter().all(|b| b.rect.is_off_diagonal()))
}

/// Per-side maxima of the weights for a step integrand with pairwise-disjoint sides.
pub(crate) fn step_value(f: &Integrand, points: &[Point], w: &[f64]) -> f64 {
    let steps = f.steps().expect("step integrand");
    let mut best = 0.0f64;
    for b in steps {
        let mut prod = b.value;
        for side in &b.rect.0 {
            let mut m = 0.0f64;
            for (p, &wj) in points.iter().zip(w) {
                if wj > m && side.contains(p) {
                    m = wj;
                }
            }
            prod *= m;
            if prod == 0.0 {
                break;
            }
        }
        best = best.max(prod);
    }
    best
}

struct Search<'a> {
    f: &'a Integrand,
    points: &'a [Point],
    w: &'a [f64],
    upper: Option<(&'a [f64], f64)>,
    perms: Vec<Vec<usize>>,
    best: f64,
    idx: Vec<usize>,
}

impl Search<'_> {
    fn eval_set(&self, partial: f64) -> f64 {
        let k = self.idx.len();
        let pts: Vec<&Point> = self.idx.iter().map(|&j| &self.points[j]).collect();
        if self.f.is_symmetric() || k == 1 {
            return self.f.eval(&pts) * partial;
        }
        let mut m = 0.0f64;
        let mut buf: Vec<&Point> = Vec::with_capacity(k);
        for pi in &self.perms {
            buf.clear();
            buf.extend(pi.iter().map(|&i| pts[i]));
            m = m.max(self.f.eval(&buf));
        }
        m * partial
    }

    fn rec(&mut self, depth: usize, start: usize, partial: f64) {
        let k = self.f.k();
        let n = self.w.len();
        if depth == k {
            let v = self.eval_set(partial);
            if v > self.best {
                self.best = v;
            }
            return;
        }
        let remaining = k - depth;
        for j in start..=n - remaining {
            if let Some((u, m)) = self.upper {
                let mut cap = m * partial;
                for i in 0..remaining {
                    cap *= u[j + i];
                }
                if cap <= self.best {
                    break;
                }
            }
            self.idx.push(j);
            self.rec(depth + 1, j + 1, partial * self.w[j]);
            self.idx.pop();
        }
    }
}

/// Supremum over tuples of the first `n` arrivals, with no truncation control.
pub fn lepage_sup_fixed(f: &Integrand, alpha: f64, stream: &mut LePageStream, n: usize, mode: Enumeration) -> f64 {
    let k = f.k();
    stream.ensure(n);
    if n < k {
        return 0.0;
    }
    let w = stream.weights(alpha, n);
    let points = &stream.points()[..n];
    match mode {
        Enumeration::AllOrders => {
            let mut best = 0.0f64;
            let mut sorted = vec![0usize; k];
            for t in enumerate_offdiag(k, n, false) {
                sorted.copy_from_slice(&t);
                sorted.sort_unstable();
                let partial = sorted.iter().fold(1.0, |acc, &j| acc * w[j]);
                let pts: Vec<&Point> = t.iter().map(|&j| &points[j]).collect();
                let v = f.eval(&pts) * partial;
                if v > best {
                    best = v;
                }
            }
            best
        }
        Enumeration::Increasing => search(f, points, &w, None),
        Enumeration::Pruned => {
            let upper = upper_weights(f, alpha, stream, n);
            sup_over(f, points, &w, upper.as_deref())
        }
    }
}

/// Decreasing upper bounds on the weights, available when `f` and `psi` are bounded.
pub(crate) fn upper_weights(f: &Integrand, alpha: f64, stream: &LePageStream, n: usize) -> Option<Vec<f64>> {
    f.envelope()?;
    let log_ps = stream.space().psi_bound()?.ln();
    // slack keeps the bound valid against rounding in the weights
    Some(stream.gammas()[..n].iter().map(|g| ((log_ps - g.ln()) / alpha).exp() * (1.0 + 1e-12)).collect())
}

/// Supremum over increasing tuples drawn from `points` with weights `w`.
///
/// `upper`, when given, must dominate `w` entrywise and be nonincreasing.
pub(crate) fn sup_over(f: &Integrand, points: &[Point], w: &[f64], upper: Option<&[f64]>) -> f64 {
    if points.len() < f.k() {
        return 0.0;
    }
    if step_fast_path(f) {
        return step_value(f, points, w);
    }
    search(f, points, w, upper)
}

fn search(f: &Integrand, points: &[Point], w: &[f64], upper: Option<&[f64]>) -> f64 {
    let k = f.k();
    if points.len() < k {
        return 0.0;
    }
    let mut s = Search {
        f,
        points,
        w,
        upper: upper.map(|u| (u, f.envelope().unwrap())),
        perms: permutations(k),
        best: 0.0,
        idx: Vec::with_capacity(k),
    };
    s.rec(0, 0, 1.0);
    s.best
}

/// Envelope of `f * prod psi^{1/alpha}` when both bounds exist.
fn weighted_envelope(f: &Integrand, alpha: f64, space: &MeasureSpace) -> Option<f64> {
    let m = f.envelope()?;
    let ps = space.psi_bound()?;
    Some(m * ps.powf(f.k() as f64 / alpha))
}

/// Truncated LePage supremum for `f` under `policy`.
pub fn lepage_sup(
    f: &Integrand,
    alpha: f64,
    stream: &mut LePageStream,
    policy: TruncationPolicy,
) -> (f64, TruncationReport) {
    assert!(alpha > 0.0, "alpha must be positive");
    let k = f.k();
    let env = weighted_envelope(f, alpha, stream.space());
    if f.envelope() == Some(0.0) {
        return (0.0, TruncationReport { n_used: 0, remainder_bound: Some(0.0), converged: true });
    }
    match policy {
        TruncationPolicy::Fixed { n } => {
            let n = n.max(k);
            let v = lepage_sup_fixed(f, alpha, stream, n, Enumeration::Pruned);
            let bound = env.map(|m| {
                stream.ensure(n + 1);
                truncation_bound(m, alpha, k, stream.gammas()[0], stream.gammas()[n])
            });
            let converged = bound.is_some_and(|b| b <= v);
            (v, TruncationReport { n_used: n, remainder_bound: bound, converged })
        }
        TruncationPolicy::Adaptive { rel_tol, initial_n, cap } => {
            let Some(m) = env else {
                let n = cap.min(initial_n.max(k) * 64);
                let v = lepage_sup_fixed(f, alpha, stream, n, Enumeration::Pruned);
                return (v, TruncationReport { n_used: n, remainder_bound: None, converged: false });
            };
            let mut n = initial_n.max(k);
            loop {
                let v = lepage_sup_fixed(f, alpha, stream, n, Enumeration::Pruned);
                stream.ensure(n + 1);
                let bound = truncation_bound(m, alpha, k, stream.gammas()[0], stream.gammas()[n]);
                // an omitted term only matters if it beats the current value
                if bound <= (1.0 + rel_tol) * v {
                    return (v, TruncationReport { n_used: n, remainder_bound: Some(bound), converged: true });
                }
                if n >= cap {
                    return (v, TruncationReport { n_used: n, remainder_bound: Some(bound), converged: false });
                }
                n = (2 * n).min(cap);
            }
        }
    }
}

/// Uniform label in `0..n` for each of the first `len` arrivals.
pub fn labels(stream: &LePageStream, n: usize, len: usize) -> Vec<usize> {
    let mut rng = stream.mark_rng();
    (0..len).map(|_| rng.random_range(0..n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::{interval, StepBox};
    use crate::measure::{make_discrete_space, make_unit_interval, CoordSet, Rectangle};
    use proptest::prelude::*;

    fn unit() -> MeasureSpace {
        make_unit_interval(None).unwrap()
    }

    #[test]
    fn arrivals_deterministic_and_increasing() {
        let a = poisson_arrivals(42, 100);
        assert_eq!(a, poisson_arrivals(42, 100));
        assert!(a.windows(2).all(|w| w[1] > w[0]));
        let mut s = LePageStream::new(42, &unit());
        s.ensure(100);
        assert_eq!(s.gammas(), &a[..]);
    }

    #[test]
    fn first_arrival_law() {
        let n = 100_000;
        let hits = (0..n).filter(|&s| poisson_arrivals(s as u64, 1)[0] <= 1.0).count();
        let p = hits as f64 / n as f64;
        let want = 1.0 - (-1.0f64).exp();
        assert!((p - want).abs() < 3.0 * (want * (1.0 - want) / n as f64).sqrt());
    }

    #[test]
    fn arrival_rate() {
        let reps = 2000;
        let vals: Vec<f64> = (0..reps).map(|s| poisson_arrivals(s as u64 + 7, 1000)[999] / 1000.0).collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((mean - 1.0).abs() < 3.0 * (var / reps as f64).sqrt());
    }

    #[test]
    fn extension_reproduces_prefix() {
        let space = unit();
        let mut a = LePageStream::new(9, &space);
        a.ensure(10);
        let first: Vec<f64> = a.points()[..10].iter().map(|p| p.as_real().unwrap()).collect();
        a.ensure(1000);
        let mut b = LePageStream::new(9, &space);
        b.ensure(1000);
        assert_eq!(a.gammas(), b.gammas());
        let again: Vec<f64> = b.points()[..10].iter().map(|p| p.as_real().unwrap()).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn offdiag_counts() {
        assert_eq!(enumerate_offdiag(2, 2, true).collect::<Vec<_>>(), vec![vec![0, 1]]);
        assert_eq!(enumerate_offdiag(2, 3, false).count(), 6);
        assert_eq!(enumerate_offdiag(3, 10, true).count(), 120);
        assert_eq!(enumerate_offdiag(3, 5, false).count(), 60);
        assert_eq!(enumerate_offdiag(4, 3, true).count(), 0);
        assert_eq!(enumerate_offdiag(1, 4, false).count(), 4);
    }

    #[test]
    fn bound_examples() {
        assert!((truncation_bound(1.0, 1.0, 1, 0.3, 100.0) - 0.01).abs() < 1e-15);
        assert_eq!(truncation_bound(0.0, 1.0, 3, 0.3, 100.0), 0.0);
        let b = truncation_bound(2.0, 2.0, 2, 0.5, 400.0);
        assert!((b - 2.0 * 0.5f64.powf(-0.5) * 0.05).abs() < 1e-12);
    }

    #[test]
    fn bound_dominates_omitted_tuples_bruteforce() {
        // M=2, k=2, alpha=2 on small prefixes: every tuple touching an index >= n is below the bound
        let space = unit();
        for seed in 0..50 {
            let mut s = LePageStream::new(seed, &space);
            let n = 5;
            s.ensure(4 * n);
            let w = s.weights(2.0, 4 * n);
            let bound = truncation_bound(2.0, 2.0, 2, s.gammas()[0], s.gammas()[n]);
            for t in enumerate_offdiag(2, 4 * n, true) {
                if t[1] >= n {
                    assert!(2.0 * w[t[0]] * w[t[1]] <= bound * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn zero_integrand() {
        let mut s = LePageStream::new(1, &unit());
        let (v, r) = lepage_sup(&Integrand::zero(2), 1.0, &mut s, TruncationPolicy::default());
        assert_eq!(v, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn fast_path_matches_enumeration() {
        let space = unit();
        let f = Integrand::step(
            2,
            vec![
                StepBox { rect: Rectangle(vec![interval(0.0, 0.3), interval(0.5, 0.9)]), value: 1.0 },
                StepBox { rect: Rectangle(vec![interval(0.6, 1.0), interval(0.1, 0.4)]), value: 2.5 },
            ],
        );
        for seed in 0..200 {
            let mut s = LePageStream::new(seed, &space);
            let a = lepage_sup_fixed(&f, 1.3, &mut s, 40, Enumeration::Pruned);
            let b = lepage_sup_fixed(&f, 1.3, &mut s, 40, Enumeration::AllOrders);
            assert!((a - b).abs() <= 1e-14 * b.max(1e-300), "{a} {b}");
        }
    }

    #[test]
    fn pruned_matches_enumeration_general() {
        let space = unit();
        let f = Integrand::new(3, "g", |p| {
            let x: Vec<f64> = p.iter().map(|q| q.as_real().unwrap()).collect();
            (x[0] - x[1]).abs() * (1.0 + x[2]) * if x[0] < x[2] { 1.0 } else { 0.3 }
        })
        .with_envelope(2.0);
        for seed in 0..40 {
            let mut s = LePageStream::new(seed, &space);
            let a = lepage_sup_fixed(&f, 0.8, &mut s, 14, Enumeration::Pruned);
            let b = lepage_sup_fixed(&f, 0.8, &mut s, 14, Enumeration::AllOrders);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn symmetric_path_identity() {
        let space = make_discrete_space(&[("a", 1.0), ("b", 2.0), ("c", 0.5), ("d", 1.5)]).unwrap();
        let f = Integrand::new(2, "s", |p| {
            let (a, b) = (p[0].as_atom().unwrap(), p[1].as_atom().unwrap());
            ((a + 1) * (b + 1)) as f64
        })
        .with_symmetric(true)
        .with_envelope(16.0);
        for seed in 0..100 {
            let mut s = LePageStream::new(seed, &space);
            let a = lepage_sup_fixed(&f, 1.0, &mut s, 20, Enumeration::Increasing);
            let b = lepage_sup_fixed(&f, 1.0, &mut s, 20, Enumeration::AllOrders);
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn discrete_diagonal_tuples_ignored() {
        // one atom: every pair of points coincides, so the order-2 integral is 0
        let space = make_discrete_space(&[("a", 1.0)]).unwrap();
        let f = Integrand::indicator(Rectangle(vec![CoordSet::Atoms(vec![0]), CoordSet::Atoms(vec![0])]));
        let mut s = LePageStream::new(3, &space);
        assert_eq!(lepage_sup_fixed(&f, 1.0, &mut s, 30, Enumeration::Pruned), 0.0);
    }

    #[test]
    fn frechet_marginal_half_interval() {
        let space = unit();
        let f = Integrand::indicator(Rectangle(vec![interval(0.0, 0.5)]));
        let reps = 20_000;
        let below = (0..reps)
            .filter(|&seed| {
                let mut s = LePageStream::new(seed as u64, &space);
                lepage_sup(&f, 1.0, &mut s, TruncationPolicy::default()).0 <= 1.0
            })
            .count();
        let p = below as f64 / reps as f64;
        let want = (-0.5f64).exp();
        assert!((p - want).abs() < 3.0 * (want * (1.0 - want) / reps as f64).sqrt());
    }

    #[test]
    fn unbounded_without_envelope_flags() {
        let space = unit();
        let f = Integrand::new(1, "1/x", |p| 1.0 / p[0].as_real().unwrap());
        let mut s = LePageStream::new(5, &space);
        let (v, r) = lepage_sup(&f, 1.0, &mut s, TruncationPolicy::default());
        assert!(v > 0.0);
        assert!(!r.converged);
        assert!(r.remainder_bound.is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn monotone_in_n(seed in 0u64..10_000, a in 0.0f64..0.5, b in 0.5f64..1.0, alpha in 0.3f64..3.0) {
            let space = unit();
            let f = Integrand::indicator(Rectangle(vec![interval(0.0, a.max(0.01)), interval(b, 1.0)]));
            let mut s = LePageStream::new(seed, &space);
            let mut prev = 0.0;
            for n in [4, 8, 16, 32, 64] {
                let v = lepage_sup_fixed(&f, alpha, &mut s, n, Enumeration::Pruned);
                prop_assert!(v >= prev);
                prev = v;
            }
        }

        #[test]
        fn remainder_is_sound(seed in 0u64..100_000, c in 0.1f64..3.0, alpha in 0.5f64..2.5, k in 1usize..3) {
            let space = unit();
            let f = Integrand::new(k, "c*prod", move |p| {
                c * p.iter().map(|q| q.as_real().unwrap()).product::<f64>()
            })
            .with_envelope(c);
            let mut s = LePageStream::new(seed, &space);
            let n = 8;
            let v = lepage_sup_fixed(&f, alpha, &mut s, n, Enumeration::Pruned);
            s.ensure(n + 1);
            let bound = truncation_bound(c, alpha, k, s.gammas()[0], s.gammas()[n]);
            let v4 = lepage_sup_fixed(&f, alpha, &mut s, 4 * n, Enumeration::Pruned);
            prop_assert!(v4 - v <= bound * (1.0 + 1e-12));
        }
    }
}
