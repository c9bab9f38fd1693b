//! The stationary k-tuple regenerative process on a window `{0, ..., n}`.
//!
//! Paths come from the triangular-array LePage form: i.i.d. window-conditioned
//! renewals with Poisson arrivals, `X_t = w_n^{k/alpha} max [Gamma_i]^{-1/alpha}`
//! over index tuples whose renewals all pass through `t`. The maximum at `t` is
//! attained by the `k` earliest renewals through `t`, so the exact path needs
//! only enough renewals to cover every `t` `k` times.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::phase::{normalization, regime};
use super::renewal::{forward_epochs, ConditionedWindow, RenewalSpec};
use super::RegenError;
use crate::harness::{derive_seed, par_map_seeds};

/// Renewals drawn before a path simulation gives up.
pub const MAX_RENEWALS: usize = 50_000_000;
/// Tuples examined before a window-maximum search gives up.
pub const MAX_TUPLES: usize = 20_000_000;

/// Which index tuples enter the path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum IndexSet {
    /// Every tuple; exact.
    #[default]
    Exact,
    /// Tuples with `i_1 ... i_k <= K w_n^k / c_n^alpha` and `i_k <= w_n`.
    Truncated { k_factor: f64 },
}

/// Default `K` of [`IndexSet::Truncated`].
pub const DEFAULT_K_FACTOR: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XPath {
    pub k: usize,
    pub alpha: f64,
    pub n: u64,
    pub w_n: f64,
    pub renewals_used: usize,
    pub values: Vec<f64>,
}

impl XPath {
    /// Writes `t,x` rows.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,x")?;
        for (t, x) in self.values.iter().enumerate() {
            writeln!(w, "{t},{x}")?;
        }
        w.flush()
    }
}

/// Common elements of sorted epoch lists.
pub fn intersect_sorted(paths: &[Vec<u64>]) -> Vec<u64> {
    let Some((first, rest)) = paths.split_first() else {
        return Vec::new();
    };
    let mut out = first.clone();
    for p in rest {
        let mut keep = Vec::with_capacity(out.len().min(p.len()));
        let (mut i, mut j) = (0, 0);
        while i < out.len() && j < p.len() {
            match out[i].cmp(&p[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    keep.push(out[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out = keep;
        if out.is_empty() {
            break;
        }
    }
    out
}

fn check_args(k: usize, alpha: f64) -> Result<(), RegenError> {
    if k == 0 {
        return Err(RegenError::InvalidArgument("order k must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(RegenError::InvalidArgument(format!("alpha = {alpha} must be positive")));
    }
    Ok(())
}

/// `X_0, ..., X_n` of the k-tuple model.
pub fn simulate_x_path(
    spec: &RenewalSpec,
    k: usize,
    alpha: f64,
    n: u64,
    index: IndexSet,
    seed: u64,
) -> Result<XPath, RegenError> {
    check_args(k, alpha)?;
    let window = ConditionedWindow::new(spec, n);
    match index {
        IndexSet::Exact => exact_path(&window, k, alpha, seed),
        IndexSet::Truncated { k_factor } => {
            if k_factor < k as f64 {
                return Err(RegenError::InvalidArgument(format!("truncation K = {k_factor} is below k = {k}")));
            }
            truncated_path(&window, k, alpha, k_factor, seed)
        }
    }
}

fn exact_path(window: &ConditionedWindow, k: usize, alpha: f64, seed: u64) -> Result<XPath, RegenError> {
    let n = window.window();
    let w = window.mass();
    let len = n as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = vec![0u8; len];
    let mut log_gamma = vec![0.0f64; len];
    let mut open = len;
    let mut gamma = 0.0f64;
    let mut used = 0;
    while open > 0 {
        if used >= MAX_RENEWALS {
            return Err(RegenError::Budget(format!("{open} times still uncovered after {used} renewals")));
        }
        gamma += <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
        let lg = gamma.ln();
        used += 1;
        let path = window.sample(&mut rng);
        for &t in &path.epochs {
            let t = t as usize;
            if (count[t] as usize) < k {
                count[t] += 1;
                log_gamma[t] += lg;
                if count[t] as usize == k {
                    open -= 1;
                }
            }
        }
    }
    let scale = k as f64 * w.ln();
    let values = log_gamma.iter().map(|&s| ((scale - s) / alpha).exp()).collect();
    Ok(XPath { k, alpha, n, w_n: w, renewals_used: used, values })
}

fn truncated_path(
    window: &ConditionedWindow,
    k: usize,
    alpha: f64,
    k_factor: f64,
    seed: u64,
) -> Result<XPath, RegenError> {
    let n = window.window();
    let w = window.mass();
    let spec = window.spec();
    let c_alpha = normalization(regime(spec.beta, k), spec.beta, k, alpha, n.max(3) as f64).powf(alpha);
    let bound = k_factor * w.powi(k as i32) / c_alpha;
    let lower: f64 = (1..k).map(|i| i as f64).product();
    let top = (bound / lower).min(w).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gammas = Vec::with_capacity(top);
    let mut paths = Vec::with_capacity(top);
    let mut acc = 0.0f64;
    for _ in 0..top {
        acc += <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng);
        gammas.push(acc.ln());
        paths.push(window.sample(&mut rng).epochs);
    }
    let mut values = vec![0.0f64; n as usize + 1];
    let scale = k as f64 * w.ln();
    let mut tuple = Vec::with_capacity(k);
    let mut visit = |idx: &[usize]| {
        let sets: Vec<Vec<u64>> = idx.iter().map(|&i| paths[i].clone()).collect();
        let v = ((scale - idx.iter().map(|&i| gammas[i]).sum::<f64>()) / alpha).exp();
        for t in intersect_sorted(&sets) {
            let slot = &mut values[t as usize];
            *slot = slot.max(v);
        }
    };
    enumerate_tuples(k, top, bound, 1.0, 0, &mut tuple, &mut visit);
    Ok(XPath { k, alpha, n, w_n: w, renewals_used: top, values })
}

/// Increasing 1-based tuples below `top` with product at most `bound`, passed 0-based to `visit`.
fn enumerate_tuples(
    k: usize,
    top: usize,
    bound: f64,
    prod: f64,
    start: usize,
    tuple: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if tuple.len() == k {
        visit(tuple);
        return;
    }
    let remaining = k - tuple.len();
    for i in start..top {
        // the smallest completion multiplies by (i+1)^remaining
        if prod * ((i + 1) as f64).powi(remaining as i32) > bound {
            break;
        }
        tuple.push(i);
        enumerate_tuples(k, top, bound, prod * (i + 1) as f64, i + 1, tuple, visit);
        tuple.pop();
    }
}

/// Lazily extended arrivals and window renewals.
struct LazyRenewals<'a> {
    window: &'a ConditionedWindow,
    rng: ChaCha8Rng,
    log_gamma: Vec<f64>,
    paths: Vec<Vec<u64>>,
    acc: f64,
}

impl<'a> LazyRenewals<'a> {
    fn new(window: &'a ConditionedWindow, seed: u64) -> Self {
        LazyRenewals {
            window,
            rng: ChaCha8Rng::seed_from_u64(seed),
            log_gamma: Vec::new(),
            paths: Vec::new(),
            acc: 0.0,
        }
    }

    fn ensure(&mut self, i: usize) {
        while self.paths.len() <= i {
            self.acc += <Exp1 as Distribution<f64>>::sample(&Exp1, &mut self.rng);
            self.log_gamma.push(self.acc.ln());
            let p = self.window.sample(&mut self.rng).epochs;
            self.paths.push(p);
        }
    }
}

/// `max_{t <= n} X_t`, found by visiting index tuples in increasing order of `Gamma_i`
/// products until one whose renewals meet inside the window.
pub fn window_maximum(spec: &RenewalSpec, k: usize, alpha: f64, n: u64, seed: u64) -> Result<f64, RegenError> {
    check_args(k, alpha)?;
    let window = ConditionedWindow::new(spec, n);
    window_maximum_in(&window, k, alpha, seed)
}

/// [`window_maximum`] with a prebuilt window table.
pub fn window_maximum_in(window: &ConditionedWindow, k: usize, alpha: f64, seed: u64) -> Result<f64, RegenError> {
    let mut lazy = LazyRenewals::new(window, seed);
    lazy.ensure(k - 1);
    let key = |lz: &LazyRenewals, t: &[usize]| -> f64 { t.iter().map(|&i| lz.log_gamma[i]).sum() };
    let start: Vec<usize> = (0..k).collect();
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    heap.push((Reverse(Ordered(key(&lazy, &start))), start.clone()));
    seen.insert(start);
    let mut popped = 0;
    while let Some((Reverse(Ordered(lg)), t)) = heap.pop() {
        popped += 1;
        if popped > MAX_TUPLES {
            return Err(RegenError::Budget(format!("no meeting tuple among {MAX_TUPLES} candidates")));
        }
        let sets: Vec<Vec<u64>> = t.iter().map(|&i| lazy.paths[i].clone()).collect();
        if !intersect_sorted(&sets).is_empty() {
            return Ok(((k as f64 * window.mass().ln() - lg) / alpha).exp());
        }
        for pos in 0..k {
            let next = t[pos] + 1;
            if pos + 1 < k && next == t[pos + 1] {
                continue;
            }
            let mut succ = t.clone();
            succ[pos] = next;
            if seen.insert(succ.clone()) {
                lazy.ensure(next);
                heap.push((Reverse(Ordered(key(&lazy, &succ))), succ));
            }
        }
    }
    unreachable!("the tuple frontier never empties")
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// `(X_0, ..., X_s) / c` conditioned on `X_0 > c`.
///
/// Renewals through 0 are the undelayed ones; they arrive at rate `1 / w_s` in
/// `Gamma`-time, so `X_0 = (G_1 ... G_k)^{-1/alpha}` for unit-rate arrivals `G`, and
/// the conditioning only touches those `k` arrivals. It is imposed by rejection.
pub fn conditioned_window_draw<R: Rng + ?Sized>(
    window: &ConditionedWindow,
    k: usize,
    alpha: f64,
    c: f64,
    max_tries: usize,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let s = window.window();
    let w = window.mass();
    let eps = c.powf(-alpha);
    let mut through = Vec::with_capacity(k);
    let mut accepted = false;
    for _ in 0..max_tries {
        through.clear();
        let mut g = 0.0f64;
        let mut prod = 1.0f64;
        for _ in 0..k {
            g += <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
            through.push(g);
            prod *= g;
        }
        if prod < eps {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return None;
    }
    let spec = window.spec();
    let len = s as usize + 1;
    let mut count = vec![0usize; len];
    let mut log_gamma = vec![0.0f64; len];
    let mut open = len;
    let rate_other = (w - 1.0) / w;
    // next arrival of each stream, in Gamma-time
    let mut next_through = w * through[0];
    let mut through_idx = 0usize;
    let mut g_last = *through.last().unwrap();
    let mut next_other =
        if rate_other > 0.0 { <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate_other } else { f64::INFINITY };
    let mut steps = 0usize;
    while open > 0 && steps < MAX_RENEWALS {
        steps += 1;
        let (gamma, epochs) = if next_through <= next_other {
            let gamma = next_through;
            through_idx += 1;
            next_through = if through_idx < k {
                w * through[through_idx]
            } else {
                g_last += <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
                w * g_last
            };
            (gamma, forward_epochs(spec, 0, s, rng))
        } else {
            let gamma = next_other;
            next_other += <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate_other;
            let d = window.sample_delay_from(1, rng);
            (gamma, forward_epochs(spec, d, s, rng))
        };
        let lg = gamma.ln();
        for &t in &epochs {
            let t = t as usize;
            if count[t] < k {
                count[t] += 1;
                log_gamma[t] += lg;
                if count[t] == k {
                    open -= 1;
                }
            }
        }
    }
    let scale = k as f64 * w.ln();
    Some(log_gamma.iter().map(|&lg| ((scale - lg) / alpha).exp() / c).collect())
}

/// `(Theta_0, ..., Theta_s)`: indicators of common epochs of `k` undelayed renewals.
pub fn spectral_tail_draw<R: Rng + ?Sized>(spec: &RenewalSpec, k: usize, s: u64, rng: &mut R) -> Vec<bool> {
    let paths: Vec<Vec<u64>> = (0..k).map(|_| forward_epochs(spec, 0, s, rng)).collect();
    let common = intersect_sorted(&paths);
    (0..=s).map(|t| common.binary_search(&t).is_ok()).collect()
}

/// Bin edges for comparing a conditional law with its limit `P_alpha Theta_s`.
pub const TV_EDGES: [f64; 9] = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0];

fn bin_of(x: f64) -> usize {
    TV_EDGES.iter().rposition(|&e| x >= e).unwrap_or(0)
}

/// Total variation between binned laws.
fn binned_tv(a: &[Vec<usize>], b: &[Vec<usize>], na: usize, nb: usize) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(ha, hb)| {
            0.5 * ha.iter().zip(hb).map(|(&x, &y)| (x as f64 / na as f64 - y as f64 / nb as f64).abs()).sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralRow {
    pub threshold: f64,
    pub draws: usize,
    /// Binned total variation per lag `s = 0..=s_max`.
    pub tv: Vec<f64>,
    pub tv_max: f64,
    /// Empirical `P(X_s > c / 2 | X_0 > c)` per lag.
    pub exceed_half: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTailReport {
    pub k: usize,
    pub alpha: f64,
    pub s_max: u64,
    /// Limit `P(Theta_s = 1)` per lag, from the direct simulation.
    pub theta_hit: Vec<f64>,
    pub rows: Vec<SpectralRow>,
}

/// Conditional laws `L(X_s / c | X_0 > c)` along a threshold grid against `L(P_alpha Theta_s)`.
#[allow(clippy::too_many_arguments)]
pub fn spectral_tail_mc(
    spec: &RenewalSpec,
    k: usize,
    alpha: f64,
    s_max: u64,
    thresholds: &[f64],
    draws: usize,
    seed: u64,
    workers: usize,
) -> Result<SpectralTailReport, RegenError> {
    check_args(k, alpha)?;
    if s_max > 32 {
        return Err(RegenError::InvalidArgument(format!("lag horizon {s_max} exceeds 32")));
    }
    let lags = s_max as usize + 1;
    let nbins = TV_EDGES.len();
    let limit = par_map_seeds(draws, seed, workers, |sd, _| {
        let mut rng = ChaCha8Rng::seed_from_u64(sd);
        let theta = spectral_tail_draw(spec, k, s_max, &mut rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        let pareto = u.powf(-1.0 / alpha);
        theta.iter().map(|&th| if th { pareto } else { 0.0 }).collect::<Vec<f64>>()
    });
    let hist = |rows: &[Vec<f64>]| -> Vec<Vec<usize>> {
        let mut h = vec![vec![0usize; nbins]; lags];
        for r in rows {
            for (s, &x) in r.iter().enumerate() {
                h[s][bin_of(x)] += 1;
            }
        }
        h
    };
    let limit_hist = hist(&limit);
    let theta_hit = (0..lags).map(|s| limit.iter().filter(|r| r[s] > 0.0).count() as f64 / draws as f64).collect();
    let window = ConditionedWindow::new(spec, s_max);
    let mut rows = Vec::with_capacity(thresholds.len());
    for (j, &c) in thresholds.iter().enumerate() {
        let tries = (1e3 * c.powf(alpha)).max(1e4) as usize;
        let draws_c: Vec<Option<Vec<f64>>> = par_map_seeds(draws, derive_seed(seed, 1 + j as u64), workers, |sd, _| {
            let mut rng = ChaCha8Rng::seed_from_u64(sd);
            conditioned_window_draw(&window, k, alpha, c, tries, &mut rng)
        });
        let got: Vec<Vec<f64>> = draws_c.into_iter().flatten().collect();
        if got.len() < draws / 2 {
            return Err(RegenError::TooFewExceedances { threshold: c, found: got.len() });
        }
        let h = hist(&got);
        let tv = binned_tv(&h, &limit_hist, got.len(), draws);
        let exceed_half =
            (0..lags).map(|s| got.iter().filter(|r| r[s] > 0.5).count() as f64 / got.len() as f64).collect();
        let tv_max = tv.iter().copied().fold(0.0, f64::max);
        rows.push(SpectralRow { threshold: c, draws: got.len(), tv, tv_max, exceed_half });
    }
    Ok(SpectralTailReport { k, alpha, s_max, theta_hit, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ks_one_sample, ks_two_sample};
    use crate::regenerative::renewal::renewal_mass;

    #[test]
    fn intersections() {
        let a = vec![0, 2, 4, 6, 8];
        let b = vec![0, 3, 6, 9];
        let c = vec![1, 6];
        assert_eq!(intersect_sorted(&[a.clone(), b.clone()]), vec![0, 6]);
        assert_eq!(intersect_sorted(&[a, b, c]), vec![6]);
        assert!(intersect_sorted(&[]).is_empty());
    }

    #[test]
    fn degenerate_law_gives_constant_path() {
        let spec = RenewalSpec::unit_steps();
        let p = simulate_x_path(&spec, 2, 1.0, 20, IndexSet::Exact, 4).unwrap();
        assert_eq!(p.w_n, 1.0);
        assert_eq!(p.renewals_used, 2);
        assert!(p.values.iter().all(|&x| x == p.values[0] && x > 0.0));
    }

    #[test]
    fn paths_are_nonnegative_and_reproducible() {
        let spec = RenewalSpec::power_tail(0.4).unwrap();
        let a = simulate_x_path(&spec, 2, 1.0, 500, IndexSet::Exact, 9).unwrap();
        let b = simulate_x_path(&spec, 2, 1.0, 500, IndexSet::Exact, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&x| x > 0.0 && x.is_finite()));
        let t = simulate_x_path(&spec, 2, 1.0, 500, IndexSet::Truncated { k_factor: 64.0 }, 9).unwrap();
        assert!(t.values.iter().all(|&x| x >= 0.0));
        // truncation only drops tuples, so it never exceeds the exact path on the same draws
        assert!(t.values.iter().zip(&a.values).all(|(x, y)| *x <= *y * (1.0 + 1e-12)));
    }

    #[test]
    fn truncation_below_order_is_rejected() {
        let spec = RenewalSpec::power_tail(0.4).unwrap();
        assert!(simulate_x_path(&spec, 3, 1.0, 50, IndexSet::Truncated { k_factor: 2.0 }, 1).is_err());
        assert!(simulate_x_path(&spec, 0, 1.0, 50, IndexSet::Exact, 1).is_err());
    }

    #[test]
    fn first_order_marginal_is_unit_frechet() {
        // mu(t in tau*) = 1, so X_t is standard Frechet for every t
        let spec = RenewalSpec::power_tail(0.3).unwrap();
        let alpha = 1.5;
        let n = 200u64;
        let xs: Vec<f64> = par_map_seeds(10_000, 21, 1, |s, _| {
            simulate_x_path(&spec, 1, alpha, n, IndexSet::Exact, s).unwrap().values[100]
        });
        let r = ks_one_sample(&xs, |x| (-x.powf(-alpha)).exp(), 1e-3);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn marginals_are_stationary() {
        let spec = RenewalSpec::power_tail(0.3).unwrap();
        let n = 400u64;
        let pairs: Vec<(f64, f64)> = par_map_seeds(6000, 5, 1, |s, _| {
            let p = simulate_x_path(&spec, 2, 1.0, n, IndexSet::Exact, s).unwrap();
            (p.values[100], p.values[300])
        });
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        assert!(ks_two_sample(&a, &b, 1e-3).passed);
    }

    #[test]
    fn window_maximum_agrees_with_exact_path() {
        let spec = RenewalSpec::power_tail(0.5).unwrap();
        let window = ConditionedWindow::new(&spec, 300);
        for seed in 0..20 {
            let m = window_maximum_in(&window, 2, 1.0, seed).unwrap();
            // same seed drives both: arrivals and renewals are drawn in the same order
            let p = exact_path(&window, 2, 1.0, seed).unwrap();
            let top = p.values.iter().copied().fold(0.0, f64::max);
            assert!((m - top).abs() <= 1e-9 * top, "seed {seed}: {m} vs {top}");
        }
    }

    #[test]
    fn zero_lag_limit_is_pareto() {
        let spec = RenewalSpec::power_tail(0.3).unwrap();
        let rep = spectral_tail_mc(&spec, 2, 1.0, 4, &[8.0], 4000, 3, 1).unwrap();
        assert_eq!(rep.theta_hit[0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let window = ConditionedWindow::new(&spec, 4);
        let x0: Vec<f64> =
            (0..4000).map(|_| conditioned_window_draw(&window, 1, 1.0, 50.0, 1 << 20, &mut rng).unwrap()[0]).collect();
        // k = 1: X_0 is standard Frechet, so X_0 / c given X_0 > c is nearly Pareto
        let r = ks_one_sample(
            &x0,
            |x| if x < 1.0 { 0.0 } else { 1.0 - ((-1.0 / (50.0 * x)).exp_m1() / (-1.0f64 / 50.0).exp_m1()) },
            1e-3,
        );
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn lag_one_hit_probability() {
        let spec = RenewalSpec::power_tail(0.3).unwrap();
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let hits = (0..draws).filter(|_| spectral_tail_draw(&spec, 2, 1, &mut rng)[1]).count();
        let p = hits as f64 / draws as f64;
        let target = spec.pmf(1).powi(2);
        let se = (target * (1.0 - target) / draws as f64).sqrt();
        assert!((p - target).abs() < 3.5 * se, "{p} vs {target}");
        let u = renewal_mass(&spec, 1);
        assert_eq!(u[1], spec.pmf(1));
    }
}
