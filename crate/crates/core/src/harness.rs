//! Replicated execution, seed splitting and the statistical tests used for acceptance.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("replicate count must be positive")]
    NoReplicates,
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under `master`. A bijection in `index` for fixed `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Default worker count: the environment override, else available parallelism.
pub fn default_workers() -> usize {
    std::env::var("EXTREMAL_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub op: String,
    pub config_digest: String,
    pub columns: Vec<String>,
}

/// Replicated draws: one row per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub values: Vec<Vec<f64>>,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub meta: BatchMeta,
    /// `(replicate index, message)` for replicates whose op failed.
    pub failures: Vec<(usize, String)>,
    pub partial: bool,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Successful values of one coordinate.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.iter().filter(|r| !r.is_empty()).map(|r| r[c]).collect()
    }

    /// Writes `<path>` as CSV and `<path>.json` as the metadata sidecar.
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["replicate".to_string(), "seed".to_string()];
        header.extend(self.meta.columns.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in self.values.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let mut rec = vec![i.to_string(), self.seeds[i].to_string()];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
        let sidecar = sidecar_path(path);
        let meta = serde_json::json!({
            "op": self.meta.op,
            "config_digest": self.meta.config_digest,
            "master_seed": self.master_seed,
            "replicates": self.values.len(),
            "columns": self.meta.columns,
            "partial": self.partial,
            "failures": self.failures,
        });
        write_json(&sidecar, &meta)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut f = File::create(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

/// Runs `op(seed, index)` for `r` replicates on `workers` threads.
///
/// Rows come back in replicate order regardless of scheduling.
pub fn run_replicates<F>(
    op: F,
    r: usize,
    master_seed: u64,
    workers: usize,
    meta: BatchMeta,
) -> Result<SampleBatch, HarnessError>
where
    F: Fn(u64, usize) -> Result<Vec<f64>, String> + Sync + Send,
{
    if r == 0 {
        return Err(HarnessError::NoReplicates);
    }
    let seeds: Vec<u64> = (0..r as u64).map(|i| derive_seed(master_seed, i)).collect();
    if workers <= 1 {
        let results = seeds.iter().enumerate().map(|(i, &s)| op(s, i)).collect();
        return Ok(collect_batch(results, master_seed, seeds, meta));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let results: Vec<Result<Vec<f64>, String>> =
        pool.install(|| seeds.par_iter().enumerate().map(|(i, &s)| op(s, i)).collect());
    Ok(collect_batch(results, master_seed, seeds, meta))
}

fn collect_batch(
    results: Vec<Result<Vec<f64>, String>>,
    master_seed: u64,
    seeds: Vec<u64>,
    meta: BatchMeta,
) -> SampleBatch {
    let r = results.len();
    let mut values = Vec::with_capacity(r);
    let mut failures = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => values.push(v),
            Err(e) => {
                failures.push((i, e));
                values.push(Vec::new());
            }
        }
    }
    let partial = !failures.is_empty();
    SampleBatch { values, master_seed, seeds, meta, failures, partial }
}

/// Runs `op` over `r` split seeds and returns plain rows, for internal loops.
pub fn par_map_seeds<T, F>(r: usize, master_seed: u64, workers: usize, op: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, usize) -> T + Sync + Send,
{
    if workers <= 1 {
        return (0..r).map(|i| op(derive_seed(master_seed, i as u64), i)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("worker pool");
    pool.install(|| (0..r).into_par_iter().map(|i| op(derive_seed(master_seed, i as u64), i)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub passed: bool,
    pub tolerance: f64,
    pub sizes: Vec<usize>,
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2)`.
pub fn q_ks(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    q_ks((s + 0.12 + 0.11 / s) * d)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    s
}

/// One-sample KS against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F, level: f64) -> TestResult {
    let s = sorted(sample);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let p = ks_p(d, n);
    TestResult {
        name: "ks-one-sample".into(),
        statistic: d,
        p_value: Some(p),
        passed: p > level,
        tolerance: level,
        sizes: vec![s.len()],
    }
}

/// Two-sample KS with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64], level: f64) -> TestResult {
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len(), sb.len());
    let constant = |s: &[f64]| s.first() == s.last();
    if na > 0 && nb > 0 && constant(&sa) && constant(&sb) {
        let equal = sa[0] == sb[0];
        return TestResult {
            name: "ks-two-sample(constant)".into(),
            statistic: if equal { 0.0 } else { 1.0 },
            p_value: Some(if equal { 1.0 } else { 0.0 }),
            passed: equal,
            tolerance: level,
            sizes: vec![na, nb],
        };
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = sa[i].min(sb[j]);
        while i < na && sa[i] <= x {
            i += 1;
        }
        while j < nb && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    let p = ks_p(d, n_eff);
    TestResult {
        name: "ks-two-sample".into(),
        statistic: d,
        p_value: Some(p),
        passed: p > level,
        tolerance: level,
        sizes: vec![na, nb],
    }
}

fn ecdf_at(s: &[f64], x: f64) -> f64 {
    s.partition_point(|&v| v <= x) as f64 / s.len() as f64
}

/// DKW half-width at confidence `1 - delta`.
pub fn dkw_epsilon(n: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Checks `lower <=_st upper`: the largest excess of the upper ECDF over the lower one
/// must stay inside the combined DKW band at level `delta`.
pub fn dominance_test(lower: &[f64], upper: &[f64], delta: f64) -> TestResult {
    let (sl, su) = (sorted(lower), sorted(upper));
    let mut stat = 0.0f64;
    for &x in sl.iter().chain(su.iter()) {
        stat = stat.max(ecdf_at(&su, x) - ecdf_at(&sl, x));
    }
    let tol = dkw_epsilon(sl.len(), delta) + dkw_epsilon(su.len(), delta);
    TestResult {
        name: "dominance".into(),
        statistic: stat,
        p_value: None,
        passed: stat <= tol,
        tolerance: tol,
        sizes: vec![sl.len(), su.len()],
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `NaN` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrendTarget {
    DecreasingToZero,
    /// Distance to `value` must not trend upward, and the mean relative error over the
    /// last `window` fraction of the trace must be within `rel_tol`.
    ConvergingTo {
        value: f64,
        rel_tol: f64,
        window: f64,
    },
}

/// Spearman-sign trend test on a `(t, value)` trace.
pub fn trend_test(trace: &[(f64, f64)], target: TrendTarget) -> TestResult {
    let t: Vec<f64> = trace.iter().map(|p| p.0).collect();
    let v: Vec<f64> = trace.iter().map(|p| p.1).collect();
    let sizes = vec![trace.len()];
    if trace.len() < 5 {
        return TestResult {
            name: "trend".into(),
            statistic: f64::NAN,
            p_value: None,
            passed: false,
            tolerance: 0.0,
            sizes,
        };
    }
    match target {
        TrendTarget::DecreasingToZero => {
            let rho = spearman(&t, &v);
            let all_zero = v.iter().all(|&x| x == 0.0);
            let passed = all_zero || (rho < 0.0 && v.last().unwrap() < v.first().unwrap());
            TestResult { name: "trend-to-zero".into(), statistic: rho, p_value: None, passed, tolerance: 0.0, sizes }
        }
        TrendTarget::ConvergingTo { value, rel_tol, window } => {
            let dist: Vec<f64> = v.iter().map(|x| (x - value).abs()).collect();
            let rho = spearman(&t, &dist);
            let flat = dist.iter().all(|&d| d == dist[0]);
            let m = ((trace.len() as f64 * window).ceil() as usize).clamp(1, trace.len());
            let tail = &v[trace.len() - m..];
            let mean = tail.iter().sum::<f64>() / m as f64;
            let rel = (mean - value).abs() / value.abs().max(1e-300);
            let passed = (flat || rho <= 0.0) && rel <= rel_tol;
            TestResult {
                name: "trend-to-constant".into(),
                statistic: rel,
                p_value: None,
                passed,
                tolerance: rel_tol,
                sizes,
            }
        }
    }
}

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

struct Fenwick(Vec<u32>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, mut i: usize) -> u32 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// For each origin, the number of sample points strictly below-left of it.
fn lower_left_counts(sample: &[(f64, f64)], origins: &[(f64, f64)]) -> Vec<u32> {
    let mut ys: Vec<f64> = sample.iter().map(|p| p.1).collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup();
    let mut pts: Vec<(f64, usize)> = sample.iter().map(|p| (p.0, ys.partition_point(|&y| y < p.1))).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ord: Vec<usize> = (0..origins.len()).collect();
    ord.sort_by(|&a, &b| origins[a].0.partial_cmp(&origins[b].0).unwrap());
    let mut bit = Fenwick(vec![0; ys.len() + 1]);
    let mut out = vec![0u32; origins.len()];
    let mut next = 0;
    for &o in &ord {
        let (ox, oy) = origins[o];
        while next < pts.len() && pts[next].0 < ox {
            bit.add(pts[next].1);
            next += 1;
        }
        out[o] = bit.prefix(ys.partition_point(|&y| y < oy));
    }
    out
}

/// Quadrant fractions `(ll, lr, ul, ur)` of `sample` around every origin.
fn quadrant_fractions(sample: &[(f64, f64)], origins: &[(f64, f64)]) -> Vec<[f64; 4]> {
    let n = sample.len() as f64;
    let ll = lower_left_counts(sample, origins);
    let mut xs: Vec<f64> = sample.iter().map(|p| p.0).collect();
    let mut ys: Vec<f64> = sample.iter().map(|p| p.1).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    origins
        .iter()
        .zip(ll)
        .map(|(&(ox, oy), c)| {
            let left = xs.partition_point(|&x| x < ox) as f64;
            let below = ys.partition_point(|&y| y < oy) as f64;
            let c = c as f64;
            [c / n, (below - c) / n, (left - c) / n, (n - left - below + c) / n]
        })
        .collect()
}

/// Two-dimensional two-sample KS (Fasano-Franceschini) with the Press et al. p-value.
pub fn ks2d_two_sample(a: &[(f64, f64)], b: &[(f64, f64)], level: f64) -> TestResult {
    let d_from = |origins: &[(f64, f64)]| {
        let fa = quadrant_fractions(a, origins);
        let fb = quadrant_fractions(b, origins);
        fa.iter().zip(&fb).map(|(x, y)| (0..4).map(|q| (x[q] - y[q]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max)
    };
    let d = 0.5 * (d_from(a) + d_from(b));
    let corr = |s: &[(f64, f64)]| {
        let x: Vec<f64> = s.iter().map(|p| p.0).collect();
        let y: Vec<f64> = s.iter().map(|p| p.1).collect();
        pearson(&x, &y)
    };
    let r2 = 0.5 * (corr(a).powi(2) + corr(b).powi(2));
    let n_eff = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let s = n_eff.sqrt();
    let p = q_ks(s * d / (1.0 + (1.0 - r2).max(0.0).sqrt() * (0.25 - 0.75 / s)));
    TestResult {
        name: "ks-2d".into(),
        statistic: d,
        p_value: Some(p),
        passed: p > level,
        tolerance: level,
        sizes: vec![a.len(), b.len()],
    }
}
