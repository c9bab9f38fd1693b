//! Normalized window maxima across window lengths under each regime's normalization.

use serde::{Deserialize, Serialize};

use super::model::window_maximum_in;
use super::phase::{normalization, regime, Regime};
use super::renewal::{ConditionedWindow, RenewalSpec};
use super::RegenError;
use crate::harness::par_map_seeds;

const REGIMES: [Regime; 3] = [Regime::Super, Regime::Critical, Regime::Sub];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub betas: Vec<f64>,
    pub k: usize,
    pub alpha: f64,
    pub ns: Vec<u64>,
    pub replicates: usize,
    /// Largest accepted `max / min - 1` of the medians under the matching normalization.
    pub stability_tol: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            betas: vec![0.7, 0.5, 0.3],
            k: 2,
            alpha: 1.0,
            ns: (14..=18).map(|e| 1u64 << e).collect(),
            replicates: 20_000,
            stability_tol: 0.25,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMedians {
    pub regime: Regime,
    /// Median of `max / c_n` for each window length.
    pub medians: Vec<f64>,
    /// `max / min - 1` over the medians.
    pub spread: f64,
    /// +1 strictly increasing, -1 strictly decreasing, 0 otherwise.
    pub direction: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub regime: Regime,
    pub raw_medians: Vec<f64>,
    pub normalized: Vec<NormalizedMedians>,
    /// Matching normalization within tolerance and every other one strictly monotone.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub passed: bool,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn direction(v: &[f64]) -> i8 {
    if v.windows(2).all(|w| w[1] > w[0]) {
        1
    } else if v.windows(2).all(|w| w[1] < w[0]) {
        -1
    } else {
        0
    }
}

/// Medians of `max_{t <= n} X_t` for every `(beta, n)`, normalized by all three regimes' `c_n`.
///
/// Replicate `i` uses the same seed at every `n`, so the drift between window lengths is
/// measured on coupled draws.
pub fn phase_sweep(cfg: &SweepConfig) -> Result<SweepReport, RegenError> {
    if cfg.ns.len() < 2 || cfg.replicates == 0 {
        return Err(RegenError::InvalidArgument("a sweep needs two window lengths and one replicate".into()));
    }
    let mut rows = Vec::with_capacity(cfg.betas.len());
    for &beta in &cfg.betas {
        let spec = RenewalSpec::power_tail(beta)?;
        let mut raw = Vec::with_capacity(cfg.ns.len());
        for &n in &cfg.ns {
            let window = ConditionedWindow::new(&spec, n);
            let draws: Vec<Result<f64, RegenError>> = par_map_seeds(cfg.replicates, cfg.seed, cfg.workers, |s, _| {
                window_maximum_in(&window, cfg.k, cfg.alpha, s)
            });
            let mut v: Vec<f64> = draws.into_iter().collect::<Result<_, _>>()?;
            raw.push(median(&mut v));
        }
        let own = regime(beta, cfg.k);
        let normalized: Vec<NormalizedMedians> = REGIMES
            .iter()
            .map(|&r| {
                let medians: Vec<f64> = raw
                    .iter()
                    .zip(&cfg.ns)
                    .map(|(m, &n)| m / normalization(r, beta, cfg.k, cfg.alpha, n as f64))
                    .collect();
                let (lo, hi) = medians.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &m| (lo.min(m), hi.max(m)));
                NormalizedMedians { regime: r, spread: hi / lo - 1.0, direction: direction(&medians), medians }
            })
            .collect();
        let separated =
            normalized.iter().all(
                |nm| {
                    if nm.regime == own {
                        nm.spread <= cfg.stability_tol
                    } else {
                        nm.direction != 0
                    }
                },
            );
        rows.push(SweepRow { beta, regime: own, raw_medians: raw, normalized, separated });
    }
    let passed = rows.iter().all(|r| r.separated);
    Ok(SweepReport { config: cfg.clone(), rows, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_and_median() {
        assert_eq!(direction(&[1.0, 2.0, 3.0]), 1);
        assert_eq!(direction(&[3.0, 2.0, 1.0]), -1);
        assert_eq!(direction(&[1.0, 3.0, 2.0]), 0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn first_order_sweep_is_stable_under_its_own_scaling() {
        let cfg = SweepConfig {
            betas: vec![0.4],
            k: 1,
            ns: vec![1 << 10, 1 << 13],
            replicates: 400,
            seed: 3,
            ..SweepConfig::default()
        };
        let r = phase_sweep(&cfg).unwrap();
        let own = r.rows[0].normalized.iter().find(|n| n.regime == Regime::Super).unwrap();
        assert!(own.spread < 0.25, "{own:?}");
    }

    #[test]
    fn sweep_rejects_single_length() {
        let cfg = SweepConfig { ns: vec![1000], ..SweepConfig::default() };
        assert!(phase_sweep(&cfg).is_err());
    }
}
