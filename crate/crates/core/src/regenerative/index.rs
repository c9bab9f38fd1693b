//! Blocks estimates of the extremal index and their comparison with the
//! candidate index.

use serde::{Deserialize, Serialize};

use super::model::{simulate_x_path, IndexSet};
use super::phase::{candidate_extremal_index, candidate_index_mc, d_beta_k, DReport};
use super::renewal::RenewalSpec;
use super::RegenError;
use crate::harness::{derive_seed, mean_se, par_map_seeds};

/// Default exceedance quantile of the blocks estimator.
pub const DEFAULT_QUANTILE: f64 = 0.995;

/// `ceil(n^0.6)`.
pub fn default_block_length(n: usize) -> usize {
    (n as f64).powf(0.6).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlocksEstimate {
    pub theta: f64,
    pub block: usize,
    pub threshold: f64,
    pub exceedances: usize,
    pub blocks_exceeding: usize,
    pub blocks: usize,
}

/// `(#blocks whose maximum exceeds u) / (#times exceeding u)` with `u` the empirical
/// `quantile` of the path. Trailing times that do not fill a block are ignored.
pub fn extremal_index_estimate(path: &[f64], block: usize, quantile: f64) -> Result<BlocksEstimate, RegenError> {
    if block == 0 || path.len() < 100 * block {
        return Err(RegenError::PathTooShort { len: path.len(), block });
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(RegenError::InvalidArgument(format!("quantile {quantile} must lie in (0, 1)")));
    }
    let blocks = path.len() / block;
    let used = &path[..blocks * block];
    let mut sorted = used.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let idx = ((quantile * sorted.len() as f64).floor() as usize).min(sorted.len() - 1);
    let u = sorted[idx];
    let exceedances = used.iter().filter(|&&x| x > u).count();
    if exceedances == 0 {
        return Err(RegenError::TooFewExceedances { threshold: u, found: 0 });
    }
    let blocks_exceeding = used.chunks(block).filter(|b| b.iter().any(|&x| x > u)).count();
    Ok(BlocksEstimate {
        theta: blocks_exceeding as f64 / exceedances as f64,
        block,
        threshold: u,
        exceedances,
        blocks_exceeding,
        blocks,
    })
}

/// Settings for comparing block estimates with the candidate index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaConfig {
    pub n: u64,
    pub replicates: usize,
    pub block: usize,
    pub quantile: f64,
    /// Horizon and draws of the direct simulation of the candidate index.
    pub horizon: u64,
    pub candidate_draws: usize,
    pub seed: u64,
    pub workers: usize,
}

impl ThetaConfig {
    pub fn new(n: u64, replicates: usize, seed: u64, workers: usize) -> Self {
        ThetaConfig {
            n,
            replicates,
            block: default_block_length(n as usize + 1),
            quantile: DEFAULT_QUANTILE,
            horizon: 1_000_000,
            candidate_draws: 100_000,
            seed,
            workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaComparison {
    /// Mean and s.e. of the per-path blocks estimates.
    pub theta_hat: (f64, f64),
    pub per_path: Vec<f64>,
    /// Series value of the candidate index.
    pub candidate: f64,
    /// Direct simulation of the candidate index with its s.e.
    pub candidate_hat: (f64, f64),
    /// `(candidate_hat - theta_hat) / combined s.e.`
    pub separation: f64,
    /// `theta_hat / candidate_hat` and its delta-method s.e.
    pub ratio: (f64, f64),
}

/// Blocks estimates on independent model paths against the candidate extremal index.
pub fn theta_vs_candidate(
    spec: &RenewalSpec,
    k: usize,
    alpha: f64,
    cfg: &ThetaConfig,
) -> Result<ThetaComparison, RegenError> {
    let rows: Vec<Result<f64, RegenError>> = par_map_seeds(cfg.replicates, cfg.seed, cfg.workers, |s, _| {
        let p = simulate_x_path(spec, k, alpha, cfg.n, IndexSet::Exact, s)?;
        Ok(extremal_index_estimate(&p.values, cfg.block, cfg.quantile)?.theta)
    });
    let per_path: Vec<f64> = rows.into_iter().collect::<Result<_, _>>()?;
    let theta_hat = mean_se(&per_path);
    let candidate = candidate_extremal_index(spec, k).value;
    let candidate_hat =
        candidate_index_mc(spec, k, cfg.horizon, cfg.candidate_draws, derive_seed(cfg.seed, u64::MAX), cfg.workers);
    let se = (theta_hat.1.powi(2) + candidate_hat.1.powi(2)).sqrt();
    let separation = (candidate_hat.0 - theta_hat.0) / se;
    let r = theta_hat.0 / candidate_hat.0;
    let r_se = r * ((theta_hat.1 / theta_hat.0).powi(2) + (candidate_hat.1 / candidate_hat.0).powi(2)).sqrt();
    Ok(ThetaComparison { theta_hat, per_path, candidate, candidate_hat, separation, ratio: (r, r_se) })
}

/// The literal `D` value together with the simulated ratio of extremal to candidate index.
pub fn d_beta_k_with_mc(
    spec: &RenewalSpec,
    k: usize,
    alpha: f64,
    cfg: &ThetaConfig,
) -> Result<(DReport, ThetaComparison), RegenError> {
    let mut d = d_beta_k(spec.beta, k)?;
    let cmp = theta_vs_candidate(spec, k, alpha, cfg)?;
    d.mc_ratio = Some(cmp.ratio);
    Ok((d, cmp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn frechet_path(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| 1.0 / <Exp1 as Distribution<f64>>::sample(&Exp1, &mut rng)).collect()
    }

    #[test]
    fn iid_path_has_unit_index() {
        let est: Vec<f64> =
            (0..10).map(|s| extremal_index_estimate(&frechet_path(1_000_000, s), 100, 0.9999).unwrap().theta).collect();
        let (m, se) = mean_se(&est);
        // a block holds two exceedances with probability about (100 * 1e-4) / 2
        assert!((m - 0.995).abs() < 3.0 * se + 0.005, "{m} +- {se}");
    }

    #[test]
    fn moving_maximum_has_index_one_half() {
        let est: Vec<f64> = (0..10)
            .map(|s| {
                let z = frechet_path(1_000_001, 100 + s);
                let y: Vec<f64> = z.windows(2).map(|w| w[0].max(w[1])).collect();
                extremal_index_estimate(&y, 100, 0.9999).unwrap().theta
            })
            .collect();
        let (m, se) = mean_se(&est);
        assert!((m - 0.5).abs() < 3.0 * se + 0.01, "{m} +- {se}");
    }

    #[test]
    fn estimator_errors() {
        assert!(matches!(extremal_index_estimate(&[1.0; 50], 1, 0.9), Err(RegenError::PathTooShort { .. })));
        assert!(matches!(
            extremal_index_estimate(&vec![1.0; 1000], 10, 0.9),
            Err(RegenError::TooFewExceedances { .. })
        ));
        assert_eq!(default_block_length(1_000_000), 3982);
    }
}
