//! Regimes of the k-tuple model, their normalizations and limit constants, and
//! the candidate extremal index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::renewal::{forward_epochs, renewal_mass, RenewalSpec};
use super::RegenError;
use crate::harness::{mean_se, par_map_seeds};

/// `|beta_k|` below this counts as the critical case.
pub const CRITICAL_EPS: f64 = 1e-12;
/// Terms of the renewal-mass series summed exactly before the asymptotic tail takes over.
pub const SERIES_TERMS: usize = 1 << 13;
/// Tail size at which the candidate-index series counts as fully resolved.
pub const SERIES_TAIL_TARGET: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Super,
    Critical,
    Sub,
}

/// `k beta - k + 1`.
pub fn beta_k(beta: f64, k: usize) -> f64 {
    k as f64 * beta - k as f64 + 1.0
}

pub fn regime(beta: f64, k: usize) -> Regime {
    let b = beta_k(beta, k);
    if b.abs() <= CRITICAL_EPS {
        Regime::Critical
    } else if b > 0.0 {
        Regime::Super
    } else {
        Regime::Sub
    }
}

/// Block-maximum normalization `c_n` of the given regime.
pub fn normalization(regime: Regime, beta: f64, k: usize, alpha: f64, n: f64) -> f64 {
    let km1 = k as f64 - 1.0;
    let base = match regime {
        Regime::Super => n.powf(1.0 - beta_k(beta, k)),
        Regime::Critical => n * n.ln().ln().powf(km1) / n.ln(),
        Regime::Sub => n * n.ln().powf(km1),
    };
    base.powf(1.0 / alpha)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn binomial(n: usize, r: usize) -> f64 {
    factorial(n) / (factorial(r) * factorial(n - r))
}

/// The smallest `q >= 1` with `beta_q < 0`.
pub fn q_min(beta: f64) -> usize {
    let mut q = 1;
    while beta_k(beta, q) >= 0.0 {
        q += 1;
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DReport {
    pub beta: f64,
    pub k: usize,
    pub q_min: usize,
    /// The displayed alternating sum, evaluated term by term.
    pub literal: f64,
    /// Whether the literal value lies in `(0, 1)` as asserted for it.
    pub conforming: bool,
    /// Monte Carlo ratio of block-estimated to candidate extremal index, when computed.
    pub mc_ratio: Option<(f64, f64)>,
}

/// `sum_{q >= q_min} (-1)^q C(k, q) (-beta)^{q-k-1}`; binomials vanish past `k`.
pub fn d_beta_k(beta: f64, k: usize) -> Result<DReport, RegenError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(RegenError::InvalidBeta(beta));
    }
    if beta_k(beta, k) >= -CRITICAL_EPS {
        return Err(RegenError::Regime(format!("beta_k = {} is not negative", beta_k(beta, k))));
    }
    let q0 = q_min(beta);
    let literal: f64 = (q0..=k)
        .map(|q| {
            let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(k, q) * (-beta).powi(q as i32 - k as i32 - 1)
        })
        .sum();
    Ok(DReport { beta, k, q_min: q0, literal, conforming: literal > 0.0 && literal < 1.0, mc_ratio: None })
}

/// `P(Theta_s = 0 for all s >= 1)` with the series resolution recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateIndex {
    pub value: f64,
    /// Exact partial sum of `u(n)^k` over `n <= terms`.
    pub partial_sum: f64,
    /// Asymptotic estimate of the omitted tail.
    pub tail_estimate: f64,
    pub terms: usize,
    /// Whether the omitted tail is below [`SERIES_TAIL_TARGET`].
    pub resolved: bool,
    pub note: Option<String>,
}

/// `1 / sum_n u(n)^k`. The terms past [`SERIES_TERMS`] are replaced by the integral of the
/// renewal-mass asymptote, matched to the last exact term.
pub fn candidate_extremal_index(spec: &RenewalSpec, k: usize) -> CandidateIndex {
    candidate_extremal_index_with(spec, k, SERIES_TERMS)
}

pub fn candidate_extremal_index_with(spec: &RenewalSpec, k: usize, terms: usize) -> CandidateIndex {
    let bk = beta_k(spec.beta, k);
    if bk >= -CRITICAL_EPS {
        return CandidateIndex {
            value: 0.0,
            partial_sum: f64::INFINITY,
            tail_estimate: f64::INFINITY,
            terms: 0,
            resolved: true,
            note: Some(format!("beta_k = {bk} >= 0: the intersected renewal is recurrent")),
        };
    }
    let u = renewal_mass(spec, terms);
    let partial: f64 = u.iter().map(|x| x.powi(k as i32)).sum();
    let last = u[terms].powi(k as i32);
    // a law without the declared tail (e.g. lattice or bounded support) stops decaying
    if last * terms as f64 > 1.0 {
        return CandidateIndex {
            value: 0.0,
            partial_sum: partial,
            tail_estimate: f64::INFINITY,
            terms,
            resolved: false,
            note: Some("renewal-mass series does not decay; treated as divergent".into()),
        };
    }
    let a = 1.0 / (gamma(spec.beta) * gamma(1.0 - spec.beta) * spec.cf);
    let p = k as f64 * (1.0 - spec.beta);
    let matched = last / (a.powi(k as i32) * (terms as f64).powf(-p));
    let note = ((matched - 1.0).abs() > 0.1)
        .then(|| format!("last exact term is {matched:.3} times the asymptote; tail rescaled to match"));
    // sum_{n > N} n^{-p} ~ (N + 1/2)^{1-p} / (p - 1)
    let tail = last * (terms as f64).powf(p) * (terms as f64 + 0.5).powf(1.0 - p) / (p - 1.0);
    CandidateIndex {
        value: 1.0 / (partial + tail),
        partial_sum: partial,
        tail_estimate: tail,
        terms,
        resolved: tail < SERIES_TAIL_TARGET,
        note,
    }
}

/// Fraction of `k` independent non-delayed renewals with no common epoch in `1..=horizon`.
pub fn candidate_index_mc(
    spec: &RenewalSpec,
    k: usize,
    horizon: u64,
    draws: usize,
    seed: u64,
    workers: usize,
) -> (f64, f64) {
    let hits = par_map_seeds(draws, seed, workers, |s, _| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let paths: Vec<Vec<u64>> = (0..k).map(|_| forward_epochs(spec, 0, horizon, &mut rng)).collect();
        let common = super::model::intersect_sorted(&paths);
        if common.iter().any(|&t| t > 0) {
            0.0
        } else {
            1.0
        }
    });
    mean_se(&hits)
}

/// Regime, normalization and limit scale of block maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConstants {
    pub beta: f64,
    pub k: usize,
    pub alpha: f64,
    pub n: f64,
    pub beta_k: f64,
    pub regime: Regime,
    pub c_n: f64,
    /// Limit scale constant; in the sub-critical case it carries the literal `D` factor.
    pub frak_c: f64,
    /// False when a factor of `frak_c` falls outside its asserted range.
    pub conforming: bool,
    pub candidate_index: Option<f64>,
    pub d_literal: Option<f64>,
}

pub fn phase_constants(spec: &RenewalSpec, k: usize, alpha: f64, n: f64) -> PhaseConstants {
    let (beta, cf) = (spec.beta, spec.cf);
    let reg = regime(beta, k);
    let c_n = normalization(reg, beta, k, alpha, n);
    let kf = k as i32;
    let (frak_c, conforming, theta, d) = match reg {
        Regime::Super => ((cf / (1.0 - beta)).powi(kf), true, None, None),
        Regime::Critical => {
            let g = cf * gamma(beta) * gamma(1.0 - beta);
            (g.powi(kf) / (factorial(k) * factorial(k - 1)), true, None, None)
        }
        Regime::Sub => {
            let theta = candidate_extremal_index(spec, k).value;
            let d = d_beta_k(beta, k).expect("sub-critical regime");
            (theta * d.literal / (factorial(k) * factorial(k - 1)), d.conforming, Some(theta), Some(d.literal))
        }
    };
    PhaseConstants {
        beta,
        k,
        alpha,
        n,
        beta_k: beta_k(beta, k),
        regime: reg,
        c_n,
        frak_c,
        conforming,
        candidate_index: theta,
        d_literal: d,
    }
}
