//! Heavy-tailed renewal sequences on the integers.

use std::sync::Arc;

use rand::Rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::RegenError;

/// Law of the inter-arrival times, supported on {1, 2, ...}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterArrivalLaw {
    /// Survival function `(1 + n)^(-beta)`, so the tail constant is 1.
    PowerTail,
    /// Explicit probabilities; entry `i` is the mass at `i + 1`.
    Finite(Vec<f64>),
}

/// Inter-arrival specification: tail index, tail constant and the law itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalSpec {
    pub beta: f64,
    pub cf: f64,
    pub law: InterArrivalLaw,
}

const RATIO_PREFIX: u64 = 1_000_000;

impl RenewalSpec {
    /// Default law with survival `(1+n)^(-beta)`.
    pub fn power_tail(beta: f64) -> Result<Self, RegenError> {
        let spec = RenewalSpec { beta, cf: 1.0, law: InterArrivalLaw::PowerTail };
        spec.validate()?;
        Ok(spec)
    }

    /// A law with finitely many atoms. `beta` and `cf` are carried as declared.
    pub fn finite(pmf: Vec<f64>, beta: f64, cf: f64) -> Result<Self, RegenError> {
        let spec = RenewalSpec { beta, cf, law: InterArrivalLaw::Finite(pmf) };
        spec.validate()?;
        Ok(spec)
    }

    /// Every inter-arrival equals one.
    pub fn unit_steps() -> Self {
        RenewalSpec { beta: 0.5, cf: 1.0, law: InterArrivalLaw::Finite(vec![1.0]) }
    }

    pub fn validate(&self) -> Result<(), RegenError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(RegenError::InvalidBeta(self.beta));
        }
        if !(self.cf > 0.0 && self.cf.is_finite()) {
            return Err(RegenError::InvalidSpec(format!("tail constant {} must be positive", self.cf)));
        }
        if let InterArrivalLaw::Finite(p) = &self.law {
            if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(RegenError::InvalidSpec("pmf entries must be finite and nonnegative".into()));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(RegenError::InvalidSpec(format!("pmf sums to {total}, not 1")));
            }
        }
        let ratio = self.regularity_ratio(RATIO_PREFIX);
        if !ratio.is_finite() {
            return Err(RegenError::InvalidSpec("regularity ratio is unbounded on the checked prefix".into()));
        }
        Ok(())
    }

    /// P(X > n).
    pub fn survival(&self, n: u64) -> f64 {
        match &self.law {
            InterArrivalLaw::PowerTail => (1.0 + n as f64).powf(-self.beta),
            InterArrivalLaw::Finite(p) => {
                let upto = (n as usize).min(p.len());
                (1.0 - p[..upto].iter().sum::<f64>()).max(0.0)
            }
        }
    }

    /// P(X = n); zero at n = 0.
    pub fn pmf(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match &self.law {
            InterArrivalLaw::PowerTail => {
                let x = n as f64;
                // survival(n-1) * (1 - (n/(n+1))^beta), computed without cancellation
                let prev = x.powf(-self.beta);
                prev * -(-self.beta * (1.0 / x).ln_1p()).exp_m1()
            }
            InterArrivalLaw::Finite(p) => p.get(n as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// `sup n * pmf(n) / survival(n)` over `1..=prefix` (points with zero survival skipped).
    pub fn regularity_ratio(&self, prefix: u64) -> f64 {
        match &self.law {
            // n * ((1 + 1/n)^beta - 1) increases to beta
            InterArrivalLaw::PowerTail => {
                let x = prefix as f64;
                x * (self.beta * (1.0 / x).ln_1p()).exp_m1()
            }
            InterArrivalLaw::Finite(p) => {
                let mut sup = 0.0f64;
                let mut surv = 1.0;
                for (i, &pi) in p.iter().enumerate() {
                    surv -= pi;
                    if surv > 1e-15 {
                        sup = sup.max((i + 1) as f64 * pi / surv);
                    }
                }
                sup
            }
        }
    }

    /// One inter-arrival time, saturating at `u64::MAX`.
    pub fn sample_interarrival<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.law {
            InterArrivalLaw::PowerTail => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let x = (u.powf(-1.0 / self.beta) - 1.0).ceil();
                if x >= u64::MAX as f64 {
                    u64::MAX
                } else {
                    (x as u64).max(1)
                }
            }
            InterArrivalLaw::Finite(p) => {
                let mut u: f64 = rng.random();
                for (i, &pi) in p.iter().enumerate() {
                    if u < pi {
                        return i as u64 + 1;
                    }
                    u -= pi;
                }
                p.iter().rposition(|&x| x > 0.0).map(|i| i as u64 + 1).unwrap_or(1)
            }
        }
    }

    /// Window mass `sum_{j<=n} survival(j)`.
    pub fn window_mass(&self, n: u64) -> f64 {
        (0..=n).map(|j| self.survival(j)).sum()
    }
}

/// Renewal mass function `u(0..=n)`, `u(0) = 1`, by the convolution recursion.
pub fn renewal_mass(spec: &RenewalSpec, n: usize) -> Vec<f64> {
    let pmf: Vec<f64> = (0..=n as u64).map(|j| spec.pmf(j)).collect();
    let mut u = vec![0.0; n + 1];
    u[0] = 1.0;
    for m in 1..=n {
        let mut acc = 0.0;
        for j in 1..=m {
            acc += pmf[j] * u[m - j];
        }
        u[m] = acc;
    }
    u
}

/// A set of renewal epochs inside `{0, ..., window}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenewalPath {
    pub epochs: Vec<u64>,
    pub delayed: bool,
    pub window: u64,
}

impl RenewalPath {
    pub fn contains(&self, t: u64) -> bool {
        self.epochs.binary_search(&t).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn intersects(&self, other: &RenewalPath) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.epochs.len() && j < other.epochs.len() {
            match self.epochs[i].cmp(&other.epochs[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// Renewal epochs starting at `start`, up to and including `horizon`.
pub fn forward_epochs<R: Rng + ?Sized>(spec: &RenewalSpec, start: u64, horizon: u64, rng: &mut R) -> Vec<u64> {
    let mut out = Vec::new();
    let mut t = start;
    while t <= horizon {
        out.push(t);
        let step = spec.sample_interarrival(rng);
        t = match t.checked_add(step) {
            Some(v) => v,
            None => break,
        };
    }
    out
}

/// Samples delayed paths conditioned to renew inside `{0, ..., n}`.
///
/// The delay has mass `survival(j) / w_n` on `j = 0..=n`.
#[derive(Debug, Clone)]
pub struct ConditionedWindow {
    spec: RenewalSpec,
    n: u64,
    cumulative: Arc<Vec<f64>>,
}

impl ConditionedWindow {
    pub fn new(spec: &RenewalSpec, n: u64) -> Self {
        let mut cumulative = Vec::with_capacity(n as usize + 1);
        let mut acc = 0.0;
        for j in 0..=n {
            acc += spec.survival(j);
            cumulative.push(acc);
        }
        ConditionedWindow { spec: spec.clone(), n, cumulative: Arc::new(cumulative) }
    }

    pub fn window(&self) -> u64 {
        self.n
    }

    pub fn spec(&self) -> &RenewalSpec {
        &self.spec
    }

    /// `w_n`, the mu-mass of paths hitting the window.
    pub fn mass(&self) -> f64 {
        *self.cumulative.last().expect("window table is nonempty")
    }

    pub fn sample_delay<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let target = rng.random::<f64>() * self.mass();
        let idx = self.cumulative.partition_point(|&c| c <= target);
        idx.min(self.n as usize) as u64
    }

    /// Delay restricted to `{lo..=n}` (used when paths through earlier times are excluded).
    pub fn sample_delay_from<R: Rng + ?Sized>(&self, lo: u64, rng: &mut R) -> u64 {
        let base = if lo == 0 { 0.0 } else { self.cumulative[lo as usize - 1] };
        let target = base + rng.random::<f64>() * (self.mass() - base);
        let idx = self.cumulative.partition_point(|&c| c <= target);
        idx.clamp(lo as usize, self.n as usize) as u64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RenewalPath {
        let d = self.sample_delay(rng);
        RenewalPath { epochs: forward_epochs(&self.spec, d, self.n, rng), delayed: true, window: self.n }
    }

    pub fn sample_dyn(&self, rng: &mut dyn RngCore) -> RenewalPath {
        self.sample(rng)
    }
}

/// Non-delayed or window-conditioned delayed path on `{0..=horizon}`.
pub fn sample_renewal<R: Rng + ?Sized>(spec: &RenewalSpec, horizon: u64, delayed: bool, rng: &mut R) -> RenewalPath {
    if delayed {
        ConditionedWindow::new(spec, horizon).sample(rng)
    } else {
        RenewalPath { epochs: forward_epochs(spec, 0, horizon, rng), delayed: false, window: horizon }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_tail_pmf_sums_to_survival_drop() {
        let spec = RenewalSpec::power_tail(0.3).unwrap();
        let s: f64 = (1..=1000).map(|n| spec.pmf(n)).sum();
        assert!((s - (1.0 - spec.survival(1000))).abs() < 1e-12);
        assert!((spec.regularity_ratio(1_000_000) - 0.3).abs() < 1e-6);
    }

    #[test]
    fn renewal_mass_base_cases() {
        let spec = RenewalSpec::power_tail(0.4).unwrap();
        let u = renewal_mass(&spec, 3);
        assert_eq!(u[0], 1.0);
        assert_eq!(u[1], spec.pmf(1));
        let unit = renewal_mass(&RenewalSpec::unit_steps(), 5);
        assert!(unit.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn renewal_mass_asymptote_at_ten_thousand() {
        let beta = 0.3;
        let spec = RenewalSpec::power_tail(beta).unwrap();
        let u = renewal_mass(&spec, 10_000);
        let g = statrs::function::gamma::gamma(beta) * statrs::function::gamma::gamma(1.0 - beta);
        let ratio = (10_000f64).powf(1.0 - beta) * u[10_000] * g;
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn stationarity_identity_holds() {
        let spec = RenewalSpec::power_tail(0.6).unwrap();
        let u = renewal_mass(&spec, 1000);
        for t in 0..=1000usize {
            let s: f64 = (0..=t).map(|d| spec.survival(d as u64) * u[t - d]).sum();
            assert!((s - 1.0).abs() < 1e-10, "t={t} s={s}");
        }
    }

    #[test]
    fn window_mass_matches_asymptote() {
        let beta = 0.3;
        let spec = RenewalSpec::power_tail(beta).unwrap();
        let n = 100_000u64;
        let w = spec.window_mass(n);
        let target = spec.cf / (1.0 - beta) * (n as f64).powf(1.0 - beta);
        assert!((w / target - 1.0).abs() < 0.1);
        assert_eq!(spec.window_mass(0), 1.0);
    }

    #[test]
    fn degenerate_law_fills_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_renewal(&RenewalSpec::unit_steps(), 6, false, &mut rng);
        assert_eq!(p.epochs, vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn conditioned_paths_hit_window() {
        let spec = RenewalSpec::power_tail(0.3).unwrap();
        let cw = ConditionedWindow::new(&spec, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let p = cw.sample(&mut rng);
            assert!(!p.epochs.is_empty());
            assert!(*p.epochs.last().unwrap() <= 50);
        }
    }

    #[test]
    fn hit_frequency_matches_renewal_mass() {
        let spec = RenewalSpec::power_tail(0.5).unwrap();
        let u = renewal_mass(&spec, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 40_000;
        let mut hits = vec![0usize; 51];
        for _ in 0..reps {
            let p = sample_renewal(&spec, 50, false, &mut rng);
            for &t in &p.epochs {
                hits[t as usize] += 1;
            }
        }
        for n in [1usize, 2, 5, 10, 25, 50] {
            let p = hits[n] as f64 / reps as f64;
            let se = (u[n] * (1.0 - u[n]) / reps as f64).sqrt();
            assert!((p - u[n]).abs() < 3.5 * se, "n={n} p={p} u={}", u[n]);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(RenewalSpec::power_tail(1.2).is_err());
        assert!(RenewalSpec::finite(vec![0.5, 0.4], 0.5, 1.0).is_err());
    }
}
