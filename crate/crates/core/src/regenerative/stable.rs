//! Grid approximation of the shifted beta-stable regenerative set on `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::RegenError;

/// Smallest accepted grid resolution.
pub const MIN_RESOLUTION: usize = 1 << 10;
/// Subordinator time steps per grid cell scale; see [`sample_stable_regenerative`].
const STEPS_PER_CELL: f64 = 8.0;

/// Grid cells of `[0, 1]` met by the set. Always an approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerativeSet {
    pub beta: f64,
    pub resolution: usize,
    pub shift: f64,
    /// Sorted indices of occupied cells `[i / resolution, (i + 1) / resolution)`.
    pub cells: Vec<usize>,
    pub approximate: bool,
}

impl RegenerativeSet {
    /// Whether the set meets `[a, b]`, at grid precision.
    pub fn hits(&self, a: f64, b: f64) -> bool {
        let lo = (a * self.resolution as f64).floor() as usize;
        let hi = ((b * self.resolution as f64).ceil() as usize).max(lo + 1);
        let i = self.cells.partition_point(|&c| c < lo);
        i < self.cells.len() && self.cells[i] < hi
    }
}

/// A positive beta-stable variable with Laplace transform `exp(-s^beta)` (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let u: f64 = std::f64::consts::PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = (beta * u).sin().powf(beta / (1.0 - beta)) * ((1.0 - beta) * u).sin() / u.sin().powf(1.0 / (1.0 - beta));
    (a / e).powf((1.0 - beta) / beta)
}

/// Range of a beta-stable subordinator from the origin, shifted by an independent
/// `Beta(1 - beta, 1)` variable and cut to `[0, 1]`, marked on a grid.
///
/// Time steps are chosen so a typical increment is a small fraction of a cell; the range
/// between consecutive steps is not resolved.
pub fn sample_stable_regenerative(beta: f64, resolution: usize, seed: u64) -> Result<RegenerativeSet, RegenError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(RegenError::InvalidBeta(beta));
    }
    if resolution < MIN_RESOLUTION {
        return Err(RegenError::InvalidArgument(format!("resolution {resolution} is below {MIN_RESOLUTION}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.random();
    let shift = u.powf(1.0 / (1.0 - beta));
    let cell = 1.0 / resolution as f64;
    // an increment over time h scales like h^{1/beta}
    let h = (cell / STEPS_PER_CELL).powf(beta);
    let step_scale = h.powf(1.0 / beta);
    let mut cells = Vec::new();
    let mut x = shift;
    while x < 1.0 {
        let i = (x * resolution as f64) as usize;
        if cells.last() != Some(&i) {
            cells.push(i);
        }
        x += step_scale * positive_stable(beta, &mut rng);
    }
    Ok(RegenerativeSet { beta, resolution, shift, cells, approximate: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ks_one_sample;
    use crate::regenerative::renewal::{ConditionedWindow, RenewalSpec};

    #[test]
    fn stable_laplace_transform() {
        let beta = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        for s in [0.5f64, 1.0, 2.0] {
            let m: f64 = (0..n).map(|_| (-s * positive_stable(beta, &mut rng)).exp()).sum::<f64>() / n as f64;
            assert!((m - (-s.powf(beta)).exp()).abs() < 0.005, "s={s}: {m}");
        }
    }

    #[test]
    fn shift_has_beta_law() {
        let beta = 0.3;
        let shifts: Vec<f64> =
            (0..5000).map(|s| sample_stable_regenerative(beta, MIN_RESOLUTION, s).unwrap().shift).collect();
        let r = ks_one_sample(&shifts, |x| x.clamp(0.0, 1.0).powf(1.0 - beta), 1e-3);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn set_is_nonempty_and_sorted() {
        let set = sample_stable_regenerative(0.6, 4096, 3).unwrap();
        assert!(!set.cells.is_empty());
        assert!(set.cells.windows(2).all(|w| w[0] < w[1]));
        assert!(set.cells.iter().all(|&c| c < 4096));
        assert!(set.approximate);
        assert!(sample_stable_regenerative(0.6, 100, 3).is_err());
    }

    #[test]
    fn hitting_probability_matches_renewal_window() {
        let beta = 0.7;
        let (a, b) = (0.5, 0.6);
        let reps = 6000;
        let set_hits = (0..reps).filter(|&s| sample_stable_regenerative(beta, 1 << 12, s).unwrap().hits(a, b)).count();
        let spec = RenewalSpec::power_tail(beta).unwrap();
        let n = 100_000u64;
        let window = ConditionedWindow::new(&spec, n);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (lo, hi) = ((a * n as f64) as u64, (b * n as f64) as u64);
        let renewal_hits = (0..reps)
            .filter(|_| {
                let p = window.sample(&mut rng);
                let i = p.epochs.partition_point(|&t| t < lo);
                i < p.epochs.len() && p.epochs[i] <= hi
            })
            .count();
        let (p, q) = (set_hits as f64 / reps as f64, renewal_hits as f64 / reps as f64);
        assert!((p / q - 1.0).abs() < 0.1, "set {p} vs renewal {q}");
    }
}
