//! Time grids and reproducible Brownian increments.
//!
//! Every increment is keyed by `(master seed, trial, step, component)`: the
//! seed keys a ChaCha8 generator, the trial selects its stream, and
//! `step * m + component` is the 64-bit word index inside that stream. Paths
//! can therefore be generated in any order or on any number of threads and
//! still come out bit-identical.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform grid `t0 + i*dt`, `i = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(invalid("t0", "must be finite and >= 0"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", "must be finite and > 0"));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be positive"));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid spanning `[t0, t0 + horizon]` with step `dt`, rounding the step
    /// count to the nearest integer.
    pub fn with_horizon(t0: f64, dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(invalid("horizon", "must be positive"));
        }
        Self::new(t0, dt, (horizon / dt).round().max(1.0) as usize)
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Brownian increments for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub trial: u64,
    pub m: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, trial: u64, m: usize) -> Self {
        Self { seed, trial, m }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.trial);
        rng
    }

    /// Standard normal draw for `(step, component)` by random access.
    pub fn standard_normal(&self, step: usize, component: usize) -> f64 {
        let mut rng = self.rng();
        // Each u64 consumes two 32-bit words.
        rng.set_word_pos(2 * (step as u128 * self.m as u128 + component as u128));
        standard_normal_quantile(unit_open_interval(rng.next_u64()))
    }

    /// `n_steps` standard normal m-vectors, flattened step-major.
    pub fn standard_normals(&self, n_steps: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..n_steps * self.m)
            .map(|_| standard_normal_quantile(unit_open_interval(rng.next_u64())))
            .collect()
    }

    /// `n_steps` increments `dW_i ~ N(0, dt I_m)`, flattened step-major
    /// (`out[i*m + k]` is component `k` of step `i`).
    pub fn sample_increments(&self, grid: &TimeGrid) -> Vec<f64> {
        let scale = grid.dt.sqrt();
        let mut out = self.standard_normals(grid.n_steps);
        out.iter_mut().for_each(|z| *z *= scale);
        out
    }
}

/// Maps 64 random bits to the open interval `(0, 1)`.
#[inline]
pub fn unit_open_interval(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Inverse of the standard normal CDF for `p` in `(0, 1)`.
#[inline]
pub fn standard_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let g = TimeGrid::new(1.0, 0.25, 4).unwrap();
        assert_eq!(g.time(0), 1.0);
        assert_eq!(g.time(4), 2.0);
        assert_eq!(g.final_time(), 2.0);
        assert_eq!(g.len(), 5);
        assert!(TimeGrid::new(0.0, 0.0, 1).is_err());
        assert!(TimeGrid::new(-1.0, 0.1, 1).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 0).is_err());
        assert_eq!(
            TimeGrid::with_horizon(0.0, 1e-3, 12.0).unwrap().n_steps,
            12_000
        );
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(standard_normal_quantile(0.5), 0.0);
        assert!((standard_normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((standard_normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-12);
        assert!(standard_normal_quantile(unit_open_interval(0)).is_finite());
        assert!(standard_normal_quantile(unit_open_interval(u64::MAX)).is_finite());
    }

    #[test]
    fn open_interval_bounds() {
        assert!(unit_open_interval(0) > 0.0);
        assert!(unit_open_interval(u64::MAX) < 1.0);
    }

    #[test]
    fn increments_are_reproducible() {
        let g = TimeGrid::new(0.0, 0.01, 500).unwrap();
        let s = NoiseStream::new(42, 3, 2);
        assert_eq!(s.sample_increments(&g), s.sample_increments(&g));
    }

    #[test]
    fn trials_are_separated() {
        let g = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let a = NoiseStream::new(42, 0, 1).sample_increments(&g);
        let b = NoiseStream::new(42, 1, 1).sample_increments(&g);
        assert_ne!(a, b);
        let c = NoiseStream::new(43, 0, 1).sample_increments(&g);
        assert_ne!(a, c);
    }

    #[test]
    fn random_access_matches_sequential() {
        let s = NoiseStream::new(7, 11, 3);
        let seq = s.standard_normals(50);
        for (step, comp) in [(0, 0), (0, 2), (17, 1), (49, 2)] {
            assert_eq!(
                s.standard_normal(step, comp).to_bits(),
                seq[step * 3 + comp].to_bits()
            );
        }
    }

    #[test]
    fn pooled_increment_moments() {
        // 10^6 draws at dt = 0.01: mean within 4 * sqrt(dt / N), variance within 1%.
        let dt = 0.01;
        let g = TimeGrid::new(0.0, dt, 10_000).unwrap();
        let draws: Vec<f64> = (0..100)
            .flat_map(|trial| NoiseStream::new(2024, trial, 1).sample_increments(&g))
            .collect();
        let n = draws.len() as f64;
        assert_eq!(draws.len(), 1_000_000);
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 4.0 * (dt / n).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() <= 0.01, "variance {var}");
    }
}
