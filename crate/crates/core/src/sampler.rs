//! Deterministic probe points for checking inequalities that are stated
//! globally but can only be tested on samples.
//!
//! An annulus sampler mixes a Halton low-discrepancy grid with seeded uniform
//! points over `{r_min <= |x| <= r_max} x [t_min, t_max]`. An explicit
//! sampler just replays user-supplied points.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{standard_normal_quantile, unit_open_interval};

/// One probe `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

/// One probe pair `(x, y, t)` with `x != y`, used by Lipschitz checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
}

/// Region and mixing parameters of an annulus sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub dim: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Share of points drawn uniformly at random; the rest come from the
    /// Halton grid.
    pub random_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSampler {
    Annulus(Annulus),
    Explicit {
        points: Vec<SamplePoint>,
        pairs: Vec<SamplePair>,
    },
}

/// Serializable description of the region actually probed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainDescription {
    Annulus {
        dim: usize,
        r_min: f64,
        r_max: f64,
        t_min: f64,
        t_max: f64,
        random_fraction: f64,
        seed: u64,
    },
    Explicit {
        points: usize,
        pairs: usize,
    },
}

impl DomainSampler {
    pub fn annulus(
        dim: usize,
        (r_min, r_max): (f64, f64),
        (t_min, t_max): (f64, f64),
        random_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !(r_min >= 0.0 && r_max >= r_min && r_max.is_finite()) {
            return Err(invalid("r_min/r_max", "need 0 <= r_min <= r_max < inf"));
        }
        if !(t_min >= 0.0 && t_max >= t_min && t_max.is_finite()) {
            return Err(invalid("t_min/t_max", "need 0 <= t_min <= t_max < inf"));
        }
        if !(0.0..=1.0).contains(&random_fraction) {
            return Err(invalid("random_fraction", "must lie in [0, 1]"));
        }
        Ok(Self::Annulus(Annulus {
            dim,
            r_min,
            r_max,
            t_min,
            t_max,
            random_fraction,
            seed,
        }))
    }

    pub fn explicit(points: Vec<SamplePoint>) -> Self {
        Self::Explicit {
            points,
            pairs: Vec::new(),
        }
    }

    pub fn explicit_pairs(pairs: Vec<SamplePair>) -> Self {
        Self::Explicit {
            points: Vec::new(),
            pairs,
        }
    }

    pub fn describe(&self) -> DomainDescription {
        match self {
            Self::Annulus(a) => DomainDescription::Annulus {
                dim: a.dim,
                r_min: a.r_min,
                r_max: a.r_max,
                t_min: a.t_min,
                t_max: a.t_max,
                random_fraction: a.random_fraction,
                seed: a.seed,
            },
            Self::Explicit { points, pairs } => DomainDescription::Explicit {
                points: points.len(),
                pairs: pairs.len(),
            },
        }
    }

    /// Up to `n` probe points, in a fixed order.
    pub fn points(&self, n: usize) -> Vec<SamplePoint> {
        match self {
            Self::Annulus(a) => a.points(n),
            Self::Explicit { points, .. } => points.iter().take(n).cloned().collect(),
        }
    }

    /// Up to `n` probe pairs with distinct members, in a fixed order.
    pub fn pairs(&self, n: usize) -> Vec<SamplePair> {
        match self {
            Self::Annulus(a) => {
                // Consecutive points are paired; coincident ones are skipped.
                let mut out = Vec::with_capacity(n);
                let mut batch = 2 * n;
                while out.len() < n {
                    let pts = a.points(batch);
                    out.clear();
                    for chunk in pts.chunks_exact(2) {
                        if chunk[0].x != chunk[1].x {
                            out.push(SamplePair {
                                x: chunk[0].x.clone(),
                                y: chunk[1].x.clone(),
                                t: chunk[0].t,
                            });
                            if out.len() == n {
                                break;
                            }
                        }
                    }
                    if a.r_max == 0.0 {
                        break;
                    }
                    batch *= 2;
                }
                out
            }
            Self::Explicit { pairs, .. } => pairs.iter().take(n).cloned().collect(),
        }
    }
}

impl Annulus {
    fn coordinates(&self) -> usize {
        // radius, sign (1-d) or direction (d-dims), time
        if self.dim == 1 {
            3
        } else {
            self.dim + 2
        }
    }

    fn points(&self, n: usize) -> Vec<SamplePoint> {
        let n_random = (n as f64 * self.random_fraction).round() as usize;
        let n_grid = n - n_random.min(n);
        let k = self.coordinates();
        let bases = first_primes(k);
        let mut out = Vec::with_capacity(n);
        let mut u = vec![0.0; k];
        for i in 0..n_grid {
            for (slot, &b) in u.iter_mut().zip(&bases) {
                *slot = radical_inverse(i as u64 + 1, b);
            }
            out.push(self.map(&u));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in n_grid..n {
            for slot in u.iter_mut() {
                *slot = unit_open_interval(rng.next_u64());
            }
            out.push(self.map(&u));
        }
        out
    }

    fn map(&self, u: &[f64]) -> SamplePoint {
        let radius = self.r_min + u[0] * (self.r_max - self.r_min);
        let t = self.t_min + u[u.len() - 1] * (self.t_max - self.t_min);
        let x = if self.dim == 1 {
            vec![if u[1] < 0.5 { -radius } else { radius }]
        } else {
            let mut dir: Vec<f64> = u[1..=self.dim]
                .iter()
                .map(|&v| standard_normal_quantile(v.clamp(1e-12, 1.0 - 1e-12)))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                dir.iter_mut().for_each(|v| *v *= radius / norm);
            } else {
                dir.iter_mut().for_each(|v| *v = 0.0);
                dir[0] = radius;
            }
            dir
        };
        SamplePoint { x, t }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut c = 2u64;
    while primes.len() < k {
        if primes
            .iter()
            .take_while(|&&p| p * p <= c)
            .all(|&p| !c.is_multiple_of(p))
        {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(first_primes(5), vec![2, 3, 5, 7, 11]);
    }

    #[test]
    fn annulus_points_stay_in_region() {
        for dim in [1, 2, 3] {
            let s = DomainSampler::annulus(dim, (1.5, 10.0), (0.0, 5.0), 0.5, 11).unwrap();
            let pts = s.points(2000);
            assert_eq!(pts.len(), 2000);
            for p in &pts {
                let r = norm(&p.x);
                assert!((1.5 - 1e-12..=10.0 + 1e-12).contains(&r), "r={r}");
                assert!((0.0..=5.0).contains(&p.t));
            }
        }
    }

    #[test]
    fn one_dimensional_annulus_covers_both_signs() {
        let s = DomainSampler::annulus(1, (1.0, 2.0), (0.0, 1.0), 0.0, 0).unwrap();
        let pts = s.points(100);
        assert!(pts.iter().any(|p| p.x[0] < 0.0));
        assert!(pts.iter().any(|p| p.x[0] > 0.0));
    }

    #[test]
    fn sampler_is_deterministic() {
        let s = DomainSampler::annulus(2, (0.0, 3.0), (0.0, 1.0), 0.3, 99).unwrap();
        assert_eq!(s.points(500), s.points(500));
        assert_eq!(s.pairs(200), s.pairs(200));
    }

    #[test]
    fn pairs_are_distinct() {
        let s = DomainSampler::annulus(1, (0.0, 3.0), (0.0, 1.0), 0.5, 1).unwrap();
        let pairs = s.pairs(300);
        assert_eq!(pairs.len(), 300);
        assert!(pairs.iter().all(|p| p.x != p.y));
    }

    #[test]
    fn rejects_bad_regions() {
        assert!(DomainSampler::annulus(0, (0.0, 1.0), (0.0, 1.0), 0.5, 0).is_err());
        assert!(DomainSampler::annulus(1, (2.0, 1.0), (0.0, 1.0), 0.5, 0).is_err());
        assert!(DomainSampler::annulus(1, (0.0, 1.0), (0.0, 1.0), 1.5, 0).is_err());
    }
}
