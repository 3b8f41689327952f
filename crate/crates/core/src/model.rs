//! SDE models `dx = f(x,t) dt + g(x,t) dW` and sampled checks of the
//! linear-growth and Lipschitz conditions that guarantee a unique global
//! solution.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::sampler::DomainSampler;
use crate::tolerance::violates;

/// Drift and diffusion of an Itô SDE with state dimension `d` and Brownian
/// dimension `m`.
///
/// Implementations must be pure: the same `(x, t)` always produces
/// bit-identical output. Output buffers are preallocated by the caller with
/// length `d` (drift) and shape `d x m` (diffusion).
pub trait SdeModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn label(&self) -> &str;

    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn diffusion_into(&self, x: &[f64], t: f64, out: &mut DMatrix<f64>);

    /// `true` when `d == m` and column `k` of `g` depends only on `x_k` and
    /// is zero outside row `k`.
    fn is_diagonal_noise(&self) -> bool {
        false
    }

    /// Exact `d g_kk / d x_k`, if the model knows it. Milstein falls back to
    /// a central finite difference otherwise.
    fn diffusion_diag_derivative(&self, _x: &[f64], _t: f64, _k: usize) -> Option<f64> {
        None
    }
}

/// Evaluates `(f(x,t), g(x,t))` after validating the input shape.
pub fn evaluate<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = model.state_dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "state vector",
            expected: d,
            got: x.len(),
        });
    }
    if !(t >= 0.0) {
        return Err(invalid("t", "time must be nonnegative"));
    }
    let mut f = DVector::zeros(d);
    let mut g = DMatrix::zeros(d, model.noise_dim());
    model.drift_into(x, t, f.as_mut_slice());
    model.diffusion_into(x, t, &mut g);
    Ok((f, g))
}

type DriftFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(&[f64], f64, &mut DMatrix<f64>) + Send + Sync;

/// A model backed by closures.
pub struct FnModel {
    label: String,
    d: usize,
    m: usize,
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    diagonal: bool,
}

impl FnModel {
    pub fn new(
        label: impl Into<String>,
        d: usize,
        m: usize,
        drift: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], f64, &mut DMatrix<f64>) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            d,
            m,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            diagonal: false,
        }
    }

    /// Scalar model `dx = f(x,t) dt + g(x,t) dW` (always diagonal noise).
    pub fn scalar(
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            label,
            1,
            1,
            move |x, t, out| out[0] = f(x[0], t),
            move |x, t, out| out[(0, 0)] = g(x[0], t),
        )
        .with_diagonal_noise()
    }

    /// Declares the diagonal-noise structure required by Milstein.
    pub fn with_diagonal_noise(mut self) -> Self {
        self.diagonal = self.d == self.m;
        self
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("label", &self.label)
            .field("d", &self.d)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl SdeModel for FnModel {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }
    fn diffusion_into(&self, x: &[f64], t: f64, out: &mut DMatrix<f64>) {
        (self.diffusion)(x, t, out)
    }
    fn is_diagonal_noise(&self) -> bool {
        self.diagonal
    }
}

/// Affine model: `f(x) = A x + a`, `g_k(x) = B_k x + b_k` for the `k`-th
/// diffusion column.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSdeModel {
    label: String,
    a: DMatrix<f64>,
    a_offset: DVector<f64>,
    b: Vec<DMatrix<f64>>,
    b_offset: Vec<DVector<f64>>,
    diagonal: bool,
}

impl AffineSdeModel {
    pub fn new(
        label: impl Into<String>,
        a: DMatrix<f64>,
        a_offset: DVector<f64>,
        b: Vec<DMatrix<f64>>,
        b_offset: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let d = a.nrows();
        if d == 0 {
            return Err(invalid("A", "state dimension must be positive"));
        }
        if a.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "A columns",
                expected: d,
                got: a.ncols(),
            });
        }
        if a_offset.len() != d {
            return Err(Error::DimensionMismatch {
                what: "a length",
                expected: d,
                got: a_offset.len(),
            });
        }
        if b.is_empty() {
            return Err(invalid("B", "noise dimension must be positive"));
        }
        if b_offset.len() != b.len() {
            return Err(Error::DimensionMismatch {
                what: "number of b_k vectors",
                expected: b.len(),
                got: b_offset.len(),
            });
        }
        for bk in &b {
            if bk.nrows() != d || bk.ncols() != d {
                return Err(Error::DimensionMismatch {
                    what: "B_k shape",
                    expected: d,
                    got: if bk.nrows() != d {
                        bk.nrows()
                    } else {
                        bk.ncols()
                    },
                });
            }
        }
        for bk in &b_offset {
            if bk.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "b_k length",
                    expected: d,
                    got: bk.len(),
                });
            }
        }
        let all = a
            .iter()
            .chain(a_offset.iter())
            .chain(b.iter().flat_map(|m| m.iter()))
            .chain(b_offset.iter().flat_map(|v| v.iter()));
        for v in all {
            if !v.is_finite() {
                return Err(invalid("affine coefficients", "must be finite"));
            }
        }
        let diagonal = b.len() == d
            && b.iter().zip(&b_offset).enumerate().all(|(k, (bk, ck))| {
                bk.iter()
                    .enumerate()
                    .all(|(idx, &v)| v == 0.0 || (idx % d == k && idx / d == k))
                    && ck.iter().enumerate().all(|(i, &v)| v == 0.0 || i == k)
            });
        Ok(Self {
            label: label.into(),
            a,
            a_offset,
            b,
            b_offset,
            diagonal,
        })
    }

    /// Langevin equation `dx = alpha x dt + beta dW` (d = m = 1).
    pub fn langevin(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(
            "langevin",
            DMatrix::from_element(1, 1, alpha),
            DVector::zeros(1),
            vec![DMatrix::zeros(1, 1)],
            vec![DVector::from_element(1, beta)],
        )
    }

    pub fn drift_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn diffusion_matrices(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    /// A constant for which the Lipschitz condition holds exactly, using the
    /// spectral norm for `A` and `B_k`.
    ///
    /// The diffusion part is measured in the Frobenius norm, so its bound is
    /// `sqrt(sum_k ||B_k||^2)`; for `m = 1` this is just `||B_1||`.
    pub fn lipschitz_constant(&self) -> f64 {
        let drift = spectral_norm(&self.a);
        let diffusion = self
            .b
            .iter()
            .map(|bk| spectral_norm(bk).powi(2))
            .sum::<f64>()
            .sqrt();
        drift.max(diffusion)
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

impl SdeModel for AffineSdeModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn noise_dim(&self) -> usize {
        self.b.len()
    }
    fn label(&self) -> &str {
        &self.label
    }

    fn drift_into(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a_offset[i]
                + x.iter()
                    .enumerate()
                    .map(|(j, xj)| self.a[(i, j)] * xj)
                    .sum::<f64>();
        }
    }

    fn diffusion_into(&self, x: &[f64], _t: f64, out: &mut DMatrix<f64>) {
        let d = self.a.nrows();
        for (k, (bk, ck)) in self.b.iter().zip(&self.b_offset).enumerate() {
            for i in 0..d {
                let mut acc = ck[i];
                for j in 0..d {
                    acc += bk[(i, j)] * x[j];
                }
                out[(i, k)] = acc;
            }
        }
    }

    fn is_diagonal_noise(&self) -> bool {
        self.diagonal
    }

    fn diffusion_diag_derivative(&self, _x: &[f64], _t: f64, k: usize) -> Option<f64> {
        self.diagonal.then(|| self.b[k][(k, k)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegularityCondition {
    #[serde(rename = "linear-growth")]
    LinearGrowth,
    #[serde(rename = "lipschitz")]
    Lipschitz,
}

/// Which coefficient an inequality was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Drift,
    Diffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityViolation {
    pub coefficient: Coefficient,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub condition: RegularityCondition,
    pub constant: f64,
    pub samples_tested: usize,
    pub violations: Vec<RegularityViolation>,
    pub passed: bool,
}

fn check_args(c: f64, n: usize) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid("C", "must be positive and finite"));
    }
    if n == 0 {
        return Err(invalid("n", "at least one sample is required"));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks `|f(x,t)| <= C(1+|x|)` and `|g(x,t)|_F <= C(1+|x|)` on `n`
/// sampled points.
pub fn check_linear_growth<M: SdeModel + ?Sized>(
    model: &M,
    c: f64,
    sampler: &DomainSampler,
    n: usize,
) -> Result<RegularityReport> {
    check_args(c, n)?;
    let points = sampler.points(n);
    let mut violations = Vec::new();
    for p in &points {
        let (f, g) = evaluate(model, &p.x, p.t)?;
        let rhs = c * (1.0 + norm(&p.x));
        for (coefficient, lhs) in [
            (Coefficient::Drift, f.norm()),
            (Coefficient::Diffusion, g.norm()),
        ] {
            if violates(lhs, rhs) {
                violations.push(RegularityViolation {
                    coefficient,
                    x: p.x.clone(),
                    y: None,
                    t: p.t,
                    lhs,
                    rhs,
                });
            }
        }
    }
    Ok(RegularityReport {
        condition: RegularityCondition::LinearGrowth,
        constant: c,
        samples_tested: points.len(),
        passed: violations.is_empty(),
        violations,
    })
}

/// Checks `|f(x,t)-f(y,t)| <= C|x-y|` and the Frobenius analogue for `g` on
/// `n` sampled pairs.
pub fn check_lipschitz<M: SdeModel + ?Sized>(
    model: &M,
    c: f64,
    sampler: &DomainSampler,
    n: usize,
) -> Result<RegularityReport> {
    check_args(c, n)?;
    let pairs = sampler.pairs(n);
    let mut violations = Vec::new();
    for p in &pairs {
        let (fx, gx) = evaluate(model, &p.x, p.t)?;
        let (fy, gy) = evaluate(model, &p.y, p.t)?;
        let dist: f64 =
            p.x.iter()
                .zip(&p.y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        let rhs = c * dist;
        for (coefficient, lhs) in [
            (Coefficient::Drift, (fx - fy).norm()),
            (Coefficient::Diffusion, (gx - gy).norm()),
        ] {
            if violates(lhs, rhs) {
                violations.push(RegularityViolation {
                    coefficient,
                    x: p.x.clone(),
                    y: Some(p.y.clone()),
                    t: p.t,
                    lhs,
                    rhs,
                });
            }
        }
    }
    Ok(RegularityReport {
        condition: RegularityCondition::Lipschitz,
        constant: c,
        samples_tested: pairs.len(),
        passed: violations.is_empty(),
        violations,
    })
}
