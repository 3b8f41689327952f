//! Lyapunov functions `V(x,t)` and the Itô generator
//! `LV = V_t + V_x f + 1/2 trace(g^T V_xx g)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{evaluate, SdeModel};
use crate::sampler::SamplePoint;

/// A nonnegative `C^{2,1}` function with user-supplied derivatives.
pub trait LyapunovFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], t: f64) -> f64;
    /// `dV/dt`.
    fn time_derivative(&self, x: &[f64], t: f64) -> f64;
    /// Gradient `V_x` (length `d`).
    fn gradient(&self, x: &[f64], t: f64) -> DVector<f64>;
    /// Hessian `V_xx` (`d x d`, symmetric).
    fn hessian(&self, x: &[f64], t: f64) -> DMatrix<f64>;

    /// Closed-form `LV` for the model this function was built against, if
    /// known.
    fn analytic_generator(&self, _x: &[f64], _t: f64) -> Option<f64> {
        None
    }
}

/// `V(x) = x^T Q x + offset` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLyapunov {
    q: DMatrix<f64>,
    offset: f64,
}

impl QuadraticLyapunov {
    pub fn new(q: DMatrix<f64>, offset: f64) -> Result<Self> {
        if q.nrows() == 0 || q.nrows() != q.ncols() {
            return Err(invalid("Q", "must be a nonempty square matrix"));
        }
        if q.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(invalid("Q", "entries must be finite"));
        }
        if (&q - q.transpose()).amax() > 1e-9 {
            return Err(invalid("Q", "must be symmetric"));
        }
        if offset < 0.0 {
            return Err(invalid("offset", "must be nonnegative so that V >= 0"));
        }
        let min_eig = q.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * q.amax().max(1.0) {
            return Err(invalid("Q", "must be positive semidefinite so that V >= 0"));
        }
        Ok(Self { q, offset })
    }

    /// `V(x) = |x|^2` in `d` dimensions.
    pub fn squared_norm(d: usize) -> Self {
        Self {
            q: DMatrix::identity(d, d),
            offset: 0.0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
}

impl LyapunovFunction for QuadraticLyapunov {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn value(&self, x: &[f64], _t: f64) -> f64 {
        let d = self.q.nrows();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += x[i] * self.q[(i, j)] * x[j];
            }
        }
        acc + self.offset
    }

    fn time_derivative(&self, _x: &[f64], _t: f64) -> f64 {
        0.0
    }

    fn gradient(&self, x: &[f64], _t: f64) -> DVector<f64> {
        let d = self.q.nrows();
        DVector::from_fn(d, |i, _| {
            2.0 * (0..d).map(|j| self.q[(i, j)] * x[j]).sum::<f64>()
        })
    }

    fn hessian(&self, _x: &[f64], _t: f64) -> DMatrix<f64> {
        &self.q * 2.0
    }
}

type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], f64) -> DVector<f64> + Send + Sync;
type MatrixFn = dyn Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync;

/// A Lyapunov function assembled from closures.
pub struct FnLyapunov {
    d: usize,
    value: Box<ScalarFn>,
    time_derivative: Box<ScalarFn>,
    gradient: Box<VectorFn>,
    hessian: Box<MatrixFn>,
    analytic: Option<Box<ScalarFn>>,
}

impl FnLyapunov {
    pub fn new(
        d: usize,
        value: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        time_derivative: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], f64) -> DVector<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            d,
            value: Box::new(value),
            time_derivative: Box::new(time_derivative),
            gradient: Box::new(gradient),
            hessian: Box::new(hessian),
            analytic: None,
        }
    }

    /// Attaches a closed-form `LV` (valid for one specific model).
    pub fn with_analytic_generator(
        mut self,
        lv: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.analytic = Some(Box::new(lv));
        self
    }
}

impl std::fmt::Debug for FnLyapunov {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnLyapunov")
            .field("d", &self.d)
            .field("analytic", &self.analytic.is_some())
            .finish_non_exhaustive()
    }
}

impl LyapunovFunction for FnLyapunov {
    fn dim(&self) -> usize {
        self.d
    }
    fn value(&self, x: &[f64], t: f64) -> f64 {
        (self.value)(x, t)
    }
    fn time_derivative(&self, x: &[f64], t: f64) -> f64 {
        (self.time_derivative)(x, t)
    }
    fn gradient(&self, x: &[f64], t: f64) -> DVector<f64> {
        (self.gradient)(x, t)
    }
    fn hessian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        (self.hessian)(x, t)
    }
    fn analytic_generator(&self, x: &[f64], t: f64) -> Option<f64> {
        self.analytic.as_ref().map(|lv| lv(x, t))
    }
}

fn check_dims<V, M>(v: &V, model: &M) -> Result<()>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    if v.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov function dimension",
            expected: model.state_dim(),
            got: v.dim(),
        });
    }
    Ok(())
}

/// `LV(x,t) = V_t + V_x f + 1/2 trace(g^T V_xx g)`.
pub fn generator<V, M>(v: &V, model: &M, x: &[f64], t: f64) -> Result<f64>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    check_dims(v, model)?;
    let (f, g) = evaluate(model, x, t)?;
    let grad = v.gradient(x, t);
    let hess = v.hessian(x, t);
    let d = model.state_dim();
    if grad.len() != d || hess.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov derivative shape",
            expected: d,
            got: grad.len(),
        });
    }
    let drift_term = grad.dot(&f);
    // trace(g^T H g) = sum_k g_k^T H g_k
    let mut trace = 0.0;
    for k in 0..g.ncols() {
        let gk = g.column(k);
        trace += gk.dot(&(&hess * gk));
    }
    Ok(v.time_derivative(x, t) + drift_term + 0.5 * trace)
}

/// `|V_x(x,t) g(x,t)|^2`, the squared norm of the `1 x m` row vector.
pub fn diffusion_gradient_norm_sq<V, M>(v: &V, model: &M, x: &[f64], t: f64) -> Result<f64>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    check_dims(v, model)?;
    let (_, g) = evaluate(model, x, t)?;
    let grad = v.gradient(x, t);
    if grad.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov gradient",
            expected: model.state_dim(),
            got: grad.len(),
        });
    }
    Ok(g.tr_mul(&grad).norm_squared())
}

/// Largest `|generator - analytic| / (1 + |analytic|)` over `points`, or
/// `None` if `v` has no closed-form generator.
pub fn generator_consistency<V, M>(v: &V, model: &M, points: &[SamplePoint]) -> Result<Option<f64>>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    let mut worst: Option<f64> = None;
    for p in points {
        let Some(analytic) = v.analytic_generator(&p.x, p.t) else {
            return Ok(None);
        };
        let lv = generator(v, model, &p.x, p.t)?;
        let err = (lv - analytic).abs() / (1.0 + analytic.abs());
        worst = Some(worst.map_or(err, |w: f64| w.max(err)));
    }
    Ok(worst)
}

/// Relative tolerance for derivative validation.
pub const DERIVATIVE_REL_TOL: f64 = 1e-5;
/// Absolute floor for derivative validation.
pub const DERIVATIVE_ABS_FLOOR: f64 = 1e-8;
/// Symmetry tolerance for user-supplied Hessians.
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeMismatch {
    pub x: Vec<f64>,
    pub t: f64,
    /// `V_t`, `V_x[i]`, `V_xx[i,j]`, `V>=0` or `V_xx symmetry`.
    pub derivative: String,
    pub supplied: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub points_tested: usize,
    pub step: f64,
    /// Maximum of `|fd - supplied| / (|supplied| + floor/rel_tol)`, which is
    /// `<= rel_tol` exactly when `|fd - supplied| <= rel_tol*|supplied| + floor`.
    /// The floor is `1e-8`, raised to the finite-difference round-off level
    /// `16 eps |V| / step` where that is larger.
    pub max_error_vt: f64,
    pub max_error_vx: f64,
    pub max_error_vxx: f64,
    pub mismatches: Vec<DerivativeMismatch>,
    pub passed: bool,
}

/// Round-off allowance, in units of `eps * |V| / step_scale`, added to the
/// absolute floor of each finite-difference comparison.
const ROUNDOFF_FACTOR: f64 = 16.0;

fn scaled_error(fd: f64, exact: f64, floor: f64) -> f64 {
    let err = (fd - exact).abs() / (exact.abs() + floor / DERIVATIVE_REL_TOL);
    if err.is_nan() {
        f64::INFINITY
    } else {
        err
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Time,
    Gradient,
    Hessian,
}

struct Entry {
    name: String,
    exact: f64,
    fd: f64,
    /// Product of the steps in the difference quotient's denominator.
    step_scale: f64,
}

fn note(report: &mut ValidationReport, p: &SamplePoint, v0: f64, entry: Entry, slot: Slot) {
    let Entry {
        name,
        exact,
        fd,
        step_scale,
    } = entry;
    let floor = DERIVATIVE_ABS_FLOOR.max(ROUNDOFF_FACTOR * f64::EPSILON * v0.abs() / step_scale);
    let e = scaled_error(fd, exact, floor);
    let max = match slot {
        Slot::Time => &mut report.max_error_vt,
        Slot::Gradient => &mut report.max_error_vx,
        Slot::Hessian => &mut report.max_error_vxx,
    };
    *max = max.max(e);
    if e > DERIVATIVE_REL_TOL {
        report.mismatches.push(DerivativeMismatch {
            x: p.x.clone(),
            t: p.t,
            derivative: name,
            supplied: exact,
            finite_difference: fd,
        });
    }
}

/// Compares the supplied `V_t`, `V_x`, `V_xx` with central finite
/// differences of `V`, using per-coordinate steps `h (1 + |x_i|)` and
/// `h (1 + t)` (one-sided in time when `t` is closer to zero than the step).
pub fn validate_derivatives<V>(v: &V, points: &[SamplePoint], h: f64) -> Result<ValidationReport>
where
    V: LyapunovFunction + ?Sized,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid("h", "must be positive"));
    }
    if points.is_empty() {
        return Err(invalid("points", "at least one point is required"));
    }
    let d = v.dim();
    let mut report = ValidationReport {
        points_tested: points.len(),
        step: h,
        max_error_vt: 0.0,
        max_error_vx: 0.0,
        max_error_vxx: 0.0,
        mismatches: Vec::new(),
        passed: true,
    };
    let mut probe = vec![0.0; d];
    for p in points {
        if p.x.len() != d {
            return Err(Error::DimensionMismatch {
                what: "validation point",
                expected: d,
                got: p.x.len(),
            });
        }
        let x = &p.x;
        let t = p.t;
        let v0 = v.value(x, t);
        if !(v0 >= 0.0) {
            report.mismatches.push(DerivativeMismatch {
                x: x.clone(),
                t,
                derivative: "V>=0".into(),
                supplied: v0,
                finite_difference: v0,
            });
        }

        let ht = h * (1.0 + t);
        let fd_t = if t >= ht {
            (v.value(x, t + ht) - v.value(x, t - ht)) / (2.0 * ht)
        } else {
            (-3.0 * v0 + 4.0 * v.value(x, t + ht) - v.value(x, t + 2.0 * ht)) / (2.0 * ht)
        };
        note(
            &mut report,
            p,
            v0,
            Entry {
                name: "V_t".into(),
                exact: v.time_derivative(x, t),
                fd: fd_t,
                step_scale: ht,
            },
            Slot::Time,
        );

        let grad = v.gradient(x, t);
        let hess = v.hessian(x, t);
        if grad.len() != d || hess.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                what: "Lyapunov derivative shape",
                expected: d,
                got: grad.len(),
            });
        }
        let steps: Vec<f64> = x.iter().map(|xi| h * (1.0 + xi.abs())).collect();
        let mut eval = |shifts: &[(usize, f64)]| {
            probe.copy_from_slice(x);
            for &(i, s) in shifts {
                probe[i] += s;
            }
            v.value(&probe, t)
        };
        for i in 0..d {
            let hi = steps[i];
            let up = eval(&[(i, hi)]);
            let down = eval(&[(i, -hi)]);
            let fd = (up - down) / (2.0 * hi);
            note(
                &mut report,
                p,
                v0,
                Entry {
                    name: format!("V_x[{i}]"),
                    exact: grad[i],
                    fd,
                    step_scale: hi,
                },
                Slot::Gradient,
            );
            let second = (up - 2.0 * v0 + down) / (hi * hi);
            note(
                &mut report,
                p,
                v0,
                Entry {
                    name: format!("V_xx[{i},{i}]"),
                    exact: hess[(i, i)],
                    fd: second,
                    step_scale: hi * hi,
                },
                Slot::Hessian,
            );
            for j in (i + 1)..d {
                let hj = steps[j];
                let mixed = (eval(&[(i, hi), (j, hj)])
                    - eval(&[(i, hi), (j, -hj)])
                    - eval(&[(i, -hi), (j, hj)])
                    + eval(&[(i, -hi), (j, -hj)]))
                    / (4.0 * hi * hj);
                note(
                    &mut report,
                    p,
                    v0,
                    Entry {
                        name: format!("V_xx[{i},{j}]"),
                        exact: hess[(i, j)],
                        fd: mixed,
                        step_scale: hi * hj,
                    },
                    Slot::Hessian,
                );
                let asym = (hess[(i, j)] - hess[(j, i)]).abs();
                if !(asym <= HESSIAN_SYMMETRY_TOL) {
                    report.mismatches.push(DerivativeMismatch {
                        x: x.clone(),
                        t,
                        derivative: "V_xx symmetry".into(),
                        supplied: hess[(i, j)],
                        finite_difference: hess[(j, i)],
                    });
                }
            }
        }
    }
    report.passed = report.mismatches.is_empty();
    Ok(report)
}
