//! Stability certificates: a Lyapunov function plus constants whose
//! hypotheses imply a stability conclusion.
//!
//! Two certificate kinds are supported:
//!
//! * [`ExpCertificate`] for almost-sure practical exponential stability:
//!   `c1|x|^p <= V`, `LV <= c2 V + rho`, `|V_x g|^2 >= c3 V^2 + gamma`,
//!   giving the ball radius `r = (rho/c1)^(1/p)` and the exponent bound
//!   `-(c3 - 2(c2+1))/2`, with stability when `c3 > 2(c2+1)`.
//! * [`PracticalCertificate`] for practical stability in probability:
//!   `mu1(|x|) <= V <= mu2(|x|)`, `LV <= rho(t) - mu3(|x|)` with a
//!   nonnegative `rho(t) -> 0` whose integral is bounded by `M`.
//!
//! The hypotheses quantify over all `(x, t)`; here they are only evaluated
//! on sampled points, so a passing report means "verified on the sampled
//! domain", never "proved".

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lyapunov::{diffusion_gradient_norm_sq, generator, LyapunovFunction};
use crate::model::SdeModel;
use crate::sampler::{DomainDescription, DomainSampler, SamplePoint};
use crate::tolerance::violates;

/// Panels used by the composite Simpson rule for `int_0^t_max rho`.
pub const SIMPSON_PANELS: usize = 10_000;
/// `rho(t_max)` must not exceed `RHO_DECAY_REL * rho(0) + RHO_DECAY_ABS`.
pub const RHO_DECAY_REL: f64 = 1e-3;
pub const RHO_DECAY_ABS: f64 = 1e-9;
/// Radius at which K-infinity growth is probed.
pub const K_INFINITY_PROBE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KClass {
    K,
    KInfinity,
}

/// A comparison function `mu: R+ -> R+`, declared class K or K-infinity.
#[derive(Clone)]
pub struct KFunction {
    pub name: String,
    pub class: KClass,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for KFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KFunction")
            .field("name", &self.name)
            .field("class", &self.class)
            .finish_non_exhaustive()
    }
}

impl KFunction {
    pub fn new(
        name: impl Into<String>,
        class: KClass,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            class,
            f: Arc::new(f),
        }
    }

    /// `mu(s) = coeff * s^exponent`; K-infinity when both are positive.
    pub fn power(coeff: f64, exponent: f64) -> Self {
        let class = if coeff > 0.0 && exponent > 0.0 {
            KClass::KInfinity
        } else {
            KClass::K
        };
        Self::new(format!("{coeff}*s^{exponent}"), class, move |s| {
            coeff * s.powf(exponent)
        })
    }

    pub fn zero() -> Self {
        Self::new("0", KClass::K, |_| 0.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    /// Sampled class checks; returns one message per problem found.
    ///
    /// * `mu(0) = 0` within `1e-12`, values finite and nonnegative;
    /// * nondecreasing over the sorted `radii`;
    /// * for K-infinity: growth over `[1e3, 1e6]` at least matches growth
    ///   over `[1, 1e3]`, which rejects functions that saturate.
    pub fn check_class(&self, radii: &[f64]) -> Vec<String> {
        let mut issues = Vec::new();
        let at0 = self.eval(0.0);
        if !(at0.abs() <= 1e-12) {
            issues.push(format!("{}: mu(0) = {at0}, expected 0", self.name));
        }
        let mut rs: Vec<f64> = radii.iter().copied().filter(|r| *r >= 0.0).collect();
        rs.extend([0.0, 1.0, 1e3, K_INFINITY_PROBE]);
        rs.sort_by(f64::total_cmp);
        rs.dedup();
        let vals: Vec<f64> = rs.iter().map(|&r| self.eval(r)).collect();
        if let Some((r, v)) = rs
            .iter()
            .zip(&vals)
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            issues.push(format!(
                "{}: mu({r}) = {v} is not a finite nonnegative value",
                self.name
            ));
        }
        if let Some(w) = rs
            .windows(2)
            .zip(vals.windows(2))
            .find(|(_, v)| violates(v[0], v[1]))
        {
            issues.push(format!(
                "{}: decreasing between {} and {} ({} > {})",
                self.name, w.0[0], w.0[1], w.1[0], w.1[1]
            ));
        }
        if self.class == KClass::KInfinity {
            let (m1, m3, m6) = (self.eval(1.0), self.eval(1e3), self.eval(K_INFINITY_PROBE));
            if !(m6 - m3 >= m3 - m1 && m6 > 0.0) {
                issues.push(format!(
                    "{}: declared K-infinity but saturates (mu(1)={m1}, mu(1e3)={m3}, mu(1e6)={m6})",
                    self.name
                ));
            }
        }
        issues
    }
}

/// Hypotheses of the exponential practical-stability criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpCertificate {
    pub p: u32,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub rho: f64,
    pub gamma: f64,
}

impl ExpCertificate {
    pub fn new(p: u32, c1: f64, c2: f64, c3: f64, rho: f64, gamma: f64) -> Result<Self> {
        let cert = Self {
            p,
            c1,
            c2,
            c3,
            rho,
            gamma,
        };
        cert.validate()?;
        Ok(cert)
    }

    /// Langevin constants: `p=2, c1=1, c2=2 alpha, c3=0, rho=beta^2+1, gamma=0`.
    pub fn langevin(alpha: f64, beta: f64) -> Self {
        Self {
            p: 2,
            c1: 1.0,
            c2: 2.0 * alpha,
            c3: 0.0,
            rho: beta * beta + 1.0,
            gamma: 0.0,
        }
    }

    /// Constant constraints: `p >= 1, c1 >= 1, rho >= c1, gamma >= 0, c3 >= 0`.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.c1, self.c2, self.c3, self.rho, self.gamma]
            .iter()
            .all(|v| v.is_finite());
        let reason = if !finite {
            "constants must be finite"
        } else if self.p < 1 {
            "p must be at least 1"
        } else if self.c1 < 1.0 {
            "c1 must be >= 1"
        } else if self.rho < self.c1 {
            "rho must be >= c1"
        } else if self.gamma < 0.0 {
            "gamma must be >= 0"
        } else if self.c3 < 0.0 {
            "c3 must be >= 0"
        } else {
            return Ok(());
        };
        Err(Error::RejectedCertificate(reason.into()))
    }

    /// `r = (rho / c1)^(1/p)`; at least 1 for a valid certificate.
    pub fn radius(&self) -> Result<f64> {
        self.validate()?;
        let ratio = self.rho / self.c1;
        Ok(match self.p {
            1 => ratio,
            2 => ratio.sqrt(),
            3 => ratio.cbrt(),
            p => ratio.powf(1.0 / p as f64),
        })
    }

    /// Upper bound `-(c3 - 2(c2+1))/2` on the pathwise exponent.
    pub fn decay_rate(&self) -> f64 {
        -(self.c3 - 2.0 * (self.c2 + 1.0)) / 2.0
    }

    /// `c3 > 2(c2+1)`.
    pub fn is_stable(&self) -> bool {
        self.c3 > 2.0 * (self.c2 + 1.0)
    }
}

/// Hypotheses of the practical-stability-in-probability criterion.
#[derive(Clone)]
pub struct PracticalCertificate {
    pub mu1: KFunction,
    pub mu2: KFunction,
    pub mu3: KFunction,
    pub rho_name: String,
    rho_fn: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub integral_bound: f64,
}

impl std::fmt::Debug for PracticalCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PracticalCertificate")
            .field("mu1", &self.mu1)
            .field("mu2", &self.mu2)
            .field("mu3", &self.mu3)
            .field("rho", &self.rho_name)
            .field("integral_bound", &self.integral_bound)
            .finish()
    }
}

impl PracticalCertificate {
    pub fn new(
        mu1: KFunction,
        mu2: KFunction,
        mu3: KFunction,
        rho_name: impl Into<String>,
        rho_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
        integral_bound: f64,
    ) -> Result<Self> {
        if mu1.class != KClass::KInfinity || mu2.class != KClass::KInfinity {
            return Err(Error::RejectedCertificate(
                "mu1 and mu2 must be declared K-infinity".into(),
            ));
        }
        if !(integral_bound > 0.0 && integral_bound.is_finite()) {
            return Err(Error::RejectedCertificate("M must be positive".into()));
        }
        Ok(Self {
            mu1,
            mu2,
            mu3,
            rho_name: rho_name.into(),
            rho_fn: Arc::new(rho_fn),
            integral_bound,
        })
    }

    pub fn rho(&self, t: f64) -> f64 {
        (self.rho_fn)(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Exponential,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    VerifiedOnSampledDomain,
    ViolatedOnSampledDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertViolation {
    pub x: Vec<f64>,
    pub t: f64,
    /// `None` when the evaluation was not finite.
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub name: String,
    /// The checked inequality, written `lhs <= rhs`.
    pub inequality: String,
    pub violations: Vec<CertViolation>,
}

impl ConditionReport {
    fn new(name: &str, inequality: &str) -> Self {
        Self {
            name: name.into(),
            inequality: inequality.into(),
            violations: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub kind: CertificateKind,
    pub verdict: Verdict,
    pub domain: DomainDescription,
    pub samples_tested: usize,
    pub conditions: Vec<ConditionReport>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable: Option<bool>,
}

impl CertificateReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    fn finish(mut self) -> Self {
        self.passed = self.conditions.iter().all(ConditionReport::passed);
        self.verdict = if self.passed {
            Verdict::VerifiedOnSampledDomain
        } else {
            Verdict::ViolatedOnSampledDomain
        };
        self
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn violation(p: &SamplePoint, lhs: f64, rhs: f64, diagnostic: Option<String>) -> CertViolation {
    let diagnostic = diagnostic.or_else(|| {
        (!lhs.is_finite() || !rhs.is_finite()).then(|| "non-finite evaluation".to_string())
    });
    CertViolation {
        x: p.x.clone(),
        t: p.t,
        lhs: finite(lhs),
        rhs: finite(rhs),
        diagnostic,
    }
}

/// Per-point outcome: one entry per condition, `Some` on violation.
type PointOutcome = Vec<Option<CertViolation>>;

fn check_points<F>(points: &[SamplePoint], conditions: &mut [ConditionReport], eval: F)
where
    F: Fn(&SamplePoint) -> PointOutcome + Sync + Send,
{
    let outcomes: Vec<PointOutcome> = points.par_iter().map(eval).collect();
    for outcome in outcomes {
        for (cond, v) in conditions.iter_mut().zip(outcome) {
            if let Some(v) = v {
                cond.violations.push(v);
            }
        }
    }
}

fn inequality(p: &SamplePoint, lhs: f64, rhs: f64) -> Option<CertViolation> {
    violates(lhs, rhs).then(|| violation(p, lhs, rhs, None))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_dims<V, M>(v: &V, model: &M, n: usize) -> Result<()>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    if n == 0 {
        return Err(invalid("n", "at least one sample is required"));
    }
    if v.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov function dimension",
            expected: model.state_dim(),
            got: v.dim(),
        });
    }
    Ok(())
}

fn sample_points(sampler: &DomainSampler, n: usize, d: usize) -> Result<Vec<SamplePoint>> {
    let points = sampler.points(n);
    if let Some(p) = points.iter().find(|p| p.x.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "sample point",
            expected: d,
            got: p.x.len(),
        });
    }
    Ok(points)
}

/// Evaluates the three exponential-certificate inequalities at `n` sampled
/// points and computes the radius, rate bound and stability flag.
pub fn check_exp_certificate<V, M>(
    v: &V,
    model: &M,
    cert: &ExpCertificate,
    sampler: &DomainSampler,
    n: usize,
) -> Result<CertificateReport>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    cert.validate()?;
    check_dims(v, model, n)?;
    let points = sample_points(sampler, n, model.state_dim())?;
    let mut conditions = vec![
        ConditionReport::new("lower_bound", "c1*|x|^p <= V(x,t)"),
        ConditionReport::new("generator", "LV(x,t) <= c2*V(x,t) + rho"),
        ConditionReport::new("diffusion", "c3*V(x,t)^2 + gamma <= |V_x(x,t) g(x,t)|^2"),
    ];
    check_points(&points, &mut conditions, |p| {
        let val = v.value(&p.x, p.t);
        let lower = cert.c1 * norm(&p.x).powi(cert.p as i32);
        let gen = generator(v, model, &p.x, p.t);
        let dg = diffusion_gradient_norm_sq(v, model, &p.x, p.t);
        let rhs_gen = cert.c2 * val + cert.rho;
        let lhs_diff = cert.c3 * val * val + cert.gamma;
        vec![
            inequality(p, lower, val),
            match gen {
                Ok(lv) => inequality(p, lv, rhs_gen),
                Err(e) => Some(violation(p, f64::NAN, rhs_gen, Some(e.to_string()))),
            },
            match dg {
                Ok(q) => inequality(p, lhs_diff, q),
                Err(e) => Some(violation(p, lhs_diff, f64::NAN, Some(e.to_string()))),
            },
        ]
    });
    Ok(CertificateReport {
        kind: CertificateKind::Exponential,
        verdict: Verdict::ViolatedOnSampledDomain,
        domain: sampler.describe(),
        samples_tested: points.len(),
        conditions,
        passed: false,
        radius: Some(cert.radius()?),
        rate_bound: Some(cert.decay_rate()),
        stable: Some(cert.is_stable()),
    }
    .finish())
}

/// Composite Simpson rule with `panels` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2).next_multiple_of(2);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Evaluates the practical-certificate hypotheses: the sandwich bound and
/// the `LV` bound at `n` sampled points, `rho` nonnegative and decayed by
/// `t_max`, `int_0^t_max rho <= M`, and the declared classes of the
/// comparison functions.
pub fn check_practical_certificate<V, M>(
    v: &V,
    model: &M,
    cert: &PracticalCertificate,
    sampler: &DomainSampler,
    n: usize,
    t_max: f64,
) -> Result<CertificateReport>
where
    V: LyapunovFunction + ?Sized,
    M: SdeModel + ?Sized,
{
    check_dims(v, model, n)?;
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(invalid("t_max", "must be positive and finite"));
    }
    let points = sample_points(sampler, n, model.state_dim())?;
    let mut conditions = vec![
        ConditionReport::new("lower_sandwich", "mu1(|x|) <= V(x,t)"),
        ConditionReport::new("upper_sandwich", "V(x,t) <= mu2(|x|)"),
        ConditionReport::new("generator", "LV(x,t) <= rho(t) - mu3(|x|)"),
    ];
    check_points(&points, &mut conditions, |p| {
        let r = norm(&p.x);
        let val = v.value(&p.x, p.t);
        let rhs_gen = cert.rho(p.t) - cert.mu3.eval(r);
        vec![
            inequality(p, cert.mu1.eval(r), val),
            inequality(p, val, cert.mu2.eval(r)),
            match generator(v, model, &p.x, p.t) {
                Ok(lv) => inequality(p, lv, rhs_gen),
                Err(e) => Some(violation(p, f64::NAN, rhs_gen, Some(e.to_string()))),
            },
        ]
    });

    let origin = |t: f64| SamplePoint { x: Vec::new(), t };

    let mut nonneg = ConditionReport::new("rho_nonnegative", "0 <= rho(t) on quadrature nodes");
    let h = t_max / SIMPSON_PANELS as f64;
    for i in 0..=SIMPSON_PANELS {
        let t = i as f64 * h;
        let r = cert.rho(t);
        if violates(0.0, r) {
            nonneg.violations.push(violation(&origin(t), 0.0, r, None));
        }
    }

    let mut decay = ConditionReport::new("rho_decay", "rho(t_max) <= 1e-3*rho(0) + 1e-9");
    let decay_rhs = RHO_DECAY_REL * cert.rho(0.0) + RHO_DECAY_ABS;
    if let Some(v) = inequality(&origin(t_max), cert.rho(t_max), decay_rhs) {
        decay.violations.push(v);
    }

    let mut integral = ConditionReport::new("rho_integral", "int_0^t_max rho(t) dt <= M");
    let area = simpson(|t| cert.rho(t), 0.0, t_max, SIMPSON_PANELS);
    if let Some(v) = inequality(&origin(t_max), area, cert.integral_bound) {
        integral.violations.push(v);
    }

    let mut classes = ConditionReport::new("comparison_functions", "mu1, mu2 in K-inf; mu3 in K");
    let radii: Vec<f64> = points.iter().map(|p| norm(&p.x)).collect();
    for mu in [&cert.mu1, &cert.mu2, &cert.mu3] {
        for issue in mu.check_class(&radii) {
            classes
                .violations
                .push(violation(&origin(0.0), 0.0, 0.0, Some(issue)));
        }
    }

    conditions.extend([nonneg, decay, integral, classes]);
    Ok(CertificateReport {
        kind: CertificateKind::Practical,
        verdict: Verdict::ViolatedOnSampledDomain,
        domain: sampler.describe(),
        samples_tested: points.len(),
        conditions,
        passed: false,
        radius: None,
        rate_bound: None,
        stable: None,
    }
    .finish())
}
