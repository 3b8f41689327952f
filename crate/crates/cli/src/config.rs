//! Experiment configuration: a strict JSON document.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sdecert_core::certify::{ExpCertificate, KFunction, PracticalCertificate};
use sdecert_core::lyapunov::QuadraticLyapunov;
use sdecert_core::model::{AffineSdeModel, SdeModel};
use sdecert_core::noise::TimeGrid;
use sdecert_core::sampler::DomainSampler;
use sdecert_core::sim::Scheme;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid value at `{field}`: {message}")]
    Constraint { field: String, message: String },
}

impl ConfigError {
    /// Dotted path of the offending field.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Io { .. } => None,
            Self::Parse { field, .. } | Self::Constraint { field, .. } => Some(field),
        }
    }
}

fn constraint(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Constraint {
        field: field.into(),
        message: message.to_string(),
    }
}

/// Seed of the shipped Langevin configuration and of `langevin-demo`.
pub const LANGEVIN_DEMO_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `dx = alpha x dt + beta dW`.
    Langevin { alpha: f64, beta: f64 },
    /// `f = A x + a`, `g_k = B_k x + b_k`; matrices given row-major.
    Affine {
        a: Vec<Vec<f64>>,
        #[serde(default)]
        a_offset: Option<Vec<f64>>,
        b: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        b_offset: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LyapunovConfig {
    /// `V = x^T Q x + offset`; `Q` defaults to the identity.
    Quadratic {
        #[serde(default)]
        q: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        offset: f64,
    },
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self::Quadratic {
            q: None,
            offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpCertConfig {
    pub p: u32,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub rho: f64,
    pub gamma: f64,
    #[serde(default)]
    pub expect: Option<Expect>,
}

impl ExpCertConfig {
    pub fn certificate(&self) -> ExpCertificate {
        ExpCertificate {
            p: self.p,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            rho: self.rho,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KFunctionConfig {
    /// `coeff * s^exponent`.
    Power {
        coeff: f64,
        exponent: f64,
    },
    Zero,
}

impl KFunctionConfig {
    pub fn build(&self) -> KFunction {
        match *self {
            Self::Power { coeff, exponent } => KFunction::power(coeff, exponent),
            Self::Zero => KFunction::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RhoConfig {
    /// `scale * exp(-rate t)`.
    Exponential {
        scale: f64,
        rate: f64,
    },
    Constant {
        value: f64,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PracticalCertConfig {
    pub mu1: KFunctionConfig,
    pub mu2: KFunctionConfig,
    pub mu3: KFunctionConfig,
    pub rho: RhoConfig,
    /// Bound `M` on the integral of `rho`.
    pub m: f64,
    /// Horizon for the decay and integral checks.
    pub t_max: f64,
    #[serde(default)]
    pub expect: Option<Expect>,
}

impl PracticalCertConfig {
    pub fn certificate(&self) -> sdecert_core::Result<PracticalCertificate> {
        let (name, rho): (String, Box<dyn Fn(f64) -> f64 + Send + Sync>) = match self.rho {
            RhoConfig::Exponential { scale, rate } => (
                format!("{scale}*exp(-{rate}t)"),
                Box::new(move |t| scale * (-rate * t).exp()),
            ),
            RhoConfig::Constant { value } => (value.to_string(), Box::new(move |_| value)),
            RhoConfig::Zero => ("0".into(), Box::new(|_| 0.0)),
        };
        PracticalCertificate::new(
            self.mu1.build(),
            self.mu2.build(),
            self.mu3.build(),
            name,
            rho,
            self.m,
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificatesConfig {
    #[serde(default)]
    pub exp: Option<ExpCertConfig>,
    #[serde(default)]
    pub practical: Option<PracticalCertConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub dump_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundednessConfig {
    pub alpha: f64,
    pub c: f64,
    /// Asserted lower bound on the estimated probability.
    #[serde(default)]
    pub expect_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallStabilityConfig {
    pub k: f64,
    pub r: f64,
    #[serde(default)]
    pub expect_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractivityConfig {
    pub k: f64,
    #[serde(rename = "T")]
    pub settle: f64,
    pub c: f64,
    #[serde(default)]
    pub expect_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub r: f64,
    #[serde(default)]
    pub eps_floor: Option<f64>,
    /// Asserted upper bound on the 90th-percentile slope.
    #[serde(default)]
    pub expect_p90_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroCrossingConfig {
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleConfig {
    /// Constant integrand `g`.
    pub g: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub trials: usize,
    /// Assert that the Wilson lower limit does not exceed `exp(-alpha beta)`.
    #[serde(default)]
    pub expect_bound: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorsConfig {
    #[serde(default)]
    pub boundedness: Option<BoundednessConfig>,
    #[serde(default)]
    pub ball_stability: Option<BallStabilityConfig>,
    #[serde(default)]
    pub attractivity: Option<AttractivityConfig>,
    #[serde(default)]
    pub exponent: Option<ExponentConfig>,
    #[serde(default)]
    pub zero_crossing: Option<ZeroCrossingConfig>,
    #[serde(default)]
    pub martingale: Option<MartingaleConfig>,
}

fn default_random_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub r_min: f64,
    pub r_max: f64,
    #[serde(default)]
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    #[serde(default = "default_random_fraction")]
    pub random_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    #[serde(default)]
    pub linear_growth: Option<f64>,
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub expect: Option<Expect>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default)]
    pub certificates: CertificatesConfig,
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub estimators: EstimatorsConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub regularity: Option<RegularityConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(constraint(field, "must be a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl ExperimentConfig {
    /// The Langevin example `dx = alpha x dt + beta dW` with `V = x^2`, the
    /// certificate `p=2, c1=1, c2=2 alpha, c3=0, rho=beta^2+1, gamma=0`,
    /// and estimators sized around the radius `r = sqrt(beta^2+1)`.
    pub fn langevin_example(alpha: f64, beta: f64, seed: u64) -> Self {
        let cert = ExpCertificate::langevin(alpha, beta);
        let r = (beta * beta + 1.0).sqrt();
        let x0 = 10.0;
        Self {
            model: ModelConfig::Langevin { alpha, beta },
            lyapunov: LyapunovConfig::default(),
            certificates: CertificatesConfig {
                exp: Some(ExpCertConfig {
                    p: cert.p,
                    c1: cert.c1,
                    c2: cert.c2,
                    c3: cert.c3,
                    rho: cert.rho,
                    gamma: cert.gamma,
                    expect: Some(Expect::Pass),
                }),
                practical: Some(PracticalCertConfig {
                    mu1: KFunctionConfig::Power {
                        coeff: 1.0,
                        exponent: 2.0,
                    },
                    mu2: KFunctionConfig::Power {
                        coeff: 1.0,
                        exponent: 2.0,
                    },
                    mu3: KFunctionConfig::Power {
                        coeff: 1.0,
                        exponent: 2.0,
                    },
                    rho: RhoConfig::Exponential {
                        scale: 2.0,
                        rate: 1.0,
                    },
                    m: 2.0,
                    t_max: 20.0,
                    expect: None,
                }),
            },
            grid: GridConfig {
                t0: 0.0,
                dt: 1e-3,
                n_steps: 12_000,
            },
            ensemble: EnsembleConfig {
                trials: 1000,
                seed,
                scheme: Scheme::EulerMaruyama,
                x0: vec![x0],
                dump_paths: false,
            },
            estimators: EstimatorsConfig {
                boundedness: Some(BoundednessConfig {
                    alpha: x0,
                    c: 1.5 * x0,
                    expect_min: None,
                }),
                ball_stability: Some(BallStabilityConfig {
                    k: 1.5 * x0,
                    r,
                    expect_min: None,
                }),
                attractivity: Some(AttractivityConfig {
                    k: 2.0 * r,
                    settle: 6.0,
                    c: x0 + 1.0,
                    expect_min: Some(0.95),
                }),
                exponent: Some(ExponentConfig {
                    r,
                    eps_floor: None,
                    expect_p90_max: Some(-0.5),
                }),
                zero_crossing: Some(ZeroCrossingConfig { tol: 1e-2 }),
                martingale: Some(MartingaleConfig {
                    g: vec![1.0],
                    alpha: 2.0,
                    beta: 1.0,
                    horizon: 1.0,
                    dt: 1e-3,
                    trials: 2000,
                    expect_bound: true,
                }),
            },
            sampler: SamplerConfig {
                r_min: r + 0.1,
                r_max: 10.0 * r,
                t_min: 0.0,
                t_max: 10.0,
                samples: 10_000,
                random_fraction: 0.5,
                seed,
            },
            regularity: Some(RegularityConfig {
                linear_growth: Some(alpha.abs().max(beta.abs()).max(1.0)),
                lipschitz: Some(alpha.abs().max(1.0)),
                expect: Some(Expect::Pass),
            }),
            output_dir: PathBuf::from("out/langevin"),
        }
    }

    pub fn build_model(&self) -> Result<AffineSdeModel, ConfigError> {
        let built = match &self.model {
            ModelConfig::Langevin { alpha, beta } => AffineSdeModel::langevin(*alpha, *beta),
            ModelConfig::Affine {
                a,
                a_offset,
                b,
                b_offset,
            } => {
                let am = matrix("model.affine.a", a)?;
                let d = am.nrows();
                let a_off = DVector::from_vec(a_offset.clone().unwrap_or_else(|| vec![0.0; d]));
                let bs = b
                    .iter()
                    .enumerate()
                    .map(|(k, bk)| matrix(&format!("model.affine.b[{k}]"), bk))
                    .collect::<Result<Vec<_>, _>>()?;
                let b_off = match b_offset {
                    Some(v) => v.iter().cloned().map(DVector::from_vec).collect(),
                    None => vec![DVector::zeros(d); bs.len()],
                };
                AffineSdeModel::new("affine", am, a_off, bs, b_off)
            }
        };
        built.map_err(|e| constraint("model", e))
    }

    pub fn build_lyapunov(&self, dim: usize) -> Result<QuadraticLyapunov, ConfigError> {
        let LyapunovConfig::Quadratic { q, offset } = &self.lyapunov;
        let q = match q {
            Some(rows) => matrix("lyapunov.quadratic.q", rows)?,
            None => DMatrix::identity(dim, dim),
        };
        if q.nrows() != dim {
            return Err(constraint(
                "lyapunov.quadratic.q",
                format!("expected {dim}x{dim}, got {}x{}", q.nrows(), q.ncols()),
            ));
        }
        QuadraticLyapunov::new(q, *offset).map_err(|e| constraint("lyapunov", e))
    }

    pub fn build_grid(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::new(self.grid.t0, self.grid.dt, self.grid.n_steps)
            .map_err(|e| constraint("grid", e))
    }

    pub fn build_sampler(&self, dim: usize) -> Result<DomainSampler, ConfigError> {
        let s = &self.sampler;
        DomainSampler::annulus(
            dim,
            (s.r_min, s.r_max),
            (s.t_min, s.t_max),
            s.random_fraction,
            s.seed,
        )
        .map_err(|e| constraint("sampler", e))
    }

    /// Checks every numeric constraint and that all blocks resolve.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.build_model()?;
        let d = model.state_dim();
        self.build_lyapunov(d)?;
        let grid = self.build_grid()?;
        self.build_sampler(d)?;
        if self.sampler.samples == 0 {
            return Err(constraint("sampler.samples", "must be at least 1"));
        }
        if let Some(c) = &self.certificates.exp {
            let f = "certificates.exp";
            if c.p < 1 {
                return Err(constraint(format!("{f}.p"), "p must be >= 1"));
            }
            if !(c.c1 >= 1.0) {
                return Err(constraint(
                    format!("{f}.c1"),
                    format!("c1 = {} must be >= 1", c.c1),
                ));
            }
            if !(c.rho >= c.c1) {
                return Err(constraint(
                    format!("{f}.rho"),
                    format!("rho = {} must be >= c1 = {}", c.rho, c.c1),
                ));
            }
            if !(c.gamma >= 0.0) {
                return Err(constraint(format!("{f}.gamma"), "gamma must be >= 0"));
            }
            if !(c.c3 >= 0.0) {
                return Err(constraint(format!("{f}.c3"), "c3 must be >= 0"));
            }
            c.certificate().validate().map_err(|e| constraint(f, e))?;
        }
        if let Some(c) = &self.certificates.practical {
            if !(c.t_max > 0.0 && c.t_max.is_finite()) {
                return Err(constraint(
                    "certificates.practical.t_max",
                    "must be positive",
                ));
            }
            c.certificate()
                .map_err(|e| constraint("certificates.practical", e))?;
        }
        let e = &self.ensemble;
        if e.trials == 0 {
            return Err(constraint("ensemble.trials", "must be at least 1"));
        }
        if e.x0.len() != d {
            return Err(constraint(
                "ensemble.x0",
                format!("expected {d} components, got {}", e.x0.len()),
            ));
        }
        if e.x0.iter().any(|v| !v.is_finite()) {
            return Err(constraint("ensemble.x0", "must be finite"));
        }
        if e.scheme == Scheme::Milstein && !model.is_diagonal_noise() {
            return Err(constraint(
                "ensemble.scheme",
                "milstein requires diagonal noise",
            ));
        }
        let x0 = e.x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let est = &self.estimators;
        if let Some(b) = &est.boundedness {
            if !(b.alpha >= x0) {
                return Err(constraint(
                    "estimators.boundedness.alpha",
                    format!("|x0| = {x0} exceeds alpha"),
                ));
            }
        }
        if let Some(b) = &est.ball_stability {
            if !(b.k > b.r) {
                return Err(constraint("estimators.ball_stability.k", "k must exceed r"));
            }
        }
        if let Some(a) = &est.attractivity {
            if !(a.settle >= 0.0 && a.settle <= grid.horizon()) {
                return Err(constraint(
                    "estimators.attractivity.T",
                    "must lie within the grid horizon",
                ));
            }
            if !(x0 < a.c) {
                return Err(constraint(
                    "estimators.attractivity.c",
                    format!("|x0| = {x0} is not below c"),
                ));
            }
        }
        if let Some(x) = &est.exponent {
            if !(x.r >= 0.0 && x.r < x0) {
                return Err(constraint(
                    "estimators.exponent.r",
                    "r must be nonnegative and below |x0|",
                ));
            }
            if matches!(x.eps_floor, Some(f) if !(f > 0.0)) || (x.eps_floor.is_none() && x.r == 0.0)
            {
                return Err(constraint(
                    "estimators.exponent.eps_floor",
                    "must be positive",
                ));
            }
        }
        if let Some(m) = &est.martingale {
            let f = "estimators.martingale";
            if !(m.alpha > 0.0) {
                return Err(constraint(format!("{f}.alpha"), "must be positive"));
            }
            if !(m.beta > 0.0) {
                return Err(constraint(format!("{f}.beta"), "must be positive"));
            }
            if m.trials == 0 {
                return Err(constraint(format!("{f}.trials"), "must be at least 1"));
            }
            if m.g.is_empty() || m.g.iter().any(|v| !v.is_finite()) {
                return Err(constraint(
                    format!("{f}.g"),
                    "must be a non-empty finite vector",
                ));
            }
            TimeGrid::with_horizon(0.0, m.dt, m.horizon).map_err(|e| constraint(f, e))?;
        }
        if let Some(r) = &self.regularity {
            for (name, c) in [
                ("linear_growth", r.linear_growth),
                ("lipschitz", r.lipschitz),
            ] {
                if matches!(c, Some(c) if !(c > 0.0 && c.is_finite())) {
                    return Err(constraint(format!("regularity.{name}"), "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            field: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
