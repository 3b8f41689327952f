//! Phase orchestration and report output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sdecert_core::certify::{
    check_exp_certificate, check_practical_certificate, CertificateReport,
};
use sdecert_core::estimate::{
    check_martingale_inequality, estimate_attractivity, estimate_ball_stability,
    estimate_boundedness, estimate_exponent, zero_crossing_frequency, EstimateReport,
    ExponentReport, MartingaleReport,
};
use sdecert_core::model::{check_linear_growth, check_lipschitz, RegularityReport, SdeModel};
use sdecert_core::sim::{simulate_ensemble, PathEnsemble, Scheme};
use serde::Serialize;

use crate::config::{ConfigError, Expect, ExperimentConfig};

/// Added to the master seed to key the martingale experiment's streams.
pub const MARTINGALE_SEED_OFFSET: u64 = 0x5DEE_CE66_D1CE_4E5B;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Config,
    Regularity,
    Certificates,
    Simulation,
    Estimators,
    Exponent,
    Output,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Config => "config",
            Self::Regularity => "regularity",
            Self::Certificates => "certificates",
            Self::Simulation => "simulation",
            Self::Estimators => "estimators",
            Self::Exponent => "exponent",
            Self::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{phase}] {message}")]
pub struct RunError {
    pub phase: Phase,
    pub message: String,
}

impl RunError {
    fn new(phase: Phase, e: impl ToString) -> Self {
        Self {
            phase,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        Self::new(Phase::Config, e)
    }
}

/// One asserted check and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expectation {
    pub check: String,
    pub expected: String,
    pub observed: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub exp: Option<CertificateReport>,
    pub practical: Option<CertificateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub model: String,
    pub scheme: Scheme,
    pub trials: usize,
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub diverged: usize,
}

/// Contents of `summary.json`; wall-clock timings go to `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub regularity: Vec<RegularityReport>,
    pub certificates: CertificateSummary,
    pub simulation: SimulationSummary,
    pub estimates: Vec<EstimateReport>,
    pub exponent: Option<ExponentReport>,
    pub martingale: Option<MartingaleReport>,
    pub expectations: Vec<Expectation>,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub phases: Vec<(Phase, f64)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub timings: Timings,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.summary.passed
    }
}

fn expect_verdict(check: &str, expect: Option<Expect>, passed: bool, out: &mut Vec<Expectation>) {
    if let Some(e) = expect {
        let observed = if passed { Expect::Pass } else { Expect::Fail };
        out.push(Expectation {
            check: check.into(),
            expected: format!("{e:?}").to_lowercase(),
            observed: format!("{observed:?}").to_lowercase(),
            passed: e == observed,
        });
    }
}

fn expect_min(check: &str, min: Option<f64>, report: &EstimateReport, out: &mut Vec<Expectation>) {
    if let Some(min) = min {
        out.push(Expectation {
            check: check.into(),
            expected: format!("p_hat >= {min}"),
            observed: format!("p_hat = {}", report.p_hat),
            passed: report.p_hat >= min,
        });
    }
}

struct Clock {
    phases: Vec<(Phase, f64)>,
    start: Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            phases: Vec::new(),
            start: Instant::now(),
        }
    }

    fn lap(&mut self, phase: Phase) {
        self.phases
            .push((phase, self.start.elapsed().as_secs_f64()));
        self.start = Instant::now();
    }
}

type Artifacts = Vec<(String, Vec<u8>)>;

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, RunError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| RunError::new(Phase::Output, e))?;
    Ok(buf)
}

fn compute(
    config: &ExperimentConfig,
    clock: &mut Clock,
) -> Result<(RunSummary, Artifacts), RunError> {
    let model = config.build_model()?;
    let d = model.state_dim();
    let v = config.build_lyapunov(d)?;
    let grid = config.build_grid()?;
    let sampler = config.build_sampler(d)?;
    let n = config.sampler.samples;
    let mut expectations = Vec::new();
    let mut artifacts: Artifacts = Vec::new();

    let mut regularity = Vec::new();
    if let Some(r) = &config.regularity {
        let err = |e| RunError::new(Phase::Regularity, e);
        if let Some(c) = r.linear_growth {
            regularity.push(check_linear_growth(&model, c, &sampler, n).map_err(err)?);
        }
        if let Some(c) = r.lipschitz {
            regularity.push(check_lipschitz(&model, c, &sampler, n).map_err(err)?);
        }
        let passed = regularity.iter().all(|r| r.passed);
        expect_verdict("regularity", r.expect, passed, &mut expectations);
    }
    clock.lap(Phase::Regularity);

    let err = |e| RunError::new(Phase::Certificates, e);
    let exp = match &config.certificates.exp {
        Some(c) => {
            let report =
                check_exp_certificate(&v, &model, &c.certificate(), &sampler, n).map_err(err)?;
            expect_verdict(
                "certificates.exp",
                c.expect,
                report.passed,
                &mut expectations,
            );
            Some(report)
        }
        None => None,
    };
    let practical = match &config.certificates.practical {
        Some(c) => {
            let cert = c.certificate().map_err(err)?;
            let report = check_practical_certificate(&v, &model, &cert, &sampler, n, c.t_max)
                .map_err(err)?;
            expect_verdict(
                "certificates.practical",
                c.expect,
                report.passed,
                &mut expectations,
            );
            Some(report)
        }
        None => None,
    };
    clock.lap(Phase::Certificates);

    let e = &config.ensemble;
    let ens: PathEnsemble = simulate_ensemble(&model, &e.x0, &grid, e.trials, e.seed, e.scheme)
        .map_err(|err| RunError::new(Phase::Simulation, err))?;
    if e.dump_paths {
        artifacts.push(("paths.csv".into(), csv_bytes(|w| ens.write_csv(w))?));
    }
    clock.lap(Phase::Simulation);

    let err = |e| RunError::new(Phase::Estimators, e);
    let est = &config.estimators;
    let mut estimates = Vec::new();
    if let Some(b) = &est.boundedness {
        let r = estimate_boundedness(&ens, b.alpha, b.c).map_err(err)?;
        expect_min(
            "estimators.boundedness",
            b.expect_min,
            &r,
            &mut expectations,
        );
        estimates.push(r);
    }
    if let Some(b) = &est.ball_stability {
        let r = estimate_ball_stability(&ens, b.k, b.r).map_err(err)?;
        expect_min(
            "estimators.ball_stability",
            b.expect_min,
            &r,
            &mut expectations,
        );
        estimates.push(r);
    }
    if let Some(a) = &est.attractivity {
        let r = estimate_attractivity(&ens, a.k, a.settle, a.c).map_err(err)?;
        expect_min(
            "estimators.attractivity",
            a.expect_min,
            &r,
            &mut expectations,
        );
        estimates.push(r);
    }
    if let Some(z) = &est.zero_crossing {
        estimates.push(zero_crossing_frequency(&ens, z.tol).map_err(err)?);
    }
    let martingale = match &est.martingale {
        Some(m) => {
            let g = m.g.clone();
            let report = check_martingale_inequality(
                move |_| g.clone(),
                m.alpha,
                m.beta,
                m.horizon,
                m.trials,
                e.seed.wrapping_add(MARTINGALE_SEED_OFFSET),
                m.dt,
            )
            .map_err(err)?;
            if m.expect_bound {
                expectations.push(Expectation {
                    check: "estimators.martingale".into(),
                    expected: format!("lo <= {}", report.bound),
                    observed: format!("lo = {}", report.estimate.lo),
                    passed: report.bound_respected,
                });
            }
            Some(report)
        }
        None => None,
    };
    for r in estimates
        .iter()
        .chain(martingale.as_ref().map(|m| &m.estimate))
    {
        artifacts.push((format!("{}.csv", r.name), csv_bytes(|w| r.write_csv(w))?));
    }
    clock.lap(Phase::Estimators);

    let exponent = match &est.exponent {
        Some(x) => {
            let report = estimate_exponent(&ens, x.r, x.eps_floor)
                .map_err(|e| RunError::new(Phase::Exponent, e))?;
            if let Some(max) = x.expect_p90_max {
                expectations.push(Expectation {
                    check: "estimators.exponent".into(),
                    expected: format!("p90_slope <= {max}"),
                    observed: match report.p90_slope {
                        Some(s) => format!("p90_slope = {s}"),
                        None => "no fitted paths".into(),
                    },
                    passed: report.p90_slope.is_some_and(|s| s <= max),
                });
            }
            artifacts.push(("exponent.csv".into(), csv_bytes(|w| report.write_csv(w))?));
            Some(report)
        }
        None => None,
    };
    clock.lap(Phase::Exponent);

    let passed = expectations.iter().all(|e| e.passed);
    let summary = RunSummary {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: e.seed,
        config: config.clone(),
        regularity,
        certificates: CertificateSummary { exp, practical },
        simulation: SimulationSummary {
            model: model.label().to_string(),
            scheme: e.scheme,
            trials: ens.trials(),
            t0: grid.t0,
            dt: grid.dt,
            n_steps: grid.n_steps,
            diverged: ens.diverged_count(),
        },
        estimates,
        exponent,
        martingale,
        expectations,
        passed,
    };
    Ok((summary, artifacts))
}

fn write_all(out_dir: &Path, artifacts: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>, RunError> {
    let created_dir = !out_dir.exists();
    let mut written = Vec::new();
    let result = (|| -> std::io::Result<()> {
        fs::create_dir_all(out_dir)?;
        for (name, bytes) in artifacts {
            let path = out_dir.join(name);
            fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(())
    })();
    match result {
        Ok(()) => Ok(written),
        Err(e) => {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created_dir {
                let _ = fs::remove_dir(out_dir);
            }
            Err(RunError::new(
                Phase::Output,
                format!("{}: {e}", out_dir.display()),
            ))
        }
    }
}

/// Runs all phases and writes the reports into `out_dir`.
///
/// Files are only written after every phase has succeeded; a failed write
/// removes whatever was already written.
pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    options: RunOptions,
) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let mut clock = Clock::new();
    let (summary, mut artifacts) = match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| RunError::new(Phase::Config, e))?
            .install(|| compute(config, &mut clock))?,
        None => compute(config, &mut clock)?,
    };
    let mut json =
        serde_json::to_vec_pretty(&summary).map_err(|e| RunError::new(Phase::Output, e))?;
    json.push(b'\n');
    artifacts.insert(0, ("summary.json".into(), json));
    clock.lap(Phase::Output);
    let timings = Timings {
        phases: clock.phases,
    };
    let mut tjson =
        serde_json::to_vec_pretty(&timings).map_err(|e| RunError::new(Phase::Output, e))?;
    tjson.push(b'\n');
    artifacts.push(("timings.json".into(), tjson));
    let files = write_all(out_dir, &artifacts)?;
    Ok(RunOutcome {
        summary,
        timings,
        files,
    })
}
