//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Set `SDECERT_RECOMPUTE_ORACLE=1` to rerun the finer-step exponent oracle
//! instead of using the frozen value.

use std::f64::consts::SQRT_2;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rayon::prelude::*;
use sdecert_core::certify::{check_exp_certificate, ExpCertificate};
use sdecert_core::estimate::{
    check_martingale_inequality, estimate_attractivity, estimate_exponent, EstimateReport,
};
use sdecert_core::lyapunov::{generator, validate_derivatives, QuadraticLyapunov};
use sdecert_core::model::AffineSdeModel;
use sdecert_core::noise::{NoiseStream, TimeGrid};
use sdecert_core::sampler::{DomainSampler, SamplePoint};
use sdecert_core::sim::{
    ou_exact, simulate_ensemble, simulate_path_with_increments, Path as SdePath, PathEnsemble,
    Scheme,
};
use statrs::function::erf::erfc;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn langevin() -> AffineSdeModel {
    AffineSdeModel::langevin(-1.0, 1.0).expect("valid model")
}

fn v2() -> QuadraticLyapunov {
    QuadraticLyapunov::squared_norm(1)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn c1_langevin_certificate() -> Outcome {
    let start = Instant::now();
    let sampler =
        DomainSampler::annulus(1, (1.5, 10.0), (0.0, 10.0), 0.5, 1).map_err(|e| e.to_string())?;
    let cert = ExpCertificate::langevin(-1.0, 1.0);
    let r = check_exp_certificate(&v2(), &langevin(), &cert, &sampler, 10_000)
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let radius = r.radius.unwrap_or(f64::NAN);
    let rate = r.rate_bound.unwrap_or(f64::NAN);
    let stable_formula = cert.c3 > 2.0 * (cert.c2 + 1.0);
    check(
        r.passed
            && r.samples_tested == 10_000
            && (radius - SQRT_2).abs() <= 1e-12
            && (rate + 1.0).abs() <= 1e-12
            && r.stable == Some(true)
            && stable_formula
            && secs < 5.0,
        format!(
            "passed={} r={radius} rate={rate} stable={:?} time={secs:.2}s",
            r.passed, r.stable
        ),
    )
}

fn c2_generator_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = Vec::new();
    for (alpha, beta, seed) in [(-1.0, 1.0, 2u64), (-0.3, 2.5, 3), (1.7, 0.2, 4)] {
        let model = AffineSdeModel::langevin(alpha, beta).map_err(|e| e.to_string())?;
        let z = NoiseStream::new(seed, 0, 2);
        for i in 0..1000 {
            let x = 5.0 * z.standard_normal(i, 0);
            let t = 10.0 * normal_cdf(z.standard_normal(i, 1));
            let lv = generator(&v2(), &model, &[x], t).map_err(|e| e.to_string())?;
            let exact = 2.0 * alpha * x * x + beta * beta;
            worst = worst.max((lv - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
            if seed == 2 {
                points.push(SamplePoint { x: vec![x], t });
            }
        }
    }
    let fd = validate_derivatives(&v2(), &points, 1e-4).map_err(|e| e.to_string())?;
    let fd_max = fd.max_error_vt.max(fd.max_error_vx).max(fd.max_error_vxx);
    check(
        worst <= 1e-12 && fd.passed && fd_max <= 1e-5,
        format!(
            "max rel generator error={worst:.2e} fd max rel error={fd_max:.2e} fd passed={}",
            fd.passed
        ),
    )
}

/// Mean terminal error of Euler-Maruyama against the exact OU recursion
/// driven by the same Brownian increments.
fn strong_error(alpha: f64, beta: f64, x0: f64, dt: f64, trials: u64) -> Result<f64, String> {
    let grid = TimeGrid::with_horizon(0.0, dt, 1.0).map_err(|e| e.to_string())?;
    let model = AffineSdeModel::langevin(alpha, beta).map_err(|e| e.to_string())?;
    let decay = (alpha * dt).exp();
    let var_i = (2.0 * alpha * dt).exp_m1() / (2.0 * alpha);
    let cov = (alpha * dt).exp_m1() / alpha;
    let slope = cov / dt;
    let resid = (var_i - cov * cov / dt).max(0.0).sqrt();
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let dw = NoiseStream::new(31, trial, 1).sample_increments(&grid);
            let z2 = NoiseStream::new(32, trial, 1).standard_normals(grid.n_steps);
            let em = simulate_path_with_increments(
                &model,
                &[x0],
                &grid,
                &dw,
                Scheme::EulerMaruyama,
                trial,
                31,
            )
            .expect("path");
            let mut x = x0;
            for (w, z) in dw.iter().zip(&z2) {
                x = decay * x + beta * (slope * w + resid * z);
            }
            (em.terminal()[0] - x).abs()
        })
        .collect();
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn c3_integrator_order() -> Outcome {
    let start = Instant::now();
    let dts: Vec<f64> = (4..=8).map(|k| 0.1 * 0.5f64.powi(k)).collect();
    let errs = dts
        .iter()
        .map(|&dt| strong_error(-1.0, 1.0, 1.0, dt, 2000))
        .collect::<Result<Vec<_>, _>>()?;
    let slope = fit_slope(
        &dts.iter().map(|d| d.ln()).collect::<Vec<_>>(),
        &errs.iter().map(|e| e.ln()).collect::<Vec<_>>(),
    );
    let secs = start.elapsed().as_secs_f64();
    check(
        (0.85..=1.15).contains(&slope) && secs < 60.0,
        format!(
            "strong error slope={slope:.4} errors={:?} time={secs:.1}s",
            errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn c4_ou_moments() -> Outcome {
    let grid = TimeGrid::new(0.0, 1e-3, 1000).map_err(|e| e.to_string())?;
    let ens = simulate_ensemble(
        &langevin(),
        &[1.0],
        &grid,
        10_000,
        44,
        Scheme::EulerMaruyama,
    )
    .map_err(|e| e.to_string())?;
    let xs: Vec<f64> = ens.paths.iter().map(|p| p.terminal()[0]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let (m_exact, v_exact) = ou_exact(-1.0, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let se = (var / n).sqrt();
    let oracle_ok = (m_exact - 0.36788).abs() < 5e-6 && (v_exact - 0.43233).abs() < 5e-6;
    check(
        oracle_ok && (mean - m_exact).abs() <= 3.0 * se && (var / v_exact - 1.0).abs() <= 0.05,
        format!("mean={mean:.5} (exact {m_exact:.5}, 3SE={:.5}) var={var:.5} (exact {v_exact:.5}, rel {:.3})", 3.0 * se, var / v_exact - 1.0),
    )
}

/// Ensemble on `grid` plus the same Brownian paths refined to `dt/2` by
/// Brownian-bridge midpoints.
fn coupled_ensembles(
    x0: f64,
    grid: TimeGrid,
    trials: u64,
    seed: u64,
) -> Result<(PathEnsemble, PathEnsemble), String> {
    let model = langevin();
    let fine =
        TimeGrid::new(grid.t0, grid.dt / 2.0, grid.n_steps * 2).map_err(|e| e.to_string())?;
    let half_sd = 0.5 * grid.dt.sqrt();
    let pairs: Vec<(SdePath, SdePath)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let dw = NoiseStream::new(seed, trial, 1).sample_increments(&grid);
            let z = NoiseStream::new(seed ^ 0xB81D, trial, 1).standard_normals(grid.n_steps);
            let fine_dw: Vec<f64> = dw
                .iter()
                .zip(&z)
                .flat_map(|(w, z)| [0.5 * w + half_sd * z, 0.5 * w - half_sd * z])
                .collect();
            let c = simulate_path_with_increments(
                &model,
                &[x0],
                &grid,
                &dw,
                Scheme::EulerMaruyama,
                trial,
                seed,
            )
            .expect("path");
            let f = simulate_path_with_increments(
                &model,
                &[x0],
                &fine,
                &fine_dw,
                Scheme::EulerMaruyama,
                trial,
                seed,
            )
            .expect("path");
            (c, f)
        })
        .collect();
    let (coarse, finer): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((
        PathEnsemble::from_paths("langevin", grid, seed, coarse).map_err(|e| e.to_string())?,
        PathEnsemble::from_paths("langevin", fine, seed, finer).map_err(|e| e.to_string())?,
    ))
}

fn c5_attractivity() -> Outcome {
    let (k, settle, c) = (2.0 * SQRT_2, 6.0, 11.0);
    let mut lines = Vec::new();
    let mut ok = true;
    for t0 in [0.0, 5.0] {
        let grid = TimeGrid::new(t0, 1e-3, 12_000).map_err(|e| e.to_string())?;
        let (coarse, fine) = coupled_ensembles(10.0, grid, 1000, 55)?;
        let a: EstimateReport =
            estimate_attractivity(&coarse, k, settle, c).map_err(|e| e.to_string())?;
        let b = estimate_attractivity(&fine, k, settle, c).map_err(|e| e.to_string())?;
        let delta = (a.p_hat - b.p_hat).abs();
        ok &= a.p_hat >= 0.95 && b.p_hat >= 0.95 && delta < a.half_width();
        lines.push(format!(
            "t0={t0}: p_hat={} [{:.4},{:.4}] halved-dt p_hat={} |diff|={delta:.4} half-width={:.4}",
            a.p_hat,
            a.lo,
            a.hi,
            b.p_hat,
            a.half_width()
        ));
    }
    check(ok, lines.join("; "))
}

/// 90th-percentile pre-entry slope for `x0 = 50`, `r = sqrt(2)`, horizon 8.
fn exponent_p90(dt: f64, seed: u64) -> Result<(f64, f64, f64), String> {
    let grid = TimeGrid::with_horizon(0.0, dt, 8.0).map_err(|e| e.to_string())?;
    let ens = simulate_ensemble(
        &langevin(),
        &[50.0],
        &grid,
        1000,
        seed,
        Scheme::EulerMaruyama,
    )
    .map_err(|e| e.to_string())?;
    let r = estimate_exponent(&ens, SQRT_2, None).map_err(|e| e.to_string())?;
    let p90 = r.p90_slope.ok_or("no fitted paths")?;
    Ok((p90, r.median_slope.unwrap_or(f64::NAN), r.entered_fraction))
}

/// p90 slope at `dt = 2.5e-4`, seed 66 (recompute with SDECERT_RECOMPUTE_ORACLE=1).
const EXPONENT_ORACLE_P90: f64 = -1.156_715_698_315_145;
/// Allowed distance between the `dt = 1e-3` statistic and the oracle.
const EXPONENT_ORACLE_BAND: f64 = 0.05;

fn c6_exponent() -> Outcome {
    let oracle = if std::env::var_os("SDECERT_RECOMPUTE_ORACLE").is_some() {
        let (p90, median, _) = exponent_p90(2.5e-4, 66)?;
        eprintln!("exponent oracle: p90={p90:?} median={median:?}");
        p90
    } else {
        EXPONENT_ORACLE_P90
    };
    let (p90, median, entered) = exponent_p90(1e-3, 6)?;
    let band = (p90 - oracle).abs();
    check(
        p90 <= -0.5 && band <= EXPONENT_ORACLE_BAND,
        format!("p90 slope={p90:.4} median={median:.4} entered={entered:.3} oracle p90={oracle:.4} |diff|={band:.4} (band {EXPONENT_ORACLE_BAND})"),
    )
}

fn c7_martingale() -> Outcome {
    let exact = normal_cdf(-2.0) + (-2.0f64).exp() * normal_cdf(0.0);
    let r = check_martingale_inequality(|_| vec![1.0], 2.0, 1.0, 1.0, 10_000, 77, 1e-4)
        .map_err(|e| e.to_string())?;
    let e = &r.estimate;
    let hw = e.half_width();
    check(
        (exact - 0.09042).abs() < 5e-6
            && (r.bound - 0.13534).abs() < 5e-6
            && e.lo <= r.bound
            && (e.p_hat - exact).abs() <= 3.0 * hw,
        format!(
            "p_hat={} [{:.5},{:.5}] bound={:.5} reflection={exact:.5} |diff|={:.5} 3hw={:.5}",
            e.p_hat,
            e.lo,
            e.hi,
            r.bound,
            (e.p_hat - exact).abs(),
            3.0 * hw
        ),
    )
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension().is_some_and(|x| x == "csv")
                        || p.file_name().is_some_and(|n| n == "summary.json")
                })
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        fs::read(&p).unwrap_or_default(),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn c8_determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/langevin.json");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let dir = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_sdecert"))
            .arg("run")
            .arg(&config)
            .arg("--out-dir")
            .arg(&dir)
            .args(["--threads", threads])
            .output()
            .map_err(|e| e.to_string())?
            .status;
        if !status.success() {
            return Err(format!("run {name} exited with {status}"));
        }
        runs.push(outputs(&dir));
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    check(
        runs[0].len() >= 2
            && names.contains(&"summary.json")
            && runs[0] == runs[1]
            && runs[0] == runs[2],
        format!(
            "{} files identical across two runs and --threads 1 vs 8: {}",
            runs[0].len(),
            names.join(",")
        ),
    )
}

fn c9_negative_controls() -> Outcome {
    let model = langevin();
    let base = ExpCertificate::langevin(-1.0, 1.0);

    let sampler =
        DomainSampler::annulus(1, (1.5, 10.0), (0.0, 10.0), 0.5, 9).map_err(|e| e.to_string())?;
    let strong = ExpCertificate { c2: -3.0, ..base };
    let r =
        check_exp_certificate(&v2(), &model, &strong, &sampler, 2000).map_err(|e| e.to_string())?;
    let viol = &r
        .condition("generator")
        .ok_or("missing condition")?
        .violations;
    // LV = -2x^2 + 1 against -3x^2 + 2: violated exactly where |x| > 1.
    let predicted = sampler
        .points(2000)
        .iter()
        .filter(|p| p.x[0].abs() > 1.0)
        .count();
    let values_ok = viol.iter().all(|v| {
        let x2 = v.x[0] * v.x[0];
        v.lhs
            .is_some_and(|l| (l - (1.0 - 2.0 * x2)).abs() <= 1e-9 * (1.0 + x2))
            && v.rhs
                .is_some_and(|r| (r - (2.0 - 3.0 * x2)).abs() <= 1e-9 * (1.0 + x2))
    });
    let ok_c2 = !r.passed && !viol.is_empty() && viol.len() == predicted && values_ok;

    let near =
        DomainSampler::annulus(1, (0.0, 2.0), (0.0, 10.0), 0.5, 9).map_err(|e| e.to_string())?;
    let gamma = ExpCertificate { gamma: 1.0, ..base };
    let r2 =
        check_exp_certificate(&v2(), &model, &gamma, &near, 2000).map_err(|e| e.to_string())?;
    let viol2 = &r2
        .condition("diffusion")
        .ok_or("missing condition")?
        .violations;
    // |V_x g|^2 = 4x^2 against 1: violated exactly where |x| < 1/2.
    let predicted2: Vec<Vec<f64>> = near
        .points(2000)
        .into_iter()
        .filter(|p| 4.0 * p.x[0] * p.x[0] < 1.0)
        .map(|p| p.x)
        .collect();
    let got2: Vec<Vec<f64>> = viol2.iter().map(|v| v.x.clone()).collect();
    let ok_gamma = !r2.passed
        && !viol2.is_empty()
        && got2 == predicted2
        && viol2.iter().all(|v| v.lhs == Some(1.0));

    check(
        ok_c2 && ok_gamma,
        format!(
            "c2=-3: {} violations (predicted {predicted}); gamma=1: {} violations (predicted {}), all at |x|<0.5: {}",
            viol.len(),
            viol2.len(),
            predicted2.len(),
            viol2.iter().all(|v| v.x[0].abs() < 0.5)
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("Langevin certificate reproduction", c1_langevin_certificate),
        (
            "generator exactness and finite-difference validation",
            c2_generator_exactness,
        ),
        ("Euler-Maruyama strong order", c3_integrator_order),
        ("OU terminal moments", c4_ou_moments),
        ("practical attractivity and dt halving", c5_attractivity),
        ("pathwise exponent bound", c6_exponent),
        ("exponential martingale inequality", c7_martingale),
        ("byte determinism of run outputs", c8_determinism),
        ("negative-control certificates", c9_negative_controls),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|x| name.contains(x.as_str()) || id.ends_with(x.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("{id} PASS ({secs:.1}s) {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("{id} FAIL ({secs:.1}s) {name}: {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
