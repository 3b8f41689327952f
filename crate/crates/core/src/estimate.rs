//! Monte Carlo estimators for stability-in-probability properties of a path
//! ensemble, a pathwise exponent estimator, and an empirical check of the
//! exponential martingale inequality.
//!
//! Every frequency comes with a Wilson score interval. Diverged paths count
//! as failures and are tallied separately. Suprema and "for all t" clauses
//! are evaluated on the ensemble's time grid only.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::noise::{NoiseStream, TimeGrid};
use crate::sim::{Path, PathEnsemble};
use crate::tolerance::violates;

/// Normal quantile used for the 95% intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;
/// Minimum pre-entry window length for a slope fit.
pub const MIN_FIT_POINTS: usize = 10;
/// Default `eps_floor` is this fraction of `r`.
pub const DEFAULT_EPS_FLOOR_FRACTION: f64 = 1e-6;

/// Wilson score interval for `successes` out of `trials`, clamped so that
/// `0 <= lo <= p_hat <= hi <= 1`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials && z > 0.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub name: String,
    pub trials: usize,
    pub successes: usize,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub params: BTreeMap<String, f64>,
    pub diverged: usize,
    /// Per-trial success flags, in trial order.
    #[serde(skip)]
    pub outcomes: Vec<bool>,
}

impl EstimateReport {
    pub fn from_outcomes(
        name: impl Into<String>,
        outcomes: Vec<bool>,
        diverged: usize,
        params: &[(&str, f64)],
    ) -> Self {
        let trials = outcomes.len();
        let successes = outcomes.iter().filter(|&&s| s).count();
        let (lo, hi) = wilson_interval(successes, trials, Z_95);
        Self {
            name: name.into(),
            trials,
            successes,
            p_hat: successes as f64 / trials as f64,
            lo,
            hi,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            diverged,
            outcomes,
        }
    }

    /// Half the interval width.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// One header row and one data row:
    /// `name,trials,successes,p_hat,lo,hi,<params>,diverged`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let keys: Vec<&str> = self.params.keys().map(String::as_str).collect();
        writeln!(
            w,
            "name,trials,successes,p_hat,lo,hi,{}diverged",
            keys.iter().map(|k| format!("{k},")).collect::<String>()
        )?;
        write!(
            w,
            "{},{},{},{},{},{},",
            self.name, self.trials, self.successes, self.p_hat, self.lo, self.hi
        )?;
        for v in self.params.values() {
            write!(w, "{v},")?;
        }
        writeln!(w, "{}", self.diverged)
    }
}

fn require_trials(ens: &PathEnsemble) -> Result<()> {
    if ens.paths.is_empty() {
        return Err(invalid("ensemble", "at least one trial is required"));
    }
    Ok(())
}

fn max_initial_norm(ens: &PathEnsemble) -> f64 {
    ens.paths
        .iter()
        .map(|p| p.norms().next().unwrap_or(0.0))
        .fold(0.0, f64::max)
}

fn outcomes(ens: &PathEnsemble, success: impl Fn(&Path) -> bool + Sync) -> Vec<bool> {
    ens.paths
        .par_iter()
        .map(|p| !p.is_diverged() && success(p))
        .collect()
}

/// Frequency of paths with `sup_i |x(t_i)| <= c`; all `|x0| <= alpha`.
pub fn estimate_boundedness(ens: &PathEnsemble, alpha: f64, c: f64) -> Result<EstimateReport> {
    require_trials(ens)?;
    if !(alpha >= 0.0 && c.is_finite()) {
        return Err(invalid("alpha", "alpha must be nonnegative and c finite"));
    }
    let x0 = max_initial_norm(ens);
    if violates(x0, alpha) {
        return Err(invalid(
            "alpha",
            format!("initial norm {x0} exceeds alpha = {alpha}"),
        ));
    }
    let flags = outcomes(ens, |p| p.norms().all(|n| n <= c));
    Ok(EstimateReport::from_outcomes(
        "boundedness",
        flags,
        ens.diverged_count(),
        &[("alpha", alpha), ("c", c)],
    ))
}

/// Frequency of paths with `|x(t_i)| < k` at every grid point; `k > r`.
pub fn estimate_ball_stability(ens: &PathEnsemble, k: f64, r: f64) -> Result<EstimateReport> {
    require_trials(ens)?;
    if !(k > r) {
        return Err(invalid("k", format!("k = {k} must exceed r = {r}")));
    }
    let flags = outcomes(ens, |p| p.norms().all(|n| n < k));
    Ok(EstimateReport::from_outcomes(
        "ball_stability",
        flags,
        ens.diverged_count(),
        &[("k", k), ("r", r), ("delta", max_initial_norm(ens))],
    ))
}

/// First grid index with `t_i >= t0 + settle`.
pub fn settle_index(grid: &TimeGrid, settle: f64) -> usize {
    (settle / grid.dt - 1e-9).ceil().max(0.0) as usize
}

/// Frequency of paths with `|x(t_i)| < k` for every grid point
/// `t_i >= t0 + settle`; all `|x0| < c`.
pub fn estimate_attractivity(
    ens: &PathEnsemble,
    k: f64,
    settle: f64,
    c: f64,
) -> Result<EstimateReport> {
    require_trials(ens)?;
    if !(settle >= 0.0 && settle <= ens.grid.horizon() * (1.0 + 1e-12)) {
        return Err(invalid(
            "T",
            format!("settle time {settle} outside [0, {}]", ens.grid.horizon()),
        ));
    }
    let x0 = max_initial_norm(ens);
    if !(x0 < c) {
        return Err(invalid(
            "c",
            format!("initial norm {x0} is not below c = {c}"),
        ));
    }
    let start = settle_index(&ens.grid, settle);
    let flags = outcomes(ens, |p| p.norms().skip(start).all(|n| n < k));
    Ok(EstimateReport::from_outcomes(
        "attractivity",
        flags,
        ens.diverged_count(),
        &[("k", k), ("T", settle), ("c", c)],
    ))
}

/// Frequency of paths whose grid minimum `min_i |x(t_i)|` is at most `tol`.
///
/// Exploratory; no threshold is asserted on it.
pub fn zero_crossing_frequency(ens: &PathEnsemble, tol: f64) -> Result<EstimateReport> {
    require_trials(ens)?;
    let flags: Vec<bool> = ens
        .paths
        .par_iter()
        .map(|p| p.norms().any(|n| n <= tol))
        .collect();
    Ok(EstimateReport::from_outcomes(
        "zero_crossing",
        flags,
        ens.diverged_count(),
        &[("tol", tol)],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathExponent {
    pub trial: u64,
    /// Least-squares slope over the pre-entry window; `None` if excluded.
    pub slope: Option<f64>,
    /// Time from `t0` to the first grid point with `|x| <= r + eps_floor`.
    pub entry_time: Option<f64>,
    /// `ln(|x(T)| - r) / T` at the final grid time, for paths that never enter.
    pub limsup_proxy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentReport {
    pub r: f64,
    pub eps_floor: f64,
    pub trials: usize,
    pub fitted: usize,
    /// Paths whose pre-entry window has fewer than `MIN_FIT_POINTS` points.
    pub excluded: usize,
    pub diverged: usize,
    pub median_slope: Option<f64>,
    pub p90_slope: Option<f64>,
    pub entered_fraction: f64,
    pub mean_entry_time: Option<f64>,
    #[serde(skip)]
    pub paths: Vec<PathExponent>,
}

impl ExponentReport {
    /// Per-path rows: `trial,slope,entry_time,limsup_proxy`, empty when absent.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        fn cell(v: Option<f64>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        writeln!(w, "trial,slope,entry_time,limsup_proxy")?;
        for p in &self.paths {
            writeln!(
                w,
                "{},{},{},{}",
                p.trial,
                cell(p.slope),
                cell(p.entry_time),
                cell(p.limsup_proxy)
            )?;
        }
        Ok(())
    }
}

/// Ordinary least-squares slope of `ys` against `ts`.
pub fn least_squares_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(ys) {
        sxy += (t - tm) * (y - ym);
        sxx += (t - tm) * (t - tm);
    }
    sxy / sxx
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (i, frac) = (h.floor() as usize, h.fract());
    let hi = sorted[(i + 1).min(sorted.len() - 1)];
    Some(sorted[i] + frac * (hi - sorted[i]))
}

fn path_exponent(p: &Path, r: f64, eps_floor: f64) -> PathExponent {
    let grid = &p.grid;
    let norms: Vec<f64> = p.norms().collect();
    let entry = norms.iter().position(|&n| n <= r + eps_floor);
    let window = entry.unwrap_or(norms.len());
    let slope = (!p.is_diverged() && window >= MIN_FIT_POINTS).then(|| {
        let ts: Vec<f64> = (0..window).map(|i| grid.time(i)).collect();
        let ys: Vec<f64> = norms[..window]
            .iter()
            .map(|n| (n - r).max(eps_floor).ln())
            .collect();
        least_squares_slope(&ts, &ys)
    });
    let t_end = grid.time(norms.len() - 1);
    let limsup_proxy = (entry.is_none() && !p.is_diverged() && t_end > 0.0)
        .then(|| (norms[norms.len() - 1] - r).max(eps_floor).ln() / t_end);
    PathExponent {
        trial: p.trial,
        slope: slope.filter(|s| s.is_finite()),
        entry_time: entry.map(|i| grid.time(i) - grid.t0),
        limsup_proxy,
    }
}

/// Pre-entry exponential decay rate of `|x(t)| - r` per path, aggregated.
///
/// `eps_floor` defaults to `1e-6 * r` when `None`.
pub fn estimate_exponent(
    ens: &PathEnsemble,
    r: f64,
    eps_floor: Option<f64>,
) -> Result<ExponentReport> {
    require_trials(ens)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid("r", "must be finite and nonnegative"));
    }
    let eps_floor = eps_floor.unwrap_or(DEFAULT_EPS_FLOOR_FRACTION * r);
    if !(eps_floor > 0.0) {
        return Err(invalid("eps_floor", "must be positive"));
    }
    let x0 = ens
        .paths
        .iter()
        .map(|p| p.norms().next().unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    if !(x0 > r) {
        return Err(invalid(
            "r",
            format!("initial norm {x0} does not exceed r = {r}"),
        ));
    }
    let paths: Vec<PathExponent> = ens
        .paths
        .par_iter()
        .map(|p| path_exponent(p, r, eps_floor))
        .collect();
    let diverged = ens.diverged_count();
    let mut slopes: Vec<f64> = paths.iter().filter_map(|p| p.slope).collect();
    slopes.sort_by(f64::total_cmp);
    let entries: Vec<f64> = paths.iter().filter_map(|p| p.entry_time).collect();
    let trials = paths.len();
    let excluded = ens
        .paths
        .iter()
        .zip(&paths)
        .filter(|(p, e)| !p.is_diverged() && e.slope.is_none())
        .count();
    Ok(ExponentReport {
        r,
        eps_floor,
        trials,
        fitted: slopes.len(),
        excluded,
        diverged,
        median_slope: quantile(&slopes, 0.5),
        p90_slope: quantile(&slopes, 0.9),
        entered_fraction: entries.len() as f64 / trials as f64,
        mean_entry_time: (!entries.is_empty())
            .then(|| entries.iter().sum::<f64>() / entries.len() as f64),
        paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub estimate: EstimateReport,
    /// `exp(-alpha * beta)`.
    pub bound: f64,
    /// Wilson lower limit does not exceed `bound`.
    pub bound_respected: bool,
}

/// Estimates `P(sup_t [int_0^t g dW - alpha/2 int_0^t |g|^2 ds] > beta)` by
/// left-point sums on a grid of step `dt` over `[0, horizon]`.
pub fn check_martingale_inequality<G>(
    g_fn: G,
    alpha: f64,
    beta: f64,
    horizon: f64,
    trials: usize,
    seed: u64,
    dt: f64,
) -> Result<MartingaleReport>
where
    G: Fn(f64) -> Vec<f64>,
{
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(invalid("alpha", "alpha and beta must be positive"));
    }
    if trials == 0 {
        return Err(invalid("trials", "at least one trial is required"));
    }
    let grid = TimeGrid::with_horizon(0.0, dt, horizon)?;
    let gs: Vec<Vec<f64>> = (0..grid.n_steps).map(|i| g_fn(grid.time(i))).collect();
    let m = gs.first().map_or(1, Vec::len).max(1);
    if gs.iter().any(|g| g.len() != m && !g.is_empty()) {
        return Err(invalid("g_fn", "must return vectors of a fixed length"));
    }
    if gs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("g_fn", "must be finite on the grid"));
    }
    let drift: Vec<f64> = gs
        .iter()
        .map(|g| 0.5 * alpha * g.iter().map(|v| v * v).sum::<f64>() * grid.dt)
        .collect();
    let sqrt_dt = grid.dt.sqrt();
    let flags: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let z = NoiseStream::new(seed, trial, m).standard_normals(grid.n_steps);
            let mut s = 0.0;
            for (i, g) in gs.iter().enumerate() {
                let dw = &z[i * m..(i + 1) * m];
                s += g.iter().zip(dw).map(|(g, z)| g * z * sqrt_dt).sum::<f64>() - drift[i];
                if s > beta {
                    return true;
                }
            }
            false
        })
        .collect();
    let bound = (-alpha * beta).exp();
    let estimate = EstimateReport::from_outcomes(
        "martingale",
        flags,
        0,
        &[
            ("alpha", alpha),
            ("beta", beta),
            ("T", horizon),
            ("dt", grid.dt),
            ("bound", bound),
        ],
    );
    Ok(MartingaleReport {
        bound_respected: estimate.lo <= bound,
        bound,
        estimate,
    })
}
