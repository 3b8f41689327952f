//! Path integration and ensembles.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::SdeModel;
use crate::noise::{NoiseStream, TimeGrid};

/// States with Euclidean norm above this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Relative finite-difference step for `d g_kk / d x_k` in Milstein.
const MILSTEIN_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    Milstein,
}

/// Reusable buffers for stepping one model.
struct Stepper<'a, M: ?Sized> {
    model: &'a M,
    f: Vec<f64>,
    g: DMatrix<f64>,
    g_probe: DMatrix<f64>,
    probe: Vec<f64>,
}

impl<'a, M: SdeModel + ?Sized> Stepper<'a, M> {
    fn new(model: &'a M) -> Self {
        let d = model.state_dim();
        let m = model.noise_dim();
        Self {
            model,
            f: vec![0.0; d],
            g: DMatrix::zeros(d, m),
            g_probe: DMatrix::zeros(d, m),
            probe: vec![0.0; d],
        }
    }

    fn euler_maruyama(&mut self, x: &[f64], t: f64, dt: f64, dw: &[f64], out: &mut [f64]) {
        self.model.drift_into(x, t, &mut self.f);
        self.model.diffusion_into(x, t, &mut self.g);
        for i in 0..x.len() {
            let mut acc = x[i] + self.f[i] * dt;
            for (k, w) in dw.iter().enumerate() {
                acc += self.g[(i, k)] * w;
            }
            out[i] = acc;
        }
    }

    fn milstein(&mut self, x: &[f64], t: f64, dt: f64, dw: &[f64], out: &mut [f64]) {
        self.euler_maruyama(x, t, dt, dw, out);
        for k in 0..x.len() {
            let gkk = self.g[(k, k)];
            let dg = match self.model.diffusion_diag_derivative(x, t, k) {
                Some(v) => v,
                None => {
                    let h = MILSTEIN_FD_STEP * (1.0 + x[k].abs());
                    self.probe.copy_from_slice(x);
                    self.probe[k] = x[k] + h;
                    self.model.diffusion_into(&self.probe, t, &mut self.g_probe);
                    let up = self.g_probe[(k, k)];
                    self.probe[k] = x[k] - h;
                    self.model.diffusion_into(&self.probe, t, &mut self.g_probe);
                    (up - self.g_probe[(k, k)]) / (2.0 * h)
                }
            };
            out[k] += 0.5 * gkk * dg * (dw[k] * dw[k] - dt);
        }
    }
}

fn check_step_shapes<M: SdeModel + ?Sized>(model: &M, x: &[f64], dw: &[f64]) -> Result<()> {
    if x.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "state vector",
            expected: model.state_dim(),
            got: x.len(),
        });
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::DimensionMismatch {
            what: "Brownian increment",
            expected: model.noise_dim(),
            got: dw.len(),
        });
    }
    Ok(())
}

/// `x + f(x,t) dt + g(x,t) dW`.
///
/// The result may be non-finite; [`simulate_path`] turns that into a
/// divergence flag.
pub fn euler_maruyama_step<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    check_step_shapes(model, x, dw)?;
    let mut out = vec![0.0; x.len()];
    Stepper::new(model).euler_maruyama(x, t, dt, dw, &mut out);
    Ok(out)
}

/// Euler-Maruyama plus `1/2 g_kk (d g_kk / d x_k) (dW_k^2 - dt)` per
/// component. Only defined for diagonal noise.
pub fn milstein_step<M: SdeModel + ?Sized>(
    model: &M,
    x: &[f64],
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    check_step_shapes(model, x, dw)?;
    require_scheme(model, Scheme::Milstein)?;
    let mut out = vec![0.0; x.len()];
    Stepper::new(model).milstein(x, t, dt, dw, &mut out);
    Ok(out)
}

fn require_scheme<M: SdeModel + ?Sized>(model: &M, scheme: Scheme) -> Result<()> {
    if scheme == Scheme::Milstein && !model.is_diagonal_noise() {
        return Err(Error::UnsupportedScheme(format!(
            "milstein requires diagonal noise; model `{}` is not diagonal",
            model.label()
        )));
    }
    Ok(())
}

/// `true` if the state is non-finite or beyond [`DIVERGENCE_NORM`].
pub fn is_diverged(x: &[f64]) -> bool {
    let mut sq = 0.0;
    for v in x {
        if !v.is_finite() {
            return true;
        }
        sq += v * v;
    }
    !(sq.sqrt() <= DIVERGENCE_NORM)
}

/// One simulated trajectory, stored flat (`states[i*d..(i+1)*d]` is the
/// state at grid point `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    pub dim: usize,
    pub trial: u64,
    pub seed: u64,
    states: Vec<f64>,
    /// Grid index at which the state first diverged. The path is truncated
    /// just before it.
    pub diverged_at: Option<usize>,
}

impl Path {
    /// Builds a path from explicit states. `states.len()` must be a multiple
    /// of `dim`, hold at least the initial state, and at most `n_steps + 1`
    /// states; a short path without a divergence index is rejected.
    pub fn from_states(
        grid: TimeGrid,
        dim: usize,
        states: Vec<f64>,
        trial: u64,
        seed: u64,
        diverged_at: Option<usize>,
    ) -> Result<Self> {
        if dim == 0 || !states.len().is_multiple_of(dim) || states.is_empty() {
            return Err(invalid(
                "states",
                "length must be a positive multiple of dim",
            ));
        }
        let n = states.len() / dim;
        match diverged_at {
            None if n != grid.len() => {
                return Err(Error::DimensionMismatch {
                    what: "path length",
                    expected: grid.len(),
                    got: n,
                })
            }
            Some(i) if i != n || n > grid.len() => {
                return Err(invalid(
                    "diverged_at",
                    "must equal the number of stored states",
                ))
            }
            _ => {}
        }
        Ok(Self {
            grid,
            dim,
            trial,
            seed,
            states,
            diverged_at,
        })
    }

    /// Number of stored grid points.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Euclidean norms `|x(t_i)|` of the stored states.
    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.states()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

/// Integrates with caller-supplied increments (`increments[i*m + k]`).
///
/// Exposed for tests and for callers that construct their own Brownian
/// paths, e.g. bridge refinements of an existing path.
pub fn simulate_path_with_increments<M: SdeModel + ?Sized>(
    model: &M,
    x0: &[f64],
    grid: &TimeGrid,
    increments: &[f64],
    scheme: Scheme,
    trial: u64,
    seed: u64,
) -> Result<Path> {
    let d = model.state_dim();
    let m = model.noise_dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: d,
            got: x0.len(),
        });
    }
    if increments.len() != grid.n_steps * m {
        return Err(Error::DimensionMismatch {
            what: "increment count",
            expected: grid.n_steps * m,
            got: increments.len(),
        });
    }
    require_scheme(model, scheme)?;
    let mut states = Vec::with_capacity(grid.len() * d);
    states.extend_from_slice(x0);
    if is_diverged(x0) {
        return Err(invalid("x0", "initial state must be finite and bounded"));
    }
    let mut stepper = Stepper::new(model);
    let mut next = vec![0.0; d];
    let mut diverged_at = None;
    for (i, dw) in increments.chunks_exact(m).enumerate() {
        let x = &states[i * d..(i + 1) * d];
        let t = grid.time(i);
        match scheme {
            Scheme::EulerMaruyama => stepper.euler_maruyama(x, t, grid.dt, dw, &mut next),
            Scheme::Milstein => stepper.milstein(x, t, grid.dt, dw, &mut next),
        }
        if is_diverged(&next) {
            diverged_at = Some(i + 1);
            break;
        }
        states.extend_from_slice(&next);
    }
    Ok(Path {
        grid: *grid,
        dim: d,
        trial,
        seed,
        states,
        diverged_at,
    })
}

/// Integrates one path driven by `stream`.
pub fn simulate_path<M: SdeModel + ?Sized>(
    model: &M,
    x0: &[f64],
    grid: &TimeGrid,
    stream: &NoiseStream,
    scheme: Scheme,
) -> Result<Path> {
    if stream.m != model.noise_dim() {
        return Err(Error::DimensionMismatch {
            what: "noise stream dimension",
            expected: model.noise_dim(),
            got: stream.m,
        });
    }
    let increments = stream.sample_increments(grid);
    simulate_path_with_increments(
        model,
        x0,
        grid,
        &increments,
        scheme,
        stream.trial,
        stream.seed,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub label: String,
    pub grid: TimeGrid,
    pub seed: u64,
    pub paths: Vec<Path>,
}

impl PathEnsemble {
    /// Assembles an ensemble from paths sharing one grid and dimension.
    pub fn from_paths(
        label: impl Into<String>,
        grid: TimeGrid,
        seed: u64,
        paths: Vec<Path>,
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(invalid("paths", "ensemble needs at least one path"));
        }
        let dim = paths[0].dim;
        if paths.iter().any(|p| p.grid != grid || p.dim != dim) {
            return Err(invalid("paths", "all paths must share grid and dimension"));
        }
        Ok(Self {
            label: label.into(),
            grid,
            seed,
            paths,
        })
    }

    pub fn trials(&self) -> usize {
        self.paths.len()
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim
    }

    pub fn diverged_count(&self) -> usize {
        self.paths.iter().filter(|p| p.is_diverged()).count()
    }

    /// Writes `trial,step,t,x_0,...,x_{d-1}` rows, trial-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "trial,step,t")?;
        for k in 0..self.dim() {
            write!(w, ",x_{k}")?;
        }
        writeln!(w)?;
        for p in &self.paths {
            for (i, s) in p.states().enumerate() {
                write!(w, "{},{},{}", p.trial, i, self.grid.time(i))?;
                for v in s {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Simulates `trials` independent paths; trial `i` uses stream
/// `(seed, i)`. Trials run on the current rayon pool and are assembled by
/// index, so the result does not depend on the thread count.
pub fn simulate_ensemble<M: SdeModel + ?Sized>(
    model: &M,
    x0: &[f64],
    grid: &TimeGrid,
    trials: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathEnsemble> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let m = model.noise_dim();
    let paths = (0..trials as u64)
        .into_par_iter()
        .map(|trial| simulate_path(model, x0, grid, &NoiseStream::new(seed, trial, m), scheme))
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::from_paths(model.label(), *grid, seed, paths)
}

/// Mean and variance of the Langevin/Ornstein-Uhlenbeck solution
/// `dx = alpha x dt + beta dW`, `x(0) = x0`, at time `t`.
pub fn ou_exact(alpha: f64, beta: f64, x0: f64, t: f64) -> Result<(f64, f64)> {
    if !(alpha < 0.0) {
        return Err(invalid("alpha", "the OU oracle requires alpha < 0"));
    }
    if !(t >= 0.0) {
        return Err(invalid("t", "must be nonnegative"));
    }
    let mean = x0 * (alpha * t).exp();
    let variance = beta * beta * (2.0 * alpha * t).exp_m1() / (2.0 * alpha);
    Ok((mean, variance))
}
