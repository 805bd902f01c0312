//! Finite-difference solution of the single-particle HJB equation with
//! vanishing viscosity, used as an independent oracle for the adjoint solver.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::feedback_minimizer;
use crate::io::write_csv_to;
use crate::model::{ControlPath, EmpiricalMeasure, ModelSpec, TimeGrid};
use crate::stats::ols;

/// Spatial/temporal resolution of [`hjb_solve_1d`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    /// Time steps; `0` picks the smallest count that satisfies the CFL
    /// condition for the estimated drift bound.
    #[serde(default)]
    pub nt: usize,
    #[serde(default = "default_ladder")]
    pub eps_ladder: Vec<f64>,
    /// Number of time slices kept in memory for rollouts and output.
    #[serde(default = "default_slices")]
    pub max_slices: usize,
}

fn default_ladder() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_slices() -> usize {
    512
}

impl HjbConfig {
    pub fn new(x_lo: f64, x_hi: f64, nx: usize) -> Self {
        Self {
            x_lo,
            x_hi,
            nx,
            nt: 0,
            eps_ladder: default_ladder(),
            max_slices: default_slices(),
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.x_lo.is_nan() || self.x_hi.is_nan() || self.x_lo >= self.x_hi || self.nx < 5 {
            return Err(Error::InvalidInput(format!(
                "HJB grid needs x_lo < x_hi and nx >= 5, got [{}, {}] with {} nodes",
                self.x_lo, self.x_hi, self.nx
            )));
        }
        Ok(())
    }
}

/// Value function on a space-time grid (a subset of the time slices is kept).
#[derive(Clone, Debug)]
pub struct GridValueFunction {
    x_lo: f64,
    dx: f64,
    nx: usize,
    /// Times of the stored slices, increasing.
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    pub epsilon_grid: f64,
    /// Steps actually used by the scheme.
    pub nt: usize,
    /// Distance from either end of the domain that boundary data can reach
    /// over the horizon (drift transport plus three diffusion lengths).
    pub boundary_width: f64,
}

impl GridValueFunction {
    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|i| self.x_lo + i as f64 * self.dx)
            .collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        &self.values[s]
    }

    /// Initial-time slice.
    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + (self.nx - 1) as f64 * self.dx
    }

    /// Linear interpolation in `x` of stored slice `s`.
    pub fn interpolate(&self, s: usize, x: f64) -> Result<f64> {
        interp(&self.values[s], self.x_lo, self.dx, x).ok_or(Error::GridExit {
            time: self.times[s],
            x,
        })
    }

    /// `V(0, x)`.
    pub fn value_at(&self, x: f64) -> Result<f64> {
        self.interpolate(0, x)
    }

    /// Central-difference `DV` at time `t` and state `x`, linear in both.
    pub fn gradient(&self, t: f64, x: f64) -> Result<f64> {
        let pos = self
            .times
            .partition_point(|&s| s <= t)
            .clamp(1, self.times.len() - 1);
        let (s0, s1) = (pos - 1, pos);
        let w = ((t - self.times[s0]) / (self.times[s1] - self.times[s0])).clamp(0.0, 1.0);
        let d = |s: usize| -> Result<f64> {
            let u = (x - self.x_lo) / self.dx;
            if !(0.0..=(self.nx - 1) as f64).contains(&u) {
                return Err(Error::GridExit { time: t, x });
            }
            let i = (u.floor() as usize).clamp(1, self.nx - 3);
            let fr = u - i as f64;
            let v = &self.values[s];
            let g0 = (v[i + 1] - v[i - 1]) / (2.0 * self.dx);
            let g1 = (v[i + 2] - v[i]) / (2.0 * self.dx);
            Ok(g0 + (g1 - g0) * fr.clamp(0.0, 1.0))
        };
        Ok((1.0 - w) * d(s0)? + w * d(s1)?)
    }

    /// Value surface CSV with columns `t, x, V, theta_star` (first control
    /// coordinate of the feedback at the central-difference gradient).
    pub fn write_csv<W: Write>(&self, model: &ModelSpec, mut out: W) -> Result<()> {
        let xs = self.x_nodes();
        let mut rows = Vec::with_capacity(self.times.len() * self.nx);
        for (s, &t) in self.times.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                let p = self.gradient(t, x)?;
                let th = feedback_single(model, t, x, p)?;
                rows.push(vec![t, x, self.values[s][i], th[0]]);
            }
        }
        write_csv_to(&mut out, &["t", "x", "V", "theta_star"], rows)
    }
}

fn interp(v: &[f64], x_lo: f64, dx: f64, x: f64) -> Option<f64> {
    let u = (x - x_lo) / dx;
    let last = (v.len() - 1) as f64;
    if !(0.0..=last).contains(&u) {
        return None;
    }
    let i = (u.floor() as usize).min(v.len() - 2);
    let w = u - i as f64;
    Some(v[i] * (1.0 - w) + v[i + 1] * w)
}

/// Minimizer of `(lambda/2)|theta - eta|^2 + f(t, theta, x, delta_x) p`.
/// Closed form for scalar controls entering affinely; Newton otherwise.
pub fn feedback_single(model: &ModelSpec, t: f64, x: f64, p: f64) -> Result<Vec<f64>> {
    let f = model.drift();
    if model.control_dim() == 1 && f.affine_in_theta() {
        let mu = EmpiricalMeasure::dirac(x);
        let mut g = [0.0];
        f.d_theta(t, &[model.eta(0)], x, &mu, &mut g);
        let mut th = [model.eta(0) - p * g[0] / model.lambda()];
        model.project(&mut th);
        return Ok(th.to_vec());
    }
    feedback_minimizer(model, t, &[x], &[p])
}

fn hamiltonian_single(model: &ModelSpec, t: f64, x: f64, p: f64) -> Result<(f64, f64)> {
    let th = feedback_single(model, t, x, p)?;
    let drift = model.drift().value(t, &th, x, &EmpiricalMeasure::dirac(x));
    Ok((
        model.regularizer(&th) + drift * p + model.running().value(x, 0.0),
        drift,
    ))
}

fn drift_bound_estimate(model: &ModelSpec, cfg: &HjbConfig) -> Result<f64> {
    let mut bound: f64 = 0.0;
    for i in 0..cfg.nx {
        let x = cfg.x_lo + i as f64 * cfg.dx();
        let slope = model.terminal().d1(x, 0.0);
        for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
            bound = bound.max(hamiltonian_single(model, 0.0, x, s * slope)?.1.abs());
        }
    }
    Ok(bound)
}

/// Explicit monotone backward scheme
/// `V_k = V_{k+1} + dt [((sigma^2 + eps^2)/2) D^2 V + min_theta {(lambda/2)|theta - eta|^2 + f DV} + L]`
/// with `DV` upwinded by the sign of the drift at the central-difference
/// feedback and linear extrapolation into the two ghost nodes.
pub fn hjb_solve_1d(model: &ModelSpec, cfg: &HjbConfig, eps: f64) -> Result<GridValueFunction> {
    cfg.validate()?;
    let dx = cfg.dx();
    let nx = cfg.nx;
    let horizon = model.horizon();
    let diff = 0.5 * (model.sigma() * model.sigma() + eps * eps);
    let nt = if cfg.nt > 0 {
        cfg.nt
    } else {
        let fb = drift_bound_estimate(model, cfg)?;
        let rate = 2.0 * diff / (dx * dx) + 1.5 * fb.max(1e-12) / dx;
        ((horizon * rate).ceil() as usize).max(1)
    };
    let grid = TimeGrid::horizon(horizon, nt)?;
    let dt = grid.dt();
    if diff > 0.0 && dt > dx * dx / (2.0 * diff) {
        return Err(Error::Cfl {
            dt,
            limit: dx * dx / (2.0 * diff),
        });
    }
    let xs: Vec<f64> = (0..nx).map(|i| cfg.x_lo + i as f64 * dx).collect();
    let stride = nt.div_ceil(cfg.max_slices.max(1));
    let mut stored: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut v: Vec<f64> = xs.iter().map(|&x| model.terminal().value(x, 0.0)).collect();
    stored.push((horizon, v.clone()));
    let mut max_drift: f64 = 0.0;
    for k in (0..nt).rev() {
        let t = grid.time(k + 1);
        let ghost_lo = 2.0 * v[0] - v[1];
        let ghost_hi = 2.0 * v[nx - 1] - v[nx - 2];
        let at = |i: isize| -> f64 {
            if i < 0 {
                ghost_lo
            } else if i as usize >= nx {
                ghost_hi
            } else {
                v[i as usize]
            }
        };
        let updated: Vec<(f64, f64)> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let ii = i as isize;
                let (vm, vc, vp) = (at(ii - 1), v[i], at(ii + 1));
                let central = (vp - vm) / (2.0 * dx);
                let (_, f_c) = hamiltonian_single(model, t, xs[i], central)?;
                let p = if f_c > 0.0 {
                    (vp - vc) / dx
                } else {
                    (vc - vm) / dx
                };
                let (h, f) = hamiltonian_single(model, t, xs[i], p)?;
                let d2 = (vp - 2.0 * vc + vm) / (dx * dx);
                Ok((vc + dt * (diff * d2 + h), f.abs()))
            })
            .collect::<Result<_>>()?;
        let step_max = updated.iter().map(|u| u.1).fold(0.0, f64::max);
        max_drift = max_drift.max(step_max);
        let limit = 1.0 / (2.0 * diff / (dx * dx) + step_max / dx);
        if dt > limit {
            return Err(Error::Cfl { dt, limit });
        }
        v = updated.into_iter().map(|u| u.0).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::IntegrationDiverged {
                step: k,
                magnitude: f64::INFINITY,
            });
        }
        if k % stride == 0 {
            stored.push((grid.time(k), v.clone()));
        }
    }
    stored.reverse();
    let (times, values) = stored.into_iter().unzip();
    Ok(GridValueFunction {
        x_lo: cfg.x_lo,
        dx,
        nx,
        times,
        values,
        epsilon_grid: eps,
        nt,
        boundary_width: max_drift * horizon + 3.0 * (2.0 * diff * horizon).sqrt(),
    })
}

/// Value functions along the viscosity ladder and their extrapolation to
/// zero viscosity.
#[derive(Clone, Debug)]
pub struct ViscosityLadder {
    pub eps: Vec<f64>,
    pub solutions: Vec<GridValueFunction>,
}

impl ViscosityLadder {
    /// Least-squares fit `V_eps(0, x) = a + b eps^2` over the ladder; returns `a`.
    pub fn extrapolated(&self, x: f64) -> Result<f64> {
        let e2: Vec<f64> = self.eps.iter().map(|e| e * e).collect();
        let v: Vec<f64> = self
            .solutions
            .iter()
            .map(|s| s.value_at(x))
            .collect::<Result<_>>()?;
        if v.len() == 1 {
            return Ok(v[0]);
        }
        Ok(ols(&e2, &v)?.intercept)
    }

    /// `|V_{eps_k}(0, x) - V_{eps_{k+1}}(0, x)|` for consecutive rungs.
    pub fn successive_changes(&self, x: f64) -> Result<Vec<f64>> {
        let vals: Vec<f64> = self
            .solutions
            .iter()
            .map(|s| s.value_at(x))
            .collect::<Result<_>>()?;
        Ok(vals.windows(2).map(|w| (w[0] - w[1]).abs()).collect())
    }
}

/// Solve every rung of `cfg.eps_ladder`.
pub fn hjb_ladder(model: &ModelSpec, cfg: &HjbConfig) -> Result<ViscosityLadder> {
    let solutions = cfg
        .eps_ladder
        .iter()
        .map(|&e| hjb_solve_1d(model, cfg, e))
        .collect::<Result<_>>()?;
    Ok(ViscosityLadder {
        eps: cfg.eps_ladder.clone(),
        solutions,
    })
}

/// Observed convergence order from values at resolutions `h`, `h/2`, `h/4`.
pub fn richardson_order(coarse: f64, mid: f64, fine: f64) -> f64 {
    ((coarse - mid) / (mid - fine)).abs().log2()
}

/// Closed-loop trajectory driven by the grid feedback.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub grid: TimeGrid,
    pub states: Vec<f64>,
    pub control: ControlPath,
    pub cost: f64,
}

/// Euler rollout of `dX = f(t, theta*(t, X), X, delta_X) dt` from `x0`, with
/// `theta*` the feedback at the interpolated gradient of `vf`.
pub fn feedback_rollout(
    model: &ModelSpec,
    vf: &GridValueFunction,
    x0: f64,
    steps: usize,
) -> Result<Rollout> {
    let grid = TimeGrid::horizon(model.horizon(), steps)?;
    let dt = grid.dt();
    let mut x = x0;
    let mut states = vec![x0];
    let mut rows = Vec::with_capacity(grid.nodes());
    let mut cost = 0.0;
    for k in 0..steps {
        let t = grid.time(k);
        if x <= vf.x_lo || x >= vf.x_hi() {
            return Err(Error::GridExit { time: t, x });
        }
        let p = vf.gradient(t, x)?;
        let th = feedback_single(model, t, x, p)?;
        cost += dt * (model.running().value(x, 0.0) + model.regularizer(&th));
        x += dt * model.drift().value(t, &th, x, &EmpiricalMeasure::dirac(x));
        states.push(x);
        rows.push(th);
    }
    cost += model.terminal().value(x, 0.0);
    rows.push(
        rows.last()
            .cloned()
            .unwrap_or_else(|| vec![0.0; model.control_dim()]),
    );
    Ok(Rollout {
        grid,
        states,
        control: ControlPath::from_rows(grid, &rows)?,
        cost,
    })
}
