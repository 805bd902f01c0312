//! Adjoint (Pontryagin) solver for the discretized control problem and the
//! backward Riccati propagation of second derivatives.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{feedback_minimizer, hamiltonian_hessians, HypothesisAudit};
use crate::io::write_csv_to;
use crate::model::matrix::fitted_bound;
use crate::model::{ControlPath, EmpiricalMeasure, ModelSpec, Samples, TimeGrid};
use crate::simulator::{path_cost, regularizer_cost, simulate, NoiseBundle, ParticleEnsemble};

/// Riccati entries beyond this magnitude count as blow-up.
pub const RICCATI_BLOW_UP: f64 = 1e8;

/// How a sweep or solve treats noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `sigma = epsilon = 0`; results are exact for the discretized problem.
    Deterministic,
    /// Common noise frozen along sampled paths; martingale terms of the
    /// adjoint are dropped, so results are heuristic.
    Pathwise,
}

/// Costates of the discrete adjoint along one ensemble.
#[derive(Clone, Debug)]
pub struct AdjointSweep {
    n: usize,
    costates: Vec<f64>,
    pub mode: Mode,
}

impl AdjointSweep {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.costates[k * self.n..(k + 1) * self.n]
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn certified(&self) -> bool {
        self.mode == Mode::Deterministic
    }
}

fn sweep_mode(model: &ModelSpec, pathwise: bool) -> Result<Mode> {
    if model.epsilon() != 0.0 {
        return Err(Error::ModeViolation(
            "adjoint sweeps need epsilon = 0".into(),
        ));
    }
    if model.sigma() == 0.0 {
        Ok(Mode::Deterministic)
    } else if pathwise {
        Ok(Mode::Pathwise)
    } else {
        Err(Error::ModeViolation(
            "sigma > 0 requires the pathwise flag".into(),
        ))
    }
}

/// Coupling matrix `A_ij = delta_ij f_x(x_j) + (1/N) d_mu f(x_j, mu, x_i)`.
pub fn coupling_matrix(
    model: &ModelSpec,
    t: f64,
    theta: &[f64],
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let nf = n as f64;
    let f = model.drift();
    let mu = EmpiricalMeasure::from_slice(x)?;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(j, j)] = f.d_x(t, theta, x[j], &mu);
    }
    if f.depends_on_measure() {
        for j in 0..n {
            for i in 0..n {
                a[(i, j)] += f.d_mu(t, theta, x[j], &mu, x[i]) / nf;
            }
        }
    }
    Ok(a)
}

/// Backward sweep of the discrete adjoint:
/// `P_K = (1/N) U'(X_K)`,
/// `P_k = P_{k+1} + dt [A(t_k) P_{k+1} + (1/N) L'(X_k)]`.
///
/// This is the exact gradient of the Euler-discretized cost with respect to
/// the states, so `P_0 = grad_x J`.
pub fn adjoint_sweep(
    model: &ModelSpec,
    theta: &ControlPath,
    ens: &ParticleEnsemble,
    pathwise: bool,
) -> Result<AdjointSweep> {
    let mode = sweep_mode(model, pathwise)?;
    let grid = *ens.grid();
    let n = ens.particles();
    let nf = n as f64;
    let dt = grid.dt();
    let f = model.drift();
    let labels = ens.labels();
    let k_last = grid.steps();
    let mut costates = vec![0.0; grid.nodes() * n];
    for i in 0..n {
        costates[k_last * n + i] = model.terminal().d1(ens.terminal()[i], labels[i]) / nf;
    }
    let coupled = f.depends_on_measure();
    for k in (0..k_last).rev() {
        let t = grid.time(k);
        let th = theta.at(k);
        let x = ens.row(k);
        let mu = ens.measure(k);
        let (head, tail) = costates.split_at_mut((k + 1) * n);
        let next = &tail[..n];
        let cur = &mut head[k * n..];
        for i in 0..n {
            let mut s =
                f.d_x(t, th, x[i], &mu) * next[i] + model.running().d1(x[i], labels[i]) / nf;
            if coupled {
                let mut m = 0.0;
                for j in 0..n {
                    m += f.d_mu(t, th, x[j], &mu, x[i]) * next[j];
                }
                s += m / nf;
            }
            cur[i] = next[i] + dt * s;
        }
    }
    Ok(AdjointSweep { n, costates, mode })
}

/// Gradient per unit time `g_k = lambda (theta_k - eta) + sum_i f_theta(t_k, theta_k, X^i_k, mu_k) P^i_{k+1}`.
///
/// `dt * g_k` is the exact derivative of the discretized objective with
/// respect to `theta_k`. The terminal node copies the last active value.
pub fn control_gradient(
    model: &ModelSpec,
    theta: &ControlPath,
    ens: &ParticleEnsemble,
    sweep: &AdjointSweep,
) -> ControlPath {
    let grid = *theta.grid();
    let d = theta.dim();
    let f = model.drift();
    let mut g = ControlPath::zeros(grid, d);
    let mut v = vec![0.0; d];
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let th = theta.at(k);
        let x = ens.row(k);
        let mu = ens.measure(k);
        let p = sweep.row(k + 1);
        let out = g.at_mut(k);
        for j in 0..d {
            out[j] = model.lambda() * (th[j] - model.eta(j));
        }
        for (i, &xi) in x.iter().enumerate() {
            if p[i] == 0.0 {
                continue;
            }
            f.d_theta(t, th, xi, &mu, &mut v);
            for j in 0..d {
                out[j] += v[j] * p[i];
            }
        }
    }
    g.sync_terminal();
    g
}

/// Optimizer settings for [`solve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Stop when the sup-norm of the (projected) gradient is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Noise bundles in the frozen batch when `sigma > 0`.
    pub noise_batch: usize,
    pub seed: u64,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            noise_batch: 16,
            seed: 0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

/// Result of [`solve`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub theta_star: ControlPath,
    pub value: f64,
    pub grad_norm_history: Vec<f64>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub mode: Mode,
    /// Batch average of the adjoint at `t = 0`, i.e. `grad_x V_N(0, x)` for
    /// the discretized problem.
    pub costate0: Vec<f64>,
    pub audit: Option<HypothesisAudit>,
}

impl SolveReport {
    pub fn certified(&self) -> bool {
        self.mode == Mode::Deterministic
    }

    /// Control path CSV with columns `t, theta_1..theta_d`.
    pub fn write_control_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write_control_csv(&self.theta_star, &mut out)
    }
}

pub fn write_control_csv<W: Write>(theta: &ControlPath, out: &mut W) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=theta.dim()).map(|j| format!("theta_{j}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let grid = theta.grid();
    let rows = (0..grid.nodes()).map(|k| {
        let mut r = vec![grid.time(k)];
        r.extend_from_slice(theta.at(k));
        r
    });
    write_csv_to(out, &header, rows)
}

struct Evaluated {
    value: f64,
    ensembles: Vec<ParticleEnsemble>,
}

fn evaluate(
    model: &ModelSpec,
    theta: &ControlPath,
    x0: &Samples,
    batch: &[NoiseBundle],
) -> Result<Evaluated> {
    let ensembles: Vec<ParticleEnsemble> = batch
        .par_iter()
        .map(|nb| simulate(model, theta, x0, nb))
        .collect::<Result<_>>()?;
    let cost = ensembles.iter().map(|e| path_cost(model, e)).sum::<f64>() / ensembles.len() as f64;
    Ok(Evaluated {
        value: cost + regularizer_cost(model, theta),
        ensembles,
    })
}

/// Batch-averaged gradient and `P_0`.
fn batch_gradient(
    model: &ModelSpec,
    theta: &ControlPath,
    ensembles: &[ParticleEnsemble],
) -> Result<(ControlPath, Vec<f64>)> {
    let pathwise = !model.is_deterministic();
    let parts: Vec<(ControlPath, Vec<f64>)> = ensembles
        .par_iter()
        .map(|e| {
            let s = adjoint_sweep(model, theta, e, pathwise)?;
            Ok((control_gradient(model, theta, e, &s), s.row(0).to_vec()))
        })
        .collect::<Result<_>>()?;
    let b = parts.len() as f64;
    let mut g = ControlPath::zeros(*theta.grid(), theta.dim());
    let mut p0 = vec![0.0; ensembles[0].particles()];
    for (gi, pi) in &parts {
        for (a, v) in g.as_mut_slice().iter_mut().zip(gi.as_slice()) {
            *a += v / b;
        }
        for (a, v) in p0.iter_mut().zip(pi) {
            *a += v / b;
        }
    }
    Ok((g, p0))
}

/// Zero gradient components that push an active box constraint outward.
fn projected(model: &ModelSpec, theta: &ControlPath, g: &ControlPath) -> ControlPath {
    let mut out = g.clone();
    if let Some(r) = model.control_box() {
        for (o, t) in out.as_mut_slice().iter_mut().zip(theta.as_slice()) {
            if (*t >= r && *o < 0.0) || (*t <= -r && *o > 0.0) {
                *o = 0.0;
            }
        }
    }
    out
}

fn dot(a: &ControlPath, b: &ControlPath) -> f64 {
    let active = a.grid().steps() * a.dim();
    a.as_slice()[..active]
        .iter()
        .zip(&b.as_slice()[..active])
        .map(|(x, y)| x * y)
        .sum()
}

/// Noise batch used by [`solve`] (a single zero bundle in the deterministic case).
pub fn noise_batch(model: &ModelSpec, grid: TimeGrid, opts: &SolveOptions) -> Vec<NoiseBundle> {
    if model.is_deterministic() {
        vec![NoiseBundle::zero(grid)]
    } else {
        NoiseBundle::batch(grid, 0, opts.seed, opts.noise_batch.max(1))
    }
}

/// Gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking, started from `theta = 0` (projected onto the box).
pub fn solve(
    model: &ModelSpec,
    x0: &Samples,
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    if model.epsilon() != 0.0 {
        return Err(Error::ModeViolation("solve needs epsilon = 0".into()));
    }
    let mode = if model.is_deterministic() {
        Mode::Deterministic
    } else {
        Mode::Pathwise
    };
    let batch = noise_batch(model, grid, opts);
    let dt = grid.dt();
    let mut theta = ControlPath::zeros(grid, model.control_dim());
    if model.control_box().is_some() {
        let mut v = theta.as_slice().to_vec();
        model.project(&mut v);
        theta.as_mut_slice().copy_from_slice(&v);
    }
    let mut ev = evaluate(model, &theta, x0, &batch)?;
    let (mut g, mut p0) = batch_gradient(model, &theta, &ev.ensembles)?;
    let mut history = Vec::new();
    let mut alpha = 1.0 / model.lambda();
    let mut iterations = 0;
    loop {
        let pg = projected(model, &theta, &g);
        let gnorm = (0..grid.steps())
            .flat_map(|k| pg.at(k).iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        history.push(gnorm);
        if gnorm <= opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                residual: gnorm,
            });
        }
        iterations += 1;
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial = theta.clone();
            for (t, gv) in trial.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *t -= step * gv;
            }
            if model.control_box().is_some() {
                let mut v = trial.as_slice().to_vec();
                model.project(&mut v);
                trial.as_mut_slice().copy_from_slice(&v);
            }
            trial.sync_terminal();
            let mut diff = trial.clone();
            for (a, b) in diff.as_mut_slice().iter_mut().zip(theta.as_slice()) {
                *a -= b;
            }
            let slope = dt * dot(&g, &diff);
            match evaluate(model, &trial, x0, &batch) {
                // Near the optimum the decrease drops below the rounding
                // level of J; the slack keeps the line search from stalling.
                Ok(e)
                    if e.value
                        <= ev.value
                            + opts.armijo_c * slope
                            + 64.0 * f64::EPSILON * ev.value.abs() =>
                {
                    accepted = Some((trial, e, diff));
                    break;
                }
                Ok(_) | Err(Error::IntegrationDiverged { .. }) => step *= opts.backtrack,
                Err(e) => return Err(e),
            }
        }
        let Some((trial, e, s)) = accepted else {
            return Err(Error::NoConvergence {
                iterations,
                residual: gnorm,
            });
        };
        let (g_new, p_new) = batch_gradient(model, &trial, &e.ensembles)?;
        let mut y = g_new.clone();
        for (a, b) in y.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a -= b;
        }
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            (2.0 * step).min(1e10)
        };
        theta = trial;
        ev = e;
        g = g_new;
        p0 = p_new;
    }
    Ok(SolveReport {
        theta_star: theta,
        value: ev.value,
        grad_norm_history: history,
        seeds: batch.iter().map(|b| b.seed).collect(),
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        mode,
        costate0: p0,
        audit: None,
    })
}

/// Central finite differences of the solved value in each initial state,
/// with step `h_i = h * (1 + |x_i|)`.
pub fn value_gradient_fd(
    model: &ModelSpec,
    x0: &Samples,
    grid: TimeGrid,
    opts: &SolveOptions,
    h: f64,
) -> Result<Vec<f64>> {
    (0..x0.len())
        .into_par_iter()
        .map(|i| {
            let hi = h * (1.0 + x0.x()[i].abs());
            let shifted = |s: f64| -> Result<f64> {
                let mut x = x0.x().to_vec();
                x[i] += s;
                Ok(solve(model, &x0.with_x(x)?, grid, opts)?.value)
            };
            Ok((shifted(hi)? - shifted(-hi)?) / (2.0 * hi))
        })
        .collect()
}

/// Second-derivative matrices along the optimal path.
#[derive(Clone, Debug)]
pub struct RiccatiState {
    grid: TimeGrid,
    y: Vec<DMatrix<f64>>,
}

impl RiccatiState {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.y[k]
    }

    /// `(t, lambda_min, lambda_max)` at every node.
    pub fn eigen_trace(&self) -> Vec<(f64, f64, f64)> {
        self.y
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let e = SymmetricEigen::new(m.clone()).eigenvalues;
                (self.grid.time(k), e.min(), e.max())
            })
            .collect()
    }

    pub fn write_eigen_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = self
            .eigen_trace()
            .into_iter()
            .map(|(t, a, b)| vec![t, a, b]);
        write_csv_to(&mut out, &["t", "lambda_min", "lambda_max"], rows)
    }
}

/// Explicit backward Euler on
/// `dY/dt = -[H_xx + H_xp Y + Y H_px + Y H_pp Y]` with `Y_T = diag(U'')/N`,
/// symmetrized after each step. Hessian blocks are evaluated at node `k+1`
/// with the costate of the discrete adjoint and the feedback minimizer.
pub fn riccati_propagate(
    model: &ModelSpec,
    report: &SolveReport,
    ens: &ParticleEnsemble,
) -> Result<RiccatiState> {
    if !model.is_deterministic() {
        return Err(Error::ModeViolation(
            "Riccati propagation is deterministic only".into(),
        ));
    }
    let theta = &report.theta_star;
    let sweep = adjoint_sweep(model, theta, ens, false)?;
    let grid = *ens.grid();
    let n = ens.particles();
    let nf = n as f64;
    let dt = grid.dt();
    let labels = ens.labels();
    let k_last = grid.steps();
    let mut y = vec![DMatrix::zeros(n, n); grid.nodes()];
    y[k_last] = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            model.terminal().d2(ens.terminal()[i], labels[i]) / nf
        } else {
            0.0
        }
    });
    for k in (0..k_last).rev() {
        let t = grid.time(k + 1);
        let x = ens.row(k + 1);
        let p = sweep.row(k + 1);
        let th = feedback_minimizer(model, t, x, p)?;
        let h = hamiltonian_hessians(model, t, x, labels, p, &th)?;
        let yn = &y[k + 1];
        let my = &h.hxp * yn;
        let rhs = &h.hxx + &my + my.transpose() + yn * &h.hpp * yn;
        let mut next = yn + rhs * dt;
        next = (&next + next.transpose()) * 0.5;
        let mag = next.amax();
        if !mag.is_finite() || mag > RICCATI_BLOW_UP {
            return Err(Error::RiccatiBlowUp {
                step: k,
                magnitude: mag,
            });
        }
        y[k] = next;
    }
    Ok(RiccatiState { grid, y })
}

/// Fitted scaled-matrix bounds of the coupling matrix and of the transition
/// matrices `Phi+` (`Phi+' = -A Phi+`) and `Phi-` (`Phi-' = Phi- A`).
#[derive(Clone, Debug, Serialize)]
pub struct TransitionAudit {
    pub coupling_bound: f64,
    pub phi_plus_bound: f64,
    pub phi_minus_bound: f64,
}

pub fn transition_audit(
    model: &ModelSpec,
    theta: &ControlPath,
    ens: &ParticleEnsemble,
) -> Result<TransitionAudit> {
    let grid = *ens.grid();
    let n = ens.particles();
    let dt = grid.dt();
    let mut plus = DMatrix::identity(n, n);
    let mut minus = DMatrix::identity(n, n);
    let mut out = TransitionAudit {
        coupling_bound: 0.0,
        phi_plus_bound: 1.0,
        phi_minus_bound: 1.0,
    };
    for k in 0..grid.steps() {
        let a = coupling_matrix(model, grid.time(k), theta.at(k), ens.row(k))?;
        out.coupling_bound = out.coupling_bound.max(fitted_bound(&a));
        plus = &plus - (&a * &plus) * dt;
        minus = &minus + (&minus * &a) * dt;
        out.phi_plus_bound = out.phi_plus_bound.max(fitted_bound(&plus));
        out.phi_minus_bound = out.phi_minus_bound.max(fitted_bound(&minus));
    }
    Ok(out)
}

/// Largest horizon in the doubling ladder `t_start * 2^j` (`j < doublings`)
/// for which the Riccati propagation stays bounded, halved.
pub fn riccati_horizon(
    model: &ModelSpec,
    x0: &Samples,
    steps_per_unit: usize,
    t_start: f64,
    doublings: usize,
    opts: &SolveOptions,
) -> Result<f64> {
    let mut best = None;
    let mut t = t_start;
    for _ in 0..doublings {
        let m = model.clone().with_horizon(t)?;
        let steps = ((t * steps_per_unit as f64).ceil() as usize).max(4);
        let grid = TimeGrid::horizon(t, steps)?;
        let ok = solve(&m, x0, grid, opts).and_then(|r| {
            let e = simulate(&m, &r.theta_star, x0, &NoiseBundle::zero(grid))?;
            riccati_propagate(&m, &r, &e)
        });
        match ok {
            Ok(_) => best = Some(t),
            Err(Error::RiccatiBlowUp { .. })
            | Err(Error::NoConvergence { .. })
            | Err(Error::IntegrationDiverged { .. }) => break,
            Err(e) => return Err(e),
        }
        t *= 2.0;
    }
    best.map(|b| 0.5 * b).ok_or_else(|| {
        Error::InvalidInput(format!(
            "Riccati propagation fails already at T = {t_start}"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, ZeroCost};
    use std::sync::Arc;

    /// RK4 for `a' = 2a^2 - 4a - 1`, `a(T) = 1`, integrated backward.
    fn riccati_oracle(horizon: f64, steps: usize) -> Vec<f64> {
        let rhs = |a: f64| 2.0 * a * a - 4.0 * a - 1.0;
        let h = -horizon / steps as f64;
        let mut a = vec![1.0; steps + 1];
        for k in (0..steps).rev() {
            let y = a[k + 1];
            let k1 = rhs(y);
            let k2 = rhs(y + 0.5 * h * k1);
            let k3 = rhs(y + 0.5 * h * k2);
            let k4 = rhs(y + h * k3);
            a[k] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        a
    }

    #[test]
    fn zero_costs_give_zero_costates_and_control() {
        let m = presets::lq()
            .with_running(Arc::new(ZeroCost))
            .with_terminal(Arc::new(ZeroCost));
        let g = TimeGrid::horizon(1.0, 20).unwrap();
        let x0 = Samples::new(vec![0.3, -1.0]).unwrap();
        let th = ControlPath::constant(g, &[0.7]);
        let e = simulate(&m, &th, &x0, &NoiseBundle::zero(g)).unwrap();
        let s = adjoint_sweep(&m, &th, &e, false).unwrap();
        assert!(s.costates.iter().all(|v| *v == 0.0));
        let r = solve(&m, &x0, g, &SolveOptions::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.theta_star.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decoupled_sweep_is_linear_in_time() {
        let m = presets::zero();
        let g = TimeGrid::horizon(1.0, 10).unwrap();
        let x0 = Samples::new(vec![1.0]).unwrap();
        let th = ControlPath::zeros(g, 1);
        let e = simulate(&m, &th, &x0, &NoiseBundle::zero(g)).unwrap();
        let s = adjoint_sweep(&m, &th, &e, false).unwrap();
        for k in 0..g.nodes() {
            let t = g.time(k);
            assert!((s.row(k)[0] - (2.0 + 2.0 * (1.0 - t))).abs() < 1e-12);
        }
    }

    #[test]
    fn noisy_sweep_needs_pathwise_flag() {
        let m = presets::lq().with_noise(1.0, 0.0).unwrap();
        let g = TimeGrid::horizon(1.0, 10).unwrap();
        let x0 = Samples::new(vec![1.0]).unwrap();
        let th = ControlPath::zeros(g, 1);
        let e = simulate(&m, &th, &x0, &NoiseBundle::sample(g, 0, 1)).unwrap();
        assert!(matches!(
            adjoint_sweep(&m, &th, &e, false),
            Err(Error::ModeViolation(_))
        ));
        assert!(!adjoint_sweep(&m, &th, &e, true).unwrap().certified());
    }

    #[test]
    fn lq_value_and_riccati_match_scalar_oracle() {
        let steps = 4000;
        let g = TimeGrid::horizon(1.0, steps).unwrap();
        let m = presets::lq();
        let x0 = Samples::new(vec![1.0]).unwrap();
        let r = solve(
            &m,
            &x0,
            g,
            &SolveOptions {
                tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        let a = riccati_oracle(1.0, steps);
        assert!(
            (r.value - a[0]).abs() / a[0] < 2e-3,
            "{} vs {}",
            r.value,
            a[0]
        );
        assert!((r.costate0[0] - 2.0 * a[0]).abs() / a[0] < 2e-3);
        let e = simulate(&m, &r.theta_star, &x0, &NoiseBundle::zero(g)).unwrap();
        let y = riccati_propagate(&m, &r, &e).unwrap();
        for k in (0..=steps).step_by(500) {
            assert!((y.at(k)[(0, 0)] - 2.0 * a[k]).abs() < 5e-3, "k={k}");
        }
        // Energy bound against the zero control.
        let j0 = crate::simulator::objective(
            &m,
            &ControlPath::zeros(g, 1),
            &x0,
            &[NoiseBundle::zero(g)],
        )
        .unwrap();
        assert!(0.5 * m.lambda() * r.theta_star.energy(None) <= j0);
    }

    #[test]
    fn zero_curvature_costs_give_zero_riccati() {
        let m = presets::lq()
            .with_running(Arc::new(ZeroCost))
            .with_terminal(Arc::new(ZeroCost));
        let g = TimeGrid::horizon(0.5, 50).unwrap();
        let x0 = Samples::new(vec![0.1, 0.4, -0.3]).unwrap();
        let r = solve(&m, &x0, g, &SolveOptions::default()).unwrap();
        let e = simulate(&m, &r.theta_star, &x0, &NoiseBundle::zero(g)).unwrap();
        let y = riccati_propagate(&m, &r, &e).unwrap();
        assert_eq!(y.at(0).amax(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = TimeGrid::horizon(0.8, 16).unwrap();
        let x0 = Samples::labeled(vec![-0.6, 0.1, 0.9], vec![0.2, -0.4, 0.5]).unwrap();
        for m in [presets::lq(), presets::batchnorm(), presets::two_layer()] {
            let d = m.control_dim();
            let rows: Vec<Vec<f64>> = (0..g.nodes())
                .map(|k| {
                    (0..d)
                        .map(|j| 0.3 * ((k + 2 * j) as f64).sin() + 0.5)
                        .collect()
                })
                .collect();
            let th = ControlPath::from_rows(g, &rows).unwrap();
            let zero = [NoiseBundle::zero(g)];
            let e = simulate(&m, &th, &x0, &zero[0]).unwrap();
            let s = adjoint_sweep(&m, &th, &e, false).unwrap();
            let grad = control_gradient(&m, &th, &e, &s);
            let h = 1e-5;
            for k in [0, 7, 15] {
                for j in 0..d {
                    let mut a = th.clone();
                    let mut b = th.clone();
                    a.at_mut(k)[j] += h;
                    b.at_mut(k)[j] -= h;
                    let fd = (crate::simulator::objective(&m, &a, &x0, &zero).unwrap()
                        - crate::simulator::objective(&m, &b, &x0, &zero).unwrap())
                        / (2.0 * h);
                    let an = g.dt() * grad.at(k)[j];
                    assert!(
                        (an - fd).abs() <= 1e-6 * (fd.abs() + 1e-3),
                        "{} k={k} j={j}: {an} vs {fd}",
                        m.drift().name()
                    );
                }
            }
        }
    }

    #[test]
    fn transition_bounds_are_reported() {
        let g = TimeGrid::horizon(1.0, 50).unwrap();
        let x0 = Samples::new(vec![0.5, -0.5, 1.0, 0.0]).unwrap();
        let th = ControlPath::zeros(g, 1);
        let m = presets::lq();
        let e = simulate(&m, &th, &x0, &NoiseBundle::zero(g)).unwrap();
        let a = transition_audit(&m, &th, &e).unwrap();
        assert!((a.coupling_bound - 1.0).abs() < 1e-12);
        assert!(a.phi_plus_bound >= 1.0 && a.phi_minus_bound > 1.0);
    }
}
