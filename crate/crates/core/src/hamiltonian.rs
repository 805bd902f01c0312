//! Particle Hamiltonian, its minimizer over the control, second-order
//! sensitivities and the sampled hypothesis audit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::grid::norm;
use crate::model::{EmpiricalMeasure, ModelSpec};

/// Newton controls for [`feedback_minimizer_with`].
#[derive(Clone, Copy, Debug)]
pub struct FeedbackOptions {
    /// Residual (projected gradient sup-norm) at which Newton stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest admissible eigenvalue of the Hessian in `theta`.
    pub eig_floor: f64,
}

impl Default for FeedbackOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            eig_floor: 1e-12,
        }
    }
}

const MAX_HALVINGS: usize = 60;

fn measure(x: &[f64]) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::from_slice(x)
}

/// `(lambda/2)|theta - eta|^2 + sum_i f(t, theta, x_i, mu) p_i + (1/N) sum_i L(x_i)`
/// (running cost evaluated at label 0).
pub fn hamiltonian_value(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    p: &[f64],
    theta: &[f64],
) -> Result<f64> {
    let mu = measure(x)?;
    let running = x
        .iter()
        .map(|&xi| model.running().value(xi, 0.0))
        .sum::<f64>()
        / x.len() as f64;
    Ok(controlled_part(model, t, x, &mu, p, theta) + running)
}

fn controlled_part(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
    p: &[f64],
    theta: &[f64],
) -> f64 {
    let f = model.drift();
    model.regularizer(theta)
        + x.iter()
            .zip(p)
            .map(|(&xi, &pi)| {
                if pi == 0.0 {
                    0.0
                } else {
                    f.value(t, theta, xi, mu) * pi
                }
            })
            .sum::<f64>()
}

/// Gradient and Hessian of the Hamiltonian in `theta`.
fn theta_derivatives(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
    p: &[f64],
    theta: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let d = model.control_dim();
    let f = model.drift();
    let mut g = DVector::from_fn(d, |j, _| model.lambda() * (theta[j] - model.eta(j)));
    let mut h = DMatrix::identity(d, d) * model.lambda();
    let mut v = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    let affine = f.affine_in_theta();
    for (&xi, &pi) in x.iter().zip(p) {
        if pi == 0.0 {
            continue;
        }
        f.d_theta(t, theta, xi, mu, &mut v);
        for j in 0..d {
            g[j] += pi * v[j];
        }
        if !affine {
            f.d_theta_theta(t, theta, xi, mu, &mut m);
            for a in 0..d {
                for b in 0..d {
                    h[(a, b)] += pi * m[a * d + b];
                }
            }
        }
    }
    (g, h)
}

/// Coordinates pinned at the control box with the gradient pushing outward.
fn active_set(model: &ModelSpec, theta: &[f64], g: &DVector<f64>) -> Vec<bool> {
    match model.control_box() {
        None => vec![false; theta.len()],
        Some(r) => theta
            .iter()
            .zip(g.iter())
            .map(|(&t, &gj)| (t >= r && gj < 0.0) || (t <= -r && gj > 0.0))
            .collect(),
    }
}

/// Replace active rows/columns by the identity so the free block can be
/// factorized on its own.
fn masked(h: &DMatrix<f64>, active: &[bool]) -> DMatrix<f64> {
    let mut out = h.clone();
    for (j, &a) in active.iter().enumerate() {
        if a {
            out.row_mut(j).fill(0.0);
            out.column_mut(j).fill(0.0);
            out[(j, j)] = 1.0;
        }
    }
    out
}

fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.min()
}

/// Minimizer `theta*` of the Hamiltonian for given `(t, x, p)` with default
/// Newton options.
pub fn feedback_minimizer(model: &ModelSpec, t: f64, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    feedback_minimizer_with(model, t, x, p, &FeedbackOptions::default(), None)
}

/// Damped (projected) Newton iteration on the first-order condition
/// `lambda (theta - eta) + sum_i f_theta(t, theta, x_i, mu) p_i = 0`.
///
/// `start` defaults to the projection of `eta`.
pub fn feedback_minimizer_with(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    p: &[f64],
    opts: &FeedbackOptions,
    start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if x.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: p.len(),
        });
    }
    let d = model.control_dim();
    let mu = measure(x)?;
    let mut theta: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => (0..d).map(|j| model.eta(j)).collect(),
    };
    model.project(&mut theta);
    let mut value = controlled_part(model, t, x, &mu, p, &theta);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (g, h) = theta_derivatives(model, t, x, &mu, p, &theta);
        let active = active_set(model, &theta, &g);
        residual = g
            .iter()
            .zip(&active)
            .filter(|(_, a)| !**a)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max);
        if residual < opts.tol {
            return Ok(theta);
        }
        let hm = masked(&h, &active);
        let eig = min_eigenvalue(&hm);
        if eig < opts.eig_floor {
            return Err(Error::NonConvex {
                eigenvalue: eig,
                floor: opts.eig_floor,
            });
        }
        let mut gm = g.clone();
        for (j, &a) in active.iter().enumerate() {
            if a {
                gm[j] = 0.0;
            }
        }
        let step = hm
            .cholesky()
            .ok_or(Error::NonConvex {
                eigenvalue: eig,
                floor: opts.eig_floor,
            })?
            .solve(&gm);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a - alpha * s)
                .collect();
            model.project(&mut trial);
            let v = controlled_part(model, t, x, &mu, p, &trial);
            if v <= value + 1e-15 * value.abs() {
                theta = trial;
                value = v;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if model.drift().affine_in_theta() && model.control_box().is_none() && alpha == 1.0 {
            return Ok(theta);
        }
    }
    // Rounding can stall the line search at the minimizer itself.
    let (g, _) = theta_derivatives(model, t, x, &mu, p, &theta);
    let active = active_set(model, &theta, &g);
    let final_res = g
        .iter()
        .zip(&active)
        .filter(|(_, a)| !**a)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max);
    if final_res < opts.tol * 10.0 {
        return Ok(theta);
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: residual.min(final_res),
    })
}

/// Minimized Hamiltonian `H~(t, x, p)`.
pub fn minimized_hamiltonian(model: &ModelSpec, t: f64, x: &[f64], p: &[f64]) -> Result<f64> {
    let th = feedback_minimizer(model, t, x, p)?;
    hamiltonian_value(model, t, x, p, &th)
}

/// Second derivatives of `H~` at `(x, p)`, plus the sensitivities of
/// `theta*`. Index conventions: `hxp[(k, i)] = d^2 H~ / dx_k dp_i`,
/// `dtheta_dx[(j, k)] = d theta*_j / d x_k`.
#[derive(Clone, Debug)]
pub struct HamiltonianHessians {
    pub hxx: DMatrix<f64>,
    pub hxp: DMatrix<f64>,
    pub hpp: DMatrix<f64>,
    pub dtheta_dx: DMatrix<f64>,
    pub dtheta_dp: DMatrix<f64>,
}

/// Assemble the Hessian blocks of `H~` from the model's second derivatives
/// and the implicit-function sensitivities of `theta*`. `theta` must be the
/// minimizer at `(t, x, p)`; `labels` enter only through `L''`.
pub fn hamiltonian_hessians(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    labels: &[f64],
    p: &[f64],
    theta: &[f64],
) -> Result<HamiltonianHessians> {
    let n = x.len();
    let nf = n as f64;
    let d = model.control_dim();
    let f = model.drift();
    let mu = measure(x)?;
    let coupled = f.depends_on_measure();

    let (g, h) = theta_derivatives(model, t, x, &mu, p, theta);
    let active = active_set(model, theta, &g);
    let gm = masked(&h, &active);
    let mut ginv = gm.clone().try_inverse().ok_or(Error::NonConvex {
        eigenvalue: min_eigenvalue(&gm),
        floor: 0.0,
    })?;
    for (j, &a) in active.iter().enumerate() {
        if a {
            ginv.row_mut(j).fill(0.0);
            ginv.column_mut(j).fill(0.0);
        }
    }

    let mut b = DMatrix::zeros(d, n);
    let mut c = DMatrix::zeros(d, n);
    let mut v = vec![0.0; d];
    for k in 0..n {
        f.d_theta(t, theta, x[k], &mu, &mut v);
        b.column_mut(k).copy_from_slice(&v);
        f.d_theta_x(t, theta, x[k], &mu, &mut v);
        for j in 0..d {
            c[(j, k)] = p[k] * v[j];
        }
        if coupled {
            for i in 0..n {
                f.d_theta_mu(t, theta, x[i], &mu, x[k], &mut v);
                for j in 0..d {
                    c[(j, k)] += p[i] * v[j] / nf;
                }
            }
        }
    }
    let dtheta_dp = -(&ginv * &b);
    let dtheta_dx = -(&ginv * &c);

    let hpp = b.transpose() * &dtheta_dp;
    let mut hxp = dtheta_dx.transpose() * &b;
    let mut hxx = c.transpose() * &dtheta_dx;
    for k in 0..n {
        hxp[(k, k)] += f.d_x(t, theta, x[k], &mu);
        hxx[(k, k)] +=
            model.running().d2(x[k], labels[k]) / nf + p[k] * f.d_xx(t, theta, x[k], &mu);
    }
    if coupled {
        for k in 0..n {
            let mut diag = 0.0;
            for i in 0..n {
                hxp[(k, i)] += f.d_mu(t, theta, x[i], &mu, x[k]) / nf;
                diag += p[i] * f.d_mu_y(t, theta, x[i], &mu, x[k]);
            }
            hxx[(k, k)] += diag / nf;
            for l in 0..n {
                let mut s = (p[k] * f.d_x_mu(t, theta, x[k], &mu, x[l])
                    + p[l] * f.d_x_mu(t, theta, x[l], &mu, x[k]))
                    / nf;
                let mut mm = 0.0;
                for i in 0..n {
                    if p[i] != 0.0 {
                        mm += p[i] * f.d_mu_mu(t, theta, x[i], &mu, x[k], x[l]);
                    }
                }
                s += mm / (nf * nf);
                hxx[(k, l)] += s;
            }
        }
    }
    Ok(HamiltonianHessians {
        hxx,
        hxp,
        hpp,
        dtheta_dx,
        dtheta_dp,
    })
}

/// Sampling controls for [`audit_hypotheses`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditOptions {
    pub probe_budget: usize,
    pub seed: u64,
    /// States are drawn uniformly from `[-x_max, x_max]^N`.
    pub x_max: f64,
    /// Controls are drawn uniformly from `[-theta_range, theta_range]^d`.
    pub theta_range: f64,
    /// Constant in the first-derivative envelope that defines the probe set.
    pub c2_tilde: f64,
    /// Particle counts cycled through by successive probes.
    pub n_ladder: Vec<usize>,
    /// Particle counts above this skip the (quadratic-cost) convexity probe.
    pub r1_max_n: usize,
    pub r1_tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            probe_budget: 64,
            seed: 1,
            x_max: 2.0,
            theta_range: 2.0,
            c2_tilde: 1.0,
            n_ladder: vec![1, 2, 4, 8, 16],
            r1_max_n: 8,
            r1_tol: 1e-6,
        }
    }
}

/// Sampled estimates of the structural constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisAudit {
    pub lambda0: f64,
    pub cq: f64,
    pub margin: f64,
    pub r1_convex: bool,
    pub terminal_convex: bool,
    /// Smallest eigenvalue seen in the finite-difference `x`-Hessians.
    pub r1_min_eigenvalue: f64,
    /// `sup |f_theta|` over the probes.
    pub f_theta_sup: f64,
    pub probes: usize,
    pub seed: u64,
    pub theta_range: f64,
    pub passed: bool,
}

/// One sampled point of the probe set.
#[derive(Clone, Debug)]
pub struct AuditProbe {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Envelope on `|p_i|` that defines the probe set.
pub fn costate_envelope(model: &ModelSpec, c2_tilde: f64, x: &[f64], i: usize) -> f64 {
    let (gl, gu) = (model.running().growth(), model.terminal().growth());
    let nf = x.len() as f64;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / nf;
    c2_tilde * (gl.c11 + gu.c11) / nf * (1.0 + x[i] * x[i] + m2).sqrt()
        + c2_tilde * (gl.c10 + gu.c10) / nf
}

/// Probes in the order the audit consumes them. Each probe draws from one
/// sequential stream, so a larger budget extends a smaller one.
pub fn audit_probes(model: &ModelSpec, opts: &AuditOptions) -> Vec<AuditProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = model.control_dim();
    (0..opts.probe_budget)
        .map(|k| {
            let n = opts.n_ladder[k % opts.n_ladder.len()].max(1);
            let x: Vec<f64> = (0..n)
                .map(|_| rng.random_range(-opts.x_max..=opts.x_max))
                .collect();
            let p: Vec<f64> = (0..n)
                .map(|i| {
                    let e = costate_envelope(model, opts.c2_tilde, &x, i);
                    if e > 0.0 {
                        rng.random_range(-e..e)
                    } else {
                        0.0
                    }
                })
                .collect();
            let theta: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-opts.theta_range..=opts.theta_range))
                .collect();
            AuditProbe { x, p, theta }
        })
        .collect()
}

struct Sup {
    lambda0: f64,
    cq: f64,
    f_theta: f64,
}

fn probe_constants(
    model: &ModelSpec,
    t: f64,
    x: &[f64],
    p: &[f64],
    theta: &[f64],
    sup: &mut Sup,
) -> Result<()> {
    let f = model.drift();
    let d = model.control_dim();
    let nf = x.len() as f64;
    let mu = measure(x)?;
    let mut v = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    for (i, &xi) in x.iter().enumerate() {
        f.d_theta(t, theta, xi, &mu, &mut v);
        sup.f_theta = sup.f_theta.max(norm(&v));
        let np = nf * p[i].abs();
        f.d_theta_theta(t, theta, xi, &mu, &mut m);
        let spectral = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &m))
            .eigenvalues
            .amax();
        sup.lambda0 = sup.lambda0.max(np * spectral);
        f.d_theta_x(t, theta, xi, &mu, &mut v);
        let phi = norm(&v).max(f.d_xx(t, theta, xi, &mu).abs());
        let mut psi: f64 = 0.0;
        if f.depends_on_measure() {
            for &y in x {
                f.d_theta_mu(t, theta, xi, &mu, y, &mut v);
                psi = psi.max(norm(&v)).max(f.d_x_mu(t, theta, xi, &mu, y).abs());
            }
        }
        sup.cq = sup.cq.max(np * (phi + psi));
    }
    Ok(())
}

fn fd_x_hessian(model: &ModelSpec, t: f64, x: &[f64], p: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let eval = |dx: &[(usize, f64)]| -> Result<f64> {
        let mut y = x.to_vec();
        for &(k, s) in dx {
            y[k] += s;
        }
        minimized_hamiltonian(model, t, &y, p)
    };
    let mut hess = DMatrix::zeros(n, n);
    let c = eval(&[])?;
    for k in 0..n {
        hess[(k, k)] = (eval(&[(k, h)])? - 2.0 * c + eval(&[(k, -h)])?) / (h * h);
        for l in 0..k {
            let v =
                (eval(&[(k, h), (l, h)])? - eval(&[(k, h), (l, -h)])? - eval(&[(k, -h), (l, h)])?
                    + eval(&[(k, -h), (l, -h)])?)
                    / (4.0 * h * h);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
        }
    }
    Ok(hess)
}

/// Sample the probe set and report suprema of the structural constants.
///
/// The control set is treated as unbounded: suprema are taken over random
/// controls in `[-theta_range, theta_range]^d` together with the minimizer
/// `theta*(x, p)` of every probe. Convexity in `x` is judged from
/// finite-difference Hessians of the minimized Hamiltonian.
pub fn audit_hypotheses(model: &ModelSpec, opts: &AuditOptions) -> HypothesisAudit {
    let probes = audit_probes(model, opts);
    let mut sup = Sup {
        lambda0: 0.0,
        cq: 0.0,
        f_theta: 0.0,
    };
    let mut r1_min = f64::INFINITY;
    let mut r1_ok = true;
    let mut solved = true;
    let t = 0.0;
    for pr in &probes {
        if probe_constants(model, t, &pr.x, &pr.p, &pr.theta, &mut sup).is_err() {
            solved = false;
            continue;
        }
        match feedback_minimizer(model, t, &pr.x, &pr.p) {
            Ok(th) => {
                let _ = probe_constants(model, t, &pr.x, &pr.p, &th, &mut sup);
            }
            Err(_) => solved = false,
        }
        if pr.x.len() <= opts.r1_max_n {
            match fd_x_hessian(model, t, &pr.x, &pr.p, 1e-4) {
                Ok(hs) => {
                    let e = min_eigenvalue(&hs);
                    r1_min = r1_min.min(e);
                    if e < -opts.r1_tol * (1.0 + hs.amax()) {
                        r1_ok = false;
                    }
                }
                Err(_) => r1_ok = false,
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0ffee);
    let terminal_convex = (0..256).all(|_| {
        let x = rng.random_range(-opts.x_max..=opts.x_max);
        model.terminal().d2(x, 0.0) >= 0.0
    });
    let margin = model.lambda() - sup.lambda0;
    HypothesisAudit {
        lambda0: sup.lambda0,
        cq: sup.cq,
        margin,
        r1_convex: r1_ok && r1_min.is_finite(),
        terminal_convex,
        r1_min_eigenvalue: r1_min,
        f_theta_sup: sup.f_theta,
        probes: probes.len(),
        seed: opts.seed,
        theta_range: opts.theta_range,
        passed: margin > 0.0 && solved,
    }
}

/// Finite-difference check of the Lipschitz bounds on `theta*`.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzCheck {
    /// `max |d theta*/d x_k| / (2 C^Q / (N (lambda - lambda0)))`.
    pub x_ratio: f64,
    /// `max |d theta*/d p_k| / (|f_theta|_inf / (lambda - lambda0))`.
    pub p_ratio: f64,
    pub passed: bool,
}

pub fn lipschitz_contract(
    model: &ModelSpec,
    audit: &HypothesisAudit,
    opts: &AuditOptions,
    tol: f64,
) -> Result<LipschitzCheck> {
    if audit.margin <= 0.0 {
        return Err(Error::ModeViolation(
            "Lipschitz contract needs a positive margin".into(),
        ));
    }
    let h = 1e-6;
    let t = 0.0;
    let mut x_ratio: f64 = 0.0;
    let mut p_ratio: f64 = 0.0;
    let diff = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
            / (2.0 * h)
    };
    for pr in audit_probes(model, opts) {
        let n = pr.x.len();
        let xb = 2.0 * audit.cq / (n as f64 * audit.margin);
        let pb = audit.f_theta_sup / audit.margin;
        for k in 0..n {
            let mut a = pr.x.clone();
            let mut b = pr.x.clone();
            a[k] += h;
            b[k] -= h;
            let dx = diff(
                &feedback_minimizer(model, t, &a, &pr.p)?,
                &feedback_minimizer(model, t, &b, &pr.p)?,
            );
            let mut a = pr.p.clone();
            let mut b = pr.p.clone();
            a[k] += h;
            b[k] -= h;
            let dp = diff(
                &feedback_minimizer(model, t, &pr.x, &a)?,
                &feedback_minimizer(model, t, &pr.x, &b)?,
            );
            x_ratio = x_ratio.max(if xb > 0.0 {
                dx / xb
            } else if dx > tol {
                f64::INFINITY
            } else {
                0.0
            });
            p_ratio = p_ratio.max(if pb > 0.0 {
                dp / pb
            } else if dp > tol {
                f64::INFINITY
            } else {
                0.0
            });
        }
    }
    Ok(LipschitzCheck {
        x_ratio,
        p_ratio,
        passed: x_ratio <= 1.0 + tol && p_ratio <= 1.0 + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn value_examples() {
        let m = presets::lq();
        let v = hamiltonian_value(&m, 0.0, &[0.0, 0.0], &[1.0, 1.0], &[1.0]).unwrap();
        assert!((v - 2.5).abs() < 1e-15);
        let z = presets::zero().with_running(std::sync::Arc::new(crate::model::ZeroCost));
        assert_eq!(
            hamiltonian_value(&z, 0.0, &[0.3], &[2.0], &[0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn lq_minimizer_is_linear() {
        let m = presets::lq();
        let th = feedback_minimizer(&m, 0.0, &[0.2, -0.4], &[0.5, 0.5]).unwrap();
        assert!((th[0] + 1.0).abs() < 1e-14);
        let th = feedback_minimizer(&m, 0.0, &[0.2, -0.4], &[0.0, 0.0]).unwrap();
        assert_eq!(th, vec![0.0]);
        let doubled = m.clone().with_lambda(2.0).unwrap();
        assert_eq!(
            feedback_minimizer(&doubled, 0.0, &[1.0], &[0.0]).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn box_clips_minimizer() {
        let m = presets::lq().with_control_box(Some(0.5)).unwrap();
        let th = feedback_minimizer(&m, 0.0, &[0.0], &[3.0]).unwrap();
        assert_eq!(th, vec![-0.5]);
    }

    #[test]
    fn two_layer_minimizer_beats_random_candidates() {
        let m = presets::two_layer().with_lambda(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        let th = feedback_minimizer(&m, 0.0, &x, &p).unwrap();
        let best = hamiltonian_value(&m, 0.0, &x, &p, &th).unwrap();
        for _ in 0..1000 {
            let cand: Vec<f64> = th
                .iter()
                .map(|v| v + rng.random_range(-1.0..1.0) / 3f64.sqrt())
                .collect();
            assert!(hamiltonian_value(&m, 0.0, &x, &p, &cand).unwrap() >= best - 1e-12);
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [
            presets::lq(),
            presets::batchnorm().with_lambda(3.0).unwrap(),
            presets::two_layer().with_lambda(2.0).unwrap(),
        ] {
            let n = 4;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
            let labels = vec![0.0; n];
            let th = feedback_minimizer(&m, 0.0, &x, &p).unwrap();
            let hs = hamiltonian_hessians(&m, 0.0, &x, &labels, &p, &th).unwrap();
            let fd = fd_x_hessian(&m, 0.0, &x, &p, 1e-4).unwrap();
            assert!(
                (&hs.hxx - &fd).amax() < 1e-5,
                "{}: {} vs {}",
                m.drift().name(),
                hs.hxx,
                fd
            );
            let h = 1e-6;
            let grad_p = |x: &[f64]| -> Vec<f64> {
                // dH~/dp_i = f(theta*, x_i).
                let th = feedback_minimizer(&m, 0.0, x, &p).unwrap();
                let mu = EmpiricalMeasure::from_slice(x).unwrap();
                x.iter()
                    .map(|&xi| m.drift().value(0.0, &th, xi, &mu))
                    .collect()
            };
            for k in 0..n {
                let mut a = x.clone();
                let mut b = x.clone();
                a[k] += h;
                b[k] -= h;
                let (ga, gb) = (grad_p(&a), grad_p(&b));
                for i in 0..n {
                    let fdv = (ga[i] - gb[i]) / (2.0 * h);
                    assert!((hs.hxp[(k, i)] - fdv).abs() < 1e-6, "hxp {k},{i}");
                }
            }
            for j in 0..n {
                let mut a = p.clone();
                let mut b = p.clone();
                a[j] += h;
                b[j] -= h;
                let ta = feedback_minimizer(&m, 0.0, &x, &a).unwrap();
                let tb = feedback_minimizer(&m, 0.0, &x, &b).unwrap();
                for c in 0..m.control_dim() {
                    assert!((hs.dtheta_dp[(c, j)] - (ta[c] - tb[c]) / (2.0 * h)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn lq_audit_is_trivial() {
        let m = presets::lq();
        let a = audit_hypotheses(&m, &AuditOptions::default());
        assert_eq!(a.lambda0, 0.0);
        assert_eq!(a.cq, 0.0);
        assert_eq!(a.margin, 1.0);
        assert!(a.r1_convex && a.terminal_convex && a.passed);
        let lc = lipschitz_contract(&m, &a, &AuditOptions::default(), 1e-6).unwrap();
        assert!(lc.passed, "{lc:?}");
    }

    #[test]
    fn margin_is_monotone_in_budget() {
        let m = presets::two_layer().with_lambda(1.0).unwrap();
        let mut last = f64::INFINITY;
        for budget in [4, 8, 16, 32] {
            let opts = AuditOptions {
                probe_budget: budget,
                ..Default::default()
            };
            let a = audit_hypotheses(&m, &opts);
            assert!(a.margin <= last);
            last = a.margin;
        }
    }

    #[test]
    fn bounded_costs_make_hypothesis_trivial() {
        // Zero growth in c11 shrinks the probe set to |p_i| < c10 / N.
        let m = presets::two_layer().with_running(std::sync::Arc::new(crate::model::ZeroCost));
        let m = m.with_terminal(std::sync::Arc::new(crate::model::SquaredError {
            gain: 0.0,
            offset: 0.0,
            label_bound: 0.0,
        }));
        let a = audit_hypotheses(&m, &AuditOptions::default());
        assert_eq!(a.lambda0, 0.0);
        assert!(a.passed);
    }
}
