use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

use super::cost::Cost;
use super::drift::Drift;
use super::measure::EmpiricalMeasure;
use super::spec::ModelSpec;

/// Knobs for the registration-time checks.
#[derive(Clone, Debug)]
pub struct ValidationOptions {
    pub probes: usize,
    pub seed: u64,
    /// Finite-difference step.
    pub h: f64,
    /// Accepted `|analytic - fd| / (1 + |fd|)`.
    pub tol: f64,
    /// Largest `|x|` on the log-spaced growth grid.
    pub x_max: f64,
    /// Labels at which label-dependent costs are audited.
    pub labels: Vec<f64>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            probes: 16,
            seed: 7,
            h: 1e-5,
            tol: 1e-5,
            x_max: 1e3,
            labels: vec![0.0],
        }
    }
}

/// Largest finite-difference mismatch seen for each derivative.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub d_theta: f64,
    pub d_x: f64,
    pub d_mu: f64,
    pub d_theta_theta: f64,
    pub d_theta_x: f64,
    pub d_xx: f64,
    pub d_x_mu: f64,
    pub d_theta_mu: f64,
    pub d_mu_y: f64,
    pub d_mu_mu: f64,
    pub costs: f64,
}

impl ValidationReport {
    pub fn worst(&self) -> f64 {
        [
            self.d_theta,
            self.d_x,
            self.d_mu,
            self.d_theta_theta,
            self.d_theta_x,
            self.d_xx,
            self.d_x_mu,
            self.d_theta_mu,
            self.d_mu_y,
            self.d_mu_mu,
            self.costs,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn mismatch(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (1.0 + fd.abs())
}

fn central(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn shifted(atoms: &[f64], j: usize, by: f64) -> EmpiricalMeasure {
    let mut a = atoms.to_vec();
    a[j] += by;
    EmpiricalMeasure::new(a).expect("finite atoms")
}

/// Compare every user-supplied drift derivative with central differences.
pub fn check_drift(drift: &dyn Drift, opts: &ValidationOptions) -> ValidationReport {
    let d = drift.control_dim();
    let h = opts.h;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = ValidationReport::default();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    for _ in 0..opts.probes {
        let t = rng.random_range(0.0..1.0);
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let x = rng.random_range(-2.0..2.0);
        let n = rng.random_range(2..6);
        let atoms: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mu = EmpiricalMeasure::from_slice(&atoms).expect("nonempty");
        let j = rng.random_range(0..n);
        let y = atoms[j];
        let z = rng.random_range(-2.0..2.0);
        let nf = n as f64;
        let with_theta = |k: usize, s: f64| {
            let mut th = theta.clone();
            th[k] += s;
            th
        };

        drift.d_theta(t, &theta, x, &mu, &mut a);
        drift.d_theta_x(t, &theta, x, &mu, &mut b);
        drift.d_theta_mu(t, &theta, x, &mu, y, &mut c);
        drift.d_theta_theta(t, &theta, x, &mu, &mut m);
        for k in 0..d {
            let fd = central(h, |s| drift.value(t, &with_theta(k, s), x, &mu));
            rep.d_theta = rep.d_theta.max(mismatch(a[k], fd));
            let fd = central(h, |s| {
                let mut o = vec![0.0; d];
                drift.d_theta(t, &theta, x + s, &mu, &mut o);
                o[k]
            });
            rep.d_theta_x = rep.d_theta_x.max(mismatch(b[k], fd));
            let fd = central(h, |s| drift.d_mu(t, &with_theta(k, s), x, &mu, y));
            rep.d_theta_mu = rep.d_theta_mu.max(mismatch(c[k], fd));
            for l in 0..d {
                let fd = central(h, |s| {
                    let mut o = vec![0.0; d];
                    drift.d_theta(t, &with_theta(l, s), x, &mu, &mut o);
                    o[k]
                });
                rep.d_theta_theta = rep.d_theta_theta.max(mismatch(m[k * d + l], fd));
            }
        }

        let fd = central(h, |s| drift.value(t, &theta, x + s, &mu));
        rep.d_x = rep.d_x.max(mismatch(drift.d_x(t, &theta, x, &mu), fd));
        let fd = central(h, |s| drift.d_x(t, &theta, x + s, &mu));
        rep.d_xx = rep.d_xx.max(mismatch(drift.d_xx(t, &theta, x, &mu), fd));

        // Moving atom j by s changes f by (s/N) d_mu(y_j) to first order.
        let fd = nf * central(h, |s| drift.value(t, &theta, x, &shifted(&atoms, j, s)));
        rep.d_mu = rep.d_mu.max(mismatch(drift.d_mu(t, &theta, x, &mu, y), fd));
        let fd = central(h, |s| drift.d_mu(t, &theta, x + s, &mu, y));
        rep.d_x_mu = rep
            .d_x_mu
            .max(mismatch(drift.d_x_mu(t, &theta, x, &mu, y), fd));
        let fd = central(h, |s| drift.d_mu(t, &theta, x, &mu, z + s));
        rep.d_mu_y = rep
            .d_mu_y
            .max(mismatch(drift.d_mu_y(t, &theta, x, &mu, z), fd));
        let fd = nf * central(h, |s| drift.d_mu(t, &theta, x, &shifted(&atoms, j, s), z));
        rep.d_mu_mu = rep
            .d_mu_mu
            .max(mismatch(drift.d_mu_mu(t, &theta, x, &mu, z, y), fd));
    }
    rep
}

/// Finite-difference check of `phi'` and `phi''`; returns the worst mismatch.
pub fn check_cost(cost: &dyn Cost, opts: &ValidationOptions) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.probes {
        let x = rng.random_range(-3.0..3.0);
        for &label in &opts.labels {
            let fd = central(opts.h, |s| cost.value(x + s, label));
            worst = worst.max(mismatch(cost.d1(x, label), fd));
            let fd = central(opts.h, |s| cost.d1(x + s, label));
            worst = worst.max(mismatch(cost.d2(x, label), fd));
        }
    }
    worst
}

/// Nonnegativity and growth-constant audit on a log-spaced grid of `|x|`.
pub fn growth_audit(cost: &dyn Cost, x_max: f64, labels: &[f64]) -> Result<()> {
    let g = cost.growth();
    let points = 200;
    let lo = 1e-3f64.ln();
    let hi = x_max.max(1.0).ln();
    for k in 0..=points {
        let r = (lo + (hi - lo) * k as f64 / points as f64).exp();
        for x in [-r, 0.0, r] {
            for &label in labels {
                let v = cost.value(x, label);
                if v < 0.0 {
                    return Err(Error::ModelValidation(format!(
                        "{} is negative at x = {x}: {v}",
                        cost.name()
                    )));
                }
                let slack = 1e-9 * (1.0 + x.abs());
                let d1 = cost.d1(x, label).abs();
                if d1 > g.c11 * x.abs() + g.c10 + slack {
                    return Err(Error::ModelValidation(format!(
                        "{}: |phi'({x})| = {d1} exceeds c11|x| + c10 = {}",
                        cost.name(),
                        g.c11 * x.abs() + g.c10
                    )));
                }
                let d2 = cost.d2(x, label).abs();
                if d2 > g.c20 + 1e-9 {
                    return Err(Error::ModelValidation(format!(
                        "{}: |phi''({x})| = {d2} exceeds c20 = {}",
                        cost.name(),
                        g.c20
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Registration checks: derivative consistency of drift and costs plus the
/// growth audit of both costs.
pub fn validate_model(model: &ModelSpec, opts: &ValidationOptions) -> Result<ValidationReport> {
    let mut rep = check_drift(model.drift(), opts);
    rep.costs = check_cost(model.running(), opts).max(check_cost(model.terminal(), opts));
    if rep.worst() > opts.tol {
        return Err(Error::ModelValidation(format!(
            "derivative of {} disagrees with finite differences: {rep:?}",
            model.drift().name()
        )));
    }
    growth_audit(model.running(), opts.x_max, &opts.labels)?;
    growth_audit(model.terminal(), opts.x_max, &opts.labels)?;
    Ok(rep)
}
