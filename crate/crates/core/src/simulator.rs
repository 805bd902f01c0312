//! Euler-Maruyama integration of the controlled particle system.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::write_csv_to;
use crate::model::{ControlPath, EmpiricalMeasure, ModelSpec, Samples, TimeGrid};

/// States beyond this magnitude abort the integration.
pub const BLOW_UP: f64 = 1e12;

/// Brownian increments on a time grid: one common path plus optional
/// per-particle paths (stored step-major, `k * n + i`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBundle {
    pub seed: u64,
    grid: TimeGrid,
    common: Vec<f64>,
    idiosyncratic: Option<(usize, Vec<f64>)>,
}

impl NoiseBundle {
    /// All increments zero (deterministic runs).
    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            seed: 0,
            grid,
            common: vec![0.0; grid.steps()],
            idiosyncratic: None,
        }
    }

    /// Gaussian increments of variance `dt`; `particles > 0` adds
    /// idiosyncratic paths for that many particles.
    pub fn sample(grid: TimeGrid, particles: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = grid.dt().sqrt();
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
                .collect()
        };
        let common = draw(grid.steps());
        let idiosyncratic = (particles > 0).then(|| (particles, draw(grid.steps() * particles)));
        Self {
            seed,
            grid,
            common,
            idiosyncratic,
        }
    }

    /// Batch of bundles with consecutive seeds starting at `seed`.
    pub fn batch(grid: TimeGrid, particles: usize, seed: u64, count: usize) -> Vec<Self> {
        (0..count as u64)
            .map(|b| Self::sample(grid, particles, seed.wrapping_add(b)))
            .collect()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn common(&self) -> &[f64] {
        &self.common
    }

    /// Increment of particle `i` over step `k` (zero without idiosyncratic paths).
    pub fn idio(&self, k: usize, i: usize) -> f64 {
        self.idiosyncratic
            .as_ref()
            .map_or(0.0, |(n, w)| w[k * n + i])
    }

    pub fn idio_particles(&self) -> usize {
        self.idiosyncratic.as_ref().map_or(0, |(n, _)| *n)
    }

    /// Idiosyncratic paths reassigned so particle `i` gets old path
    /// `map[i]`; covers permutations and duplication (`map[i] = i / m`).
    pub fn reindexed(&self, map: &[usize]) -> Self {
        let mut out = self.clone();
        if let Some((n, w)) = &self.idiosyncratic {
            let len = map.len();
            let mut v = vec![0.0; self.grid.steps() * len];
            for k in 0..self.grid.steps() {
                for (i, &src) in map.iter().enumerate() {
                    v[k * len + i] = w[k * n + src];
                }
            }
            out.idiosyncratic = Some((len, v));
        }
        out
    }
}

/// Particle trajectories on a grid.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    n: usize,
    states: Vec<f64>,
    labels: Vec<f64>,
    seed: u64,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    /// States of all particles at node `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn terminal(&self) -> &[f64] {
        self.row(self.grid.steps())
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn measure(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::from_slice(self.row(k)).expect("finite nonempty row")
    }

    /// Trajectory dump with columns `t, particle_index, state`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = (0..self.grid.nodes()).flat_map(|k| {
            let t = self.grid.time(k);
            self.row(k)
                .iter()
                .enumerate()
                .map(move |(i, x)| vec![t, i as f64, *x])
        });
        write_csv_to(&mut out, &["t", "particle_index", "state"], rows)
    }
}

fn check_inputs(
    model: &ModelSpec,
    theta: &ControlPath,
    x0: &Samples,
    noise: &NoiseBundle,
) -> Result<()> {
    if theta.grid() != noise.grid() {
        return Err(Error::InvalidInput("control and noise grids differ".into()));
    }
    if theta.dim() != model.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.control_dim(),
            found: theta.dim(),
        });
    }
    if model.epsilon() != 0.0 && noise.idio_particles() != x0.len() {
        return Err(Error::InvalidInput(format!(
            "epsilon > 0 needs {} idiosyncratic paths, bundle has {}",
            x0.len(),
            noise.idio_particles()
        )));
    }
    Ok(())
}

/// `X_{k+1} = X_k + f(t_k, theta_k, X_k, mu_k) dt + sigma dW0_k + epsilon dW^i_k`.
pub fn simulate(
    model: &ModelSpec,
    theta: &ControlPath,
    x0: &Samples,
    noise: &NoiseBundle,
) -> Result<ParticleEnsemble> {
    check_inputs(model, theta, x0, noise)?;
    let grid = *theta.grid();
    let n = x0.len();
    let dt = grid.dt();
    let drift = model.drift();
    let (sigma, eps) = (model.sigma(), model.epsilon());
    let mut states = Vec::with_capacity(grid.nodes() * n);
    states.extend_from_slice(x0.x());
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let th = theta.at(k);
        let row = &states[k * n..(k + 1) * n];
        let mu = EmpiricalMeasure::from_slice(row).map_err(|_| Error::IntegrationDiverged {
            step: k,
            magnitude: f64::INFINITY,
        })?;
        let dw0 = sigma * noise.common[k];
        let mut next = Vec::with_capacity(n);
        for (i, &x) in row.iter().enumerate() {
            let mut y = x + drift.value(t, th, x, &mu) * dt + dw0;
            if eps != 0.0 {
                y += eps * noise.idio(k, i);
            }
            if !y.is_finite() || y.abs() > BLOW_UP {
                return Err(Error::IntegrationDiverged {
                    step: k + 1,
                    magnitude: y.abs(),
                });
            }
            next.push(y);
        }
        states.extend_from_slice(&next);
    }
    Ok(ParticleEnsemble {
        grid,
        n,
        states,
        labels: x0.labels().to_vec(),
        seed: noise.seed,
    })
}

/// Running plus terminal cost of one realized ensemble (regularizer excluded).
pub fn path_cost(model: &ModelSpec, ens: &ParticleEnsemble) -> f64 {
    let grid = ens.grid;
    let nf = ens.n as f64;
    let labels = &ens.labels;
    let mut running = 0.0;
    if !model.running().is_zero() {
        for k in 0..grid.steps() {
            running += ens
                .row(k)
                .iter()
                .zip(labels)
                .map(|(&x, &l)| model.running().value(x, l))
                .sum::<f64>();
        }
        running *= grid.dt() / nf;
    }
    let terminal = ens
        .terminal()
        .iter()
        .zip(labels)
        .map(|(&x, &l)| model.terminal().value(x, l))
        .sum::<f64>()
        / nf;
    running + terminal
}

/// `(lambda/2) int |theta - eta|^2 dt` with left-endpoint quadrature.
pub fn regularizer_cost(model: &ModelSpec, theta: &ControlPath) -> f64 {
    0.5 * model.lambda() * theta.energy(model.reference())
}

/// Monte-Carlo objective over a batch of noise bundles; exact when the model
/// is deterministic. Batches run in parallel and are summed in batch order.
pub fn objective(
    model: &ModelSpec,
    theta: &ControlPath,
    x0: &Samples,
    batch: &[NoiseBundle],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput(
            "objective needs at least one noise bundle".into(),
        ));
    }
    let costs: Vec<f64> = batch
        .par_iter()
        .map(|nb| simulate(model, theta, x0, nb).map(|e| path_cost(model, &e)))
        .collect::<Result<_>>()?;
    Ok(costs.iter().sum::<f64>() / batch.len() as f64 + regularizer_cost(model, theta))
}

/// Second-moment audit record.
#[derive(Clone, Debug, Serialize)]
pub struct MomentAudit {
    /// `max_t E|X^i_t|^2` per particle.
    pub max_moment: Vec<f64>,
    /// `1 + |x_i|^2 + int |f(s, theta_s, 0, delta_0)|^2 ds + (1/N) sum |x_j|^2`.
    pub envelope: Vec<f64>,
    pub c1: f64,
    pub violated: bool,
}

impl MomentAudit {
    /// Smallest constant for which the audit would pass.
    pub fn required_c1(&self) -> f64 {
        self.max_moment
            .iter()
            .zip(&self.envelope)
            .map(|(m, e)| m / e)
            .fold(0.0, f64::max)
    }
}

/// Compare `max_t E|X^i_t|^2` (averaged over the ensembles) with the
/// envelope scaled by `c1`.
pub fn moment_audit(
    ensembles: &[ParticleEnsemble],
    theta: &ControlPath,
    model: &ModelSpec,
    c1: f64,
) -> Result<MomentAudit> {
    let first = ensembles
        .first()
        .ok_or_else(|| Error::InvalidInput("moment audit needs an ensemble".into()))?;
    let grid = first.grid;
    let n = first.n;
    let x0 = first.row(0);
    let origin = EmpiricalMeasure::dirac(0.0);
    let control_term: f64 = (0..grid.steps())
        .map(|k| {
            model
                .drift()
                .value(grid.time(k), theta.at(k), 0.0, &origin)
                .powi(2)
        })
        .sum::<f64>()
        * grid.dt();
    let m2 = x0.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let mut max_moment = vec![0.0f64; n];
    for k in 0..grid.nodes() {
        for (i, mm) in max_moment.iter_mut().enumerate() {
            let e = ensembles.iter().map(|en| en.row(k)[i].powi(2)).sum::<f64>()
                / ensembles.len() as f64;
            *mm = mm.max(e);
        }
    }
    let envelope: Vec<f64> = x0.iter().map(|x| 1.0 + x * x + control_term + m2).collect();
    let violated = max_moment.iter().zip(&envelope).any(|(m, e)| *m > c1 * e);
    Ok(MomentAudit {
        max_moment,
        envelope,
        c1,
        violated,
    })
}
