//! Supervised learning with a controlled flow map: inputs are transported by
//! the two-layer drift and the terminal state is scored against its label.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_csv_to;
use crate::model::{ControlPath, ModelSpec, Samples, TimeGrid};
use crate::simulator::{objective, simulate, NoiseBundle};
use crate::solver::{solve, SolveOptions, SolveReport};
use crate::stats::{loglog_fit, ols, LineFit, Sampler};

/// Target function generating the labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Target {
    Sin,
    Identity,
    Constant { value: f64 },
}

impl Target {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Target::Sin => x.sin(),
            Target::Identity => x,
            Target::Constant { value } => *value,
        }
    }
}

/// Input-label pairs `(x_i, F(x_i))` with inputs drawn uniformly from `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub target: Target,
    pub domain: (f64, f64),
    samples: Samples,
}

impl LabeledDataset {
    /// Draw `n` inputs; a smaller `n` with the same seed is a prefix.
    pub fn generate(target: Target, domain: (f64, f64), n: usize, seed: u64) -> Result<Self> {
        let (lo, hi) = domain;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidInput(format!(
                "empty input domain [{lo}, {hi}]"
            )));
        }
        let x = Sampler::Uniform { lo, hi }.draw(n, seed);
        Self::from_inputs(target, domain, x)
    }

    pub fn from_inputs(target: Target, domain: (f64, f64), x: Vec<f64>) -> Result<Self> {
        if x.iter().any(|v| *v < domain.0 || *v > domain.1) {
            return Err(Error::InvalidInput(
                "inputs must lie in the sampling domain".into(),
            ));
        }
        let y = x.iter().map(|&v| target.eval(v)).collect();
        Ok(Self {
            target,
            domain,
            samples: Samples::labeled(x, y)?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &Samples {
        &self.samples
    }

    pub fn prefix(&self, n: usize) -> Result<Self> {
        Ok(Self {
            target: self.target,
            domain: self.domain,
            samples: self.samples.prefix(n)?,
        })
    }

    /// CSV with columns `x, y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = self
            .samples
            .x()
            .iter()
            .zip(self.samples.labels())
            .map(|(&x, &y)| vec![x, y]);
        write_csv_to(&mut out, &["x", "y"], rows)
    }
}

/// Train the flow map: a deterministic solve with labels frozen alongside
/// the states.
pub fn train_flow_map(
    model: &ModelSpec,
    data: &LabeledDataset,
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if !model.is_deterministic() {
        return Err(Error::InvalidInput(
            "flow-map training needs sigma = epsilon = 0".into(),
        ));
    }
    solve(model, data.samples(), grid, opts)
}

/// Mean terminal loss `(1/N) sum Phi(X_T^i, y_i)` of `theta` on `data`.
pub fn empirical_risk(
    model: &ModelSpec,
    theta: &ControlPath,
    data: &LabeledDataset,
) -> Result<f64> {
    let ens = simulate(
        model,
        theta,
        data.samples(),
        &NoiseBundle::zero(*theta.grid()),
    )?;
    let n = ens.particles() as f64;
    Ok(ens
        .terminal()
        .iter()
        .zip(ens.labels())
        .map(|(&x, &y)| model.terminal().value(x, y))
        .sum::<f64>()
        / n)
}

/// Boundedness checks on a trained parameter path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParameterAudit {
    pub n: usize,
    /// `sup_t |theta*(t)|`.
    pub theta_sup: f64,
    /// `N max_i |d_{x_i} V_N|`.
    pub scaled_gradient: f64,
    /// `int |theta* - eta|^2`.
    pub energy: f64,
    /// `2 J(eta) / lambda`.
    pub energy_bound: f64,
    pub c_fit: f64,
    pub pass: bool,
}

/// Audit a trained report. With `c_fit = None` the constant is taken from
/// this report (`max(theta_sup, scaled_gradient)`), so the bounds hold
/// trivially; pass the constant from the smallest rung to check larger ones.
pub fn parameter_bound_audit(
    report: &SolveReport,
    model: &ModelSpec,
    data: &LabeledDataset,
    c_fit: Option<f64>,
) -> Result<ParameterAudit> {
    let n = data.len();
    let theta_sup = report.theta_star.sup_norm();
    let scaled_gradient = n as f64 * report.costate0.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let grid = *report.theta_star.grid();
    let energy = report.theta_star.energy(model.reference());
    let eta: Vec<f64> = (0..model.control_dim()).map(|j| model.eta(j)).collect();
    let j_eta = objective(
        model,
        &ControlPath::constant(grid, &eta),
        data.samples(),
        &[NoiseBundle::zero(grid)],
    )?;
    let energy_bound = 2.0 * j_eta / model.lambda();
    let c_fit = c_fit.unwrap_or(theta_sup.max(scaled_gradient));
    let pass =
        theta_sup <= c_fit && scaled_gradient <= c_fit && energy <= energy_bound * (1.0 + 1e-9);
    Ok(ParameterAudit {
        n,
        theta_sup,
        scaled_gradient,
        energy,
        energy_bound,
        c_fit,
        pass,
    })
}

/// `W1` between two labeled sample sets: both are expanded to a common atom
/// count, sorted by input, and paired in that order with Euclidean ground
/// cost on `(x, y)`.
pub fn joint_wasserstein(a: &Samples, b: &Samples) -> Result<f64> {
    let (na, nb) = (a.len(), b.len());
    let l = lcm(na, nb);
    let sorted = |s: &Samples, m: usize| -> Result<Vec<(f64, f64)>> {
        let d = s.duplicated(m)?;
        let mut v: Vec<(f64, f64)> = d
            .x()
            .iter()
            .copied()
            .zip(d.labels().iter().copied())
            .collect();
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(v)
    };
    let u = sorted(a, l / na)?;
    let v = sorted(b, l / nb)?;
    Ok(u.iter()
        .zip(&v)
        .map(|(p, q)| (p.0 - q.0).hypot(p.1 - q.1))
        .sum::<f64>()
        / l as f64)
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Settings for [`generalization_ladder`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedOptions {
    pub domain: (f64, f64),
    /// Independent nested ladders whose gaps are averaged.
    pub replicates: usize,
    pub heldout: usize,
    pub heldout_seed: u64,
    /// Headroom applied to the constant fitted at the smallest rung.
    pub c_headroom: f64,
}

impl Default for SupervisedOptions {
    fn default() -> Self {
        Self {
            domain: (-1.0, 1.0),
            replicates: 1024,
            heldout: 256,
            heldout_seed: 1_000_003,
            c_headroom: 2.0,
        }
    }
}

/// Replicate-averaged results of a supervised ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupervisedLadder {
    pub ns: Vec<usize>,
    /// Mean of `sup_t |theta^(N) - theta^(2N)|` per consecutive rung pair.
    pub param_gaps: Vec<f64>,
    /// Mean joint input-label `W1` gap per consecutive rung pair.
    pub wasserstein_gaps: Vec<f64>,
    /// `log(param_gap)` against `log(W1 gap)`.
    pub joint_fit: LineFit,
    /// `log(param_gap)` against `log(N)`.
    pub param_fit: Option<LineFit>,
    /// Mean held-out risk per rung.
    pub heldout_risk: Vec<f64>,
    /// Mean training risk per rung.
    pub train_risk: Vec<f64>,
    /// Mean `sup_t |theta*|` per rung.
    pub theta_sup: Vec<f64>,
    /// Mean `N max_i |d_i V_N|` per rung.
    pub scaled_gradient: Vec<f64>,
    pub c_fit: f64,
    /// Every bound within `c_fit` and every energy bound satisfied.
    pub audit_pass: bool,
    /// Count of rungs whose held-out risk exceeds the previous rung's.
    pub risk_inversions: usize,
}

impl SupervisedLadder {
    /// CSV with columns `n, train_risk, heldout_risk`.
    pub fn write_risk_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let rows = (0..self.ns.len())
            .map(|k| vec![self.ns[k] as f64, self.train_risk[k], self.heldout_risk[k]]);
        write_csv_to(&mut out, &["n", "train_risk", "heldout_risk"], rows)
    }
}

struct RungOutcome {
    theta: ControlPath,
    train: f64,
    heldout: f64,
    audit: ParameterAudit,
    data: LabeledDataset,
}

/// Train on nested prefixes of `opts.replicates` independent datasets and
/// average the rung-to-rung parameter gaps, joint `W1` gaps, risks and
/// bound-audit quantities.
pub fn generalization_ladder(
    model: &ModelSpec,
    target: Target,
    ns: &[usize],
    seed: u64,
    grid: TimeGrid,
    solve_opts: &SolveOptions,
    opts: &SupervisedOptions,
) -> Result<SupervisedLadder> {
    if ns.len() < 2 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "ladder needs at least two strictly increasing sizes".into(),
        ));
    }
    if opts.replicates == 0 {
        return Err(Error::InvalidInput(
            "at least one replicate required".into(),
        ));
    }
    let heldout = LabeledDataset::generate(target, opts.domain, opts.heldout, opts.heldout_seed)?;
    let n_max = *ns.last().expect("nonempty ladder");
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let rep_seeds: Vec<u64> = (0..opts.replicates)
        .map(|_| rand::Rng::random(&mut seeds))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..opts.replicates)
        .flat_map(|r| (0..ns.len()).map(move |k| (r, k)))
        .collect();
    let outcomes: Vec<RungOutcome> = jobs
        .par_iter()
        .map(|&(r, k)| {
            let data = LabeledDataset::generate(target, opts.domain, n_max, rep_seeds[r])?
                .prefix(ns[k])?;
            let report = train_flow_map(model, &data, grid, solve_opts)?;
            Ok(RungOutcome {
                train: empirical_risk(model, &report.theta_star, &data)?,
                heldout: empirical_risk(model, &report.theta_star, &heldout)?,
                audit: parameter_bound_audit(&report, model, &data, None)?,
                theta: report.theta_star,
                data,
            })
        })
        .collect::<Result<_>>()?;
    let at = |r: usize, k: usize| &outcomes[r * ns.len() + k];
    let reps = opts.replicates as f64;
    let rungs = ns.len();
    let mean_over = |f: &dyn Fn(&RungOutcome) -> f64, k: usize| {
        (0..opts.replicates).map(|r| f(at(r, k))).sum::<f64>() / reps
    };

    let mut param_gaps = vec![0.0; rungs - 1];
    let mut wasserstein_gaps = vec![0.0; rungs - 1];
    for r in 0..opts.replicates {
        for k in 0..rungs - 1 {
            param_gaps[k] += at(r, k).theta.sup_distance(&at(r, k + 1).theta) / reps;
            wasserstein_gaps[k] +=
                joint_wasserstein(at(r, k).data.samples(), at(r, k + 1).data.samples())? / reps;
        }
    }
    let lw: Vec<f64> = wasserstein_gaps.iter().map(|v| v.ln()).collect();
    let lp: Vec<f64> = param_gaps.iter().map(|v| v.ln()).collect();
    let joint_fit = ols(&lw, &lp)?;
    let nf: Vec<f64> = ns[..rungs - 1].iter().map(|&n| n as f64).collect();
    let param_fit = loglog_fit(&nf, &param_gaps).ok();

    let theta_sup: Vec<f64> = (0..rungs)
        .map(|k| mean_over(&|o| o.audit.theta_sup, k))
        .collect();
    let scaled_gradient: Vec<f64> = (0..rungs)
        .map(|k| mean_over(&|o| o.audit.scaled_gradient, k))
        .collect();
    let c_fit = opts.c_headroom * theta_sup[0].max(scaled_gradient[0]);
    let energy_ok = outcomes
        .iter()
        .all(|o| o.audit.energy <= o.audit.energy_bound * (1.0 + 1e-9));
    let audit_pass = energy_ok
        && theta_sup
            .iter()
            .chain(&scaled_gradient)
            .all(|&v| v <= c_fit);
    let heldout_risk: Vec<f64> = (0..rungs).map(|k| mean_over(&|o| o.heldout, k)).collect();
    let train_risk: Vec<f64> = (0..rungs).map(|k| mean_over(&|o| o.train, k)).collect();
    let risk_inversions = heldout_risk.windows(2).filter(|w| w[1] > w[0]).count();
    Ok(SupervisedLadder {
        ns: ns.to_vec(),
        param_gaps,
        wasserstein_gaps,
        joint_fit,
        param_fit,
        heldout_risk,
        train_risk,
        theta_sup,
        scaled_gradient,
        c_fit,
        audit_pass,
        risk_inversions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use crate::simulator::regularizer_cost;

    #[test]
    fn labels_follow_target_and_nest() {
        let d = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 16, 4).unwrap();
        let p = d.prefix(8).unwrap();
        assert_eq!(p.samples().x(), &d.samples().x()[..8]);
        for (x, y) in d.samples().x().iter().zip(d.samples().labels()) {
            assert_eq!(*y, x.sin());
        }
    }

    #[test]
    fn identity_fixed_point_has_zero_risk() {
        // With eta = 0 the zero control is optimal: the flow fixes every input.
        let m = presets::two_layer()
            .with_reference(None)
            .unwrap()
            .with_terminal(std::sync::Arc::new(crate::model::SquaredError::default()));
        let d = LabeledDataset::from_inputs(Target::Identity, (-1.0, 1.0), vec![0.4]).unwrap();
        let g = TimeGrid::horizon(1.0, 20).unwrap();
        let r = train_flow_map(&m, &d, g, &SolveOptions::default()).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.theta_star.sup_norm(), 0.0);
        let a = parameter_bound_audit(&r, &m, &d, Some(1.0)).unwrap();
        assert!(a.pass);
    }

    #[test]
    fn zero_reference_matches_plain_regularizer() {
        let g = TimeGrid::horizon(1.0, 10).unwrap();
        let theta = ControlPath::constant(g, &[0.3, -0.7, 0.2]);
        let plain = presets::two_layer().with_reference(None).unwrap();
        let zero = presets::two_layer()
            .with_reference(Some(vec![0.0; 3]))
            .unwrap();
        assert_eq!(
            regularizer_cost(&plain, &theta).to_bits(),
            regularizer_cost(&zero, &theta).to_bits()
        );
        let x = Samples::labeled(vec![0.1, -0.5], vec![0.2, 0.0]).unwrap();
        let nb = [NoiseBundle::zero(g)];
        assert_eq!(
            objective(&plain, &theta, &x, &nb).unwrap().to_bits(),
            objective(&zero, &theta, &x, &nb).unwrap().to_bits()
        );
    }

    #[test]
    fn labels_are_conserved_by_the_flow() {
        let g = TimeGrid::horizon(1.0, 10).unwrap();
        let d = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 5, 2).unwrap();
        let theta = ControlPath::constant(g, &[1.0, 2.0, -0.5]);
        let e = simulate(
            &presets::two_layer(),
            &theta,
            d.samples(),
            &NoiseBundle::zero(g),
        )
        .unwrap();
        assert_eq!(e.labels(), d.samples().labels());
    }

    #[test]
    fn training_never_increases_risk_objective() {
        let m = presets::two_layer();
        let g = TimeGrid::horizon(1.0, 20).unwrap();
        let d = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 8, 0).unwrap();
        let r = train_flow_map(&m, &d, g, &SolveOptions::default()).unwrap();
        let eta = ControlPath::constant(g, &[0.0, 1.0, 0.0]);
        let at_ref = objective(&m, &eta, d.samples(), &[NoiseBundle::zero(g)]).unwrap();
        assert!(r.value <= at_ref);
        let a = parameter_bound_audit(&r, &m, &d, None).unwrap();
        assert!(a.pass, "{a:?}");
    }

    #[test]
    fn joint_distance_of_duplicate_is_zero() {
        let d = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 6, 1).unwrap();
        let dup = d.samples().duplicated(2).unwrap();
        assert_eq!(joint_wasserstein(d.samples(), &dup).unwrap(), 0.0);
        let other = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 6, 9).unwrap();
        assert!(joint_wasserstein(d.samples(), other.samples()).unwrap() > 0.0);
    }
}
