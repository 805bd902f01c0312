//! Particle-count ladders testing duplication invariance, Lipschitz
//! continuity in Wasserstein distance and pathwise convergence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wasserstein, EmpiricalMeasure, ModelSpec, Order, Samples, TimeGrid};
use crate::simulator::{simulate, NoiseBundle};
use crate::solver::{solve, value_gradient_fd, SolveOptions, SolveReport};
use crate::stats::{loglog_fit, LineFit, Sampler};

/// Outcome of [`duplication_test`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DuplicationResult {
    pub n: usize,
    pub base_value: f64,
    /// `(m, |V_N(x) - V_{Nm}(dup(x, m))|)`.
    pub gaps: Vec<(usize, f64)>,
    /// `(m, max_i |P_0^i(x) - sum over copies of P_0(dup)|)`.
    pub gradient_gaps: Vec<(usize, f64)>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compare the value (and its state gradient) of `x0` with those of `x0`
/// duplicated `m` times, for each `m` in `m_list`. Passes if every value gap
/// is at most ten times the solver tolerance.
pub fn duplication_test(
    model: &ModelSpec,
    x0: &Samples,
    m_list: &[usize],
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<DuplicationResult> {
    let base = solve(model, x0, grid, opts)?;
    let n = x0.len();
    let runs: Vec<(usize, SolveReport)> = m_list
        .par_iter()
        .map(|&m| Ok((m, solve(model, &x0.duplicated(m)?, grid, opts)?)))
        .collect::<Result<_>>()?;
    let mut gaps = Vec::new();
    let mut gradient_gaps = Vec::new();
    for (m, r) in &runs {
        gaps.push((*m, (base.value - r.value).abs()));
        let g = (0..n)
            .map(|i| {
                let summed: f64 = r.costate0[i * m..(i + 1) * m].iter().sum();
                (base.costate0[i] - summed).abs()
            })
            .fold(0.0, f64::max);
        gradient_gaps.push((*m, g));
    }
    let tolerance = 10.0 * opts.tol;
    let pass = gaps.iter().all(|g| g.1 <= tolerance);
    Ok(DuplicationResult {
        n,
        base_value: base.value,
        gaps,
        gradient_gaps,
        tolerance,
        pass,
    })
}

/// Pair of equal-size sample sets.
pub type SamplePair = (Samples, Samples);

/// Build pairs `(x, y)` with `x` drawn from `sampler` and
/// `y = x + delta (s + xi)`: a common shift `s` in `[-1, 1]` plus independent
/// `xi` in `[-1, 1]` per atom.
pub fn perturbed_pairs(
    sampler: &Sampler,
    n: usize,
    count: usize,
    delta: f64,
    seed: u64,
) -> Result<Vec<SamplePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = sampler.draw_with(n, &mut rng);
            let s: f64 = rng.random_range(-1.0..1.0);
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + delta * (s + rng.random_range(-1.0..1.0)))
                .collect();
            Ok((Samples::new(x)?, Samples::new(y)?))
        })
        .collect()
}

fn m2(x: &Samples) -> f64 {
    x.measure().second_moment()
}

/// Fitted constants of the value-Lipschitz bound
/// `|V(mu) - V(nu)| <= c1 W2 + c2 [W2^2 + (m2(mu) + m2(nu)) W2]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueLipschitz {
    pub c1: f64,
    pub c2: f64,
    /// Largest `gap / bound` on the held-out pairs.
    pub validation_ratio: f64,
    pub pass: bool,
}

fn value_features(
    model: &ModelSpec,
    pairs: &[SamplePair],
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<Vec<(f64, f64, f64)>> {
    pairs
        .par_iter()
        .map(|(a, b)| {
            let gap =
                (solve(model, a, grid, opts)?.value - solve(model, b, grid, opts)?.value).abs();
            let w2 = wasserstein(&a.measure(), &b.measure(), Order::W2);
            Ok((w2, w2 * w2 + (m2(a) + m2(b)) * w2, gap))
        })
        .collect()
}

/// Smallest `(c1, c2) >= 0` (in the sense of the mean bound) such that
/// `c1 u_i + c2 v_i >= g_i` for every calibration row.
fn fit_two_constants(rows: &[(f64, f64, f64)]) -> (f64, f64) {
    let mut cands = vec![];
    for &(u, v, g) in rows {
        if u > 0.0 {
            cands.push((g / u, 0.0));
        }
        if v > 0.0 {
            cands.push((0.0, g / v));
        }
    }
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let det = a.0 * b.1 - a.1 * b.0;
            if det.abs() > 1e-300 {
                let c1 = (a.2 * b.1 - a.1 * b.2) / det;
                let c2 = (a.0 * b.2 - a.2 * b.0) / det;
                if c1 >= 0.0 && c2 >= 0.0 {
                    cands.push((c1, c2));
                }
            }
        }
    }
    let mu = rows.iter().map(|r| r.0).sum::<f64>();
    let mv = rows.iter().map(|r| r.1).sum::<f64>();
    cands
        .into_iter()
        .filter(|(c1, c2)| {
            rows.iter()
                .all(|r| c1 * r.0 + c2 * r.1 >= r.2 * (1.0 - 1e-12))
        })
        .min_by(|a, b| (a.0 * mu + a.1 * mv).total_cmp(&(b.0 * mu + b.1 * mv)))
        .unwrap_or((0.0, 0.0))
}

/// Fit the value-Lipschitz constants on `calibration` and check them on
/// `validation` (ratio of gap to fitted bound at most `1 + slack`).
pub fn value_lipschitz_test(
    model: &ModelSpec,
    calibration: &[SamplePair],
    validation: &[SamplePair],
    grid: TimeGrid,
    opts: &SolveOptions,
    slack: f64,
) -> Result<ValueLipschitz> {
    let (c1, c2) = fit_two_constants(&value_features(model, calibration, grid, opts)?);
    let mut ratio: f64 = 0.0;
    for (u, v, g) in value_features(model, validation, grid, opts)? {
        let bound = c1 * u + c2 * v;
        if g > 0.0 {
            ratio = ratio.max(if bound > 0.0 {
                g / bound
            } else {
                f64::INFINITY
            });
        }
    }
    Ok(ValueLipschitz {
        c1,
        c2,
        validation_ratio: ratio,
        pass: ratio <= 1.0 + slack,
    })
}

/// Max over pairs of `|theta*(0, mu) - theta*(0, nu)| / W_p(mu, nu)` (pairs
/// of identical measures contribute zero).
pub fn feedback_lipschitz_test(
    model: &ModelSpec,
    pairs: &[SamplePair],
    grid: TimeGrid,
    opts: &SolveOptions,
    order: Order,
) -> Result<f64> {
    let ratios: Vec<f64> = pairs
        .par_iter()
        .map(|(a, b)| {
            let w = wasserstein(&a.measure(), &b.measure(), order);
            if w == 0.0 {
                return Ok(0.0);
            }
            let ta = solve(model, a, grid, opts)?;
            let tb = solve(model, b, grid, opts)?;
            let d: f64 = ta
                .theta_star
                .at(0)
                .iter()
                .zip(tb.theta_star.at(0))
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            Ok(d / w)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Source of `grad_x V_N` for [`gradient_map_lipschitz_test`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// Central differences of solved values.
    FiniteDifference,
    /// Discrete adjoint at `t = 0` (exact for the discretized problem).
    Adjoint,
}

fn value_gradient(
    model: &ModelSpec,
    x: &Samples,
    grid: TimeGrid,
    opts: &SolveOptions,
    source: GradientSource,
) -> Result<Vec<f64>> {
    match source {
        GradientSource::FiniteDifference => value_gradient_fd(model, x, grid, opts, 1e-4),
        GradientSource::Adjoint => Ok(solve(model, x, grid, opts)?.costate0),
    }
}

/// Max over pairs of
/// `(1/N) sum_i |N dV(x)_i - N dV(y)_i|^2 / ((1/N) sum_i |x_i - y_i|^2)`.
pub fn gradient_map_lipschitz_test(
    model: &ModelSpec,
    pairs: &[SamplePair],
    grid: TimeGrid,
    opts: &SolveOptions,
    source: GradientSource,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (a, b) in pairs {
        let n = a.len() as f64;
        let den = a
            .x()
            .iter()
            .zip(b.x())
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            / n;
        if den == 0.0 {
            continue;
        }
        let ga = value_gradient(model, a, grid, opts, source)?;
        let gb = value_gradient(model, b, grid, opts, source)?;
        let num = ga
            .iter()
            .zip(&gb)
            .map(|(u, v)| (n * (u - v)).powi(2))
            .sum::<f64>()
            / n;
        worst = worst.max(num / den);
    }
    Ok(worst)
}

/// Results of a nested particle-count ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderResult {
    pub ns: Vec<usize>,
    pub values: Vec<f64>,
    /// `theta*_N(0)` per rung.
    pub feedbacks: Vec<Vec<f64>>,
    /// `W1(mu_N(0), mu_2N(0))` for consecutive rungs.
    pub wasserstein_gaps: Vec<f64>,
    /// `W2(mu_N(0), mu_2N(0))` for consecutive rungs.
    pub wasserstein2_gaps: Vec<f64>,
    /// `sup_t |theta^(N)(t) - theta^(2N)(t)|`.
    pub param_gaps: Vec<f64>,
    /// `max_t W1(mu*_N(t), mu*_2N(t))` along the optimal trajectories.
    pub trajectory_gaps: Vec<f64>,
    /// `|V_N - V_2N|`.
    pub value_gaps: Vec<f64>,
    /// Log-log fits against the rung size `N` of the smaller member of each pair.
    pub slopes: Vec<(String, LineFit)>,
    pub constants: Vec<(String, f64)>,
}

impl LadderResult {
    pub fn slope(&self, name: &str) -> Option<LineFit> {
        self.slopes.iter().find(|s| s.0 == name).map(|s| s.1)
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|s| s.0 == name).map(|s| s.1)
    }
}

/// Solved rung: report plus the optimal trajectory measures.
pub struct Rung {
    pub samples: Samples,
    pub report: SolveReport,
    pub trajectory: Vec<EmpiricalMeasure>,
}

pub fn solve_rung(
    model: &ModelSpec,
    samples: Samples,
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<Rung> {
    let report = solve(model, &samples, grid, opts)?;
    let ens = simulate(
        model,
        &report.theta_star,
        &samples,
        &NoiseBundle::zero(grid),
    )?;
    let trajectory = (0..grid.nodes()).map(|k| ens.measure(k)).collect();
    Ok(Rung {
        samples,
        report,
        trajectory,
    })
}

/// Gaps between two solved rungs: `(W1(0), W2(0), param, trajectory, value)`.
pub fn rung_gaps(a: &Rung, b: &Rung) -> (f64, f64, f64, f64, f64) {
    let ma = a.samples.measure();
    let mb = b.samples.measure();
    let traj = a
        .trajectory
        .iter()
        .zip(&b.trajectory)
        .map(|(u, v)| wasserstein(u, v, Order::W1))
        .fold(0.0, f64::max);
    (
        wasserstein(&ma, &mb, Order::W1),
        wasserstein(&ma, &mb, Order::W2),
        a.report.theta_star.sup_distance(&b.report.theta_star),
        traj,
        (a.report.value - b.report.value).abs(),
    )
}

/// Solve every rung of a nested ladder (rung `N` uses the first `N` samples
/// of one draw) and collect consecutive-rung gaps.
pub fn pathwise_convergence_test(
    model: &ModelSpec,
    samples: &Samples,
    ns: &[usize],
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<LadderResult> {
    if ns.windows(2).any(|w| w[0] >= w[1]) || ns.is_empty() {
        return Err(Error::InvalidInput(
            "ladder sizes must be strictly increasing".into(),
        ));
    }
    let rungs: Vec<Rung> = ns
        .par_iter()
        .map(|&n| solve_rung(model, samples.prefix(n)?, grid, opts))
        .collect::<Result<_>>()?;
    let mut out = LadderResult {
        ns: ns.to_vec(),
        values: rungs.iter().map(|r| r.report.value).collect(),
        feedbacks: rungs
            .iter()
            .map(|r| r.report.theta_star.at(0).to_vec())
            .collect(),
        wasserstein_gaps: vec![],
        wasserstein2_gaps: vec![],
        param_gaps: vec![],
        trajectory_gaps: vec![],
        value_gaps: vec![],
        slopes: vec![],
        constants: vec![],
    };
    for w in rungs.windows(2) {
        let (w1, w2, p, t, v) = rung_gaps(&w[0], &w[1]);
        out.wasserstein_gaps.push(w1);
        out.wasserstein2_gaps.push(w2);
        out.param_gaps.push(p);
        out.trajectory_gaps.push(t);
        out.value_gaps.push(v);
    }
    if out.param_gaps.len() >= 2 {
        let xs: Vec<f64> = ns[..ns.len() - 1].iter().map(|&n| n as f64).collect();
        for (name, ys) in [
            ("w1_gap", &out.wasserstein_gaps),
            ("param_gap", &out.param_gaps),
            ("trajectory_gap", &out.trajectory_gaps),
        ] {
            if let Ok(f) = loglog_fit(&xs, ys) {
                out.slopes.push((name.to_string(), f));
            }
        }
    }
    Ok(out)
}

/// Calibration probes for the pathwise constant at a fixed sample set:
/// a rigid translation, a dilation about the mean and independent jitter.
pub fn calibration_probes(
    x: &Samples,
    delta: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Samples>> {
    let mean = x.measure().mean();
    let mut out = vec![
        x.with_x(x.x().iter().map(|v| v + delta).collect())?,
        x.with_x(
            x.x()
                .iter()
                .map(|v| mean + (1.0 + delta) * (v - mean))
                .collect(),
        )?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let s: f64 = rng.random_range(-1.0..1.0);
        out.push(
            x.with_x(
                x.x()
                    .iter()
                    .map(|v| v + delta * (s + rng.random_range(-1.0..1.0)))
                    .collect(),
            )?,
        );
    }
    Ok(out)
}

/// Pathwise constant `C` with `param_gap <= C W1(0)` and
/// `trajectory_gap <= C W1(0)`, estimated as the largest ratio over the
/// calibration probes around `base`.
pub fn fit_pathwise_constant(
    model: &ModelSpec,
    base: &Samples,
    probes: &[Samples],
    grid: TimeGrid,
    opts: &SolveOptions,
) -> Result<f64> {
    let b = solve_rung(model, base.clone(), grid, opts)?;
    let ratios: Vec<f64> = probes
        .par_iter()
        .map(|p| {
            let r = solve_rung(model, p.clone(), grid, opts)?;
            let (w1, _, pg, tg, _) = rung_gaps(&b, &r);
            Ok(if w1 > 0.0 { pg.max(tg) / w1 } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    fn opts() -> SolveOptions {
        SolveOptions {
            tol: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn duplication_is_exact_for_free_dynamics() {
        let g = TimeGrid::horizon(1.0, 20).unwrap();
        let x0 = Samples::new(vec![0.3, -0.8]).unwrap();
        let r = duplication_test(&presets::zero(), &x0, &[2, 3], g, &opts()).unwrap();
        assert!(r.pass);
        assert!(r.gaps.iter().all(|g| g.1 < 1e-14));
    }

    #[test]
    fn duplication_on_lq() {
        let g = TimeGrid::horizon(1.0, 50).unwrap();
        let x0 = Samples::new(vec![0.7, 1.2]).unwrap();
        let r = duplication_test(&presets::lq(), &x0, &[2], g, &opts()).unwrap();
        assert!(r.gaps[0].1 < 1e-6);
        assert!(r.gradient_gaps[0].1 < 1e-9, "{:?}", r.gradient_gaps);
    }

    #[test]
    fn identical_pairs_have_zero_ratio() {
        let g = TimeGrid::horizon(1.0, 20).unwrap();
        let x = Samples::new(vec![0.1, 0.5]).unwrap();
        let pairs = vec![(x.clone(), x)];
        assert_eq!(
            feedback_lipschitz_test(&presets::lq(), &pairs, g, &opts(), Order::W1).unwrap(),
            0.0
        );
    }

    #[test]
    fn lq_feedback_depends_on_mean_only() {
        // Pairs with the same mean shift give the same feedback change.
        let g = TimeGrid::horizon(1.0, 40).unwrap();
        let m = presets::lq();
        let a = solve(&m, &Samples::new(vec![0.0, 1.0]).unwrap(), g, &opts()).unwrap();
        let b = solve(&m, &Samples::new(vec![0.2, 1.2]).unwrap(), g, &opts()).unwrap();
        let c = solve(&m, &Samples::new(vec![0.4, 1.0]).unwrap(), g, &opts()).unwrap();
        let d1 = b.theta_star.at(0)[0] - a.theta_star.at(0)[0];
        let d2 = c.theta_star.at(0)[0] - a.theta_star.at(0)[0];
        assert!((d1 - d2).abs() < 1e-8);
    }

    #[test]
    fn lq_gradient_map_ratio_is_constant_for_translations() {
        let g = TimeGrid::horizon(0.5, 20).unwrap();
        let m = presets::lq();
        let x = Samples::new(vec![0.1, 0.6, 1.0]).unwrap();
        let r1 = gradient_map_lipschitz_test(
            &m,
            &[(x.clone(), x.with_x(vec![0.2, 0.7, 1.1]).unwrap())],
            g,
            &opts(),
            GradientSource::Adjoint,
        )
        .unwrap();
        let r2 = gradient_map_lipschitz_test(
            &m,
            &[(x.clone(), x.with_x(vec![0.4, 0.9, 1.3]).unwrap())],
            g,
            &opts(),
            GradientSource::Adjoint,
        )
        .unwrap();
        assert!((r1 - r2).abs() < 1e-6 * r1);
        let fd = gradient_map_lipschitz_test(
            &m,
            &[(x.clone(), x.with_x(vec![0.2, 0.7, 1.1]).unwrap())],
            g,
            &opts(),
            GradientSource::FiniteDifference,
        )
        .unwrap();
        assert!((fd - r1).abs() < 1e-4 * r1);
    }

    #[test]
    fn duplicated_rungs_have_zero_gaps() {
        let g = TimeGrid::horizon(1.0, 20).unwrap();
        let m = presets::lq();
        let a = solve_rung(&m, Samples::new(vec![0.5, 1.0]).unwrap(), g, &opts()).unwrap();
        let b = solve_rung(
            &m,
            Samples::new(vec![0.5, 0.5, 1.0, 1.0]).unwrap(),
            g,
            &opts(),
        )
        .unwrap();
        let (w1, _, p, t, v) = rung_gaps(&a, &b);
        assert_eq!(w1, 0.0);
        assert!(p < 1e-9 && t < 1e-9 && v < 1e-12);
    }

    #[test]
    fn value_constants_cover_translations() {
        let g = TimeGrid::horizon(0.5, 20).unwrap();
        let m = presets::lq();
        let s = Sampler::Uniform { lo: -1.0, hi: 1.0 };
        let cal = perturbed_pairs(&s, 4, 6, 0.1, 1).unwrap();
        let val = perturbed_pairs(&s, 4, 6, 0.1, 2).unwrap();
        let r = value_lipschitz_test(&m, &cal, &val, g, &opts(), 1.0).unwrap();
        assert!(r.c1 + r.c2 > 0.0);
        assert!(r.pass, "{r:?}");
    }
}
