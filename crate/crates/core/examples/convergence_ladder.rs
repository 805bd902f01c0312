//! Particle-count ladder on the LQ model: duplication invariance, nested
//! Cauchy gaps against Wasserstein gaps, and the feedback Lipschitz ratio.

use mfc_lab::lab::{
    calibration_probes, duplication_test, feedback_lipschitz_test, fit_pathwise_constant,
    pathwise_convergence_test, perturbed_pairs,
};
use mfc_lab::model::{presets, Order, Samples, TimeGrid};
use mfc_lab::solver::SolveOptions;
use mfc_lab::stats::Sampler;

fn main() -> mfc_lab::Result<()> {
    let model = presets::lq();
    let grid = TimeGrid::horizon(1.0, 100)?;
    let opts = SolveOptions {
        tol: 1e-10,
        ..Default::default()
    };
    let sampler = Sampler::Uniform { lo: 0.5, hi: 1.5 };

    let dup = duplication_test(
        &model,
        &Samples::new(sampler.draw(2, 1))?,
        &[2, 3],
        grid,
        &opts,
    )?;
    println!("duplication gaps {:?} (pass: {})", dup.gaps, dup.pass);

    let ns = [8, 16, 32, 64, 128];
    let all = Samples::new(sampler.draw(128, 9))?;
    let lad = pathwise_convergence_test(&model, &all, &ns, grid, &opts)?;
    println!(
        "\n{:>5} {:>10} {:>10} {:>10} {:>10}",
        "N", "W1 gap", "param gap", "path gap", "ratio"
    );
    for (k, n) in ns.iter().take(lad.param_gaps.len()).enumerate() {
        let (w, p, t) = (
            lad.wasserstein_gaps[k],
            lad.param_gaps[k],
            lad.trajectory_gaps[k],
        );
        println!(
            "{n:>5} {w:>10.4e} {p:>10.4e} {t:>10.4e} {:>10.4}",
            p.max(t) / w
        );
    }
    for (name, fit) in &lad.slopes {
        println!("{name}: slope {:.3}, R^2 {:.3}", fit.slope, fit.r2);
    }
    let base = all.prefix(8)?;
    let c_hat = fit_pathwise_constant(
        &model,
        &base,
        &calibration_probes(&base, 0.05, 16, 1)?,
        grid,
        &opts,
    )?;
    println!("pathwise constant calibrated around the first rung: {c_hat:.4}");

    let short = model.with_horizon(0.5)?;
    let g_short = TimeGrid::horizon(0.5, 50)?;
    for n in [4, 8, 16] {
        let pairs = perturbed_pairs(&sampler, n, 50, 0.1, n as u64)?;
        let c = feedback_lipschitz_test(&short, &pairs, g_short, &opts, Order::W1)?;
        println!("N = {n:>2}: max |d theta*(0)| / W1 = {c:.4}");
    }
    Ok(())
}
