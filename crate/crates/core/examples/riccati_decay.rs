//! Second derivatives of V_N along the optimal path: off-diagonal entries
//! decay like 1/N^2, diagonal ones like 1/N, and the spectrum stays
//! nonnegative for the convex LQ model.

use mfc_lab::model::{presets, Samples, TimeGrid};
use mfc_lab::simulator::{simulate, NoiseBundle};
use mfc_lab::solver::{riccati_horizon, riccati_propagate, solve, SolveOptions};
use mfc_lab::stats::{loglog_fit, Sampler};

fn main() -> mfc_lab::Result<()> {
    let opts = SolveOptions {
        tol: 1e-10,
        ..Default::default()
    };
    let all = Sampler::Uniform { lo: 0.5, hi: 1.5 }.draw(32, 3);
    let horizon = riccati_horizon(
        &presets::lq(),
        &Samples::new(all[..4].to_vec())?,
        100,
        0.125,
        4,
        &opts,
    )?;
    println!("detected short horizon: {horizon}");
    let model = presets::lq().with_horizon(horizon)?;
    let grid = TimeGrid::horizon(horizon, 100)?;
    let (mut ns, mut off, mut diag) = (vec![], vec![], vec![]);
    for n in [2usize, 4, 8, 16, 32] {
        let x0 = Samples::new(all[..n].to_vec())?;
        let r = solve(&model, &x0, grid, &opts)?;
        let ens = simulate(&model, &r.theta_star, &x0, &NoiseBundle::zero(grid))?;
        let y = riccati_propagate(&model, &r, &ens)?;
        let y0 = y.at(0);
        let d = (0..n).map(|i| y0[(i, i)].abs()).fold(0.0, f64::max);
        let o = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| y0[(i, j)].abs())
            .fold(0.0, f64::max);
        let trace = y.eigen_trace();
        let min = trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        println!(
            "N = {n:>2}: max diag {d:.4e}, max off-diag {o:.4e}, min eigenvalue over t {min:.3e}"
        );
        ns.push(n as f64);
        off.push(o);
        diag.push(d);
    }
    let fo = loglog_fit(&ns, &off)?;
    let fd = loglog_fit(&ns, &diag)?;
    println!(
        "off-diagonal slope {:.3} (R^2 {:.4}), diagonal slope {:.3} (R^2 {:.4})",
        fo.slope, fo.r2, fd.slope, fd.r2
    );
    Ok(())
}
