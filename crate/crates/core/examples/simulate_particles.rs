//! Forward simulation of a controlled particle system with common and
//! idiosyncratic noise, plus the second-moment audit.
//!
//! Pass a path to also write the trajectories as CSV.

use mfc_lab::model::{presets, ControlPath, Samples, TimeGrid};
use mfc_lab::simulator::{moment_audit, objective, simulate, NoiseBundle};

fn main() -> mfc_lab::Result<()> {
    let model = presets::batchnorm().with_noise(0.5, 0.2)?;
    let grid = TimeGrid::horizon(model.horizon(), 100)?;
    let x0 = Samples::new(vec![-1.0, -0.2, 0.3, 0.9, 1.4])?;
    let theta = ControlPath::constant(grid, &[0.5, -0.3]);

    let bundles = NoiseBundle::batch(grid, x0.len(), 42, 64);
    let ensembles = bundles
        .iter()
        .map(|nb| simulate(&model, &theta, &x0, nb))
        .collect::<mfc_lab::Result<Vec<_>>>()?;
    let terminal = ensembles[0].measure(grid.steps());
    println!(
        "first path: terminal mean {:.4}, second moment {:.4}",
        terminal.mean(),
        terminal.second_moment()
    );
    println!(
        "J(theta) over {} noise paths = {:.6}",
        bundles.len(),
        objective(&model, &theta, &x0, &bundles)?
    );

    let audit = moment_audit(&ensembles, &theta, &model, f64::INFINITY)?;
    println!(
        "smallest C1 with max_t E|X_t|^2 <= C1 * envelope: {:.4}",
        audit.required_c1()
    );

    if let Some(path) = std::env::args().nth(1) {
        ensembles[0].write_csv(std::fs::File::create(&path)?)?;
        println!("trajectories written to {path}");
    }
    Ok(())
}
