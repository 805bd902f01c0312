//! Train the two-layer flow map on `y = sin(x)`, audit the parameter bounds
//! and run a replicate-averaged sample-size ladder.

use mfc_lab::model::{presets, TimeGrid};
use mfc_lab::solver::SolveOptions;
use mfc_lab::supervised::{
    empirical_risk, generalization_ladder, parameter_bound_audit, train_flow_map, LabeledDataset,
    SupervisedOptions, Target,
};

fn main() -> mfc_lab::Result<()> {
    let model = presets::two_layer();
    let grid = TimeGrid::horizon(model.horizon(), 50)?;
    let opts = SolveOptions::default();

    let data = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 32, 0)?;
    let report = train_flow_map(&model, &data, grid, &opts)?;
    let heldout = LabeledDataset::generate(Target::Sin, (-1.0, 1.0), 256, 99)?;
    println!(
        "N = 32: objective {:.6}, train risk {:.3e}, held-out risk {:.3e}, theta*(0) = {:.4?}",
        report.value,
        empirical_risk(&model, &report.theta_star, &data)?,
        empirical_risk(&model, &report.theta_star, &heldout)?,
        report.theta_star.at(0)
    );
    let audit = parameter_bound_audit(&report, &model, &data, None)?;
    println!(
        "sup|theta*| = {:.4}, N max|dV| = {:.4}, energy {:.4e} <= {:.4e}",
        audit.theta_sup, audit.scaled_gradient, audit.energy, audit.energy_bound
    );

    let so = SupervisedOptions {
        replicates: 256,
        ..Default::default()
    };
    let lad = generalization_ladder(&model, Target::Sin, &[8, 16, 32, 64], 10, grid, &opts, &so)?;
    println!(
        "\n{:>4} {:>12} {:>12} {:>12} {:>12}",
        "N", "train risk", "held-out", "param gap", "W1 gap"
    );
    for k in 0..lad.ns.len() {
        let (p, w) = if k + 1 < lad.ns.len() {
            (
                format!("{:.4e}", lad.param_gaps[k]),
                format!("{:.4e}", lad.wasserstein_gaps[k]),
            )
        } else {
            (String::new(), String::new())
        };
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {p:>12} {w:>12}",
            lad.ns[k], lad.train_risk[k], lad.heldout_risk[k]
        );
    }
    println!(
        "joint slope {:.3} (R^2 {:.3}), bound audit {}, C_fit {:.3}",
        lad.joint_fit.slope, lad.joint_fit.r2, lad.audit_pass, lad.c_fit
    );
    Ok(())
}
