//! Sampled structural constants (lambda_0, C^Q, convexity) for each preset,
//! and how the audit margin moves with the regularization weight.

use mfc_lab::hamiltonian::{audit_hypotheses, AuditOptions};
use mfc_lab::model::presets;

fn main() -> mfc_lab::Result<()> {
    let opts = AuditOptions::default();
    for name in ["lq", "batchnorm", "twolayer", "basis"] {
        let model = presets::preset(name)?;
        let a = audit_hypotheses(&model, &opts);
        println!(
            "{name:>10}: lambda = {:<5} lambda0 = {:>8.4} C^Q = {:>8.4} margin = {:>9.4} R1 convex = {:<5} passed = {}",
            model.lambda(),
            a.lambda0,
            a.cq,
            a.margin,
            a.r1_convex,
            a.passed
        );
    }
    println!("\ntwo-layer model, varying lambda:");
    for lambda in [0.05, 1.0, 10.0, 40.0] {
        let a = audit_hypotheses(&presets::two_layer().with_lambda(lambda)?, &opts);
        println!(
            "  lambda = {lambda:>5}: margin {:>9.4}, passed {}",
            a.margin, a.passed
        );
    }
    Ok(())
}
