//! Optimal centralized control of the LQ model, checked against the scalar
//! Riccati ODE for a single particle.

use mfc_lab::model::{presets, Samples, TimeGrid};
use mfc_lab::solver::{solve, SolveOptions};

/// `a' = 2a^2 - 4a - 1`, `a(T) = 1`, integrated backwards with RK4.
fn riccati(horizon: f64, steps: usize) -> f64 {
    let rhs = |a: f64| 2.0 * a * a - 4.0 * a - 1.0;
    let h = -horizon / steps as f64;
    let mut a = 1.0;
    for _ in 0..steps {
        let k1 = rhs(a);
        let k2 = rhs(a + 0.5 * h * k1);
        let k3 = rhs(a + 0.5 * h * k2);
        let k4 = rhs(a + h * k3);
        a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    a
}

fn main() -> mfc_lab::Result<()> {
    let model = presets::lq();
    let opts = SolveOptions {
        tol: 1e-10,
        ..Default::default()
    };
    let oracle = riccati(1.0, 10_000);
    for steps in [100, 1000, 10_000] {
        let grid = TimeGrid::horizon(1.0, steps)?;
        let r = solve(&model, &Samples::new(vec![1.0])?, grid, &opts)?;
        println!(
            "K = {steps:>6}: V = {:.8}, oracle {oracle:.8}, rel err {:.2e}, {} iterations",
            r.value,
            (r.value - oracle).abs() / oracle,
            r.iterations
        );
    }

    let grid = TimeGrid::horizon(1.0, 50)?;
    let x0 = Samples::new(vec![0.2, 0.8, 1.5])?;
    let r = solve(&model, &x0, grid, &opts)?;
    println!(
        "\nthree particles: V = {:.6}, grad_x V = {:.4?}",
        r.value, r.costate0
    );
    println!(
        "theta*(0) = {:.4}, theta*(T) = {:.4}",
        r.theta_star.at(0)[0],
        r.theta_star.at(grid.steps())[0]
    );
    let mut csv = Vec::new();
    r.write_control_csv(&mut csv)?;
    let text = String::from_utf8(csv).expect("ascii");
    println!(
        "control CSV head:\n{}",
        text.lines().take(4).collect::<Vec<_>>().join("\n")
    );
    Ok(())
}
