//! One-particle value function from the viscous HJB equation, extrapolated
//! to zero viscosity and compared with the particle solver.

use mfc_lab::hjb::{feedback_rollout, hjb_ladder, HjbConfig};
use mfc_lab::model::{presets, Samples, TimeGrid};
use mfc_lab::solver::{solve, SolveOptions};

fn main() -> mfc_lab::Result<()> {
    let model = presets::lq();
    let ladder = hjb_ladder(&model, &HjbConfig::new(-1.6, 1.6, 641))?;
    let grid = TimeGrid::horizon(1.0, 2000)?;
    let opts = SolveOptions {
        tol: 1e-10,
        ..Default::default()
    };
    println!(
        "{:>6} {:>12} {:>12} {:>10}",
        "x", "HJB (eps->0)", "particle", "rel err"
    );
    for x in [-1.0, -0.6, 0.5, 0.8, 1.2] {
        let v_grid = ladder.extrapolated(x)?;
        let v_part = solve(&model, &Samples::new(vec![x])?, grid, &opts)?.value;
        println!(
            "{x:>6} {v_grid:>12.6} {v_part:>12.6} {:>10.2e}",
            (v_grid - v_part).abs() / v_part
        );
    }
    let finest = ladder.solutions.last().expect("nonempty ladder");
    let roll = feedback_rollout(&model, finest, 0.5, 200)?;
    println!(
        "\nclosed-loop rollout from x = 0.5 on the eps = {} grid: cost {:.6}",
        ladder.eps.last().unwrap(),
        roll.cost
    );
    Ok(())
}
