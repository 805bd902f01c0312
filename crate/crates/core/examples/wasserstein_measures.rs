//! Empirical measures on the line: W1/W2 distances, duplication invariance
//! and the decay of distances between nested samples.

use mfc_lab::model::{duplicate_measure, wasserstein, EmpiricalMeasure, Order};
use mfc_lab::stats::{loglog_fit, Sampler};

fn main() -> mfc_lab::Result<()> {
    let mu = EmpiricalMeasure::new(vec![0.0, 1.0, 3.0])?;
    let nu = EmpiricalMeasure::new(vec![0.5, 1.5, 2.0, 2.5])?;
    println!("W1(mu, nu) = {:.6}", wasserstein(&mu, &nu, Order::W1));
    println!("W2(mu, nu) = {:.6}", wasserstein(&mu, &nu, Order::W2));

    let dup = duplicate_measure(&mu, 3)?;
    println!(
        "W2(mu, mu repeated 3x) = {}",
        wasserstein(&mu, &dup, Order::W2)
    );

    let shifted = EmpiricalMeasure::new(mu.atoms().iter().map(|x| x + 0.25).collect())?;
    println!(
        "W1 after a 0.25 shift = {:.6}",
        wasserstein(&mu, &shifted, Order::W1)
    );

    let draws = Sampler::Uniform { lo: -1.0, hi: 1.0 }.draw(4096, 1);
    let mut ns = vec![];
    let mut gaps = vec![];
    let mut n = 16;
    while 2 * n <= draws.len() {
        let a = EmpiricalMeasure::from_slice(&draws[..n])?;
        let b = EmpiricalMeasure::from_slice(&draws[..2 * n])?;
        let w = wasserstein(&a, &b, Order::W1);
        println!("N = {n:>4}: W1(mu_N, mu_2N) = {w:.5}");
        ns.push(n as f64);
        gaps.push(w);
        n *= 2;
    }
    let fit = loglog_fit(&ns, &gaps)?;
    println!(
        "log-log slope {:.3} (R^2 {:.3}); i.i.d. samples give about -0.5",
        fit.slope, fit.r2
    );
    Ok(())
}
