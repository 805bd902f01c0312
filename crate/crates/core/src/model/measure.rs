use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

/// Finite empirical measure `(1/N) sum delta_{x_i}` on the real line.
///
/// Atoms are kept sorted ascending; the first two moments are cached because
/// measure-dependent drifts query them once per particle per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
    mean: f64,
    second_moment: f64,
}

/// Order of the Wasserstein distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    W1,
    W2,
}

impl EmpiricalMeasure {
    pub fn new(mut atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if let Some(bad) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite atom {bad}")));
        }
        atoms.sort_by(|a, b| a.total_cmp(b));
        let n = atoms.len() as f64;
        let mean = atoms.iter().sum::<f64>() / n;
        let second_moment = atoms.iter().map(|a| a * a).sum::<f64>() / n;
        Ok(Self {
            atoms,
            mean,
            second_moment,
        })
    }

    pub fn from_slice(atoms: &[f64]) -> Result<Self> {
        Self::new(atoms.to_vec())
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Self {
        Self {
            atoms: vec![x],
            mean: x,
            second_moment: x * x,
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `(1/N) sum x_i^2`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Write one atom per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for a in &self.atoms {
            writeln!(out, "{}", fmt_f64(*a))?;
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for EmpiricalMeasure {
    type Error = Error;

    fn try_from(atoms: Vec<f64>) -> Result<Self> {
        Self::new(atoms)
    }
}

impl From<EmpiricalMeasure> for Vec<f64> {
    fn from(m: EmpiricalMeasure) -> Self {
        m.atoms
    }
}

/// Repeat every atom `m` times.
pub fn duplicate_measure(mu: &EmpiricalMeasure, m: usize) -> Result<EmpiricalMeasure> {
    if m == 0 {
        return Err(Error::InvalidInput(
            "duplication factor must be >= 1".into(),
        ));
    }
    let atoms = mu
        .atoms
        .iter()
        .flat_map(|&a| std::iter::repeat_n(a, m))
        .collect();
    Ok(EmpiricalMeasure {
        atoms,
        mean: mu.mean,
        second_moment: mu.second_moment,
    })
}

/// Repeat each sample `m` times in place order: `(x1,..,x1, x2,..,x2, ...)`.
pub fn duplicate_samples(x: &[f64], m: usize) -> Vec<f64> {
    x.iter().flat_map(|&a| std::iter::repeat_n(a, m)).collect()
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Exact 1-D Wasserstein distance between empirical measures.
///
/// Both measures are (virtually) duplicated to the least common multiple of
/// their atom counts; the sorted coupling is then optimal.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: Order) -> f64 {
    let (n, m) = (mu.len(), nu.len());
    let lcm = n / gcd(n, m) * m;
    let (rep_mu, rep_nu) = (lcm / n, lcm / m);
    let mut acc = 0.0;
    for l in 0..lcm {
        let d = (mu.atoms[l / rep_mu] - nu.atoms[l / rep_nu]).abs();
        acc += match p {
            Order::W1 => d,
            Order::W2 => d * d,
        };
    }
    let avg = acc / lcm as f64;
    match p {
        Order::W1 => avg,
        Order::W2 => avg.sqrt(),
    }
}

/// Convenience for unsorted sample vectors.
pub fn wasserstein_samples(x: &[f64], y: &[f64], p: Order) -> Result<f64> {
    Ok(wasserstein(
        &EmpiricalMeasure::from_slice(x)?,
        &EmpiricalMeasure::from_slice(y)?,
        p,
    ))
}
