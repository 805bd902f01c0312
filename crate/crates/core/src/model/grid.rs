use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid on `[t0, t1]` with `steps` intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t0 >= t1 {
            return Err(Error::InvalidInput(format!(
                "time grid needs t0 < t1, got [{t0}, {t1}]"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(Self { t0, t1, steps })
    }

    /// Grid on `[0, horizon]`.
    pub fn horizon(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(0.0, horizon, steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t1
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    /// Same interval with twice the number of steps.
    pub fn refined(&self) -> Self {
        Self {
            steps: self.steps * 2,
            ..*self
        }
    }

    /// Index of the interval containing `t` (clamped to the grid).
    pub fn interval_of(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.steps - 1)
        }
    }
}

/// Piecewise-constant parameter path: `values[k]` acts on `[t_k, t_{k+1})`.
///
/// The value stored at the final node does not enter the dynamics; it is kept
/// equal to the last active value so the path has one entry per grid node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl ControlPath {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.nodes() * dim],
        }
    }

    pub fn constant(grid: TimeGrid, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * value.len());
        for _ in 0..grid.nodes() {
            values.extend_from_slice(value);
        }
        Self {
            grid,
            dim: value.len(),
            values,
        }
    }

    /// Build from one row per grid node.
    pub fn from_rows(grid: TimeGrid, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != grid.nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.nodes(),
                found: rows.len(),
            });
        }
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidInput(
                "control dimension must be positive".into(),
            ));
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { grid, dim, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Value active at time `t`.
    pub fn at_time(&self, t: f64) -> &[f64] {
        self.at(self.grid.interval_of(t))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Copy the last active value onto the terminal node.
    pub fn sync_terminal(&mut self) {
        let k = self.grid.steps();
        let (head, tail) = self.values.split_at_mut(k * self.dim);
        tail.copy_from_slice(&head[(k - 1) * self.dim..]);
    }

    /// Clip every coordinate into `[-bound, bound]`.
    pub fn clip(&mut self, bound: f64) {
        for v in &mut self.values {
            *v = v.clamp(-bound, bound);
        }
    }

    /// `sup_t |theta(t)|` over active nodes (Euclidean norm in R^d).
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.steps())
            .map(|k| norm(self.at(k)))
            .fold(0.0, f64::max)
    }

    /// `sup_t |self(t) - other(t)|` over active nodes.
    pub fn sup_distance(&self, other: &ControlPath) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let steps = self.grid.steps().min(other.grid.steps());
        (0..steps)
            .map(|k| {
                let t = self.grid.time(k);
                let a = self.at(k);
                let b = other.at_time(t);
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Left-endpoint quadrature of `|theta(t) - reference|^2`.
    pub fn energy(&self, reference: Option<&[f64]>) -> f64 {
        let dt = self.grid.dt();
        (0..self.grid.steps())
            .map(|k| {
                let row = self.at(k);
                match reference {
                    Some(r) => row
                        .iter()
                        .zip(r)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>(),
                    None => row.iter().map(|a| a * a).sum::<f64>(),
                }
            })
            .sum::<f64>()
            * dt
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_degenerate_intervals() {
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        let g = TimeGrid::new(0.0, 2.0, 4).unwrap();
        assert_eq!(g.nodes(), 5);
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.time(4), 2.0);
    }

    #[test]
    fn interval_lookup_is_clamped() {
        let g = TimeGrid::horizon(1.0, 10).unwrap();
        assert_eq!(g.interval_of(-1.0), 0);
        assert_eq!(g.interval_of(0.55), 5);
        assert_eq!(g.interval_of(1.0), 9);
    }

    #[test]
    fn path_rows_and_energy() {
        let g = TimeGrid::horizon(1.0, 4).unwrap();
        let p = ControlPath::constant(g, &[2.0, 0.0]);
        assert_eq!(p.at(3), &[2.0, 0.0]);
        assert!((p.energy(None) - 4.0).abs() < 1e-14);
        assert!(p.energy(Some(&[2.0, 0.0])).abs() < 1e-14);
        assert!(ControlPath::from_rows(g, &[vec![1.0]]).is_err());
    }
}
