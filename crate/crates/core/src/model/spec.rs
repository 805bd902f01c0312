use std::sync::Arc;

use crate::error::{Error, Result};

use super::cost::Cost;
use super::drift::Drift;
use super::measure::EmpiricalMeasure;

/// Problem data: drift, costs, noise intensities, regularizer and horizon.
///
/// The objective is
/// `(1/N) sum_i int L(X^i) dt + (1/N) sum_i U(X^i_T) + (lambda/2) int |theta - eta|^2 dt`
/// with `eta = 0` unless a reference path is set.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    drift: Arc<dyn Drift>,
    running: Arc<dyn Cost>,
    terminal: Arc<dyn Cost>,
    sigma: f64,
    epsilon: f64,
    lambda: f64,
    horizon: f64,
    control_box: Option<f64>,
    reference: Option<Vec<f64>>,
}

impl ModelSpec {
    /// Deterministic model (`sigma = epsilon = 0`).
    pub fn new(
        drift: Arc<dyn Drift>,
        running: Arc<dyn Cost>,
        terminal: Arc<dyn Cost>,
        lambda: f64,
        horizon: f64,
    ) -> Result<Self> {
        if drift.control_dim() == 0 {
            return Err(Error::InvalidInput(
                "control dimension must be positive".into(),
            ));
        }
        Self {
            drift,
            running,
            terminal,
            sigma: 0.0,
            epsilon: 0.0,
            lambda: 1.0,
            horizon: 1.0,
            control_box: None,
            reference: None,
        }
        .with_lambda(lambda)?
        .with_horizon(horizon)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_noise(mut self, sigma: f64, epsilon: f64) -> Result<Self> {
        if !sigma.is_finite() || !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "need finite sigma and epsilon >= 0, got sigma={sigma}, epsilon={epsilon}"
            )));
        }
        self.sigma = sigma;
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Restrict every control coordinate to `[-r, r]`.
    pub fn with_control_box(mut self, r: Option<f64>) -> Result<Self> {
        if let Some(r) = r {
            if r.is_nan() || r <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "control box must be > 0, got {r}"
                )));
            }
        }
        self.control_box = r;
        Ok(self)
    }

    /// Reference path `eta` in the regularizer `(lambda/2)|theta - eta|^2`.
    pub fn with_reference(mut self, eta: Option<Vec<f64>>) -> Result<Self> {
        if let Some(e) = &eta {
            if e.len() != self.control_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.control_dim(),
                    found: e.len(),
                });
            }
        }
        self.reference = eta;
        Ok(self)
    }

    pub fn with_running(mut self, running: Arc<dyn Cost>) -> Self {
        self.running = running;
        self
    }

    pub fn with_terminal(mut self, terminal: Arc<dyn Cost>) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn drift(&self) -> &dyn Drift {
        self.drift.as_ref()
    }

    pub fn running(&self) -> &dyn Cost {
        self.running.as_ref()
    }

    pub fn terminal(&self) -> &dyn Cost {
        self.terminal.as_ref()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn control_box(&self) -> Option<f64> {
        self.control_box
    }

    pub fn reference(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    pub fn control_dim(&self) -> usize {
        self.drift.control_dim()
    }

    /// True when `sigma = epsilon = 0`.
    pub fn is_deterministic(&self) -> bool {
        self.sigma == 0.0 && self.epsilon == 0.0
    }

    /// `eta_j` (zero without a reference path).
    pub fn eta(&self, j: usize) -> f64 {
        self.reference.as_ref().map_or(0.0, |e| e[j])
    }

    /// `(lambda/2) |theta - eta|^2`.
    pub fn regularizer(&self, theta: &[f64]) -> f64 {
        0.5 * self.lambda
            * theta
                .iter()
                .enumerate()
                .map(|(j, t)| (t - self.eta(j)).powi(2))
                .sum::<f64>()
    }

    /// Project `theta` onto the control box (no-op without one).
    pub fn project(&self, theta: &mut [f64]) {
        if let Some(r) = self.control_box {
            for t in theta {
                *t = t.clamp(-r, r);
            }
        }
    }
}

/// Ordered initial samples `x_i` with an optional frozen label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    x: Vec<f64>,
    labels: Vec<f64>,
}

impl Samples {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        let labels = vec![0.0; x.len()];
        Self::labeled(x, labels)
    }

    pub fn labeled(x: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if labels.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: labels.len(),
            });
        }
        if x.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("samples must be finite".into()));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_slice(&self.x).expect("samples are nonempty and finite")
    }

    /// Repeat each sample (and its label) `m` times consecutively.
    pub fn duplicated(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput(
                "duplication factor must be >= 1".into(),
            ));
        }
        Ok(Self {
            x: super::measure::duplicate_samples(&self.x, m),
            labels: super::measure::duplicate_samples(&self.labels, m),
        })
    }

    /// First `n` samples.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidInput(format!(
                "prefix length {n} outside 1..={}",
                self.len()
            )));
        }
        Ok(Self {
            x: self.x[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        })
    }

    /// Copy with `x_i` replaced.
    pub fn with_x(&self, x: Vec<f64>) -> Result<Self> {
        Self::labeled(x, self.labels.clone())
    }
}
