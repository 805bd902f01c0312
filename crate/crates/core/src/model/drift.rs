use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::measure::EmpiricalMeasure;

/// Drift `f(t, theta, x, mu)` together with the partial derivatives the
/// adjoint, Riccati and audit code need.
///
/// Vector and matrix valued derivatives are written into caller-owned
/// buffers (`d` entries, or `d*d` row-major) so hot loops do not allocate.
/// Measure derivatives follow the Lions convention: `d_mu(.., y)` is
/// `partial_mu f(x, mu)(y)`, so perturbing one atom `y_j` of an `N`-atom
/// measure changes `f` by `(1/N) d_mu(.., y_j)` to first order.
pub trait Drift: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn control_dim(&self) -> usize;

    fn value(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure) -> f64;

    fn d_theta(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, out: &mut [f64]);

    fn d_x(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure) -> f64;

    fn d_mu(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, y: f64) -> f64;

    fn d_theta_theta(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, out: &mut [f64]);

    fn d_theta_x(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, out: &mut [f64]);

    fn d_xx(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure) -> f64;

    /// `partial_x partial_mu f(x, mu)(y)`.
    fn d_x_mu(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, y: f64) -> f64;

    /// `partial_theta partial_mu f(x, mu)(y)`.
    fn d_theta_mu(
        &self,
        t: f64,
        theta: &[f64],
        x: f64,
        mu: &EmpiricalMeasure,
        y: f64,
        out: &mut [f64],
    );

    /// `partial_y partial_mu f(x, mu)(y)`.
    fn d_mu_y(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, y: f64) -> f64;

    /// Second Lions derivative `partial_mu partial_mu f(x, mu)(y, z)`.
    fn d_mu_mu(&self, t: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, y: f64, z: f64) -> f64;

    /// False when `f` ignores the measure; lets callers skip O(N^2) work.
    fn depends_on_measure(&self) -> bool {
        true
    }

    /// True when `f` is affine in `theta` (one Newton step is exact).
    fn affine_in_theta(&self) -> bool {
        false
    }
}

/// `f = 0` with a `d`-dimensional (inert) control.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroDrift {
    pub dim: usize,
}

impl Drift for ZeroDrift {
    fn name(&self) -> &str {
        "zero"
    }
    fn control_dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure) -> f64 {
        0.0
    }
    fn d_theta(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_x(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure) -> f64 {
        0.0
    }
    fn d_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_theta(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_theta_x(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_xx(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure) -> f64 {
        0.0
    }
    fn d_x_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_mu_y(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_mu_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, _: f64) -> f64 {
        0.0
    }
    fn depends_on_measure(&self) -> bool {
        false
    }
    fn affine_in_theta(&self) -> bool {
        true
    }
}

/// `f = a theta + b x + c * mean(mu)`, scalar control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDrift {
    pub theta_coef: f64,
    pub x_coef: f64,
    pub mean_coef: f64,
}

impl Default for LinearDrift {
    fn default() -> Self {
        Self {
            theta_coef: 1.0,
            x_coef: 1.0,
            mean_coef: 1.0,
        }
    }
}

impl Drift for LinearDrift {
    fn name(&self) -> &str {
        "lq"
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn value(&self, _: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure) -> f64 {
        self.theta_coef * theta[0] + self.x_coef * x + self.mean_coef * mu.mean()
    }
    fn d_theta(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = self.theta_coef;
    }
    fn d_x(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure) -> f64 {
        self.x_coef
    }
    fn d_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        self.mean_coef
    }
    fn d_theta_theta(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn d_theta_x(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn d_xx(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure) -> f64 {
        0.0
    }
    fn d_x_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn d_mu_y(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_mu_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, _: f64) -> f64 {
        0.0
    }
    fn depends_on_measure(&self) -> bool {
        self.mean_coef != 0.0
    }
    fn affine_in_theta(&self) -> bool {
        true
    }
}

/// Batch-normalization layer `f = theta_1 + theta_2 (x - m) / sqrt(s + eps)`
/// where `m` and `s` are the mean and second moment of `mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormDrift {
    pub eps: f64,
}

impl Default for BatchNormDrift {
    fn default() -> Self {
        Self { eps: 1.0 }
    }
}

impl BatchNormDrift {
    fn q(&self, mu: &EmpiricalMeasure) -> f64 {
        (mu.second_moment() + self.eps).powf(-0.5)
    }

    fn z(&self, x: f64, mu: &EmpiricalMeasure) -> f64 {
        (x - mu.mean()) * self.q(mu)
    }

    /// `partial_mu z(x, mu)(y)`.
    fn dz_mu(&self, x: f64, mu: &EmpiricalMeasure, y: f64) -> f64 {
        let q = self.q(mu);
        -q - (x - mu.mean()) * y * q * q * q
    }
}

impl Drift for BatchNormDrift {
    fn name(&self) -> &str {
        "batchnorm"
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn value(&self, _: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure) -> f64 {
        theta[0] + theta[1] * self.z(x, mu)
    }
    fn d_theta(&self, _: f64, _: &[f64], x: f64, mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = self.z(x, mu);
    }
    fn d_x(&self, _: f64, theta: &[f64], _: f64, mu: &EmpiricalMeasure) -> f64 {
        theta[1] * self.q(mu)
    }
    fn d_mu(&self, _: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, y: f64) -> f64 {
        theta[1] * self.dz_mu(x, mu, y)
    }
    fn d_theta_theta(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_theta_x(&self, _: f64, _: &[f64], _: f64, mu: &EmpiricalMeasure, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.q(mu);
    }
    fn d_xx(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure) -> f64 {
        0.0
    }
    fn d_x_mu(&self, _: f64, theta: &[f64], _: f64, mu: &EmpiricalMeasure, y: f64) -> f64 {
        -theta[1] * y * self.q(mu).powi(3)
    }
    fn d_theta_mu(
        &self,
        _: f64,
        _: &[f64],
        x: f64,
        mu: &EmpiricalMeasure,
        y: f64,
        out: &mut [f64],
    ) {
        out[0] = 0.0;
        out[1] = self.dz_mu(x, mu, y);
    }
    fn d_mu_y(&self, _: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, _: f64) -> f64 {
        -theta[1] * (x - mu.mean()) * self.q(mu).powi(3)
    }
    fn d_mu_mu(&self, _: f64, theta: &[f64], x: f64, mu: &EmpiricalMeasure, y: f64, z: f64) -> f64 {
        let q = self.q(mu);
        let q3 = q.powi(3);
        theta[1] * ((y + z) * q3 + 3.0 * (x - mu.mean()) * y * z * q3 * q * q)
    }
    fn affine_in_theta(&self) -> bool {
        true
    }
}

/// Smooth bounded activation with two derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// Logistic sigmoid.
    Sigmoid,
}

impl Activation {
    /// `(sigma(u), sigma'(u), sigma''(u))`.
    pub fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s = u.tanh();
                let s1 = 1.0 - s * s;
                (s, s1, -2.0 * s * s1)
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-u).exp());
                let s1 = s * (1.0 - s);
                (s, s1, s1 * (1.0 - 2.0 * s))
            }
        }
    }
}

/// Two-layer block `f = theta_1 sigma(theta_2 x + theta_3)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerDrift {
    pub activation: Activation,
}

impl Default for TwoLayerDrift {
    fn default() -> Self {
        Self {
            activation: Activation::Tanh,
        }
    }
}

impl TwoLayerDrift {
    fn act(&self, theta: &[f64], x: f64) -> (f64, f64, f64) {
        self.activation.eval(theta[1] * x + theta[2])
    }
}

impl Drift for TwoLayerDrift {
    fn name(&self) -> &str {
        "twolayer"
    }
    fn control_dim(&self) -> usize {
        3
    }
    fn value(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure) -> f64 {
        theta[0] * self.act(theta, x).0
    }
    fn d_theta(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        let (s, s1, _) = self.act(theta, x);
        out[0] = s;
        out[1] = theta[0] * x * s1;
        out[2] = theta[0] * s1;
    }
    fn d_x(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure) -> f64 {
        theta[0] * theta[1] * self.act(theta, x).1
    }
    fn d_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_theta(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        let (_, s1, s2) = self.act(theta, x);
        let a = theta[0];
        out.copy_from_slice(&[
            0.0,
            x * s1,
            s1,
            x * s1,
            a * x * x * s2,
            a * x * s2,
            s1,
            a * x * s2,
            a * s2,
        ]);
    }
    fn d_theta_x(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        let (_, s1, s2) = self.act(theta, x);
        let (a, b) = (theta[0], theta[1]);
        out[0] = b * s1;
        out[1] = a * s1 + a * x * b * s2;
        out[2] = a * b * s2;
    }
    fn d_xx(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure) -> f64 {
        theta[0] * theta[1] * theta[1] * self.act(theta, x).2
    }
    fn d_x_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_mu_y(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_mu_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, _: f64) -> f64 {
        0.0
    }
    fn depends_on_measure(&self) -> bool {
        false
    }
}

/// Named scalar basis function with two derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Basis {
    Constant,
    Identity,
    Tanh { scale: f64, shift: f64 },
    Sin { freq: f64 },
    Cos { freq: f64 },
    Gaussian { center: f64, width: f64 },
}

impl Basis {
    /// `(phi(x), phi'(x), phi''(x))`.
    pub fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Basis::Constant => (1.0, 0.0, 0.0),
            Basis::Identity => (x, 1.0, 0.0),
            Basis::Tanh { scale, shift } => {
                let (s, s1, s2) = Activation::Tanh.eval(scale * x + shift);
                (s, scale * s1, scale * scale * s2)
            }
            Basis::Sin { freq } => {
                let (s, c) = (freq * x).sin_cos();
                (s, freq * c, -freq * freq * s)
            }
            Basis::Cos { freq } => {
                let (s, c) = (freq * x).sin_cos();
                (c, -freq * s, -freq * freq * c)
            }
            Basis::Gaussian { center, width } => {
                let u = (x - center) / width;
                let g = (-0.5 * u * u).exp();
                let w2 = width * width;
                (g, -u / width * g, (u * u - 1.0) / w2 * g)
            }
        }
    }
}

/// Linear-in-parameter dynamics `f = sum_j theta_j phi_j(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDrift {
    pub basis: Vec<Basis>,
}

impl Drift for BasisDrift {
    fn name(&self) -> &str {
        "basis"
    }
    fn control_dim(&self) -> usize {
        self.basis.len()
    }
    fn value(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure) -> f64 {
        self.basis
            .iter()
            .zip(theta)
            .map(|(b, t)| t * b.eval(x).0)
            .sum()
    }
    fn d_theta(&self, _: f64, _: &[f64], x: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.basis) {
            *o = b.eval(x).0;
        }
    }
    fn d_x(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure) -> f64 {
        self.basis
            .iter()
            .zip(theta)
            .map(|(b, t)| t * b.eval(x).1)
            .sum()
    }
    fn d_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_theta(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_theta_x(&self, _: f64, _: &[f64], x: f64, _: &EmpiricalMeasure, out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.basis) {
            *o = b.eval(x).1;
        }
    }
    fn d_xx(&self, _: f64, theta: &[f64], x: f64, _: &EmpiricalMeasure) -> f64 {
        self.basis
            .iter()
            .zip(theta)
            .map(|(b, t)| t * b.eval(x).2)
            .sum()
    }
    fn d_x_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_theta_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn d_mu_y(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64) -> f64 {
        0.0
    }
    fn d_mu_mu(&self, _: f64, _: &[f64], _: f64, _: &EmpiricalMeasure, _: f64, _: f64) -> f64 {
        0.0
    }
    fn depends_on_measure(&self) -> bool {
        false
    }
    fn affine_in_theta(&self) -> bool {
        true
    }
}
