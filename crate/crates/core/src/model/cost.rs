use std::fmt::Debug;

use serde::{Deserialize, Serialize};

/// Constants of the growth conditions `|phi'(x)| <= c11 |x| + c10` and
/// `|phi''(x)| <= c20`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub c11: f64,
    pub c10: f64,
    pub c20: f64,
}

/// Running or terminal cost `phi(x; label)`.
///
/// `label` is a frozen per-particle coordinate (zero unless the samples carry
/// labels); derivatives are taken in `x` only.
pub trait Cost: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn value(&self, x: f64, label: f64) -> f64;
    fn d1(&self, x: f64, label: f64) -> f64;
    fn d2(&self, x: f64, label: f64) -> f64;
    fn growth(&self) -> Growth;

    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroCost;

impl Cost for ZeroCost {
    fn name(&self) -> &str {
        "zero"
    }
    fn value(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn d1(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn d2(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn growth(&self) -> Growth {
        Growth::default()
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `scale * x^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub scale: f64,
}

impl Default for Quadratic {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl Cost for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn value(&self, x: f64, _: f64) -> f64 {
        self.scale * x * x
    }
    fn d1(&self, x: f64, _: f64) -> f64 {
        2.0 * self.scale * x
    }
    fn d2(&self, _: f64, _: f64) -> f64 {
        2.0 * self.scale
    }
    fn growth(&self) -> Growth {
        let s = 2.0 * self.scale.abs();
        Growth {
            c11: s,
            c10: 0.0,
            c20: s,
        }
    }
    fn is_zero(&self) -> bool {
        self.scale == 0.0
    }
}

/// Squared error of an affine read-out: `(gain x + offset - label)^2`.
///
/// `label_bound` bounds `|label|` over the data and enters `c10`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquaredError {
    pub gain: f64,
    pub offset: f64,
    pub label_bound: f64,
}

impl Default for SquaredError {
    fn default() -> Self {
        Self {
            gain: 1.0,
            offset: 0.0,
            label_bound: 1.0,
        }
    }
}

impl Cost for SquaredError {
    fn name(&self) -> &str {
        "squared_error"
    }
    fn value(&self, x: f64, label: f64) -> f64 {
        let r = self.gain * x + self.offset - label;
        r * r
    }
    fn d1(&self, x: f64, label: f64) -> f64 {
        2.0 * self.gain * (self.gain * x + self.offset - label)
    }
    fn d2(&self, _: f64, _: f64) -> f64 {
        2.0 * self.gain * self.gain
    }
    fn growth(&self) -> Growth {
        let g = self.gain.abs();
        Growth {
            c11: 2.0 * g * g,
            c10: 2.0 * g * (self.offset.abs() + self.label_bound),
            c20: 2.0 * g * g,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_error_vanishes_at_label() {
        let c = SquaredError::default();
        assert_eq!(c.value(0.3, 0.3), 0.0);
        assert_eq!(c.d1(0.3, 0.3), 0.0);
        assert_eq!(c.d2(0.0, 5.0), 2.0);
    }

    #[test]
    fn quadratic_growth_is_tight() {
        let q = Quadratic { scale: 1.5 };
        let g = q.growth();
        for x in [-3.0, 0.5, 7.0] {
            assert!((q.d1(x, 0.0).abs() - (g.c11 * x.abs() + g.c10)).abs() < 1e-14);
        }
    }
}
