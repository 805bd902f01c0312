use std::sync::Arc;

use crate::error::{Error, Result};

use super::cost::{Quadratic, SquaredError, ZeroCost};
use super::drift::{Basis, BasisDrift, BatchNormDrift, LinearDrift, TwoLayerDrift, ZeroDrift};
use super::spec::ModelSpec;

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["lq", "batchnorm", "twolayer", "basis", "zero"];

/// `f = theta + x + mean(mu)`, `L = U = x^2`, `lambda = 1`, `T = 1`, no noise.
pub fn lq() -> ModelSpec {
    ModelSpec::new(
        Arc::new(LinearDrift::default()),
        Arc::new(Quadratic::default()),
        Arc::new(Quadratic::default()),
        1.0,
        1.0,
    )
    .expect("valid preset")
}

/// Batch-normalized drift with quadratic costs.
pub fn batchnorm() -> ModelSpec {
    ModelSpec::new(
        Arc::new(BatchNormDrift::default()),
        Arc::new(Quadratic::default()),
        Arc::new(Quadratic::default()),
        1.0,
        1.0,
    )
    .expect("valid preset")
}

/// Two-layer flow `theta_1 tanh(theta_2 x + theta_3)` trained on squared error,
/// no running cost, regularized towards `eta = (0, 1, 0)`.
///
/// At `theta = 0` every parameter gradient of the drift vanishes, so the
/// plain `|theta|^2` regularizer would leave training stuck at zero; the
/// reference path moves the inner weight off that stationary point.
pub fn two_layer() -> ModelSpec {
    ModelSpec::new(
        Arc::new(TwoLayerDrift::default()),
        Arc::new(ZeroCost),
        Arc::new(SquaredError::default()),
        0.05,
        1.0,
    )
    .and_then(|m| m.with_reference(Some(vec![0.0, 1.0, 0.0])))
    .expect("valid preset")
}

/// `f = sum_j theta_j phi_j(x)` with quadratic costs.
pub fn basis(basis: Vec<Basis>) -> Result<ModelSpec> {
    if basis.is_empty() {
        return Err(Error::InvalidInput(
            "basis preset needs at least one function".into(),
        ));
    }
    ModelSpec::new(
        Arc::new(BasisDrift { basis }),
        Arc::new(Quadratic::default()),
        Arc::new(Quadratic::default()),
        1.0,
        1.0,
    )
}

/// `f = 0` with quadratic costs.
pub fn zero() -> ModelSpec {
    ModelSpec::new(
        Arc::new(ZeroDrift { dim: 1 }),
        Arc::new(Quadratic::default()),
        Arc::new(Quadratic::default()),
        1.0,
        1.0,
    )
    .expect("valid preset")
}

/// Look a preset up by name.
pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "lq" => Ok(lq()),
        "batchnorm" => Ok(batchnorm()),
        "twolayer" => Ok(two_layer()),
        "basis" => basis(vec![
            Basis::Constant,
            Basis::Identity,
            Basis::Tanh {
                scale: 1.0,
                shift: 0.0,
            },
        ]),
        "zero" => Ok(zero()),
        other => Err(Error::Config(format!(
            "unknown model preset {other:?}; expected one of {PRESETS:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate::{validate_model, ValidationOptions};

    #[test]
    fn all_presets_validate() {
        let opts = ValidationOptions {
            labels: vec![-1.0, 0.0, 1.0],
            ..Default::default()
        };
        for name in PRESETS {
            let m = preset(name).unwrap();
            validate_model(&m, &opts).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_err());
    }
}
