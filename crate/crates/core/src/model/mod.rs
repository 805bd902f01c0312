//! Problem data, empirical measures, time grids and the scaled matrix class.

pub mod cost;
pub mod drift;
pub mod grid;
pub mod matrix;
pub mod measure;
pub mod presets;
pub mod spec;
pub mod validate;

pub use cost::{Cost, Growth, Quadratic, SquaredError, ZeroCost};
pub use drift::{
    Activation, Basis, BasisDrift, BatchNormDrift, Drift, LinearDrift, TwoLayerDrift, ZeroDrift,
};
pub use grid::{ControlPath, TimeGrid};
pub use matrix::{envelope, scaled_matrix_product, ScaledMatrix};
pub use measure::{duplicate_measure, wasserstein, EmpiricalMeasure, Order};
pub use spec::{ModelSpec, Samples};
