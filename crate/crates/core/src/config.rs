//! TOML experiment manifests.
//!
//! ```toml
//! name = "lq-smoke"
//! seed = 7
//! tests = ["solve", "riccati"]
//!
//! [model]
//! preset = "lq"
//! horizon = 0.5
//!
//! [grid]
//! steps = 100
//!
//! [initial]
//! n = 8
//! sampler = { kind = "uniform", lo = 0.5, hi = 1.5 }
//! ```
//!
//! Every table is optional except `[model]`; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::AuditOptions;
use crate::hjb::HjbConfig;
use crate::model::{presets, Basis, ModelSpec, Samples, TimeGrid};
use crate::solver::SolveOptions;
use crate::stats::Sampler;
use crate::supervised::{SupervisedOptions, Target};

/// Test kinds, listed in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Audit,
    Simulate,
    Solve,
    Riccati,
    Hjb,
    Converge,
    Supervised,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Audit => "audit",
            TestKind::Simulate => "simulate",
            TestKind::Solve => "solve",
            TestKind::Riccati => "riccati",
            TestKind::Hjb => "hjb",
            TestKind::Converge => "converge",
            TestKind::Supervised => "supervised",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tests: Vec<TestKind>,
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub hjb: HjbSection,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub supervised: SupervisedConfig,
    #[serde(default)]
    pub audit: AuditOptions,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}

/// Preset plus optional overrides.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: String,
    pub lambda: Option<f64>,
    pub horizon: Option<f64>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub control_box: Option<f64>,
    /// Reference path `eta`; an empty list removes the preset's reference.
    pub reference: Option<Vec<f64>>,
    /// Basis functions for the `basis` preset.
    pub basis: Option<Vec<Basis>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { steps: 100 }
    }
}

/// Initial particles: explicit `x0`, or `n` draws from `sampler`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub x0: Option<Vec<f64>>,
    pub n: usize,
    pub sampler: Sampler,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            x0: None,
            n: 8,
            sampler: Sampler::Uniform { lo: 0.5, hi: 1.5 },
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Constant control; zeros when absent.
    pub theta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbSection {
    pub grid: HjbConfig,
    /// States at which grid and particle values are compared.
    pub points: Vec<f64>,
    /// Relative tolerance of that comparison.
    pub tol: f64,
    /// Time steps of the one-particle solves used for the comparison.
    pub particle_steps: usize,
}

impl Default for HjbSection {
    fn default() -> Self {
        Self {
            grid: HjbConfig::new(-1.6, 1.6, 641),
            points: vec![-1.0, -0.6, 0.5, 0.8, 1.2],
            tol: 1e-2,
            particle_steps: 2000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderConfig {
    pub ns: Vec<usize>,
    pub sampler: Sampler,
    /// Duplication factors applied to the first rung.
    pub duplication: Vec<usize>,
    /// Perturbed pairs per rung for the feedback-Lipschitz fit.
    pub pairs: usize,
    pub delta: f64,
    /// Random calibration probes for the pathwise constant.
    pub probes: usize,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            ns: vec![8, 16, 32, 64],
            sampler: Sampler::Uniform { lo: 0.5, hi: 1.5 },
            duplication: vec![2, 3],
            pairs: 20,
            delta: 0.1,
            probes: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub target: Target,
    pub ns: Vec<usize>,
    pub domain: (f64, f64),
    pub replicates: usize,
    pub heldout: usize,
    pub c_headroom: f64,
    /// Allowed deviation of the joint gap slope from one.
    pub slope_band: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        let o = SupervisedOptions::default();
        Self {
            target: Target::Sin,
            ns: vec![8, 16, 32, 64],
            domain: o.domain,
            replicates: o.replicates,
            heldout: o.heldout,
            c_headroom: o.c_headroom,
            slope_band: 0.25,
        }
    }
}

impl SupervisedConfig {
    pub fn options(&self, seed: u64) -> SupervisedOptions {
        SupervisedOptions {
            domain: self.domain,
            replicates: self.replicates,
            heldout: self.heldout,
            heldout_seed: seed ^ 0x5eed,
            c_headroom: self.c_headroom,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Parent of the timestamped run directory.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "results".into(),
        }
    }
}

impl ExperimentConfig {
    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Check everything that can be checked without running a test.
    pub fn validate(&self) -> Result<()> {
        self.build_model()?;
        self.time_grid()?;
        self.initial_samples()?;
        let increasing =
            |ns: &[usize]| !ns.is_empty() && ns[0] > 0 && ns.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.ladder.ns) {
            return Err(Error::Config(
                "ladder.ns must be nonempty, positive and strictly increasing".into(),
            ));
        }
        if !increasing(&self.supervised.ns) {
            return Err(Error::Config(
                "supervised.ns must be nonempty, positive and strictly increasing".into(),
            ));
        }
        if self.ladder.duplication.contains(&0) {
            return Err(Error::Config(
                "ladder.duplication factors must be >= 1".into(),
            ));
        }
        if let Some(theta) = &self.simulate.theta {
            let d = self.build_model()?.control_dim();
            if theta.len() != d {
                return Err(Error::Config(format!(
                    "simulate.theta has {} entries, model expects {d}",
                    theta.len()
                )));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let mut model = match (&m.basis, m.preset.as_str()) {
            (Some(b), "basis") => presets::basis(b.clone())?,
            (Some(_), _) => {
                return Err(Error::Config(
                    "model.basis is only valid with preset = \"basis\"".into(),
                ))
            }
            (None, name) => presets::preset(name)?,
        };
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if let Some(l) = m.lambda {
            model = model.with_lambda(l).map_err(cfg_err)?;
        }
        if let Some(t) = m.horizon {
            model = model.with_horizon(t).map_err(cfg_err)?;
        }
        if m.sigma.is_some() || m.epsilon.is_some() {
            let s = m.sigma.unwrap_or(model.sigma());
            let e = m.epsilon.unwrap_or(model.epsilon());
            model = model.with_noise(s, e).map_err(cfg_err)?;
        }
        if m.control_box.is_some() {
            model = model.with_control_box(m.control_box).map_err(cfg_err)?;
        }
        if let Some(r) = &m.reference {
            model = model
                .with_reference(if r.is_empty() { None } else { Some(r.clone()) })
                .map_err(cfg_err)?;
        }
        Ok(model)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let t = self.build_model()?.horizon();
        TimeGrid::horizon(t, self.grid.steps).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn initial_samples(&self) -> Result<Samples> {
        let x = match &self.initial.x0 {
            Some(x) => x.clone(),
            None => self.initial.sampler.draw(self.initial.n, self.seed),
        };
        Samples::new(x).map_err(|e| Error::Config(format!("initial: {e}")))
    }

    /// Selected tests, deduplicated and in execution order.
    pub fn selected_tests(&self) -> Vec<TestKind> {
        let mut t = self.tests.clone();
        t.sort();
        t.dedup();
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_toml("[model]\npreset = \"lq\"\n").unwrap();
        assert!(c.selected_tests().is_empty());
        assert_eq!(c.initial_samples().unwrap().len(), 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("[model]\npreset = \"lq\"\nlamda = 2.0\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(ExperimentConfig::from_toml("bogus = 1\n[model]\npreset = \"lq\"\n").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::from_toml(
            "tests = [\"solve\", \"audit\", \"solve\"]\n[model]\npreset = \"twolayer\"\nlambda = 0.5\nreference = []\n",
        )
        .unwrap();
        let m = c.build_model().unwrap();
        assert_eq!(m.lambda(), 0.5);
        assert!(m.reference().is_none());
        assert_eq!(c.selected_tests(), vec![TestKind::Audit, TestKind::Solve]);
    }

    #[test]
    fn invalid_values_fail_before_running() {
        assert!(ExperimentConfig::from_toml("[model]\npreset = \"nope\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\npreset = \"lq\"\nlambda = -1.0\n").is_err());
        assert!(
            ExperimentConfig::from_toml("[model]\npreset = \"lq\"\n[ladder]\nns = [8, 4]\n")
                .is_err()
        );
        assert!(ExperimentConfig::from_toml(
            "[model]\npreset = \"lq\"\nbasis = [{ kind = \"identity\" }]\n"
        )
        .is_err());
    }
}
