//! Config-driven execution: one timestamped directory per run holding the
//! CSV outputs, a copy of the config and `summary.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TestKind};
use crate::error::{Error, Result};
use crate::hamiltonian::audit_hypotheses;
use crate::hjb::hjb_ladder;
use crate::lab::{
    calibration_probes, duplication_test, feedback_lipschitz_test, fit_pathwise_constant,
    pathwise_convergence_test, perturbed_pairs,
};
use crate::model::{ControlPath, ModelSpec, Order, Samples, TimeGrid};
use crate::simulator::{moment_audit, simulate, NoiseBundle};
use crate::solver::{riccati_propagate, solve, SolveReport};
use crate::supervised::{generalization_ladder, train_flow_map, LabeledDataset};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "MFC_WORKERS";

/// Install the global worker pool from [`WORKERS_ENV`] (ignored if unset,
/// unparsable or already installed).
pub fn init_workers() -> Option<usize> {
    let n: usize = std::env::var(WORKERS_ENV)
        .ok()?
        .parse()
        .ok()
        .filter(|&n| n > 0)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .ok()?;
    Some(n)
}

/// Per-test record in `summary.json`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TestSummary {
    pub test: String,
    pub pass: bool,
    pub fitted_constants: BTreeMap<String, f64>,
    pub slopes: BTreeMap<String, f64>,
    pub r2: BTreeMap<String, f64>,
    /// Output files, relative to the run directory.
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl TestSummary {
    fn new(kind: TestKind) -> Self {
        Self {
            test: kind.name().into(),
            ..Default::default()
        }
    }

    fn constant(&mut self, k: &str, v: f64) {
        self.fitted_constants.insert(k.into(), v);
    }

    fn slope(&mut self, k: &str, slope: f64, r2: f64) {
        self.slopes.insert(k.into(), slope);
        self.r2.insert(k.into(), r2);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub created: String,
    /// Verbatim config text, so a summary alone is enough to replay.
    pub config: String,
    pub pass: bool,
    pub tests: Vec<TestSummary>,
    /// Every file in the run directory except `summary.json`.
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn failures(&self) -> Vec<&str> {
        self.tests
            .iter()
            .filter(|t| !t.pass)
            .map(|t| t.test.as_str())
            .collect()
    }
}

/// A finished run.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Create `parent/<name>-<timestamp>[-k]`.
fn fresh_dir(parent: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent)?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    for k in 0.. {
        let dir = if k == 0 {
            parent.join(format!("{name}-{stamp}"))
        } else {
            parent.join(format!("{name}-{stamp}-{k}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

/// Run a config file; outputs go under `output.dir`.
pub fn run_file(path: &Path) -> Result<RunOutcome> {
    let text = fs::read_to_string(path)?;
    let cfg = ExperimentConfig::from_toml(&text)?;
    run(&cfg, &text, &cfg.output.dir)
}

/// Execute the selected tests of `cfg` into a new directory under `parent`.
pub fn run(cfg: &ExperimentConfig, config_text: &str, parent: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = fresh_dir(parent, &cfg.name)?;
    fs::write(dir.join("config.toml"), config_text)?;
    let mut ctx = Context {
        cfg,
        model: cfg.build_model()?,
        grid: cfg.time_grid()?,
        x0: cfg.initial_samples()?,
        dir: &dir,
        solved: None,
    };
    let mut tests = Vec::new();
    for kind in cfg.selected_tests() {
        let mut s = TestSummary::new(kind);
        if let Err(e) = ctx.execute(kind, &mut s) {
            s.pass = false;
            s.error = Some(e.to_string());
        }
        tests.push(s);
    }
    let mut files = vec!["config.toml".to_string()];
    files.extend(tests.iter().flat_map(|t| t.files.iter().cloned()));
    let summary = RunSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        created: chrono::Local::now().to_rfc3339(),
        config: config_text.to_string(),
        pass: tests.iter().all(|t| t.pass),
        tests,
        files,
    };
    let mut out = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    out.flush()?;
    Ok(RunOutcome { dir, summary })
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: ModelSpec,
    grid: TimeGrid,
    x0: Samples,
    dir: &'a Path,
    solved: Option<SolveReport>,
}

impl Context<'_> {
    fn file(&self, s: &mut TestSummary, name: &str) -> Result<BufWriter<File>> {
        s.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn solved(&mut self) -> Result<&SolveReport> {
        if self.solved.is_none() {
            self.solved = Some(solve(&self.model, &self.x0, self.grid, &self.cfg.solver)?);
        }
        Ok(self.solved.as_ref().expect("just solved"))
    }

    fn execute(&mut self, kind: TestKind, s: &mut TestSummary) -> Result<()> {
        match kind {
            TestKind::Audit => self.audit(s),
            TestKind::Simulate => self.simulate(s),
            TestKind::Solve => self.solve(s),
            TestKind::Riccati => self.riccati(s),
            TestKind::Hjb => self.hjb(s),
            TestKind::Converge => self.converge(s),
            TestKind::Supervised => self.supervised(s),
        }
    }

    fn audit(&mut self, s: &mut TestSummary) -> Result<()> {
        let a = audit_hypotheses(&self.model, &self.cfg.audit);
        s.constant("lambda0", a.lambda0);
        s.constant("cq", a.cq);
        s.constant("margin", a.margin);
        s.constant("r1_min_eigenvalue", a.r1_min_eigenvalue);
        serde_json::to_writer_pretty(self.file(s, "audit.json")?, &a)?;
        s.pass = a.passed;
        Ok(())
    }

    fn simulate(&mut self, s: &mut TestSummary) -> Result<()> {
        let theta = match &self.cfg.simulate.theta {
            Some(t) => ControlPath::constant(self.grid, t),
            None => ControlPath::zeros(self.grid, self.model.control_dim()),
        };
        let bundles = if self.model.is_deterministic() {
            vec![NoiseBundle::zero(self.grid)]
        } else {
            NoiseBundle::batch(
                self.grid,
                self.x0.len(),
                self.cfg.seed,
                self.cfg.solver.noise_batch,
            )
        };
        let ens = bundles
            .iter()
            .map(|nb| simulate(&self.model, &theta, &self.x0, nb))
            .collect::<Result<Vec<_>>>()?;
        ens[0].write_csv(self.file(s, "trajectories.csv")?)?;
        let m = moment_audit(&ens, &theta, &self.model, f64::INFINITY)?;
        s.constant("c1_required", m.required_c1());
        s.pass = !m.violated;
        Ok(())
    }

    fn solve(&mut self, s: &mut TestSummary) -> Result<()> {
        let tol = self.cfg.solver.tol;
        let r = self.solved()?.clone();
        s.constant("value", r.value);
        s.constant("iterations", r.iterations as f64);
        r.write_control_csv(self.file(s, "control.csv")?)?;
        serde_json::to_writer_pretty(self.file(s, "solve.json")?, &r)?;
        s.pass = r.grad_norm_history.last().is_some_and(|g| *g <= tol);
        Ok(())
    }

    fn riccati(&mut self, s: &mut TestSummary) -> Result<()> {
        let r = self.solved()?.clone();
        let ens = simulate(
            &self.model,
            &r.theta_star,
            &self.x0,
            &NoiseBundle::zero(self.grid),
        )?;
        let y = riccati_propagate(&self.model, &r, &ens)?;
        let trace = y.eigen_trace();
        let min = trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let max = trace.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
        s.constant("min_eigenvalue", min);
        s.constant("n_max_eigenvalue", self.x0.len() as f64 * max);
        y.write_eigen_csv(self.file(s, "riccati_eigen.csv")?)?;
        s.pass = min >= -1e-8;
        Ok(())
    }

    fn hjb(&mut self, s: &mut TestSummary) -> Result<()> {
        let h = &self.cfg.hjb;
        let ladder = hjb_ladder(&self.model, &h.grid)?;
        let finest = ladder.solutions.last().expect("nonempty ladder");
        finest.write_csv(&self.model, self.file(s, "hjb_value.csv")?)?;
        let grid = TimeGrid::horizon(self.model.horizon(), h.particle_steps)?;
        let mut rows = Vec::new();
        let mut worst: f64 = 0.0;
        for &p in &h.points {
            let v_grid = ladder.extrapolated(p)?;
            let v_part = solve(&self.model, &Samples::new(vec![p])?, grid, &self.cfg.solver)?.value;
            let rel = (v_grid - v_part).abs() / v_part.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            rows.push(vec![p, v_grid, v_part, rel]);
        }
        crate::io::write_csv_to(
            &mut self.file(s, "hjb_compare.csv")?,
            &["x", "v_grid", "v_particle", "rel_err"],
            rows,
        )?;
        s.constant("max_rel_err", worst);
        s.pass = worst < h.tol;
        Ok(())
    }

    fn converge(&mut self, s: &mut TestSummary) -> Result<()> {
        let l = &self.cfg.ladder;
        let (model, grid, opts) = (&self.model, self.grid, &self.cfg.solver);
        let n_max = *l.ns.last().expect("validated");
        let all = Samples::new(l.sampler.draw(n_max, self.cfg.seed))?;

        let base = all.prefix(l.ns[0])?;
        let dup = duplication_test(model, &base, &l.duplication, grid, opts)?;
        let dup_rows = dup
            .gaps
            .iter()
            .zip(&dup.gradient_gaps)
            .map(|(g, gg)| vec![g.0 as f64, g.1, gg.1]);
        crate::io::write_csv_to(
            &mut self.file(s, "duplication.csv")?,
            &["m", "value_gap", "gradient_gap"],
            dup_rows,
        )?;

        let lad = pathwise_convergence_test(model, &all, &l.ns, grid, opts)?;
        let probes = calibration_probes(&base, l.delta / 2.0, l.probes, self.cfg.seed)?;
        let c_probe = fit_pathwise_constant(model, &base, &probes, grid, opts)?;
        let ratio =
            |k: usize| lad.param_gaps[k].max(lad.trajectory_gaps[k]) / lad.wasserstein_gaps[k];
        let c_hat = if lad.param_gaps.is_empty() {
            c_probe
        } else {
            c_probe.max(ratio(0))
        };
        let pathwise_ok = (0..lad.param_gaps.len()).all(|k| ratio(k) <= c_hat * (1.0 + 1e-9));
        let mut rows = Vec::new();
        for (k, &n) in l.ns.iter().enumerate() {
            let mut r = vec![n as f64, lad.values[k]];
            if k + 1 < l.ns.len() {
                r.extend([
                    lad.wasserstein_gaps[k],
                    lad.wasserstein2_gaps[k],
                    lad.param_gaps[k],
                    lad.trajectory_gaps[k],
                    lad.value_gaps[k],
                ]);
            } else {
                r.extend([f64::NAN; 5]);
            }
            rows.push(r);
        }
        crate::io::write_csv_to(
            &mut self.file(s, "ladder.csv")?,
            &[
                "n",
                "value",
                "w1_gap",
                "w2_gap",
                "param_gap",
                "trajectory_gap",
                "value_gap",
            ],
            rows,
        )?;

        let mut fb = Vec::new();
        for &n in &l.ns {
            let pairs = perturbed_pairs(
                &l.sampler,
                n,
                l.pairs,
                l.delta,
                self.cfg.seed.wrapping_add(n as u64),
            )?;
            fb.push(vec![
                n as f64,
                feedback_lipschitz_test(model, &pairs, grid, opts, Order::W1)?,
            ]);
        }
        let fb_values: Vec<f64> = fb.iter().map(|r| r[1]).collect();
        crate::io::write_csv_to(
            &mut self.file(s, "feedback_lipschitz.csv")?,
            &["n", "max_ratio"],
            fb,
        )?;

        s.constant("c_hat", c_hat);
        s.constant("feedback_spread", crate::stats::spread(&fb_values));
        s.constant(
            "max_duplication_gap",
            dup.gaps.iter().map(|g| g.1).fold(0.0, f64::max),
        );
        for (name, fit) in &lad.slopes {
            s.slope(name, fit.slope, fit.r2);
        }
        s.pass = dup.pass && pathwise_ok && fb_values.iter().all(|v| v.is_finite());
        Ok(())
    }

    fn supervised(&mut self, s: &mut TestSummary) -> Result<()> {
        let c = &self.cfg.supervised;
        let opts = c.options(self.cfg.seed);
        let lad = generalization_ladder(
            &self.model,
            c.target,
            &c.ns,
            self.cfg.seed,
            self.grid,
            &self.cfg.solver,
            &opts,
        )?;
        lad.write_risk_csv(self.file(s, "risk.csv")?)?;
        let data = LabeledDataset::generate(
            c.target,
            c.domain,
            *c.ns.last().expect("validated"),
            self.cfg.seed,
        )?;
        data.write_csv(self.file(s, "dataset.csv")?)?;
        let trained = train_flow_map(&self.model, &data, self.grid, &self.cfg.solver)?;
        trained.write_control_csv(self.file(s, "parameters.csv")?)?;
        s.constant("c_fit", lad.c_fit);
        s.constant("risk_inversions", lad.risk_inversions as f64);
        s.slope("joint_gap", lad.joint_fit.slope, lad.joint_fit.r2);
        if let Some(f) = lad.param_fit {
            s.slope("param_gap", f.slope, f.r2);
        }
        s.pass = lad.audit_pass
            && (lad.joint_fit.slope - 1.0).abs() <= c.slope_band
            && lad.joint_fit.r2 >= 0.9
            && lad.risk_inversions <= 1;
        Ok(())
    }
}

/// Standalone hypothesis audit of a config's model.
pub fn audit_file(path: &Path) -> Result<crate::hamiltonian::HypothesisAudit> {
    let cfg = ExperimentConfig::load(path)?;
    Ok(audit_hypotheses(&cfg.build_model()?, &cfg.audit))
}

/// Result of [`replay`].
#[derive(Debug, Serialize)]
pub struct ReplayReport {
    pub original: PathBuf,
    pub replay: PathBuf,
    pub compared: Vec<String>,
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-run the config embedded in a `summary.json` into a sibling directory
/// and compare every CSV byte for byte.
pub fn replay(summary_path: &Path) -> Result<ReplayReport> {
    let summary: RunSummary = serde_json::from_reader(File::open(summary_path)?)?;
    let original = summary_path
        .parent()
        .ok_or_else(|| Error::InvalidInput("summary path has no parent directory".into()))?
        .to_path_buf();
    let cfg = ExperimentConfig::from_toml(&summary.config)?;
    let parent = original.parent().unwrap_or(Path::new("."));
    let out = run(&cfg, &summary.config, parent)?;
    let mut compared = Vec::new();
    let mut mismatched = Vec::new();
    for f in summary.files.iter().filter(|f| f.ends_with(".csv")) {
        let a = fs::read(original.join(f));
        let b = fs::read(out.dir.join(f));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => mismatched.push(f.clone()),
        }
        compared.push(f.clone());
    }
    Ok(ReplayReport {
        original,
        replay: out.dir,
        compared,
        mismatched,
    })
}
