//! Experiment configuration: one JSON document, versioned, no unknown keys.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use homlab_core::convex_cell::LagrangianSpec;
use homlab_core::{Boundary, DpGrid, FieldModel, MacroModulus};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Relative paths resolve against the config file's directory.
    pub output: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    AlphaSweep(AlphaSweep),
    MinamCheck(MinamCheck),
    HomogConvex(HomogConvex),
    YmeasureDiag(YmeasureDiag),
    GammaDiag(GammaDiag),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSweep {
    pub id: String,
    pub field: FieldModel,
    pub m: Vec<f64>,
    pub r: Vec<f64>,
    pub seeds: Vec<u64>,
    pub grid: DpGrid,
    #[serde(default = "pinned")]
    pub boundary: Boundary,
    #[serde(default = "tol_alpha")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinamCheck {
    pub id: String,
    pub field: FieldModel,
    pub modulus: MacroModulus,
    pub eps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub grid: DpGrid,
    #[serde(default = "iterations")]
    pub max_iterations: usize,
    /// Window length and seeds of the DP estimate of each `α_m`.
    #[serde(default = "reference_r")]
    pub reference_r: f64,
    #[serde(default = "reference_seeds")]
    pub reference_seeds: Vec<u64>,
    #[serde(default = "tol_minam")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogConvex {
    pub id: String,
    pub field: FieldModel,
    #[serde(default = "LagrangianSpec::quadratic")]
    pub lagrangian: LagrangianSpec,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub seeds: Vec<u64>,
    pub dx: f64,
    #[serde(default = "tol_homog")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YmeasureDiag {
    pub id: String,
    pub field: FieldModel,
    pub modulus: MacroModulus,
    pub eps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub grid: DpGrid,
    #[serde(default = "iterations")]
    pub max_iterations: usize,
    #[serde(default = "window")]
    pub window: f64,
    #[serde(default = "atoms")]
    pub atoms: usize,
    /// Shift of the invariance diagnostic.
    #[serde(default = "shift")]
    pub y: f64,
    /// Half-open range `[start, end)` of reference realizations.
    #[serde(default = "marginal_refs")]
    pub reference_seeds: [u64; 2],
    /// Absolute bound on the marginal KS distance.
    #[serde(default = "tol_marginal")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaDiag {
    pub id: String,
    pub field: FieldModel,
    pub m: f64,
    pub eps: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "probe_seed")]
    pub probe_seed: u64,
    /// Relative tolerance of the single-transition probe.
    #[serde(default = "tol_transition")]
    pub tolerance: f64,
}

fn pinned() -> Boundary {
    Boundary::Pinned
}
fn tol_alpha() -> f64 {
    0.03
}
fn tol_minam() -> f64 {
    0.10
}
fn tol_homog() -> f64 {
    0.02
}
fn tol_marginal() -> f64 {
    0.1
}
fn tol_transition() -> f64 {
    0.05
}
fn iterations() -> usize {
    300
}
fn reference_r() -> f64 {
    50.0
}
fn reference_seeds() -> Vec<u64> {
    vec![1, 2]
}
fn window() -> f64 {
    2.0
}
fn atoms() -> usize {
    500
}
fn shift() -> f64 {
    0.5
}
fn marginal_refs() -> [u64; 2] {
    [10_000, 10_500]
}
fn probe_seed() -> u64 {
    7
}

impl Experiment {
    pub fn id(&self) -> &str {
        match self {
            Experiment::AlphaSweep(e) => &e.id,
            Experiment::MinamCheck(e) => &e.id,
            Experiment::HomogConvex(e) => &e.id,
            Experiment::YmeasureDiag(e) => &e.id,
            Experiment::GammaDiag(e) => &e.id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::AlphaSweep(_) => "alpha_sweep",
            Experiment::MinamCheck(_) => "minam_check",
            Experiment::HomogConvex(_) => "homog_convex",
            Experiment::YmeasureDiag(_) => "ymeasure_diag",
            Experiment::GammaDiag(_) => "gamma_diag",
        }
    }

    /// Stable text of everything but the schedules. Completed cells are
    /// reused while it is unchanged, so extending a schedule only runs the
    /// new cells.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        // a gamma cell covers the whole eps schedule
        let keep_eps = matches!(self, Experiment::GammaDiag(_));
        if let Some(obj) = v.as_object_mut() {
            for k in ["m", "r", "q", "eps", "seeds"] {
                if k == "eps" && keep_eps {
                    continue;
                }
                if obj.get(k).is_some_and(|x| x.is_array()) {
                    obj.remove(k);
                }
            }
        }
        v.to_string()
    }

    fn validate(&self) -> Result<()> {
        match self {
            Experiment::AlphaSweep(e) => {
                e.field.validate()?;
                increasing("m", &e.m)?;
                positive("m", &e.m)?;
                increasing("r", &e.r)?;
                positive("r", &e.r)?;
                seeds("seeds", &e.seeds)?;
                grid(&e.grid)?;
                tolerance(e.tolerance)?;
            }
            Experiment::MinamCheck(e) => {
                e.field.validate()?;
                e.modulus.validate()?;
                monotone("eps", &e.eps)?;
                unit_interval("eps", &e.eps)?;
                seeds("seeds", &e.seeds)?;
                seeds("reference_seeds", &e.reference_seeds)?;
                grid(&e.grid)?;
                ensure!(e.max_iterations > 0, "max_iterations must be positive");
                ensure!(e.reference_r >= 1.0, "reference_r must be at least 1");
                tolerance(e.tolerance)?;
            }
            Experiment::HomogConvex(e) => {
                e.field.validate()?;
                e.lagrangian.validate()?;
                increasing("q", &e.q)?;
                increasing("r", &e.r)?;
                positive("r", &e.r)?;
                seeds("seeds", &e.seeds)?;
                ensure!(e.dx > 0.0 && e.dx.is_finite(), "dx must be positive");
                tolerance(e.tolerance)?;
            }
            Experiment::YmeasureDiag(e) => {
                e.field.validate()?;
                e.modulus.validate()?;
                monotone("eps", &e.eps)?;
                unit_interval("eps", &e.eps)?;
                seeds("seeds", &e.seeds)?;
                grid(&e.grid)?;
                ensure!(e.max_iterations > 0, "max_iterations must be positive");
                ensure!(
                    e.window > 0.0 && e.window.is_finite(),
                    "window must be positive"
                );
                ensure!(e.atoms > 0, "atoms must be positive");
                ensure!(e.y.is_finite(), "y must be finite");
                ensure!(
                    e.reference_seeds[0] < e.reference_seeds[1],
                    "reference_seeds must be a nonempty range [start, end)"
                );
                tolerance(e.tolerance)?;
            }
            Experiment::GammaDiag(e) => {
                e.field.validate()?;
                ensure!(e.m > 0.0 && e.m.is_finite(), "m must be positive");
                monotone("eps", &e.eps)?;
                unit_interval("eps", &e.eps)?;
                seeds("seeds", &e.seeds)?;
                tolerance(e.tolerance)?;
            }
        }
        Ok(())
    }
}

fn nonempty<T>(name: &str, xs: &[T]) -> Result<()> {
    ensure!(!xs.is_empty(), "schedule `{name}` is empty");
    Ok(())
}

fn increasing(name: &str, xs: &[f64]) -> Result<()> {
    nonempty(name, xs)?;
    ensure!(
        xs.iter().all(|x| x.is_finite()),
        "schedule `{name}` has a non-finite entry"
    );
    ensure!(
        xs.windows(2).all(|w| w[0] < w[1]),
        "schedule `{name}` must be strictly increasing"
    );
    Ok(())
}

/// Strictly increasing or strictly decreasing.
fn monotone(name: &str, xs: &[f64]) -> Result<()> {
    nonempty(name, xs)?;
    ensure!(
        xs.iter().all(|x| x.is_finite()),
        "schedule `{name}` has a non-finite entry"
    );
    let up = xs.windows(2).all(|w| w[0] < w[1]);
    let down = xs.windows(2).all(|w| w[0] > w[1]);
    ensure!(up || down, "schedule `{name}` must be strictly sorted");
    Ok(())
}

fn positive(name: &str, xs: &[f64]) -> Result<()> {
    ensure!(
        xs.iter().all(|x| *x > 0.0),
        "schedule `{name}` must be positive"
    );
    Ok(())
}

fn unit_interval(name: &str, xs: &[f64]) -> Result<()> {
    ensure!(
        xs.iter().all(|x| *x > 0.0 && *x < 1.0),
        "schedule `{name}` must lie in (0, 1)"
    );
    Ok(())
}

fn seeds(name: &str, xs: &[u64]) -> Result<()> {
    nonempty(name, xs)?;
    ensure!(
        xs.windows(2).all(|w| w[0] < w[1]),
        "schedule `{name}` must be strictly increasing"
    );
    Ok(())
}

fn grid(g: &DpGrid) -> Result<()> {
    ensure!(
        g.dx > 0.0 && g.du > 0.0 && g.m_cap > 0.0,
        "grid dx, du and m_cap must be positive"
    );
    Ok(())
}

fn tolerance(t: f64) -> Result<()> {
    ensure!(
        t > 0.0 && t.is_finite(),
        "tolerance must be positive, got {t}"
    );
    Ok(())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        ensure!(!self.experiments.is_empty(), "no experiments");
        if let Some(w) = self.workers {
            ensure!(w > 0, "workers must be positive");
        }
        let mut ids = HashSet::new();
        for e in &self.experiments {
            ensure!(
                valid_id(e.id()),
                "experiment id {:?} must be nonempty ASCII letters, digits, '_' or '-'",
                e.id()
            );
            ensure!(ids.insert(e.id()), "duplicate experiment id {:?}", e.id());
            e.validate()
                .with_context(|| format!("experiment {:?}", e.id()))?;
        }
        Ok(())
    }
}

/// Parses and validates; the output path is resolved against the file.
pub fn load(path: &Path) -> Result<Config> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: Config = serde_json::from_str(&text).context("parsing config")?;
    cfg.validate()?;
    if cfg.output.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.output = dir.join(&cfg.output);
        }
    }
    Ok(cfg)
}
