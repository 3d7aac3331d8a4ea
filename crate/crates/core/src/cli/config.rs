//! Run configuration (TOML).
//!
//! ```toml
//! experiment = "overlap-sweep"
//! output = "out/sweep"
//! seed = 7
//!
//! [model]
//! energies = [0.0, 1.0]
//! beta = 1.0
//! lambda = 0.05
//!
//! [[model.couplings]]
//! g = [[0.0, 1.0], [1.0, 0.0]]
//! form_factor = { p = 0.5, profile = { family = "gaussian", amplitude = 1.0, cutoff = 2.0 } }
//!
//! [grid]
//! kind = "uniform"
//! u_max = 3.0
//! m = 8
//!
//! [truncation]
//! n_total_max = 2
//!
//! [params]
//! betas = [1.0, 2.0, 4.0]
//! lambdas = [0.0, 0.05, 0.1]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::BathGrid;
use crate::model::{AtomSpec, CouplingTerm, FormFactor, ModelSpec};
use crate::operator::C64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Validate,
    Spectrum,
    Kms,
    OverlapSweep,
    Fgr,
    Lso,
    Virial,
    Evolve,
    DysonBound,
    DysonOracle,
    WickTest,
    PcProbe,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::Spectrum => "spectrum",
            Experiment::Kms => "kms",
            Experiment::OverlapSweep => "overlap-sweep",
            Experiment::Fgr => "fgr",
            Experiment::Lso => "lso",
            Experiment::Virial => "virial",
            Experiment::Evolve => "evolve",
            Experiment::DysonBound => "dyson-bound",
            Experiment::DysonOracle => "dyson-oracle",
            Experiment::WickTest => "wick-test",
            Experiment::PcProbe => "pc-probe",
        }
    }

    /// Keys accepted in `[params]`.
    pub fn param_keys(self) -> &'static [&'static str] {
        match self {
            Experiment::Validate | Experiment::Fgr | Experiment::Kms => &[],
            Experiment::Spectrum => &["count", "tol"],
            Experiment::OverlapSweep => &["betas", "lambdas"],
            Experiment::Lso => &["epsilons"],
            Experiment::Virial => &["nu", "e", "t"],
            Experiment::Evolve => &["t_final", "level", "initial_level"],
            Experiment::DysonBound => &["box", "n_cut", "n_max", "betas", "lambdas", "two_ms"],
            Experiment::DysonOracle => &["samples", "box", "n_cut", "n_max"],
            Experiment::WickTest => &["samples", "energy", "points", "n_max"],
            Experiment::PcProbe => &["e", "t", "window"],
        }
    }

    /// Experiments that need an assembled Liouvillian.
    pub fn needs_bundle(self) -> bool {
        matches!(
            self,
            Experiment::Spectrum | Experiment::Kms | Experiment::Virial | Experiment::Evolve | Experiment::PcProbe | Experiment::Lso
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    /// Real part of `G`, row-major.
    pub g: Vec<Vec<f64>>,
    /// Imaginary part of `G`; zero when absent.
    #[serde(default)]
    pub g_imag: Option<Vec<Vec<f64>>>,
    pub form_factor: FormFactor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub energies: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub couplings: Vec<CouplingConfig>,
    #[serde(default)]
    pub glue_phase: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Uniform,
    Band,
    Geometric,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_kind")]
    pub kind: GridKind,
    /// Upper edge for `uniform` and `geometric`.
    #[serde(default)]
    pub u_max: Option<f64>,
    /// Band edges for `band`.
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    /// First cell edge for `geometric`.
    #[serde(default)]
    pub first_edge: Option<f64>,
    /// Total (mirrored) mode count; even.
    pub m: usize,
    /// Multiplies `m`.
    #[serde(default = "one")]
    pub refinement: usize,
}

fn default_kind() -> GridKind {
    GridKind::Uniform
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub n_total_max: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker pool size for sweeps; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
}

fn matrix(re: &[Vec<f64>], im: Option<&Vec<Vec<f64>>>, d: usize, what: &str) -> Result<DMatrix<C64>> {
    if re.len() != d || re.iter().any(|r| r.len() != d) {
        return Err(Error::Config(format!("{what}: expected a {d}x{d} matrix")));
    }
    if let Some(im) = im {
        if im.len() != d || im.iter().any(|r| r.len() != d) {
            return Err(Error::Config(format!("{what}: imaginary part must be {d}x{d}")));
        }
    }
    Ok(DMatrix::from_fn(d, d, |i, j| C64::new(re[i][j], im.map_or(0.0, |m| m[i][j]))))
}

impl RunConfig {
    /// Parses and validates; errors carry line/column or the field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses, applies `key.path=value` overrides, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::from_toml_str(text);
        }
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = self.experiment.param_keys();
        for k in self.params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Config(format!(
                    "params.{k}: unknown key for experiment {} (allowed: {})",
                    self.experiment.name(),
                    if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") }
                )));
            }
        }
        self.model_spec()?;
        self.bath_grid()?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let atom = AtomSpec::new(m.energies.clone()).map_err(|e| Error::Config(format!("model.energies: {e}")))?;
        let d = atom.dim();
        let mut terms = Vec::new();
        for (a, c) in m.couplings.iter().enumerate() {
            let what = format!("model.couplings[{a}].g");
            let g = matrix(&c.g, c.g_imag.as_ref(), d, &what)?;
            terms.push(CouplingTerm::new(g, c.form_factor.clone()).map_err(|e| Error::Config(format!("{what}: {e}")))?);
        }
        let mut spec = ModelSpec::new(atom, terms, m.beta, m.lambda).map_err(|e| Error::Config(format!("model: {e}")))?;
        spec.glue_override = m.glue_phase;
        Ok(spec)
    }

    pub fn bath_grid(&self) -> Result<BathGrid> {
        let g = &self.grid;
        let m = g.m * g.refinement;
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("grid.{key} is required for this grid kind")));
        let grid = match g.kind {
            GridKind::Uniform => BathGrid::uniform(need(g.u_max, "u_max")?, m),
            GridKind::Band => BathGrid::band(need(g.lo, "lo")?, need(g.hi, "hi")?, m),
            GridKind::Geometric => BathGrid::geometric(need(g.first_edge, "first_edge")?, need(g.u_max, "u_max")?, m),
        };
        grid.map_err(|e| Error::Config(format!("grid: {e}")))
    }

    fn param(&self, key: &str) -> Option<&toml::Value> {
        self.params.get(key)
    }

    pub fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.param(key) {
            None => Ok(default),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .ok_or_else(|| Error::Config(format!("params.{key}: expected a number"))),
        }
    }

    pub fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.param(key) {
            None => Ok(default),
            Some(v) => v
                .as_integer()
                .filter(|&i| i >= 0)
                .map(|i| i as usize)
                .ok_or_else(|| Error::Config(format!("params.{key}: expected a non-negative integer"))),
        }
    }

    pub fn param_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.param(key) {
            None => Ok(default.to_vec()),
            Some(toml::Value::Array(a)) => a
                .iter()
                .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Config(format!("params.{key}: expected an array of numbers"))),
            Some(_) => Err(Error::Config(format!("params.{key}: expected an array"))),
        }
    }

    pub fn param_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let v = self.param_f64_list(key, &default.iter().map(|&x| x as f64).collect::<Vec<_>>())?;
        v.iter()
            .map(|&x| if x >= 0.0 && x.fract() == 0.0 { Ok(x as usize) } else { Err(Error::Config(format!("params.{key}: expected integers"))) })
            .collect()
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // reuse the TOML value grammar; bare words become strings
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {path}: {k} is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_scalar(raw.trim()));
    Ok(())
}
