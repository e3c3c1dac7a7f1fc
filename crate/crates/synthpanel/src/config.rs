//! Study and simulation configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use synthpanel_core::{CovariateTransform, DgpConfig, OutcomeKind};

use crate::error::{read_file, Result, Stage, StudyError};
use crate::eurostat::EurostatFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv,
    Eurostat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Relative paths are resolved against the config file's directory.
    pub path: PathBuf,
    /// Series selection, required for `source = "eurostat"`.
    #[serde(default)]
    pub eurostat: Option<EurostatFilter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMode {
    Level,
    GrowthPercent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    #[default]
    Growth,
    Level,
}

impl From<CovariateMode> for CovariateTransform {
    fn from(m: CovariateMode) -> Self {
        match m {
            CovariateMode::Growth => CovariateTransform::Growth,
            CovariateMode::Level => CovariateTransform::Level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exclude {
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub treated_unit: String,
    pub first_treated_period: i32,
    pub outcome_mode: OutcomeMode,
    /// How covariates are transformed when `outcome_mode = "growth_percent"`.
    #[serde(default)]
    pub covariate_transform: CovariateMode,
    #[serde(default)]
    pub exclude: Vec<Exclude>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorsSection {
    /// Pre-treatment periods used as outcome predictors; all when absent.
    #[serde(default)]
    pub outcome_periods: Option<Vec<i32>>,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "yes")]
    pub standardize: bool,
}

impl Default for PredictorsSection {
    fn default() -> Self {
        Self { outcome_periods: None, covariates: Vec::new(), standardize: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Scm,
    Sdid,
    Did,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Scm => "scm",
            Estimator::Sdid => "sdid",
            Estimator::Did => "did",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceChoice {
    Placebo,
    Jackknife,
    #[default]
    Both,
}

impl InferenceChoice {
    pub fn placebo(self) -> bool {
        matches!(self, InferenceChoice::Placebo | InferenceChoice::Both)
    }

    pub fn jackknife(self) -> bool {
        matches!(self, InferenceChoice::Jackknife | InferenceChoice::Both)
    }
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Scm, Estimator::Sdid]
}

fn default_level() -> f64 {
    0.95
}

fn default_multistarts() -> usize {
    10
}

fn default_evaluations() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub inference: InferenceChoice,
    #[serde(default = "default_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Starting points of the predictor-weight search.
    #[serde(default = "default_multistarts")]
    pub multistarts: usize,
    #[serde(default = "default_evaluations")]
    pub max_evaluations: usize,
    /// Run the post/pre MSPE ratio permutation test for the synthetic control.
    #[serde(default = "yes")]
    pub mspe_test: bool,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            estimators: default_estimators(),
            inference: InferenceChoice::default(),
            ci_level: default_level(),
            seed: 0,
            multistarts: default_multistarts(),
            max_evaluations: default_evaluations(),
            mspe_test: true,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out(), svg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub data: DataSection,
    pub study: StudySection,
    #[serde(default)]
    pub predictors: PredictorsSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn invalid(message: impl Into<String>) -> StudyError {
    StudyError::validation(Stage::Config, message)
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = read_file(Stage::Config, path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| invalid(format!("{}: not UTF-8: {e}", path.display())))?;
        let mut cfg = Self::from_toml(text).map_err(|e| invalid(format!("{}: {}", path.display(), e.message)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        match (self.data.source, &self.data.eurostat) {
            (DataSource::Eurostat, None) => return Err(invalid("data.eurostat is required for source = \"eurostat\"")),
            (DataSource::Csv, Some(_)) => return Err(invalid("data.eurostat is only valid with source = \"eurostat\"")),
            _ => {}
        }
        let est = &self.estimation;
        if est.estimators.is_empty() {
            return Err(invalid("estimation.estimators must not be empty"));
        }
        if !(est.ci_level > 0.0 && est.ci_level < 1.0) {
            return Err(invalid(format!("estimation.ci_level {} outside (0, 1)", est.ci_level)));
        }
        if est.multistarts == 0 {
            return Err(invalid("estimation.multistarts must be at least 1"));
        }
        let mut sorted = est.estimators.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != est.estimators.len() {
            return Err(invalid("estimation.estimators lists an estimator twice"));
        }
        if self.study.exclude.iter().any(|e| e.unit == self.study.treated_unit) {
            return Err(invalid(format!("the treated unit `{}` cannot be excluded", self.study.treated_unit)));
        }
        Ok(())
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        match self.study.outcome_mode {
            OutcomeMode::Level => OutcomeKind::Level,
            OutcomeMode::GrowthPercent => OutcomeKind::GrowthPercent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub n_donors: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub n_factors: usize,
    pub noise_sd: f64,
    pub true_tau: f64,
    pub loading_scale: f64,
}

impl Default for DgpSection {
    fn default() -> Self {
        let d = DgpConfig::default();
        Self {
            n_donors: d.n_donors,
            n_pre: d.n_pre,
            n_post: d.n_post,
            n_factors: d.n_factors,
            noise_sd: d.noise_sd,
            true_tau: d.true_tau,
            loading_scale: d.loading_scale,
        }
    }
}

impl DgpSection {
    pub fn to_dgp(&self, seed: u64) -> DgpConfig {
        DgpConfig {
            n_donors: self.n_donors,
            n_pre: self.n_pre,
            n_post: self.n_post,
            n_factors: self.n_factors,
            noise_sd: self.noise_sd,
            true_tau: self.true_tau,
            seed,
            loading_scale: self.loading_scale,
        }
    }
}

fn default_replications() -> usize {
    200
}

fn default_sim_estimators() -> Vec<Estimator> {
    vec![Estimator::Sdid]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Replication `r` uses seed `first_seed + r`.
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "default_sim_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_level")]
    pub ci_level: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            replications: default_replications(),
            first_seed: 0,
            estimators: default_sim_estimators(),
            ci_level: default_level(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default)]
    pub dgp: DgpSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimulationConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = read_file(Stage::Config, path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| invalid(format!("{}: not UTF-8: {e}", path.display())))?;
        let mut cfg = Self::from_toml(text).map_err(|e| invalid(format!("{}: {}", path.display(), e.message)))?;
        if cfg.output.dir.is_relative() {
            cfg.output.dir = path.parent().unwrap_or(Path::new("")).join(&cfg.output.dir);
        }
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.to_dgp(0).validate().map_err(|e| invalid(format!("dgp: {e}")))?;
        let sim = &self.simulation;
        if sim.replications == 0 {
            return Err(invalid("simulation.replications must be at least 1"));
        }
        if sim.estimators.is_empty() {
            return Err(invalid("simulation.estimators must not be empty"));
        }
        if !(sim.ci_level > 0.0 && sim.ci_level < 1.0) {
            return Err(invalid(format!("simulation.ci_level {} outside (0, 1)", sim.ci_level)));
        }
        Ok(())
    }
}
