//! JSON run configurations for fits, moderation curves and panel checks.
//!
//! Simulation and replication configs are [`ScenarioConfig`] and
//! [`ExperimentPlan`] themselves. Every schema carries a `version` and
//! rejects unknown keys.
//!
//! [`ScenarioConfig`]: crate::simulate::ScenarioConfig
//! [`ExperimentPlan`]: crate::harness::ExperimentPlan

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::estimate::{Estimator, EstimatorOptions, SolverOptions};
use crate::panel::{FeatureSpec, OutcomeDefinition, Schema};
use crate::variance::SmallSample;
use crate::weights::{Numerator, ReferencePolicy};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn default_xi() -> f64 {
    0.05
}

fn one() -> usize {
    1
}

pub(crate) fn check_version(kind: &str, version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported {kind} config version {version} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Parse a JSON config file, naming the file in any schema error.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Moderator grid: explicit values, or an inclusive `from..=to` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Grid {
    Values { values: Vec<f64> },
    Range { from: f64, to: f64, step: f64 },
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        match self {
            Grid::Values { values } if values.is_empty() => Err(Error::Config("empty moderator grid".into())),
            Grid::Values { values } => Ok(values.clone()),
            Grid::Range { from, to, step } => {
                if !(*step > 0.0) || !(to >= from) || !from.is_finite() || !to.is_finite() {
                    return Err(Error::Config(format!("bad grid range {from}..{to} step {step}")));
                }
                // Round so that 0..1 step 0.1 has 11 points despite 0.1's
                // binary representation.
                let n = ((to - from) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|i| from + i as f64 * step).collect())
            }
        }
    }
}

/// A fit of one estimator to a CSV panel. Also drives `moderation-curve`,
/// which additionally needs `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Panel CSV; relative paths resolve against the config file.
    pub panel: PathBuf,
    #[serde(default)]
    pub schema: Schema,
    pub estimator: Estimator,
    #[serde(default = "FeatureSpec::intercept")]
    pub moderator: FeatureSpec,
    #[serde(default = "FeatureSpec::intercept")]
    pub control: FeatureSpec,
    /// Outcome lag Δ.
    #[serde(default = "one")]
    pub delta: usize,
    #[serde(default)]
    pub outcome: OutcomeDefinition,
    #[serde(default)]
    pub reference_policy: ReferencePolicy,
    #[serde(default)]
    pub numerator: Numerator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_numerator: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub small_sample: SmallSample,
    #[serde(default = "default_xi")]
    pub xi: f64,
    /// Linear contrasts `c'β` to report, each of length q.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contrasts: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
}

impl FitConfig {
    pub fn new(panel: impl Into<PathBuf>, estimator: Estimator) -> Self {
        FitConfig {
            version: SCHEMA_VERSION,
            panel: panel.into(),
            schema: Schema::default(),
            estimator,
            moderator: FeatureSpec::intercept(),
            control: FeatureSpec::intercept(),
            delta: 1,
            outcome: OutcomeDefinition::default(),
            reference_policy: ReferencePolicy::default(),
            numerator: Numerator::default(),
            joint_numerator: None,
            solver: SolverOptions::default(),
            small_sample: SmallSample::default(),
            xi: default_xi(),
            contrasts: Vec::new(),
            grid: None,
        }
    }

    /// Load and check a config; a relative `panel` is rebased onto the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: FitConfig = read_json(path)?;
        if config.panel.is_relative() {
            if let Some(dir) = path.parent() {
                config.panel = dir.join(&config.panel);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        check_version("fit", self.version)?;
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Config(format!("xi {} outside (0,1)", self.xi)));
        }
        if self.moderator.dim() == 0 || self.control.dim() == 0 {
            return Err(Error::Config("moderator and control need at least one term".into()));
        }
        if let Some(c) = self.contrasts.iter().find(|c| c.len() != self.moderator.dim()) {
            return Err(Error::Config(format!(
                "contrast of length {} for {} moderator terms",
                c.len(),
                self.moderator.dim()
            )));
        }
        if let Some(grid) = &self.grid {
            grid.points()?;
        }
        self.options()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn options(&self) -> EstimatorOptions {
        EstimatorOptions {
            estimator: self.estimator,
            delta: self.delta,
            reference_policy: self.reference_policy.clone(),
            numerator: self.numerator.clone(),
            joint_numerator: self.joint_numerator,
            solver: self.solver.clone(),
        }
    }
}

/// Panel checks only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub panel: PathBuf,
    #[serde(default)]
    pub schema: Schema,
}

impl ValidateConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: ValidateConfig = read_json(path)?;
        check_version("validate", config.version)?;
        if config.panel.is_relative() {
            if let Some(dir) = path.parent() {
                config.panel = dir.join(&config.panel);
            }
        }
        Ok(config)
    }
}
