//! Run configuration: a JSON file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use pivotal_core::mc::GridSpec;
use pivotal_core::verify::Mode;
use pivotal_core::{AdjustmentSpec, ModelSpec, PivotKind, WecVariant};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// A model given either by registry name or as a full specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelArg {
    Name(String),
    Spec(ModelSpec),
}

/// An adjustment given by short name (`none`, `tk-flat`) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdjustmentArg {
    Name(String),
    Spec(AdjustmentSpec),
}

/// Data drawn from the model instead of read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub theta: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelArg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivots: Option<Vec<PivotKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<Vec<PivotKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor_reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjustment: Option<AdjustmentArg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wec: Option<WecVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output paths stay out of the embedded config so that reports written
    /// to different places can still be compared byte for byte.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub csv: Option<PathBuf>,
}

pub const DEFAULT_BOOTSTRAP_REPS: usize = 2000;
pub const DEFAULT_BARTLETT_REPS: usize = 10_000;
pub const DEFAULT_TENSOR_REPS: usize = 100_000;
pub const DEFAULT_OUTER: usize = 1000;

/// Reads the optional config file and lays `overrides` over its top-level keys.
pub fn load(path: Option<&Path>, overrides: Map<String, Value>) -> Result<RunConfig, CliError> {
    let mut base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Validation(format!("config {} must hold a JSON object", p.display()))),
                Err(e) => return Err(CliError::Validation(format!("config {}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(old)), Value::Object(new)) => old.extend(new),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    serde_path_to_error::deserialize(Value::Object(base)).map_err(|e| {
        let at = e.path().to_string();
        CliError::Validation(format!("config field `{at}`: {}", e.into_inner()))
    })
}

impl RunConfig {
    pub fn require<T: Clone>(field: &Option<T>, name: &str) -> Result<T, CliError> {
        field.clone().ok_or_else(|| CliError::Validation(format!("missing required field `{name}`")))
    }

    /// Replaces a model name by its full specification.
    pub fn resolve_model(&mut self) -> Result<ModelSpec, CliError> {
        let spec = match Self::require(&self.model, "model")? {
            ModelArg::Name(name) => ModelSpec::from_name(&name)?,
            ModelArg::Spec(spec) => {
                spec.validate()?;
                spec
            }
        };
        self.model = Some(ModelArg::Spec(spec.clone()));
        Ok(spec)
    }

    pub fn resolve_adjustment(&mut self) -> Result<Option<AdjustmentSpec>, CliError> {
        let spec = match &self.adjustment {
            None => return Ok(None),
            Some(AdjustmentArg::Spec(s)) => *s,
            Some(AdjustmentArg::Name(name)) => match name.as_str() {
                "none" => AdjustmentSpec::none(),
                "tk-flat" | "tierney-kadane" => AdjustmentSpec::tierney_kadane_flat(),
                other => return Err(CliError::Validation(format!("config field `adjustment`: unknown adjustment `{other}`"))),
            },
        };
        self.adjustment = Some(AdjustmentArg::Spec(spec));
        Ok(Some(spec))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Validation("a seed is required for this command (`--seed`)".into()))
    }

    /// Fills a defaulted field and records the value used.
    pub fn default_of<T: Clone>(field: &mut Option<T>, value: T) -> T {
        field.get_or_insert(value).clone()
    }
}
