//! Experiment configuration files.
//!
//! Configs are TOML documents with scalar keys at the top level and one
//! nested `[environment]` table. Unknown keys are fatal: silently defaulted
//! typos would corrupt bias/variance studies. Overrides (`key=value`
//! strings, dotted for the environment table) are applied after the file
//! parses and go through the same validation.
//!
//! ```toml
//! pi_e_p = 0.9
//! pi_b_p = 0.5
//! batch_sizes = [128, 256, 512]
//! trials = 32
//! base_seed = 20
//! families = ["sope"]
//! ratio_method = "model-based"
//!
//! [environment]
//! kind = "graph"
//! chain_len = 20
//! gamma = 0.98
//! ```
//!
//! Optional keys and their defaults: `n_values` (every n from 0 to the
//! horizon; the string "all" resets to this), `batch_sizes`
//! ([128, 256, 512]), `trials` (32), `base_seed` (0), `families`
//! (["sope"]), `ratio_method` ("model-based"), `ratio_mode` ("average"),
//! `dr_q_source` ("exact"), `dr_q_epsilon` (0.1).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorFamily, RatioWindowMode};
use crate::harness::{EnvSpec, ExperimentConfig, QSource, RatioSelect};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain_len: Option<usize>,
    gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    pi_e_p: f64,
    pi_b_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_values: Option<Vec<usize>>,
    #[serde(default = "default_batch_sizes")]
    batch_sizes: Vec<usize>,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "default_families")]
    families: Vec<String>,
    #[serde(default = "default_ratio_method")]
    ratio_method: String,
    #[serde(default = "default_ratio_mode")]
    ratio_mode: String,
    #[serde(default = "default_dr_q_source")]
    dr_q_source: String,
    #[serde(default = "default_dr_q_epsilon")]
    dr_q_epsilon: f64,
    environment: RawEnvironment,
}

fn default_batch_sizes() -> Vec<usize> {
    vec![128, 256, 512]
}

fn default_trials() -> usize {
    32
}

fn default_families() -> Vec<String> {
    vec!["sope".to_string()]
}

fn default_ratio_method() -> String {
    "model-based".to_string()
}

fn default_ratio_mode() -> String {
    "average".to_string()
}

fn default_dr_q_source() -> String {
    "exact".to_string()
}

fn default_dr_q_epsilon() -> f64 {
    0.1
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<T>().map_err(|_| {
                Error::Config(format!("override {key}: cannot parse list item `{v}`"))
            })
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("override {key}: cannot parse `{value}`")))
}

impl RawConfig {
    fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "pi_e_p" => self.pi_e_p = parse_scalar(key, value)?,
            "pi_b_p" => self.pi_b_p = parse_scalar(key, value)?,
            "n_values" => {
                self.n_values =
                    if value == "all" { None } else { Some(parse_list(key, value)?) };
            }
            "batch_sizes" => self.batch_sizes = parse_list(key, value)?,
            "trials" => self.trials = parse_scalar(key, value)?,
            "base_seed" => self.base_seed = parse_scalar(key, value)?,
            "families" => {
                self.families = value.split(',').map(|v| v.trim().to_string()).collect();
            }
            "ratio_method" => self.ratio_method = value.to_string(),
            "ratio_mode" => self.ratio_mode = value.to_string(),
            "dr_q_source" => self.dr_q_source = value.to_string(),
            "dr_q_epsilon" => self.dr_q_epsilon = parse_scalar(key, value)?,
            "environment.kind" => self.environment.kind = value.to_string(),
            "environment.chain_len" => {
                self.environment.chain_len = Some(parse_scalar(key, value)?);
            }
            "environment.gamma" => self.environment.gamma = parse_scalar(key, value)?,
            other => {
                return Err(Error::Config(format!("override references unknown key `{other}`")));
            }
        }
        Ok(())
    }

    fn into_experiment(self) -> Result<ExperimentConfig> {
        let env = match self.environment.kind.as_str() {
            "graph" => {
                let chain_len = self.environment.chain_len.ok_or_else(|| {
                    Error::Config("environment.kind = \"graph\" requires chain_len".into())
                })?;
                EnvSpec::Graph { chain_len, gamma: self.environment.gamma }
            }
            "toy_mc" => {
                if self.environment.chain_len.is_some() {
                    return Err(Error::Config(
                        "environment.chain_len is not a toy_mc field".into(),
                    ));
                }
                EnvSpec::ToyMc { gamma: self.environment.gamma }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown environment kind `{other}` (expected graph or toy_mc)"
                )));
            }
        };
        let families = self
            .families
            .iter()
            .map(|name| EstimatorFamily::parse(name))
            .collect::<Result<Vec<_>>>()?;
        let ratio_method = match self.ratio_method.as_str() {
            "oracle" => RatioSelect::Oracle,
            "model-based" => RatioSelect::ModelBased,
            "minmax-tabular" => RatioSelect::MinmaxTabular,
            other => {
                return Err(Error::Config(format!(
                    "unknown ratio_method `{other}` (expected oracle, model-based, or \
                     minmax-tabular)"
                )));
            }
        };
        let ratio_mode = match self.ratio_mode.as_str() {
            "average" => RatioWindowMode::Average,
            "truncated" => RatioWindowMode::Truncated,
            other => {
                return Err(Error::Config(format!(
                    "unknown ratio_mode `{other}` (expected average or truncated)"
                )));
            }
        };
        let dr_q_source = match self.dr_q_source.as_str() {
            "exact" => QSource::Exact,
            "perturbed" => QSource::Perturbed { epsilon: self.dr_q_epsilon },
            "estimated" => QSource::Estimated,
            other => {
                return Err(Error::Config(format!(
                    "unknown dr_q_source `{other}` (expected exact, perturbed, or estimated)"
                )));
            }
        };
        let config = ExperimentConfig {
            env,
            pi_e_p: self.pi_e_p,
            pi_b_p: self.pi_b_p,
            n_values: self.n_values,
            batch_sizes: self.batch_sizes,
            trials: self.trials,
            base_seed: self.base_seed,
            families,
            ratio_method,
            ratio_mode,
            dr_q_source,
        };
        config.validate()?;
        Ok(config)
    }
}

fn raw_from(config: &ExperimentConfig) -> RawConfig {
    let environment = match config.env {
        EnvSpec::Graph { chain_len, gamma } => {
            RawEnvironment { kind: "graph".into(), chain_len: Some(chain_len), gamma }
        }
        EnvSpec::ToyMc { gamma } => {
            RawEnvironment { kind: "toy_mc".into(), chain_len: None, gamma }
        }
    };
    let (dr_q_source, dr_q_epsilon) = match config.dr_q_source {
        QSource::Exact => ("exact".to_string(), default_dr_q_epsilon()),
        QSource::Perturbed { epsilon } => ("perturbed".to_string(), epsilon),
        QSource::Estimated => ("estimated".to_string(), default_dr_q_epsilon()),
    };
    RawConfig {
        pi_e_p: config.pi_e_p,
        pi_b_p: config.pi_b_p,
        n_values: config.n_values.clone(),
        batch_sizes: config.batch_sizes.clone(),
        trials: config.trials,
        base_seed: config.base_seed,
        families: config.families.iter().map(|f| f.name().to_lowercase()).collect(),
        ratio_method: config.ratio_method.name().to_string(),
        ratio_mode: match config.ratio_mode {
            RatioWindowMode::Average => "average".into(),
            RatioWindowMode::Truncated => "truncated".into(),
        },
        dr_q_source,
        dr_q_epsilon,
        environment,
    }
}

/// Parses config text, applies `key=value` overrides in order, validates.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    for entry in overrides {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override `{entry}` is not of the form key=value"))
        })?;
        raw.apply_override(key.trim(), value.trim())?;
    }
    raw.into_experiment()
}

/// Reads and parses a config file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text, overrides)
}

/// Canonical TOML for a config; parsing it back yields the same config.
/// Used for the metadata echo every run writes.
pub fn render_config(config: &ExperimentConfig) -> String {
    toml::to_string(&raw_from(config)).expect("config serialization cannot fail")
}
