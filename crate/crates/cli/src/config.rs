use std::path::{Path, PathBuf};

use regimefactor::breaks::BreakConfig;
use regimefactor::evaluate::{EvaluationConfig, ModelId, ModelSpec};
use regimefactor::indicator::{MsWeighting, Variant};
use regimefactor::msfactor::EmOptions;
use regimefactor::panel::CsvLayout;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// How input CSV values are turned into inflation rates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RateTransform {
    /// Year-over-year percent change of index levels.
    #[default]
    Yoy,
    /// Month-over-month percent change of index levels.
    Mom,
    /// Values are already inflation rates and are used as they are.
    Rates,
}

/// Every setting of a run. Loaded from `--config`, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub components: Option<PathBuf>,
    pub layout: CsvLayout,
    pub headline: Option<PathBuf>,
    pub headline_column: Option<String>,
    pub transform: RateTransform,
    /// Number of factors.
    pub r: usize,
    /// Number of Markov regimes for `msfit` and the MS indicator.
    pub regimes: usize,
    pub epsilon: f64,
    pub max_breaks: usize,
    pub alpha: f64,
    pub bandwidth: Option<usize>,
    pub em: EmOptions,
    pub weighting: MsWeighting,
    pub variant: Variant,
    pub models: Vec<ModelId>,
    pub evaluation: Option<EvaluationConfig>,
    /// DGP spec for `simulate`.
    pub spec: Option<PathBuf>,
    /// Seeds EM starts, MCS bootstraps and simulations.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BreakConfig::default();
        Self {
            components: None,
            layout: CsvLayout::Wide,
            headline: None,
            headline_column: None,
            transform: RateTransform::Yoy,
            r: 1,
            regimes: 2,
            epsilon: b.epsilon,
            max_breaks: b.max_breaks,
            alpha: b.alpha,
            bandwidth: b.bandwidth,
            em: EmOptions::default(),
            weighting: MsWeighting::default(),
            variant: Variant::Baseline,
            models: vec![ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4, ModelId::SC],
            evaluation: None,
            spec: None,
            seed: 1,
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the config embedded in a run manifest.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bad = |e: String| CliError::invalid(format!("config {}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let expected = value.get("config_sha256").and_then(|h| h.as_str()).map(str::to_string);
        if let Some(expected) = expected {
            value = value
                .get_mut("config")
                .map(serde_json::Value::take)
                .ok_or_else(|| bad("manifest has no config".into()))?;
            let config: Self = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
            let canonical = serde_json::to_vec(&config).map_err(|e| bad(e.to_string()))?;
            if crate::output::sha256_hex(&canonical) != expected {
                return Err(bad("config does not match the manifest hash".into()));
            }
            return Ok(config);
        }
        serde_json::from_value(value).map_err(|e| bad(e.to_string()))
    }

    pub fn break_config(&self) -> BreakConfig {
        BreakConfig {
            epsilon: self.epsilon,
            max_breaks: self.max_breaks,
            alpha: self.alpha,
            r_tilde: self.r,
            bandwidth: self.bandwidth,
        }
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            seed: self.seed,
            ..self.em.clone()
        }
    }

    pub fn model_specs(&self) -> Vec<ModelSpec> {
        self.models
            .iter()
            .map(|&id| ModelSpec {
                id,
                r: self.r,
                em: self.em_options(),
                weighting: self.weighting,
                breaks: self.break_config(),
            })
            .collect()
    }

    /// Checks the settings shared by all commands.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.r == 0 {
            return Err(CliError::invalid("r must be at least 1"));
        }
        if self.regimes == 0 {
            return Err(CliError::invalid("regimes must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(CliError::invalid("epsilon must lie in (0, 0.5)"));
        }
        if self.max_breaks == 0 {
            return Err(CliError::invalid("max_breaks must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::invalid("alpha must lie in (0, 1)"));
        }
        if self.em.max_iter == 0 || !(self.em.tol > 0.0) {
            return Err(CliError::invalid("em.max_iter and em.tol must be positive"));
        }
        if self.models.is_empty() {
            return Err(CliError::invalid("models must not be empty"));
        }
        if let Some(ev) = &self.evaluation {
            if ev.vintage_end < ev.vintage_start {
                return Err(CliError::invalid("evaluation.vintage_end precedes vintage_start"));
            }
            if !(ev.mcs_alpha > 0.0 && ev.mcs_alpha < 1.0) {
                return Err(CliError::invalid("evaluation.mcs_alpha must lie in (0, 1)"));
            }
            if ev.horizons.contains(&0) {
                return Err(CliError::invalid("forecast horizons must be positive"));
            }
        }
        Ok(())
    }

    pub fn require_components(&self) -> Result<&Path, CliError> {
        self.components
            .as_deref()
            .ok_or_else(|| CliError::invalid("no components file given (--components or config key)"))
    }

    pub fn require_headline(&self) -> Result<&Path, CliError> {
        self.headline
            .as_deref()
            .ok_or_else(|| CliError::invalid("no headline file given (--headline or config key)"))
    }
}
