//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{EdgeStatisticForm, EntityPairs, TrialsRule, DEFAULT_SIGNIFICANCE, DEFAULT_THRESHOLD};
use crate::model::Hyperparams;
use crate::sampler::McmcConfig;
use crate::synth::SimulationSpec;

/// Settings of the `test` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub threshold: f64,
    pub significance: f64,
    pub edge_form: EdgeStatisticForm,
    /// `"mean"`, `"median"` or a fixed positive trial count.
    pub trials: String,
    pub entity_pairs: EntityPairs,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            threshold: DEFAULT_THRESHOLD,
            significance: DEFAULT_SIGNIFICANCE,
            edge_form: EdgeStatisticForm::Squared,
            trials: "mean".into(),
            entity_pairs: EntityPairs::CrossPopulation,
        }
    }
}

impl TestConfig {
    pub fn trials_rule(&self) -> Result<TrialsRule> {
        self.trials.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Config(format!("significance must lie in (0, 1), got {}", self.significance)));
        }
        self.trials_rule().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    H1True,
    H1False,
}

/// Fitting pipeline applied to each dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NcFixed,
    NcMixed,
    /// Binarize at the given node-count ratio, then fit single-trial graphs.
    DdThreshold(f64),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::NcFixed => "nc_fixed",
            Method::NcMixed => "nc_mixed",
            Method::DdThreshold(_) => "dd_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SimulationSpec),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    /// Entities per population.
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials_per_size: usize,
    pub method: Method,
    pub source: DataSource,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    20
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.trials_per_size < 1 {
            return Err(Error::Config("trials_per_size must be at least 1".into()));
        }
        if let Method::DdThreshold(level) = self.method {
            if !(0.0..1.0).contains(&level) {
                return Err(Error::Config(format!("threshold level must lie in [0, 1), got {level}")));
            }
        }
        if let DataSource::Synthetic(s) = &self.source {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub levels: Vec<f64>,
    /// Also fit both count models on the unthresholded data.
    pub references: bool,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            levels: (0..10).map(|k| k as f64 / 10.0).collect(),
            references: true,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hyperparams: Hyperparams,
    pub mcmc: McmcConfig,
    pub tests: TestConfig,
    pub plan: Option<ExperimentPlan>,
    pub sweep: SweepPlan,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parse a config; an omitted `alpha` defaults to `1/n_clusters`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let has_alpha = value
            .get("hyperparams")
            .and_then(|h| h.get("alpha"))
            .is_some();
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if !has_alpha {
            cfg.hyperparams.alpha = 1.0 / cfg.hyperparams.n_clusters.max(1) as f64;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.hyperparams.validate().map_err(wrap)?;
        self.mcmc.validate().map_err(wrap)?;
        self.tests.validate()?;
        if let Some(p) = &self.plan {
            p.validate()?;
        }
        if self.sweep.levels.iter().any(|l| !(0.0..1.0).contains(l)) {
            return Err(Error::Config("sweep levels must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"mcmc": {"n_sample": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mcmc": {"n_samples": 3, "burn_in": 5}}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::from_json(r#"{"mcmc": {"seed": 9}, "hyperparams": {"n_clusters": 4}}"#).unwrap();
        assert_eq!(c.mcmc.seed, 9);
        assert_eq!(c.mcmc.n_samples, 1300);
        assert_eq!(c.hyperparams.n_clusters, 4);
        assert_eq!(c.hyperparams.alpha, 0.25);
        let c = RunConfig::from_json(r#"{"hyperparams": {"n_clusters": 4, "alpha": 2.0}}"#).unwrap();
        assert_eq!(c.hyperparams.alpha, 2.0);
    }

    #[test]
    fn plan_parses() {
        let text = r#"{"plan": {"scenario": "h1_false", "sample_sizes": [10], "trials_per_size": 2,
            "method": {"dd_threshold": 0.3}, "source": {"path": "data"}}}"#;
        let c: RunConfig = serde_json::from_str(text).unwrap();
        let p = c.plan.unwrap();
        assert_eq!(p.method, Method::DdThreshold(0.3));
        assert_eq!(p.source, DataSource::Path("data".into()));
    }
}
