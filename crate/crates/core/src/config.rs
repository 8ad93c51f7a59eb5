//! Run configuration: a TOML file with nested sections, strict about
//! unknown keys, plus dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crossfit::CrossfitPlan;
use crate::data::CsvOptions;
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::sensitivity::GridSpec;
use crate::simulation::ExperimentSettings;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; all randomness flows from it.
    pub seed: u64,
    pub data: DataConfig,
    pub crossfit: CrossfitConfig,
    pub learner: LearnerSpec,
    pub sensitivity: SensitivityConfig,
    pub simulation: SimulationConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 509,
            data: DataConfig::default(),
            crossfit: CrossfitConfig::default(),
            learner: LearnerSpec::default(),
            sensitivity: SensitivityConfig::default(),
            simulation: SimulationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub delimiter: char,
    pub columns: crate::data::ColumnMap,
}

impl Default for DataConfig {
    fn default() -> Self {
        let csv = CsvOptions::default();
        DataConfig {
            path: None,
            delimiter: csv.delimiter,
            columns: csv.columns,
        }
    }
}

impl DataConfig {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            delimiter: self.delimiter,
            columns: self.columns.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossfitConfig {
    pub folds: usize,
    pub repetitions: usize,
    pub clip_epsilon: f64,
}

impl Default for CrossfitConfig {
    fn default() -> Self {
        CrossfitConfig {
            folds: 5,
            repetitions: 1,
            clip_epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub eta: f64,
    pub rho: f64,
    pub c2_y: f64,
    pub c2_d: f64,
    /// Null value the region is compared against.
    pub threshold: f64,
    pub rv_max: f64,
    /// Use the point-estimate robustness value instead of the
    /// confidence-bound crossing.
    pub rv_point_estimate: bool,
    pub grid: GridConfig,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            eta: 0.05,
            rho: 1.0,
            c2_y: 0.0,
            c2_d: 0.0,
            threshold: 0.0,
            rv_max: 1.0,
            rv_point_estimate: false,
            grid: GridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub c2_d_max: f64,
    pub c2_y_max: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        GridConfig {
            c2_d_max: g.c2_d_max,
            c2_y_max: g.c2_y_max,
            points: g.points,
        }
    }
}

impl From<&GridConfig> for GridSpec {
    fn from(g: &GridConfig) -> Self {
        GridSpec {
            c2_d_max: g.c2_d_max,
            c2_y_max: g.c2_y_max,
            points: g.points,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub preset: Option<String>,
    pub replicates: usize,
    /// Optional grid overrides; presets supply defaults.
    pub q_grid: Option<Vec<f64>>,
    pub n1_grid: Option<Vec<usize>>,
    pub n0_grid: Option<Vec<usize>>,
    pub target_n1: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            preset: None,
            replicates: 500,
            q_grid: None,
            n1_grid: None,
            n0_grid: None,
            target_n1: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub influence_dump: bool,
    pub provenance_dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            influence_dump: false,
            provenance_dump: false,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, &[])
    }

    /// Parse config text and apply `--set section.key=value` overrides before
    /// deserializing, so overrides face the same unknown-key checks.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig = RunConfig::deserialize(value.clone())
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        if !(self.sensitivity.eta > 0.0 && self.sensitivity.eta < 1.0) {
            return Err(Error::Config("sensitivity.eta must lie in (0,1)".into()));
        }
        if !(-1.0..=1.0).contains(&self.sensitivity.rho) {
            return Err(Error::Config("sensitivity.rho must lie in [-1,1]".into()));
        }
        if self.sensitivity.c2_y < 0.0 || self.sensitivity.c2_d < 0.0 {
            return Err(Error::Config("sensitivity c2 values must be >= 0".into()));
        }
        if self.simulation.replicates == 0 {
            return Err(Error::Config("simulation.replicates must be >= 1".into()));
        }
        Ok(())
    }

    /// Cross-fitting plan with per-nuisance learner specs derived from the
    /// shared learner section.
    pub fn plan(&self) -> CrossfitPlan {
        let mut plan = CrossfitPlan::new(
            self.crossfit.folds,
            self.crossfit.repetitions,
            self.seed,
            self.learner.clone(),
        );
        plan.clip_epsilon = self.crossfit.clip_epsilon;
        plan
    }

    pub fn experiment_settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            folds: self.crossfit.folds,
            repetitions: self.crossfit.repetitions,
            clip_epsilon: self.crossfit.clip_epsilon,
            learner: self.learner.clone(),
            eta: self.sensitivity.eta,
            seed: self.seed,
        }
    }

    /// Canonical TOML rendering embedded in every output file.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# serialization failed: {e}"))
    }
}

fn apply_override(root: &mut toml::Value, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| {
        Error::Config(format!("override `{item}` must look like section.key=value"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override `{item}` has an empty key")));
    }
    // parse the value as a TOML literal; fall back to a plain string
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            let table = node.as_table_mut().ok_or_else(|| {
                Error::Config(format!("override path `{path}` does not address a table"))
            })?;
            table.insert(seg.to_string(), parsed);
            return Ok(());
        }
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override path `{path}` does not address a table"))
        })?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("override paths always have at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerKind;

    const SAMPLE: &str = r#"
seed = 7

[data]
path = "trial.csv"
delimiter = ","

[data.columns]
d = "in_trial"
a = "treated"
y = "outcome"
covariates = ["age", "stage"]

[crossfit]
folds = 4
repetitions = 2

[learner]
kind = "logistic"
l2_penalty = 0.001

[sensitivity]
eta = 0.1
c2_y = 0.04
c2_d = 0.03

[simulation]
preset = "fig3-bias"
replicates = 100

[output]
dir = "results"
influence_dump = true
"#;

    #[test]
    fn parses_full_sample() {
        let cfg = RunConfig::from_toml_str(SAMPLE, &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.crossfit.folds, 4);
        assert_eq!(cfg.learner.kind, LearnerKind::Logistic);
        assert_eq!(cfg.data.columns.covariates, vec!["age", "stage"]);
        assert_eq!(cfg.sensitivity.eta, 0.1);
        assert_eq!(cfg.simulation.preset.as_deref(), Some("fig3-bias"));
        assert_eq!(cfg.output.dir, PathBuf::from("results"));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = "[crossfit]\nfolds = 5\nfoldz = 3\n";
        let err = RunConfig::from_toml_str(bad, &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foldz"), "{msg}");
    }

    #[test]
    fn defaults_apply_when_sections_missing() {
        let cfg = RunConfig::from_toml_str("seed = 1\n", &[]).unwrap();
        assert_eq!(cfg.crossfit.folds, 5);
        assert_eq!(cfg.sensitivity.eta, 0.05);
        assert_eq!(cfg.sensitivity.rho, 1.0);
        assert_eq!(cfg.simulation.replicates, 500);
    }

    #[test]
    fn overrides_reach_nested_keys_and_are_checked() {
        let cfg = RunConfig::from_toml_str(
            SAMPLE,
            &[
                "crossfit.folds=10".into(),
                "sensitivity.c2_y=0.5".into(),
                "learner.kind=\"forest\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.crossfit.folds, 10);
        assert_eq!(cfg.sensitivity.c2_y, 0.5);
        assert_eq!(cfg.learner.kind, LearnerKind::Forest);

        let err = RunConfig::from_toml_str(SAMPLE, &["crossfit.bogus=1".into()]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = RunConfig::from_toml_str(SAMPLE, &["noequals".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[sensitivity]\neta = 1.5\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("[sensitivity]\nrho = -2\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("[learner]\ntrees = 0\n", &[]).is_err());
    }

    #[test]
    fn resolved_toml_roundtrips() {
        let cfg = RunConfig::from_toml_str(SAMPLE, &[]).unwrap();
        let rendered = cfg.resolved_toml();
        let back = RunConfig::from_toml_str(&rendered, &[]).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.crossfit.folds, cfg.crossfit.folds);
        assert_eq!(back.data.path, cfg.data.path);
    }
}
