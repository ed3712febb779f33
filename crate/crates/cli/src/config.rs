//! The JSON run configuration: one document per command, selected by its `mode` field.

use std::path::{Path, PathBuf};

use rankpilot::condense::CondenseConfig;
use rankpilot::evaluator::external::DEFAULT_TIMEOUT_SECS;
use rankpilot::evaluator::toy::SWEEP_ENERGIES;
use rankpilot::evaluator::Split;
use rankpilot::reward::{RewardConfig, RewardMode, DEFAULT_PUNISH_OFFSET, DEFAULT_PUNISH_SLOPE};
use rankpilot::search::{ControllerConfig, DEFAULT_TOP_K};
use rankpilot::space::EnergyRanges;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exit::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RunConfig {
    Toy(ToyRun),
    Sweep(SweepRun),
    Space(SpaceRun),
    Search(SearchRun),
    Condense(CondenseRun),
    Select(SelectRun),
}

impl RunConfig {
    pub fn mode(&self) -> &'static str {
        match self {
            RunConfig::Toy(_) => "toy",
            RunConfig::Sweep(_) => "sweep",
            RunConfig::Space(_) => "space",
            RunConfig::Search(_) => "search",
            RunConfig::Condense(_) => "condense",
            RunConfig::Select(_) => "select",
        }
    }
}

/// Where models are scored: the bundled toy profile or an external command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EvaluatorBinding {
    Toy {
        #[serde(default)]
        profile_seed: u64,
        #[serde(default = "default_split")]
        split: Split,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_dataset")]
        dataset: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_split() -> Split {
    Split::Dev
}
fn default_dataset() -> String {
    "dev".into()
}
fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}
fn default_sweep_energies() -> Vec<f64> {
    SWEEP_ENERGIES.to_vec()
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_slope() -> f64 {
    DEFAULT_PUNISH_SLOPE
}
fn default_offset() -> f64 {
    DEFAULT_PUNISH_OFFSET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyRun {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    #[serde(default)]
    pub seed: u64,
    pub evaluator: EvaluatorBinding,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Restricts the searchable layers to these names.
    #[serde(default)]
    pub layers: Option<Vec<String>>,
    #[serde(default = "default_sweep_energies")]
    pub energies: Vec<f64>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceRun {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub evaluator: Option<EvaluatorBinding>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub layers: Option<Vec<String>>,
    pub energies: EnergyRanges,
    pub output: PathBuf,
}

/// A space file written by the `space` command, or energies to build one from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SpaceSource {
    Path(PathBuf),
    Energies(EnergyRanges),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub mode: RewardMode,
    pub target_speedup: f64,
    /// Error of the uncompressed model on the search split; measured when absent.
    #[serde(default)]
    pub baseline_error: Option<f64>,
    #[serde(default = "default_slope")]
    pub punish_slope: f64,
    #[serde(default = "default_offset")]
    pub punish_offset: f64,
}

impl RewardSection {
    pub fn resolve(&self, baseline_error: f64) -> rankpilot::Result<RewardConfig> {
        let cfg = RewardConfig {
            mode: self.mode,
            baseline_error,
            target_speedup: self.target_speedup,
            punish_slope: self.punish_slope,
            punish_offset: self.punish_offset,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRun {
    #[serde(default)]
    pub seed: u64,
    pub evaluator: EvaluatorBinding,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub layers: Option<Vec<String>>,
    pub space: SpaceSource,
    pub reward: RewardSection,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub max_steps: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Condensed-set manifest; the toy evaluator then scores only the selected dev samples.
    #[serde(default)]
    pub condensed: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// Sample ids and lengths of the external evaluator's dataset, in its per-sample order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleIndex {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondenseRun {
    #[serde(default)]
    pub seed: u64,
    pub evaluator: EvaluatorBinding,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Cohort model files; the toy profile generates its own cohort when absent.
    #[serde(default)]
    pub cohorts: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub samples: Option<SampleIndex>,
    pub condense: CondenseConfig,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRun {
    #[serde(default)]
    pub seed: u64,
    /// Holdout evaluator.
    pub evaluator: EvaluatorBinding,
    /// Output directory of a finished `search` run.
    pub search_dir: PathBuf,
    #[serde(default = "default_top_k")]
    pub k: usize,
    pub output: PathBuf,
}

/// A `path=value` assignment from the command line; `value` is parsed as JSON, falling back
/// to a plain string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl std::str::FromStr for Override {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (path, raw) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(format!("malformed key `{path}`"));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Self { path: path.to_string(), value })
    }
}

/// Sets a scalar field, creating it if absent. Returns the previous value.
pub fn apply_override(doc: &mut Value, ov: &Override) -> CliResult<Option<Value>> {
    if ov.value.is_object() || ov.value.is_array() {
        return Err(CliError::config(format!("override `{}` must be a scalar", ov.path)));
    }
    let mut keys: Vec<&str> = ov.path.split('.').collect();
    let last = keys.pop().expect("non-empty path");
    let mut node = doc;
    for key in keys {
        node = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("override `{}`: `{key}` is not inside an object", ov.path)))?
            .entry(key)
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let map = node.as_object_mut().ok_or_else(|| CliError::config(format!("override `{}` does not address an object field", ov.path)))?;
    if let Some(old) = map.get(last) {
        if old.is_object() || old.is_array() {
            return Err(CliError::config(format!("override `{}` would replace a non-scalar field", ov.path)));
        }
    }
    Ok(map.insert(last.to_string(), ov.value.clone()))
}

/// Reads the config file, applies overrides (logging each) and checks the mode.
pub fn load(path: &Path, overrides: &[Override], expected_mode: &str) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for ov in overrides {
        let old = apply_override(&mut doc, ov)?;
        match old {
            Some(old) => log::info!("override {} = {} (config had {})", ov.path, ov.value, old),
            None => log::info!("override {} = {} (not in config)", ov.path, ov.value),
        }
    }
    let config: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if config.mode() != expected_mode {
        return Err(CliError::config(format!("config mode is `{}` but the `{expected_mode}` command was run", config.mode())));
    }
    log::info!("resolved config: {}", serde_json::to_string(&config).expect("config serializes"));
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(v: Value) -> Result<RunConfig, serde_json::Error> {
        serde_json::from_value(v)
    }

    #[test]
    fn modes_and_defaults() {
        let cfg = parse(json!({"mode": "sweep", "evaluator": {"kind": "toy"}, "output": "s.csv"})).unwrap();
        let RunConfig::Sweep(s) = cfg else { panic!("wrong mode") };
        assert_eq!(s.energies, SWEEP_ENERGIES.to_vec());
        assert_eq!(s.evaluator, EvaluatorBinding::Toy { profile_seed: 0, split: Split::Dev });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(json!({"mode": "toy", "output_dir": "x", "colour": 1})).is_err());
        assert!(parse(json!({"mode": "sweep", "evaluator": {"kind": "toy", "spilt": "dev"}, "output": "s"})).is_err());
        assert!(parse(json!({"mode": "teleport", "output_dir": "x"})).is_err());
    }

    #[test]
    fn search_requires_a_target() {
        let base = json!({
            "mode": "search", "evaluator": {"kind": "toy"}, "space": {"energies": {"default": [1.0, 0.9]}},
            "reward": {"mode": "conservative"}, "max_steps": 10, "output_dir": "out"
        });
        let err = parse(base).unwrap_err().to_string();
        assert!(err.contains("target_speedup"), "{err}");
    }

    #[test]
    fn overrides_replace_and_create_scalars() {
        let mut doc = json!({"seed": 1, "reward": {"mode": "conservative"}, "space": {"energies": {"default": [1.0]}}});
        let old = apply_override(&mut doc, &"seed=7".parse().unwrap()).unwrap();
        assert_eq!(old, Some(json!(1)));
        assert_eq!(doc["seed"], json!(7));
        apply_override(&mut doc, &"reward.baseline_error=2.5".parse().unwrap()).unwrap();
        assert_eq!(doc["reward"]["baseline_error"], json!(2.5));
        apply_override(&mut doc, &"reward.mode=aggressive".parse().unwrap()).unwrap();
        assert_eq!(doc["reward"]["mode"], json!("aggressive"));
        assert!(apply_override(&mut doc, &"space.energies=1".parse().unwrap()).is_err());
        assert!(apply_override(&mut doc, &"seed=[1,2]".parse().unwrap()).is_err());
        assert!("noequals".parse::<Override>().is_err());
        assert!("a..b=1".parse::<Override>().is_err());
    }
}
