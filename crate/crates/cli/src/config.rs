//! Run configuration.
//!
//! A TOML file with a top-level `output_dir` and the tables `[dataset]`,
//! `[dataset.windowing]`, `[model]`, `[model.train]`, `[evaluation]` and
//! `[synth]`. Every key has a default; `--set section.key=value` overrides
//! a key after the file is read. Each command writes the fully resolved
//! configuration next to its outputs.

use std::path::{Path, PathBuf};

use prognostics::models::{ArchitectureSpec, ModelKind, TrainConfig};
use prognostics::pipeline::{SynthConfig, WindowingConfig};
use prognostics::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// C-MAPSS directory with `train_/test_/RUL_<subset>.txt`.
    Cmapss,
    /// Directory of daily Backblaze snapshot CSVs.
    Backblaze,
    /// Long-format sequence CSV as written by `synth`.
    Sequences,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub path: PathBuf,
    /// C-MAPSS subset, `FD001`..`FD004`.
    pub subset: String,
    /// Backblaze drive model.
    pub model: String,
    /// Backblaze SMART columns; the default manifest when empty.
    pub features: Vec<String>,
    /// Share of devices held out for testing (Backblaze and sequence data).
    pub test_fraction: f64,
    /// Share of training devices used for validation.
    pub validation_fraction: f64,
    /// Down-sample censored training devices to the failed count.
    pub balance: bool,
    pub normalize: bool,
    /// Seed for splitting and balancing.
    pub seed: u64,
    pub windowing: WindowingConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Cmapss,
            path: PathBuf::from("data/CMAPSS"),
            subset: "FD001".into(),
            model: "ST4000DM000".into(),
            features: Vec::new(),
            test_fraction: 0.2,
            validation_fraction: 0.3,
            balance: false,
            normalize: true,
            seed: 0,
            windowing: WindowingConfig::cmapss(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Cmapss,
    Backblaze,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Architecture preset, used when `architecture` is absent.
    pub preset: Preset,
    pub architecture: Option<ArchitectureSpec>,
    /// Seed for parameter initialization; shuffling uses `train.seed`.
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mtl,
            preset: Preset::Cmapss,
            architecture: None,
            init_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn resolved_architecture(&self) -> ArchitectureSpec {
        self.architecture.clone().unwrap_or_else(|| match self.preset {
            Preset::Cmapss => ArchitectureSpec::cmapss(self.kind),
            Preset::Backblaze => ArchitectureSpec::backblaze(self.kind),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub confusion_bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { confusion_bins: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub evaluation: EvaluationConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            evaluation: EvaluationConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // bare words that are not valid TOML values are taken as strings
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if given), applies `overrides` and derives the training
    /// horizon and RUL clip from the windowing settings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        // start from the serialized defaults so partial tables are filled in
        let mut table = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::config(format!("cannot serialize defaults: {e}")))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            let file = text
                .parse::<toml::Table>()
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.derive();
        cfg.validate()?;
        Ok(cfg)
    }

    fn derive(&mut self) {
        let w = &self.dataset.windowing;
        self.model.train.horizon = w.horizon();
        self.model.train.max_rul = w.max_rul_windows();
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.dataset.windowing.validate()?;
        self.model.train.validate()?;
        self.model.resolved_architecture().validate(self.model.kind)?;
        if !(0.0..1.0).contains(&self.dataset.test_fraction) || !(0.0..1.0).contains(&self.dataset.validation_fraction) {
            return Err(Error::config("test and validation fractions must be in [0, 1)"));
        }
        if self.evaluation.confusion_bins == 0 {
            return Err(Error::config("confusion_bins must be >= 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.toml"), self.to_toml()?)?;
        Ok(())
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.output_dir.join("prepared")
    }
}
