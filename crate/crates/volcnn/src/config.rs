//! The single experiment configuration file (TOML) and `--set` overrides.
//!
//! Every section is optional; missing keys take the defaults below. Keys:
//!
//! - `[synthetic]`: the in-domain synthetic cohort (`dims`, `n_per_class`,
//!   `semi_axes`, `cavity_radius`, `delta`, `cavity_intensity`, `softness`,
//!   `size_jitter`, `cavity_jitter`, `center_jitter`, `noise_sigma`, `seed`).
//! - `[external]`: the domain-shift cohort, same keys.
//! - `[data]`: `manifest`, `folds` (paths; default under the output
//!   directory), `k`, `fold_seed`.
//! - `[preprocess]`: `dims`, `normalize` (`standardize` | `center_only`).
//! - `[model]`: `base_filters`, `pooling_sizes`, `activation`, `pool_kind`,
//!   `bn_momentum`, `bn_epsilon`, `dropout_p`.
//! - `[train]`: `learning_rate`, `l2_weight`, `max_epochs`, `patience`,
//!   `batch_size`, `adam_beta1`, `adam_beta2`, `adam_epsilon`, `drop_last`,
//!   `eval_batch_size` (the seed is derived per run).
//! - `[augment]`: `zoom`, `shift`, `angle_deg`, `include_originals`.
//! - `[experiment]`: `strategies`, `depths`, `trials`, `master_seed`,
//!   `dropout_grid`.
//! - `[tsne]`: t-SNE settings.
//! - `[runtime]`: `jobs` (0 = all cores), `reference_mode`, `portable_kernels`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volcnn_core::augment::{AugmentRanges, Strategy};
use volcnn_core::dataset::SyntheticSpec;
use volcnn_core::metrics::TsneConfig;
use volcnn_core::nn::{Activation, ArchitectureSpec, PoolKind, DEFAULT_EPSILON, DEFAULT_MOMENTUM, PAPER_INPUT};
use volcnn_core::train::TrainConfig;
use volcnn_core::volume::{Dims, NormalizeMode};

use crate::error::{read_string, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub synthetic: SyntheticSpec,
    pub external: SyntheticSpec,
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub experiment: ExperimentConfig,
    pub tsne: TsneConfig,
    pub runtime: RuntimeConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub k: usize,
    pub fold_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, folds: None, k: 7, fold_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub dims: Dims,
    pub normalize: NormalizeMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { dims: PAPER_INPUT, normalize: NormalizeMode::Standardize }
    }
}

/// Architecture settings shared by every depth; input dims come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_filters: usize,
    pub pooling_sizes: [usize; 4],
    pub activation: Activation,
    pub pool_kind: PoolKind,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = ArchitectureSpec::paper(4);
        Self {
            base_filters: s.base_filters,
            pooling_sizes: s.pooling_sizes,
            activation: s.activation,
            pool_kind: s.pool_kind,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_epsilon: DEFAULT_EPSILON,
            dropout_p: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, depth: usize, input_dims: Dims, dropout_p: f64) -> ArchitectureSpec {
        ArchitectureSpec {
            base_filters: self.base_filters,
            pooling_sizes: self.pooling_sizes,
            activation: self.activation,
            pool_kind: self.pool_kind,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
            dropout_p,
            ..ArchitectureSpec::with_input(depth, input_dims)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub zoom: f64,
    pub shift: f64,
    pub angle_deg: f64,
    /// Train on originals plus augmented copies (2N for A, 4N for B and C).
    pub include_originals: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let r = AugmentRanges::default();
        Self { zoom: r.zoom, shift: r.shift, angle_deg: r.angle_deg, include_originals: true }
    }
}

impl AugmentConfig {
    pub fn ranges(&self) -> AugmentRanges {
        AugmentRanges { zoom: self.zoom, shift: self.shift, angle_deg: self.angle_deg }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub depths: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub dropout_grid: Vec<f64>,
    /// Test folds to run; all folds when absent.
    pub folds: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            depths: volcnn_core::nn::DEPTHS.to_vec(),
            trials: 10,
            master_seed: 0,
            dropout_grid: vec![0.0, 0.1, 0.25, 0.5],
            folds: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    /// Concurrent runs; 0 uses every available core.
    pub jobs: usize,
    /// One run at a time; runs are bit-reproducible on the same machine.
    pub reference_mode: bool,
    /// Use the portable convolution kernels so results match across machines.
    pub portable_kernels: bool,
}

impl RuntimeConfig {
    pub fn effective_jobs(&self) -> usize {
        if self.reference_mode {
            1
        } else if self.jobs == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.jobs
        }
    }
}

/// Parses a `--set` value: TOML syntax when it parses, otherwise a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `a.b.c=value` override to a parsed document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override `{assignment}` lacks `=`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Config = toml::Value::Table(doc).try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => read_string(p)?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Fails only for values TOML cannot hold (integers above `i64::MAX`).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 || e.strategies.is_empty() || e.depths.is_empty() || e.dropout_grid.is_empty() {
            return Err(Error::Config("experiment needs ≥1 trial, strategy, depth and dropout value".into()));
        }
        if let Some(d) = e.depths.iter().find(|d| !volcnn_core::nn::DEPTHS.contains(d)) {
            return Err(Error::Config(format!("depth {d} is not one of {:?}", volcnn_core::nn::DEPTHS)));
        }
        if let Some(p) = e.dropout_grid.iter().find(|p| !(0.0..=0.5).contains(*p)) {
            return Err(Error::Config(format!("dropout {p} outside [0, 0.5]")));
        }
        self.augment.ranges().validate()?;
        self.synthetic.validate()?;
        self.external.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn manifest_path(&self, out: &Path) -> PathBuf {
        self.data.manifest.clone().unwrap_or_else(|| out.join("data").join("manifest.csv"))
    }

    pub fn folds_path(&self, out: &Path) -> PathBuf {
        self.data.folds.clone().unwrap_or_else(|| out.join("folds.json"))
    }
}
