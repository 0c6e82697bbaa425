//! Run configuration: a TOML file layered over a named preset, then
//! `MTNP_*` environment variables, then command-line flags.
//!
//! ```toml
//! preset = "desk"
//! variant = "mtnp"
//! seeds = [0, 1, 2]
//!
//! [dataset.clusters]
//! train_per_class = 3
//!
//! [train]
//! iterations = 500
//! ```
//!
//! `MTNP_TRAIN__LR0=3e-4` sets `train.lr0`; `__` separates key levels.

use std::path::PathBuf;

use mtnp_core::model::{Arch, Variant};
use mtnp_core::taskgen::{ClusterSpec, Curve1DSpec};
use mtnp_core::train::{Metric, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    /// Variant for `train` and `eval`.
    pub variant: String,
    /// Variants for `compare`.
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    /// Parallel worker slots for `compare`.
    pub workers: usize,
    pub out: PathBuf,
    pub dataset: DatasetSource,
    pub train: TrainConfig,
    pub arch: Arch,
    pub eval: EvalConfig,
    /// Written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults to accuracy for class labels and nmse for real labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    /// Input-noise levels applied to the evaluation tasks.
    pub eta: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metric: None,
            eta: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Curves(CurvesSource),
    Clusters(ClustersSource),
    Table(TableSource),
}

/// 1-D regression: each task trains on `n_context` points and is evaluated
/// on `n_eval` fresh points with the training points as context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesSource {
    pub n_context: usize,
    pub n_eval: usize,
    pub noise_std: f64,
    pub shared_function: bool,
    pub intervals: Vec<[f64; 2]>,
}

impl Default for CurvesSource {
    fn default() -> Self {
        let s = Curve1DSpec::default();
        Self {
            n_context: 4,
            n_eval: 200,
            noise_std: s.noise_std,
            shared_function: s.shared_function,
            intervals: s.intervals.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl CurvesSource {
    pub fn spec(&self) -> Curve1DSpec {
        Curve1DSpec {
            intervals: self.intervals.iter().map(|&[a, b]| (a, b)).collect(),
            noise_std: self.noise_std,
            shared_function: self.shared_function,
            ..Curve1DSpec::default()
        }
    }
}

/// Domain-shifted Gaussian clusters. `train_per_class` rows of every
/// (task, class) cell form the training pool and the evaluation context; the
/// remaining rows are evaluation targets. Unset seeds derive from the run
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClustersSource {
    pub tasks: usize,
    pub classes: usize,
    pub dim: usize,
    pub samples_per_cell: usize,
    pub train_per_class: usize,
    pub spread: f64,
    pub prototype_scale: f64,
    pub offset_scale: f64,
    pub rotation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prototype_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_seed: Option<u64>,
}

impl Default for ClustersSource {
    fn default() -> Self {
        let s = ClusterSpec::default();
        Self {
            tasks: s.tasks,
            classes: s.classes,
            dim: s.dim,
            samples_per_cell: s.samples_per_cell,
            train_per_class: 3,
            spread: s.spread,
            prototype_scale: s.prototype_scale,
            offset_scale: s.offset_scale,
            rotation: s.rotation,
            prototype_seed: None,
            shift_seed: None,
        }
    }
}

impl ClustersSource {
    pub fn spec(&self, seed: u64) -> ClusterSpec {
        ClusterSpec {
            tasks: self.tasks,
            classes: self.classes,
            dim: self.dim,
            samples_per_cell: self.samples_per_cell,
            spread: self.spread,
            prototype_scale: self.prototype_scale,
            offset_scale: self.offset_scale,
            rotation: self.rotation,
            prototype_seed: self.prototype_seed.unwrap_or(seed ^ 0x5EED_0001),
            shift_seed: self.shift_seed.unwrap_or(seed ^ 0x5EED_0002),
        }
    }
}

/// A feature table on disk, split per class like the cluster benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSource {
    pub path: PathBuf,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
}

fn default_train_per_class() -> usize {
    3
}

/// Command-line flags that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub eta: Option<Vec<f64>>,
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

/// Everything except the dataset, for `preset`.
fn preset_table(preset: &str) -> Result<Table, RunError> {
    #[derive(Serialize)]
    struct Defaults {
        preset: String,
        variant: String,
        variants: Vec<String>,
        seeds: Vec<u64>,
        workers: usize,
        out: PathBuf,
        train: TrainConfig,
        arch: Arch,
        eval: EvalConfig,
    }
    let train = TrainConfig::preset(preset).map_err(|e| config_err(format!("preset: {e}")))?;
    let arch = Arch::preset(preset).map_err(|e| config_err(format!("preset: {e}")))?;
    let d = Defaults {
        preset: preset.into(),
        variant: Variant::Mtnp.name().into(),
        variants: [Variant::Mtnp, Variant::NpAll, Variant::Np]
            .iter()
            .map(|v| v.name().to_string())
            .collect(),
        seeds: vec![0],
        workers: 1,
        out: PathBuf::from("runs"),
        train,
        arch,
        eval: EvalConfig::default(),
    };
    match Value::try_from(d) {
        Ok(Value::Table(t)) => Ok(t),
        other => Err(config_err(format!("cannot build preset table: {other:?}"))),
    }
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse an environment value as a TOML literal, falling back to a string.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn apply_env(table: &mut Table, env: impl IntoIterator<Item = (String, String)>) -> Result<(), RunError> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with("MTNP_"))
        .collect();
    vars.sort();
    for (k, v) in vars {
        let path: Vec<String> = k["MTNP_".len()..].split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(config_err(format!("environment variable `{k}` has an empty key segment")));
        }
        let mut t = &mut *table;
        for seg in &path[..path.len() - 1] {
            let entry = t.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
            t = match entry {
                Value::Table(inner) => inner,
                _ => return Err(config_err(format!("`{k}`: `{seg}` is not a table"))),
            };
        }
        t.insert(path[path.len() - 1].clone(), env_value(&v));
    }
    Ok(())
}

/// Resolve a configuration from file text, environment and flags.
pub fn resolve(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
    flags: &Overrides,
) -> Result<RunConfig, RunError> {
    let mut user: Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    apply_env(&mut user, env)?;
    user.remove("run");
    if !user.contains_key("dataset") {
        return Err(config_err("missing key `dataset`"));
    }
    let preset = match (&flags.preset, user.get("preset")) {
        (Some(p), _) => p.clone(),
        (None, Some(Value::String(p))) => p.clone(),
        (None, Some(_)) => return Err(config_err("`preset` must be a string")),
        (None, None) => "desk".into(),
    };
    let mut table = preset_table(&preset)?;
    merge(&mut table, user);
    table.insert("preset".into(), Value::String(preset));
    if let Some(s) = flags.seed {
        let s = i64::try_from(s).map_err(|_| config_err("seed must fit in i64"))?;
        table.insert("seeds".into(), Value::Array(vec![Value::Integer(s)]));
    }
    if let Some(o) = &flags.out {
        table.insert("out".into(), Value::String(o.display().to_string()));
    }
    if let Some(w) = flags.workers {
        table.insert("workers".into(), Value::Integer(w as i64));
    }
    if let Some(eta) = &flags.eta {
        let eval = table
            .entry("eval")
            .or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(e) = eval {
            e.insert("eta".into(), Value::Array(eta.iter().map(|&x| Value::Float(x)).collect()));
        }
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        config_err(format!("`{path}`: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve from a file path and the process environment.
pub fn load(path: &std::path::Path, flags: &Overrides) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    resolve(&text, std::env::vars(), flags)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.seeds.is_empty() {
            return Err(config_err("`seeds` must not be empty"));
        }
        self.variant()?;
        if self.variants.is_empty() {
            return Err(config_err("`variants` must not be empty"));
        }
        self.variant_list()?;
        if self.workers == 0 {
            return Err(config_err("`workers` must be at least 1"));
        }
        self.train.validate().map_err(|e| config_err(e.to_string()))?;
        self.arch.validate().map_err(|e| config_err(e.to_string()))?;
        if self.eval.eta.is_empty() || self.eval.eta.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(config_err("`eval.eta` must be a non-empty list of finite values >= 0"));
        }
        self.metric()?;
        match &self.dataset {
            DatasetSource::Curves(c) => {
                if c.n_context == 0 || c.n_eval == 0 {
                    return Err(config_err("`dataset.curves.n_context` and `n_eval` must be >= 1"));
                }
                c.spec().validate().map_err(|e| config_err(format!("`dataset.curves`: {e}")))?;
            }
            DatasetSource::Clusters(c) => {
                c.spec(0)
                    .validate()
                    .map_err(|e| config_err(format!("`dataset.clusters`: {e}")))?;
                if c.train_per_class == 0 || c.train_per_class >= c.samples_per_cell {
                    return Err(config_err(
                        "`dataset.clusters.train_per_class` must lie in [1, samples_per_cell)",
                    ));
                }
            }
            DatasetSource::Table(t) => {
                if t.train_per_class == 0 {
                    return Err(config_err("`dataset.table.train_per_class` must be >= 1"));
                }
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant, RunError> {
        self.variant
            .parse()
            .map_err(|e| config_err(format!("`variant`: {e}")))
    }

    pub fn variant_list(&self) -> Result<Vec<Variant>, RunError> {
        self.variants
            .iter()
            .map(|v| v.parse().map_err(|e| config_err(format!("`variants`: {e}"))))
            .collect()
    }

    /// The configured metric, or `None` to pick by label kind.
    pub fn metric(&self) -> Result<Option<Metric>, RunError> {
        self.eval
            .metric
            .as_deref()
            .map(|m| m.parse().map_err(|e| config_err(format!("`eval.metric`: {e}"))))
            .transpose()
    }

    /// The resolved configuration as TOML, with an optional `[run]` table.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}
