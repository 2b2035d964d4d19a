//! Experiment configuration: TOML schema, dotted-key overrides and the
//! content hash stamped on every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradient_memory::EngineKind;
use crate::learner::ProjectionSet;
use crate::schedules::Regime;

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn unit() -> f64 {
    1.0
}

fn oracle_cap() -> usize {
    10_000
}

fn er_tries() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default = "one")]
    pub samples_per_round: usize,
    /// Gradient aggregation; defaults to the cheapest exact engine for the loss.
    #[serde(default)]
    pub engine: Option<EngineKind>,
    /// Checkpoints per doubling of `t`.
    #[serde(default = "one")]
    pub checkpoints_per_octave: usize,
    /// Further rounds to record besides the geometric grid.
    #[serde(default)]
    pub extra_checkpoints: Vec<usize>,
    /// Evaluate the optimum every round and accumulate dynamic regret.
    #[serde(default)]
    pub record_dynamic_regret: bool,
    /// Drop the gradient term so only consensus mixing remains.
    #[serde(default)]
    pub disable_gradient: bool,
    /// Longest horizon allowed when the oracle must retain every sample.
    #[serde(default = "oracle_cap")]
    pub oracle_horizon_cap: usize,
    pub topology: TopologyConfig,
    pub problem: ProblemConfig,
    pub domain: ProjectionSet,
    pub schedules: ScheduleConfig,
    pub noise: NoiseConfig,
    pub stream: StreamConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Ring,
    Path,
    Complete,
    ErdosRenyi,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Metropolis,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSetting {
    Fixed(f64),
    /// Must be the string `"auto"`.
    Named(String),
}

impl Default for ScaleSetting {
    fn default() -> Self {
        ScaleSetting::Named("auto".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub generator: Generator,
    #[serde(default)]
    pub m: Option<usize>,
    /// Edge probability of the random graph.
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default = "er_tries")]
    pub max_tries: usize,
    #[serde(default = "metropolis")]
    pub weights: WeightKind,
    #[serde(default)]
    pub uniform_weight: Option<f64>,
    #[serde(default)]
    pub scale: ScaleSetting,
    /// Full matrix for the `explicit` generator.
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
}

fn metropolis() -> WeightKind {
    WeightKind::Metropolis
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ridge,
    Logistic,
}

/// Loss family and the constants the checkers use. Any constant left out is
/// derived from the loss, the domain and the stream bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub loss: LossKind,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Logistic ridge weight; when absent it is `r_scale / N` with `N` the
    /// number of samples one learner holds.
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "unit")]
    pub r_scale: f64,
    /// Euclidean bound on a feature vector.
    #[serde(default)]
    pub feature_bound: Option<f64>,
    #[serde(default)]
    pub label_bound: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub grad_bound: Option<f64>,
    #[serde(default)]
    pub noise_var: Option<f64>,
    #[serde(default)]
    pub l1_clip: Option<f64>,
    #[serde(default)]
    pub sample_lipschitz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub regime: Regime,
    /// Interaction scale; when absent, `gamma0_fraction / (-3 delta_N)`.
    #[serde(default)]
    pub gamma0: Option<f64>,
    #[serde(default = "unit")]
    pub gamma0_fraction: f64,
    pub u: f64,
    /// Gradient scale; when absent, `lambda0_fraction` times the largest
    /// value the regime's tuned bound allows.
    #[serde(default)]
    pub lambda0: Option<f64>,
    #[serde(default = "unit")]
    pub lambda0_fraction: f64,
    pub v: f64,
}

/// Per-learner noise. Scalars apply to every learner; `varsigma_step`
/// gives learner `i` the growth exponent `varsigma + i * varsigma_step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default)]
    pub varsigma: Option<f64>,
    #[serde(default)]
    pub varsigma_step: f64,
    #[serde(default)]
    pub varsigmas: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    #[default]
    RoundRobin,
    Contiguous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamConfig {
    /// `x ~ U[-b, b]^n`, `y = x . theta_true + N(0, label_noise^2)`.
    SyntheticLinear { theta_true: Vec<f64>, feature_bound: f64, label_noise: f64 },
    /// `x ~ U[-b, b]^n`, `y = 1{x . theta_true > 0}` flipped with probability `flip_prob`.
    SyntheticLogistic { theta_true: Vec<f64>, feature_bound: f64, flip_prob: f64 },
    /// Rows of an svmlight file, split across learners and drawn uniformly
    /// with replacement.
    Svmlight {
        path: PathBuf,
        label_map: BTreeMap<String, f64>,
        #[serde(default = "yes")]
        scale_features: bool,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        partition: Partition,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Common starting point; random uniform in the domain when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub theta0_per_learner: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// `[t_lo, t_hi]` for the reported slope fits.
    #[serde(default)]
    pub fit_window: Option<[f64; 2]>,
}

/// Parse `key=value` and set it inside `root`, creating tables as needed.
/// The value is read as a TOML literal and falls back to a bare string.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override `{key}` descends into a non-table at `{p}`"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse TOML text, apply overrides in order and deserialize.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok(cfg)
}

/// Read a config file. A relative dataset path is resolved against the
/// directory of the config file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text, overrides)?;
    if let StreamConfig::Svmlight { path: data, .. } = &mut cfg.stream {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
    }
    Ok(cfg)
}

/// SHA-256 of the canonical JSON form of the resolved config.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}
