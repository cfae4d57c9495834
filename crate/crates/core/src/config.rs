//! Experiment configuration, seed derivation and run manifests.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::{Activation, NetworkSpec, TrainConfig};
use crate::observations::ObsConfig;
use crate::qg::{ModelSetup, QgModel};
use crate::units;
use crate::var4d::DaConfig;

/// Perturbed-model changes relative to the reference setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbedOverrides {
    pub top_depth_m: f64,
    pub bottom_depth_m: f64,
    pub dt_minutes: f64,
    pub hill_center: (f64, f64),
}

impl Default for PerturbedOverrides {
    fn default() -> Self {
        let p = ModelSetup::perturbed();
        Self {
            top_depth_m: p.top_depth_m,
            bottom_depth_m: p.bottom_depth_m,
            dt_minutes: p.dt_minutes,
            hill_center: p.hill.center,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub reference: ModelSetup,
    pub perturbed: PerturbedOverrides,
}

impl ModelSection {
    pub fn perturbed_setup(&self) -> ModelSetup {
        let mut s = self.reference;
        s.top_depth_m = self.perturbed.top_depth_m;
        s.bottom_depth_m = self.perturbed.bottom_depth_m;
        s.dt_minutes = self.perturbed.dt_minutes;
        s.hill.center = self.perturbed.hill_center;
        s
    }

    pub fn reference_model(&self) -> Result<QgModel> {
        Ok(QgModel::new(self.reference.params()?))
    }

    pub fn perturbed_model(&self) -> Result<QgModel> {
        Ok(QgModel::new(self.perturbed_setup().params()?))
    }
}

/// Truth runs start from states of one long reference run, spaced
/// `separation_days` apart after `spinup_days`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    pub n_trajectories: usize,
    pub spinup_days: f64,
    pub separation_days: f64,
    pub length_days: f64,
    pub store_hours: f64,
}

impl Default for TruthSection {
    fn default() -> Self {
        Self {
            n_trajectories: 3,
            spinup_days: 30.0,
            separation_days: 40.0,
            length_days: 130.0,
            store_hours: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub tau_days: Vec<f64>,
    pub n_samples: Vec<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            tau_days: vec![1.0],
            n_samples: vec![128],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architectures {
    /// The single dense model with one hidden layer of 4 linear nodes.
    #[default]
    Single,
    /// All 24 architectures.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub config: TrainConfig,
    pub architectures: Architectures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillSection {
    pub n_ensemble: usize,
    /// Spacing of the initial states along each test trajectory.
    pub init_spacing_days: f64,
    pub leads_days: Vec<f64>,
}

impl Default for SkillSection {
    fn default() -> Self {
        Self {
            n_ensemble: 8,
            init_spacing_days: 5.0,
            leads_days: (0..=16).map(f64::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub out_dir: PathBuf,
    /// Trained weights for hybrid assimilation; defaults to the output of
    /// the `train` stage.
    pub weights: Option<PathBuf>,
}

impl Default for PathSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("qgml-out"),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub truth: TruthSection,
    pub obs: ObsConfig,
    pub da: DaConfig,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    pub skill: SkillSection,
    pub paths: PathSection,
    pub seed: u64,
}

fn cfg_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn wrap(path: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => cfg_err(&format!("{path}.{name}"), reason),
        other => cfg_err(path, other.to_string()),
    }
}

/// Values of `b` retuned for sparse and dense observation networks.
pub const RETUNED_STD_B: [(usize, f64); 2] = [(10, 0.16), (500, 0.022)];

/// Parses and validates a configuration. Returns the warnings raised.
pub fn parse_config(text: &str) -> Result<(ExperimentConfig, Vec<String>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        cfg_err(&path, e.into_inner().to_string())
    })?;
    let warnings = cfg.validate()?;
    let explicit_b = serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.pointer("/da/covariance/std_b").cloned())
        .is_some();
    let mut out = warnings;
    if !explicit_b {
        if let Some((_, b)) = RETUNED_STD_B.iter().find(|(n, _)| *n == cfg.obs.n_per_batch) {
            out.push(format!(
                "obs.n_per_batch = {} with the default da.covariance.std_b = {}; \
                 this observation density is usually run with std_b = {b}",
                cfg.obs.n_per_batch, cfg.da.covariance.std_b
            ));
        }
    }
    Ok((cfg, out))
}

/// Accepts either a configuration or a stage manifest, whose embedded
/// configuration is used.
pub fn parse_config_document(text: &str) -> Result<(ExperimentConfig, Vec<String>)> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| cfg_err("", e.to_string()))?;
    match (v.get("stage"), v.get("config")) {
        (Some(_), Some(inner)) => {
            let cfg: ExperimentConfig = serde_json::from_value(inner.clone())
                .map_err(|e| cfg_err("config", e.to_string()))?;
            let warnings = cfg.validate()?;
            Ok((cfg, warnings))
        }
        _ => parse_config(text),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<Vec<String>> {
        let reference = self.model.reference_model().map_err(|e| wrap("model.reference", e))?;
        let perturbed = self.model.perturbed_model().map_err(|e| wrap("model.perturbed", e))?;
        self.obs.validate().map_err(|e| wrap("obs", e))?;
        self.da.covariance.validate().map_err(|e| wrap("da.covariance", e))?;
        self.da.minimizer.validate().map_err(|e| wrap("da.minimizer", e))?;
        self.train.config.validate().map_err(|e| wrap("train.config", e))?;
        let t = &self.truth;
        if t.n_trajectories == 0 {
            return Err(cfg_err("truth.n_trajectories", "must be at least 1"));
        }
        for (name, v) in [
            ("truth.spinup_days", t.spinup_days),
            ("truth.separation_days", t.separation_days),
            ("truth.length_days", t.length_days),
            ("truth.store_hours", t.store_hours),
        ] {
            reference
                .steps_for(if name.ends_with("hours") { units::hours(v) } else { units::days(v) })
                .map_err(|e| cfg_err(name, e.to_string()))?;
        }
        if !(t.store_hours > 0.0) {
            return Err(cfg_err("truth.store_hours", "must be positive"));
        }
        units::whole_steps(self.obs.window_length(), units::hours(t.store_hours))
            .map_err(|e| cfg_err("truth.store_hours", format!("must divide the window: {e}")))?;
        if self.dataset.tau_days.is_empty() || self.dataset.n_samples.is_empty() {
            return Err(cfg_err("dataset", "tau_days and n_samples must be non-empty"));
        }
        for (k, &tau) in self.dataset.tau_days.iter().enumerate() {
            let path = format!("dataset.tau_days[{k}]");
            if !(tau > 0.0) {
                return Err(cfg_err(&path, "must be positive"));
            }
            for m in [&reference, &perturbed] {
                m.steps_for(units::days(tau)).map_err(|e| cfg_err(&path, e.to_string()))?;
            }
        }
        if let Some(k) = self.dataset.n_samples.iter().position(|&n| n == 0) {
            return Err(cfg_err(&format!("dataset.n_samples[{k}]"), "must be positive"));
        }
        if self.skill.n_ensemble == 0 {
            return Err(cfg_err("skill.n_ensemble", "must be positive"));
        }
        let mut warnings = Vec::new();
        if self.truth.n_trajectories < 3 {
            warnings.push(format!(
                "truth.n_trajectories = {}; training, validation and test need at least 3",
                self.truth.n_trajectories
            ));
        }
        Ok(warnings)
    }

    pub fn single_spec(&self) -> NetworkSpec {
        let g = self.model.reference.grid;
        NetworkSpec::dense((2, g.ny, g.nx), 1, 4, Activation::Linear)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Stage seed: the first eight bytes of `SHA-256(master ‖ label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub arguments: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(stage: &str, config: &ExperimentConfig) -> Self {
        Self {
            stage: stage.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            arguments: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}
