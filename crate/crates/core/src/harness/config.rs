use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::defense::{DetectorKind, DetectorParams, Normalization};
use crate::error::{Error, Result};
use crate::models::{ArchConfig, ModelKind, Optimizer, TrainSpec, TreeSpec};
use crate::threat::{AttackKind, AttackPlan};

pub const DATA_DIR_ENV: &str = "FEDGAUNTLET_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    #[default]
    Iid,
    LabelSubset,
}

/// What to do when a client's local training diverges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergencePolicy {
    /// Leave the client out of that round and log it.
    #[default]
    Drop,
    /// Fail the experiment with the round and client attached.
    Abort,
}

/// Partial [`TrainSpec`]; unset fields fall back to the model's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub local_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub l2_penalty: Option<f64>,
}

/// Defaults per model kind, tuned at desk scale (20 clients, 10 rounds,
/// ~450 local training samples).
pub fn default_train_spec(kind: ModelKind) -> TrainSpec {
    match kind {
        ModelKind::Mlr | ModelKind::Tree => TrainSpec {
            local_epochs: 2,
            batch_size: 20,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            l2_penalty: 1e-4,
        },
        // C = 1 over ~450 local samples
        ModelKind::Svc => TrainSpec {
            local_epochs: 2,
            batch_size: 20,
            learning_rate: 0.01,
            optimizer: Optimizer::Sgd,
            l2_penalty: 1.0 / 450.0,
        },
        ModelKind::Mlp => TrainSpec {
            local_epochs: 2,
            batch_size: 20,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            l2_penalty: 0.0,
        },
        ModelKind::Cnn => TrainSpec {
            local_epochs: 2,
            batch_size: 20,
            learning_rate: 0.01,
            optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
            l2_penalty: 0.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSettings {
    #[serde(serialize_with = "ser_detector", deserialize_with = "de_detector")]
    pub kind: Option<DetectorKind>,
    pub normalization: Normalization,
    /// Hyperparameters; `contamination` is overwritten by the malicious
    /// ratio unless `use_prior` is false.
    pub params: DetectorParams,
    pub use_prior: bool,
}

impl Default for DefenseSettings {
    fn default() -> Self {
        Self {
            kind: None,
            normalization: Normalization::Rank,
            params: DetectorParams::default(),
            use_prior: true,
        }
    }
}

fn ser_detector<S: Serializer>(kind: &Option<DetectorKind>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(kind.map_or("none", |k| k.as_str()))
}

fn de_detector<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<DetectorKind>, D::Error> {
    let s = String::deserialize(d)?;
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    s.parse().map(Some).map_err(serde::de::Error::custom)
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub clients: usize,
    /// Full-scale client counts (100, or 50 for trees) instead of `clients`.
    pub paper_scale: bool,
    pub rounds: usize,
    pub seed: u64,
    pub train_cap: usize,
    pub test_cap: usize,
    pub partition: PartitionKind,
    pub labels_per_client: usize,
    pub holdout_fraction: f64,
    pub participation_fraction: f64,
    /// Train clients on the rayon pool; output is identical either way.
    pub parallel: bool,
    pub on_divergence: DivergencePolicy,
    pub data_dir: Option<PathBuf>,
    pub train: TrainOverrides,
    pub tree: TreeSpec,
    pub arch: ArchConfig,
    pub attack: AttackPlan,
    pub defense: DefenseSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Mlr,
            clients: 20,
            paper_scale: false,
            rounds: 10,
            seed: 1,
            train_cap: 10_000,
            test_cap: 10_000,
            partition: PartitionKind::Iid,
            labels_per_client: 7,
            holdout_fraction: 0.1,
            participation_fraction: 1.0,
            parallel: true,
            on_divergence: DivergencePolicy::Drop,
            data_dir: None,
            train: TrainOverrides::default(),
            tree: TreeSpec::default(),
            arch: ArchConfig::default(),
            attack: AttackPlan::default(),
            defense: DefenseSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn effective_clients(&self) -> usize {
        match (self.paper_scale, self.model) {
            (false, _) => self.clients,
            (true, ModelKind::Tree) => 50,
            (true, _) => 100,
        }
    }

    pub fn train_spec(&self) -> TrainSpec {
        let d = default_train_spec(self.model);
        let o = &self.train;
        TrainSpec {
            local_epochs: o.local_epochs.unwrap_or(d.local_epochs),
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
            optimizer: o.optimizer.unwrap_or(d.optimizer),
            l2_penalty: o.l2_penalty.unwrap_or(d.l2_penalty),
        }
    }

    /// Detector parameters after applying the malicious-ratio prior.
    pub fn detector_params(&self) -> DetectorParams {
        let p = self.defense.params.clone();
        if self.defense.use_prior && self.attack.malicious_ratio > 0.0 {
            p.with_prior(self.attack.malicious_ratio)
        } else {
            p
        }
    }

    /// Dataset directory: the config value, else `$FEDGAUNTLET_DATA_DIR`.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.data_dir {
            return Ok(dir.clone());
        }
        std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("no data_dir in the config and {DATA_DIR_ENV} is unset")))
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.effective_clients();
        if self.rounds == 0 || c == 0 {
            return Err(Error::Config("rounds and clients must be at least 1".into()));
        }
        if self.train_cap < c {
            return Err(Error::Config(format!(
                "train_cap {} is below the client count {c}",
                self.train_cap
            )));
        }
        if self.test_cap == 0 {
            return Err(Error::Config("test_cap must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::Config("participation_fraction must lie in (0, 1]".into()));
        }
        if self.partition == PartitionKind::LabelSubset
            && (self.labels_per_client == 0 || self.labels_per_client > self.arch.num_classes)
        {
            return Err(Error::Config(format!(
                "labels_per_client must lie in [1, {}]",
                self.arch.num_classes
            )));
        }
        self.attack.validate()?;
        if self.attack.kind == AttackKind::Mpaf && self.model == ModelKind::Tree {
            return Err(Error::Config(
                "mpaf needs a parameter vector; tree models cannot run it".into(),
            ));
        }
        self.train_spec().validate()
    }
}
