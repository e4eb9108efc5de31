//! Declarative run configuration (TOML) and its content digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{BitConfig, ModelError, Preset};
use crate::molgraph::SynthSpec;
use crate::numcore::GradCheckOptions;
use crate::pretrain::PretrainConfig;
use crate::tasks::{ClassifySpec, RetrievalConfig, RetrievalSpec, Schedule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Model preset plus optional per-field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ffn_mult: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_embed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_attn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_hidden: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enable_2d: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enable_3d: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enable_mode: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enable_mose: Option<bool>,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<BitConfig, ModelError> {
        let mut c = BitConfig::preset(self.preset);
        macro_rules! over {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        over!(
            layers,
            hidden,
            heads,
            ffn_mult,
            kernels,
            d_max,
            degree_cap,
            dropout_embed,
            dropout_attn,
            dropout_hidden,
            enable_2d,
            enable_3d,
            enable_mode,
            enable_mose
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// JSONL dataset read by `stats`, `encode`, `pretrain`, and `finetune-affinity`.
    /// When absent, data is synthesized from `[synth]` with the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffinitySection {
    pub schedule: Schedule,
    /// Labeled complexes synthesized with the run seed when `[data].path` is absent.
    pub synth_complexes: usize,
}

impl Default for AffinitySection {
    fn default() -> Self {
        Self {
            schedule: Schedule { epochs: 10, batch_size: 8, peak_lr: 1e-3, ..Schedule::default() },
            synth_complexes: 1200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub data: RetrievalSpec,
    pub schedule: Schedule,
    pub tau: f64,
    pub decoys: usize,
    pub shuffle_labels: bool,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let t = RetrievalConfig::default();
        Self {
            data: RetrievalSpec::default(),
            schedule: t.schedule,
            tau: t.tau,
            decoys: t.decoys,
            shuffle_labels: t.shuffle_labels,
        }
    }
}

impl RetrievalSection {
    pub fn train_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            schedule: self.schedule.clone(),
            tau: self.tau,
            decoys: self.decoys,
            shuffle_labels: self.shuffle_labels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub data: ClassifySpec,
    pub schedule: Schedule,
    /// Report the label-shuffled control instead of a fitted classifier.
    pub shuffle_labels: bool,
    /// Independent permutations averaged by the shuffled control.
    pub null_permutations: usize,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            data: ClassifySpec::default(),
            schedule: Schedule { epochs: 15, batch_size: 16, ..Schedule::default() },
            shuffle_labels: false,
            null_permutations: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    #[default]
    Affinity,
    Retrieval,
    Classify,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub task: EvalTask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenSection {
    /// Pocket family whose held-out pool is screened.
    pub family: usize,
    /// Survivors kept per pocket by the dual-encoder stage.
    pub k1: usize,
    /// Final candidates after diversity selection.
    pub m: usize,
}

impl Default for ScreenSection {
    fn default() -> Self {
        Self { family: 0, k1: 100, m: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSection {
    pub sample: usize,
    pub eps: f64,
    pub tol: f64,
    pub floor: f64,
    /// Atoms per molecule in the probe batch.
    pub atoms: usize,
    pub molecules: usize,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        let o = GradCheckOptions::default();
        Self { sample: 50, eps: o.eps, tol: o.tol, floor: o.floor, atoms: 4, molecules: 2 }
    }
}

/// Full run configuration; every section is optional and defaults to desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub data: DataSection,
    pub synth: SynthSpec,
    pub pretrain: PretrainConfig,
    /// Fine-tuning commands start from random weights instead of a pre-trained checkpoint.
    pub skip_pretrain: bool,
    pub affinity: AffinitySection,
    pub retrieval: RetrievalSection,
    pub classify: ClassifySection,
    pub eval: EvalSection,
    pub screen: ScreenSection,
    pub grad_check: GradCheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            data: DataSection::default(),
            synth: SynthSpec::default(),
            pretrain: PretrainConfig::default(),
            skip_pretrain: false,
            affinity: AffinitySection::default(),
            retrieval: RetrievalSection::default(),
            classify: ClassifySection::default(),
            eval: EvalSection::default(),
            screen: ScreenSection::default(),
            grad_check: GradCheckSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.model.resolve().map_err(|e| inv(e.to_string()))?;
        self.synth.validate().map_err(|e| inv(e.to_string()))?;
        self.pretrain.validate().map_err(|e| inv(e.to_string()))?;
        self.affinity.schedule.validate().map_err(|e| inv(e.to_string()))?;
        self.retrieval.schedule.validate().map_err(|e| inv(e.to_string()))?;
        self.retrieval.data.validate().map_err(|e| inv(e.to_string()))?;
        self.classify.schedule.validate().map_err(|e| inv(e.to_string()))?;
        if self.affinity.synth_complexes < 8 {
            return Err(inv("affinity.synth_complexes must be at least 8".into()));
        }
        if self.classify.null_permutations == 0 {
            return Err(inv("classify.null_permutations must be positive".into()));
        }
        if self.screen.m == 0 || self.screen.k1 < self.screen.m {
            return Err(inv("screen needs k1 >= m >= 1".into()));
        }
        if self.screen.family >= self.retrieval.data.families {
            return Err(inv("screen.family is not a retrieval family".into()));
        }
        Ok(())
    }

    pub fn bit_config(&self) -> BitConfig {
        self.model.resolve().expect("validated on load")
    }

    /// SHA-256 of the canonical JSON form (object keys sorted, `out_dir` omitted), as lowercase hex.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
