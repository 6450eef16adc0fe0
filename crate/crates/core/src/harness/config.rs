//! Flat TOML configuration of a federation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind, BenignTemplate};
use crate::clustering::HdbscanParams;
use crate::error::{Error, Result};
use crate::model::{Activation, ModelArch, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    Freqfed,
    None,
    Krum,
    Median,
    TrimmedMean,
    FedavgWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Every knob of a run. Field names are the config file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub master_seed: u64,

    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,

    pub defense: DefenseKind,
    pub trim_beta: f64,
    /// Assumed number of Byzantine clients for Krum; defaults to the largest
    /// value the rule allows.
    pub krum_f: Option<usize>,
    pub min_cluster_size: usize,
    pub min_samples: usize,

    pub attack: Option<AttackKind>,
    pub pmr: f64,
    pub pdr: f64,
    pub target_label: usize,
    pub scale_gamma: f64,
    pub alpha: f64,
    pub tau: f64,
    pub random_sigma: f64,
    pub noise_sigma: f64,
    pub benign_template: BenignTemplate,
    /// Draw a fresh malicious set every round instead of fixing it once.
    pub rotate_malicious: bool,
    /// Trigger intensity; defaults to the largest feature value in the data.
    pub trigger_value: Option<f64>,

    pub dataset: DatasetKind,
    pub mnist_images: PathBuf,
    pub mnist_labels: PathBuf,
    /// Use only the first this many samples of the source.
    pub source_limit: Option<usize>,
    pub blob_classes: usize,
    pub blob_per_class: usize,
    pub blob_dim: usize,
    pub blob_spread: f64,
    pub holdout_fraction: f64,
    pub iid_rate: f64,
    pub samples_per_client: Option<usize>,

    pub out_dir: PathBuf,
    pub format: ReportFormat,
    /// Write measured wall times; off by default so reports replay byte for byte.
    pub record_wall_time: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            rounds: 20,
            master_seed: 1,
            layer_dims: vec![784, 64, 10],
            activation: Activation::Relu,
            learning_rate: 0.1,
            local_epochs: 2,
            batch_size: 32,
            defense: DefenseKind::Freqfed,
            trim_beta: 0.2,
            krum_f: None,
            min_cluster_size: 2,
            min_samples: 1,
            attack: None,
            pmr: 0.3,
            pdr: 0.5,
            target_label: 0,
            scale_gamma: 1.0,
            alpha: 0.5,
            tau: 1.0,
            random_sigma: 1.0,
            noise_sigma: 0.0,
            benign_template: BenignTemplate::default(),
            rotate_malicious: false,
            trigger_value: None,
            dataset: DatasetKind::Mnist,
            mnist_images: PathBuf::from("data/mnist-subset/images-idx3-ubyte.gz"),
            mnist_labels: PathBuf::from("data/mnist-subset/labels-idx1-ubyte.gz"),
            source_limit: None,
            blob_classes: 10,
            blob_per_class: 100,
            blob_dim: 16,
            blob_spread: 0.3,
            holdout_fraction: 0.1,
            iid_rate: 0.7,
            samples_per_client: Some(500),
            out_dir: PathBuf::from("reports"),
            format: ReportFormat::Csv,
            record_wall_time: false,
        }
    }
}

impl FederationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data and output paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.mnist_images, &mut cfg.mnist_labels, &mut cfg.out_dir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn arch(&self) -> Result<ModelArch> {
        ModelArch::new(self.layer_dims.clone(), self.activation)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            seed: 0,
        }
    }

    pub fn hdbscan(&self) -> HdbscanParams {
        HdbscanParams {
            min_cluster_size: self.min_cluster_size,
            min_samples: self.min_samples,
        }
    }

    pub fn attack_config(&self) -> Option<AttackConfig> {
        self.attack.map(|kind| AttackConfig {
            kind,
            pmr: self.pmr,
            pdr: self.pdr,
            target_label: self.target_label,
            scale_gamma: self.scale_gamma,
            alpha: self.alpha,
            tau: self.tau,
            random_sigma: self.random_sigma,
            noise_sigma: self.noise_sigma,
            template: self.benign_template,
            seed: self.master_seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::Config("num_clients must be >= 2".into()));
        }
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        let arch = self.arch()?;
        self.training().validate()?;
        if self.defense == DefenseKind::Freqfed {
            self.hdbscan()
                .check_for(self.num_clients)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.defense == DefenseKind::TrimmedMean && !(0.0..0.5).contains(&self.trim_beta) {
            return Err(Error::Config(format!("trim_beta {} outside [0, 0.5)", self.trim_beta)));
        }
        if self.defense == DefenseKind::Krum {
            let f = self.krum_byzantine();
            if self.num_clients < 2 * f + 3 {
                return Err(Error::Config(format!(
                    "krum with f = {f} needs at least {} clients",
                    2 * f + 3
                )));
            }
        }
        if let Some(attack) = self.attack_config() {
            attack.validate()?;
            if attack.target_label >= arch.output_dim() {
                return Err(Error::Config(format!(
                    "target_label {} outside the {} model outputs",
                    attack.target_label,
                    arch.output_dim()
                )));
            }
            if attack.pmr * 2.0 >= 1.0 {
                log::warn!("pmr {} gives a malicious majority or tie", attack.pmr);
            }
        }
        if !(0.0..=1.0).contains(&self.iid_rate) {
            return Err(Error::Config(format!("iid_rate {} outside [0, 1]", self.iid_rate)));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction {} outside (0, 1)",
                self.holdout_fraction
            )));
        }
        if self.dataset == DatasetKind::Blobs {
            if self.blob_classes < 2 || self.blob_per_class == 0 || self.blob_dim == 0 {
                return Err(Error::Config("blob dataset needs >= 2 classes and positive sizes".into()));
            }
            if !(self.blob_spread >= 0.0 && self.blob_spread.is_finite()) {
                return Err(Error::Config("blob_spread must be non-negative".into()));
            }
        }
        if self.samples_per_client == Some(0) {
            return Err(Error::Config("samples_per_client must be positive".into()));
        }
        if let Some(v) = self.trigger_value {
            if !v.is_finite() {
                return Err(Error::Config("trigger_value must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn krum_byzantine(&self) -> usize {
        self.krum_f
            .unwrap_or_else(|| self.num_clients.saturating_sub(3) / 2)
    }
}
