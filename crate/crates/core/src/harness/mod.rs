//! The server loop: local updates, optional filtering, aggregation and
//! per-round metrics.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{coordinate_median, fedavg_weighted, krum_index, mean_accepted, trimmed_mean, ClientContribution};
use crate::attacks::{
    adaptive_frequency_train, apply_trigger, concentrated_submission, label_flip, pgd_untargeted,
    pixel_backdoor_poison, random_update, scale_update, train_with_benign_injection, AttackConfig, AttackKind,
    BenignTemplate, TriggerSpec,
};
use crate::clustering::{cluster_fingerprints, cosine_distance_matrix};
use crate::data::{holdout_split, iid_partition, load_idx, make_blobs};
use crate::error::{Error, Result};
use crate::frequency::{fingerprint, FrequencyFingerprint};
use crate::model::{client_update, evaluate_ba, evaluate_ma, init_model, LabeledDataset, ModelArch, ParameterVector, TrainingConfig};

pub mod config;
mod report;

pub use config::{DatasetKind, DefenseKind, FederationConfig, ReportFormat};
pub use report::{write_sweep, ReportWriter, SweepRow};

// Stream tags for seed derivation.
const HOLDOUT: u64 = 1;
const PARTITION: u64 = 2;
const INIT: u64 = 3;
const MALICIOUS: u64 = 4;
const POISON: u64 = 5;
const TRAIN: u64 = 6;
const TEMPLATE: u64 = 7;
const NOISE: u64 = 8;
const BLOBS: u64 = 9;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent seed for one (stream, round, client) triple.
pub fn derive_seed(master: u64, stream: u64, round: u64, client: u64) -> u64 {
    splitmix(splitmix(splitmix(splitmix(master) ^ stream) ^ round) ^ client)
}

/// What the server observed and decided in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub ma: f64,
    /// -1 when no backdoor attack is configured.
    pub ba: f64,
    pub accepted: Vec<usize>,
    pub rejected: Vec<usize>,
    /// Sizes of the clusters found, by cluster label. Empty for other defenses.
    pub cluster_sizes: Vec<usize>,
    pub malicious: Vec<usize>,
    /// Malicious clients among the rejected.
    pub malicious_detected: usize,
    pub malicious_accepted: usize,
    /// Every model was labelled noise and the previous global was kept.
    pub fallback: bool,
    /// Mean cosine distance between the malicious fingerprints and the benign
    /// template they were steered toward, for the frequency-aware attacks.
    pub template_drift: Option<f64>,
    pub wall_time_ms: u64,
}

/// Final state of a finished federation.
#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub reports: Vec<RoundReport>,
    pub final_model: ParameterVector,
}

/// Data, attack setup and current global model of a running federation.
pub struct Federation {
    cfg: FederationConfig,
    arch: ModelArch,
    training: TrainingConfig,
    attack: Option<AttackConfig>,
    test: LabeledDataset,
    triggered_test: Option<LabeledDataset>,
    clean: Vec<LabeledDataset>,
    poisoned: Vec<Option<LabeledDataset>>,
    fixed_malicious: Vec<usize>,
    global: ParameterVector,
    round: usize,
}

fn load_source(cfg: &FederationConfig) -> Result<LabeledDataset> {
    let source = match cfg.dataset {
        DatasetKind::Mnist => load_idx(&cfg.mnist_images, &cfg.mnist_labels)?,
        DatasetKind::Blobs => make_blobs(
            cfg.blob_classes,
            cfg.blob_per_class,
            cfg.blob_dim,
            cfg.blob_spread,
            derive_seed(cfg.master_seed, BLOBS, 0, 0),
        ),
    };
    Ok(match cfg.source_limit {
        Some(n) if n < source.len() => source.subset(&(0..n).collect::<Vec<_>>()),
        _ => source,
    })
}

impl Federation {
    pub fn new(cfg: FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.arch()?;
        let training = cfg.training();
        let attack = cfg.attack_config();
        let k = cfg.num_clients;
        let master = cfg.master_seed;

        let source = load_source(&cfg)?;
        if source.dim() != arch.input_dim() {
            return Err(Error::Config(format!(
                "dataset has {} features but layer_dims starts with {}",
                source.dim(),
                arch.input_dim()
            )));
        }
        if source.num_classes() > arch.output_dim() {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model has {} outputs",
                source.num_classes(),
                arch.output_dim()
            )));
        }
        let (train, test) = holdout_split(&source, cfg.holdout_fraction, derive_seed(master, HOLDOUT, 0, 0))?;
        let plan = iid_partition(
            &train,
            k,
            cfg.iid_rate,
            cfg.samples_per_client,
            derive_seed(master, PARTITION, 0, 0),
        )?;
        let clean: Vec<LabeledDataset> = (0..k).map(|c| plan.client_dataset(&train, c)).collect();

        let trigger = TriggerSpec::top_left(arch.input_dim(), cfg.trigger_value.unwrap_or(source.max_feature()));
        let triggered_test = match &attack {
            Some(a) if a.kind.is_backdoor() => Some(apply_trigger(&test, &trigger)?),
            _ => None,
        };

        let mut fed = Self {
            fixed_malicious: Vec::new(),
            poisoned: vec![None; k],
            global: init_model(&arch, derive_seed(master, INIT, 0, 0)),
            cfg,
            arch,
            training,
            attack,
            test,
            triggered_test,
            clean,
            round: 0,
        };
        if let Some(attack) = fed.attack.clone() {
            fed.fixed_malicious = fed.draw_malicious(0);
            let poison_all = fed.cfg.rotate_malicious;
            for c in 0..k {
                if poison_all || fed.fixed_malicious.contains(&c) {
                    fed.poisoned[c] = fed.poison(c, &attack, &trigger)?;
                }
            }
            log::info!("malicious clients: {:?}", fed.fixed_malicious);
        }
        Ok(fed)
    }

    fn draw_malicious(&self, round: usize) -> Vec<usize> {
        let Some(attack) = &self.attack else {
            return Vec::new();
        };
        let k = self.cfg.num_clients;
        let mut order: Vec<usize> = (0..k).collect();
        let seed = derive_seed(self.cfg.master_seed, MALICIOUS, round as u64, 0);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(attack.malicious_count(k));
        order.sort_unstable();
        order
    }

    fn poison(&self, client: usize, attack: &AttackConfig, trigger: &TriggerSpec) -> Result<Option<LabeledDataset>> {
        let seed = derive_seed(self.cfg.master_seed, POISON, 0, client as u64);
        let data = &self.clean[client];
        Ok(match attack.kind {
            AttackKind::LabelFlip => Some(label_flip(data, attack.pdr, self.arch.output_dim(), seed)?),
            AttackKind::RandomUpdate | AttackKind::PgdUntargeted => None,
            _ => Some(pixel_backdoor_poison(data, trigger, attack.target_label, attack.pdr, seed)?),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global(&self) -> &ParameterVector {
        &self.global
    }

    pub fn test_set(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn client_data(&self, client: usize) -> &LabeledDataset {
        &self.clean[client]
    }

    /// Rounds completed so far.
    pub fn rounds_done(&self) -> usize {
        self.round
    }

    fn client_cfg(&self, stream: u64, client: usize) -> TrainingConfig {
        self.training
            .with_seed(derive_seed(self.cfg.master_seed, stream, self.round as u64, client as u64))
    }

    fn poisoned_data(&self, client: usize) -> Result<&LabeledDataset> {
        self.poisoned[client]
            .as_ref()
            .ok_or_else(|| Error::InvalidAttack(format!("client {client} has no poisoned data")))
    }

    fn benign_template(
        &self,
        attack: &AttackConfig,
        client: usize,
        benign: &[(usize, ParameterVector)],
    ) -> Result<ParameterVector> {
        match attack.template {
            BenignTemplate::UnknownBenign => {
                client_update(&self.global, &self.clean[client], &self.client_cfg(TEMPLATE, client))
            }
            BenignTemplate::KnownBenign => benign
                .first()
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::InvalidAttack("known-benign template needs a benign client".into())),
        }
    }

    /// Submission of one malicious client, plus its fingerprint distance to
    /// the benign template for the frequency-aware attacks.
    fn malicious_update(
        &self,
        attack: &AttackConfig,
        client: usize,
        benign: &[(usize, ParameterVector)],
    ) -> Result<(ParameterVector, Option<f64>)> {
        let cfg = self.client_cfg(TRAIN, client);
        let g = &self.global;
        let (trained, template) = match attack.kind {
            AttackKind::RandomUpdate => {
                let seed = derive_seed(self.cfg.master_seed, NOISE, self.round as u64, client as u64);
                return Ok((random_update(g, attack.random_sigma, seed)?, None));
            }
            AttackKind::PgdUntargeted => return Ok((pgd_untargeted(g, &self.clean[client], &cfg, attack.tau)?, None)),
            AttackKind::LabelFlip | AttackKind::PixelBackdoor | AttackKind::ConcentratedBackdoor => {
                (client_update(g, self.poisoned_data(client)?, &cfg)?, None)
            }
            AttackKind::AdaptiveFrequency => {
                let template = fingerprint(&self.benign_template(attack, client, benign)?)?;
                let w = adaptive_frequency_train(g, self.poisoned_data(client)?, &template, attack.alpha, &cfg)?;
                (w, Some(template))
            }
            AttackKind::BenignFreqInjection => {
                let source = self.benign_template(attack, client, benign)?;
                let w = train_with_benign_injection(g, self.poisoned_data(client)?, &source, &cfg)?;
                (w, Some(fingerprint(&source)?))
            }
        };
        let submitted = scale_update(&trained, g, attack.scale_gamma)?;
        let drift = match template {
            Some(t) => Some(fingerprint_distance(&fingerprint(&submitted)?, &t)?),
            None => None,
        };
        Ok((submitted, drift))
    }

    fn malicious_updates(
        &self,
        attack: &AttackConfig,
        malicious: &[usize],
        benign: &[(usize, ParameterVector)],
    ) -> Result<(Vec<ParameterVector>, Option<f64>)> {
        if malicious.is_empty() {
            return Ok((Vec::new(), None));
        }
        if attack.kind == AttackKind::ConcentratedBackdoor {
            // Colluding clients pool their poisoned data and submit one model.
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for &c in malicious {
                let d = self.poisoned_data(c)?;
                features.extend_from_slice(d.features());
                labels.extend_from_slice(d.labels());
            }
            let pooled = LabeledDataset::new(features, self.arch.input_dim(), labels)?;
            let trained = client_update(&self.global, &pooled, &self.client_cfg(TRAIN, malicious[0]))?;
            let template = scale_update(&trained, &self.global, attack.scale_gamma)?;
            let seed = derive_seed(self.cfg.master_seed, NOISE, self.round as u64, 0);
            return Ok((concentrated_submission(&template, malicious.len(), attack.noise_sigma, seed)?, None));
        }
        let results = malicious
            .par_iter()
            .map(|&c| self.malicious_update(attack, c, benign))
            .collect::<Result<Vec<_>>>()?;
        let drifts: Vec<f64> = results.iter().filter_map(|(_, d)| *d).collect();
        let drift = (!drifts.is_empty()).then(|| drifts.iter().sum::<f64>() / drifts.len() as f64);
        Ok((results.into_iter().map(|(m, _)| m).collect(), drift))
    }

    /// One server iteration. Advances the global model and returns the report.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let started = Instant::now();
        let k = self.cfg.num_clients;
        let malicious = if self.cfg.rotate_malicious {
            self.draw_malicious(self.round)
        } else {
            self.fixed_malicious.clone()
        };
        let is_malicious = |c: usize| malicious.binary_search(&c).is_ok();

        let benign: Vec<(usize, ParameterVector)> = (0..k)
            .into_par_iter()
            .filter(|&c| !is_malicious(c))
            .map(|c| Ok((c, client_update(&self.global, &self.clean[c], &self.client_cfg(TRAIN, c))?)))
            .collect::<Result<_>>()?;
        let (bad, template_drift) = match &self.attack {
            Some(attack) => self.malicious_updates(attack, &malicious, &benign)?,
            None => (Vec::new(), None),
        };
        let mut slots: Vec<Option<ParameterVector>> = vec![None; k];
        for (c, m) in benign {
            slots[c] = Some(m);
        }
        for (&c, m) in malicious.iter().zip(bad) {
            slots[c] = Some(m);
        }
        let updates: Vec<ParameterVector> = slots.into_iter().map(|m| m.expect("every client submitted")).collect();

        let all: Vec<usize> = (0..k).collect();
        let mut cluster_sizes = Vec::new();
        let mut fallback = false;
        let (next, accepted) = match self.cfg.defense {
            DefenseKind::Freqfed => {
                let fps = updates.par_iter().map(fingerprint).collect::<Result<Vec<_>>>()?;
                match cluster_fingerprints(&fps, &self.cfg.hdbscan()) {
                    Ok(outcome) => {
                        cluster_sizes = outcome.assignment.cluster_sizes.values().copied().collect();
                        (mean_accepted(&updates, &outcome.accepted)?, outcome.accepted)
                    }
                    Err(Error::AllNoise) => {
                        log::warn!("round {}: every model labelled noise, keeping the previous global", self.round + 1);
                        fallback = true;
                        (self.global.clone(), Vec::new())
                    }
                    Err(e) => return Err(e),
                }
            }
            DefenseKind::None => (mean_accepted(&updates, &all)?, all.clone()),
            DefenseKind::Krum => {
                let i = krum_index(&updates, self.cfg.krum_byzantine())?;
                (updates[i].clone(), vec![i])
            }
            DefenseKind::Median => (coordinate_median(&updates)?, all.clone()),
            DefenseKind::TrimmedMean => (trimmed_mean(&updates, self.cfg.trim_beta)?, all.clone()),
            DefenseKind::FedavgWeighted => {
                let contribs: Vec<ClientContribution> = updates
                    .iter()
                    .enumerate()
                    .map(|(c, m)| ClientContribution {
                        params: m.clone(),
                        sample_count: self.clean[c].len(),
                    })
                    .collect();
                (fedavg_weighted(&contribs)?, all.clone())
            }
        };
        self.global = next;
        self.round += 1;

        let ma = evaluate_ma(&self.global, &self.test)?;
        let ba = match (&self.triggered_test, &self.attack) {
            (Some(t), Some(a)) => evaluate_ba(&self.global, t, a.target_label)?,
            _ => -1.0,
        };
        let rejected: Vec<usize> = all.iter().copied().filter(|c| accepted.binary_search(c).is_err()).collect();
        let malicious_detected = rejected.iter().filter(|&&c| is_malicious(c)).count();
        let report = RoundReport {
            round: self.round,
            ma,
            ba,
            malicious_accepted: malicious.len() - malicious_detected,
            malicious_detected,
            accepted,
            rejected,
            cluster_sizes,
            malicious,
            fallback,
            template_drift,
            wall_time_ms: if self.cfg.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        log::info!(
            "round {}: ma {:.4} ba {:.4} accepted {:?} clusters {:?}",
            report.round,
            report.ma,
            report.ba,
            report.accepted,
            report.cluster_sizes
        );
        Ok(report)
    }

    pub fn into_global(self) -> ParameterVector {
        self.global
    }
}

fn fingerprint_distance(a: &FrequencyFingerprint, b: &FrequencyFingerprint) -> Result<f64> {
    Ok(cosine_distance_matrix(&[a.clone(), b.clone()])?.get(0, 1))
}

/// Runs all rounds, handing each report to `on_report` as soon as it exists.
pub fn run_federation_with(
    cfg: &FederationConfig,
    mut on_report: impl FnMut(&RoundReport) -> Result<()>,
) -> Result<FederationOutcome> {
    let mut fed = Federation::new(cfg.clone())?;
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let report = fed.run_round().map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })?;
        on_report(&report)?;
        reports.push(report);
    }
    Ok(FederationOutcome {
        reports,
        final_model: fed.into_global(),
    })
}

pub fn run_federation(cfg: &FederationConfig) -> Result<FederationOutcome> {
    run_federation_with(cfg, |_| Ok(()))
}

/// Runs a federation and writes its report to `<out_dir>/report.<ext>`.
pub fn run_to_dir(cfg: &FederationConfig) -> Result<(FederationOutcome, PathBuf)> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("report.{}", cfg.format.extension()));
    let mut writer = ReportWriter::create(&path, cfg.format)?;
    let outcome = run_federation_with(cfg, |r| writer.write(r))?;
    writer.finish()?;
    Ok((outcome, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Pmr,
    Pdr,
    IidRate,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Pmr => "pmr",
            SweepAxis::Pdr => "pdr",
            SweepAxis::IidRate => "iid_rate",
        }
    }

    fn apply(self, cfg: &mut FederationConfig, value: f64) {
        match self {
            SweepAxis::Pmr => cfg.pmr = value,
            SweepAxis::Pdr => cfg.pdr = value,
            SweepAxis::IidRate => cfg.iid_rate = value,
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pmr" => Ok(SweepAxis::Pmr),
            "pdr" => Ok(SweepAxis::Pdr),
            "iid_rate" => Ok(SweepAxis::IidRate),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// One full federation per value, summarised by its final round.
pub fn sweep(cfg: &FederationConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if cfg.attack.is_none() && axis != SweepAxis::IidRate {
        return Err(Error::Config(format!("sweeping {} needs an attack", axis.name())));
    }
    let mut configs = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = cfg.clone();
        axis.apply(&mut c, value);
        c.validate().map_err(|e| Error::Config(format!("{}={value}: {e}", axis.name())))?;
        configs.push(c);
    }
    configs
        .iter()
        .zip(values)
        .map(|(c, &value)| {
            let outcome = run_federation(c).map_err(|e| Error::SweepRow {
                axis: axis.name().to_string(),
                value,
                source: Box::new(e),
            })?;
            Ok(SweepRow::summarise(value, &outcome.reports))
        })
        .collect()
}

/// Runs a sweep and writes `<out_dir>/sweep_<axis>.<ext>`.
pub fn sweep_to_dir(cfg: &FederationConfig, axis: SweepAxis, values: &[f64]) -> Result<(Vec<SweepRow>, PathBuf)> {
    let rows = sweep(cfg, axis, values)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg
        .out_dir
        .join(format!("sweep_{}.{}", axis.name(), cfg.format.extension()));
    write_sweep(&path, cfg.format, axis, &rows)?;
    Ok((rows, path))
}

/// Path of the bundled MNIST subset relative to the repository root.
pub fn bundled_mnist(root: &Path) -> (PathBuf, PathBuf) {
    let dir = root.join("data/mnist-subset");
    (dir.join("images-idx3-ubyte.gz"), dir.join("labels-idx1-ubyte.gz"))
}
