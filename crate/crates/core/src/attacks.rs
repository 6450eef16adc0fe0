//! Poisoning strategies, expressed as transformations of a client's data or
//! of the model it submits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{FingerprintMap, FrequencyFingerprint};
use crate::model::{train_with_hooks, LabeledDataset, ParameterVector, SgdHooks, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LabelFlip,
    RandomUpdate,
    PgdUntargeted,
    PixelBackdoor,
    ConcentratedBackdoor,
    AdaptiveFrequency,
    BenignFreqInjection,
}

impl AttackKind {
    /// Attacks that implant a trigger and are scored by backdoor accuracy.
    pub fn is_backdoor(self) -> bool {
        matches!(
            self,
            AttackKind::PixelBackdoor
                | AttackKind::ConcentratedBackdoor
                | AttackKind::AdaptiveFrequency
                | AttackKind::BenignFreqInjection
        )
    }
}

/// Where adaptive attackers get their benign reference model from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenignTemplate {
    /// Train a clean model on the attacker's own unpoisoned data.
    #[default]
    UnknownBenign,
    /// Use a real benign client's submission from the same round.
    KnownBenign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Fraction of clients that are malicious.
    pub pmr: f64,
    /// Fraction of each malicious client's samples that are poisoned.
    pub pdr: f64,
    pub target_label: usize,
    pub scale_gamma: f64,
    /// Weight of the classification loss in the adaptive attack.
    pub alpha: f64,
    /// PGD distance budget.
    pub tau: f64,
    /// Standard deviation of random updates.
    pub random_sigma: f64,
    /// Noise added to each copy in the concentrated attack.
    pub noise_sigma: f64,
    pub template: BenignTemplate,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            pmr: 0.3,
            pdr: 0.5,
            target_label: 0,
            scale_gamma: 1.0,
            alpha: 0.5,
            tau: 1.0,
            random_sigma: 1.0,
            noise_sigma: 0.0,
            template: BenignTemplate::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.pmr) {
            return Err(Error::InvalidAttack(format!("pmr {} outside [0, 1)", self.pmr)));
        }
        if !(0.0..=1.0).contains(&self.pdr) {
            return Err(Error::InvalidAttack(format!("pdr {} outside [0, 1]", self.pdr)));
        }
        if !(self.scale_gamma >= 1.0 && self.scale_gamma.is_finite()) {
            return Err(Error::InvalidAttack(format!("scale_gamma {} must be >= 1", self.scale_gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidAttack(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidAttack(format!("tau {} must be non-negative", self.tau)));
        }
        if !(self.random_sigma > 0.0 && self.random_sigma.is_finite()) {
            return Err(Error::InvalidAttack(format!("random_sigma {} must be positive", self.random_sigma)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidAttack(format!("noise_sigma {} must be non-negative", self.noise_sigma)));
        }
        Ok(())
    }

    /// Number of malicious clients out of `num_clients`.
    pub fn malicious_count(&self, num_clients: usize) -> usize {
        (self.pmr * num_clients as f64 + 1e-9).floor() as usize
    }
}

/// Input coordinates overwritten by the trigger and the value written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub pixel_indices: Vec<usize>,
    pub pixel_value: f64,
}

impl TriggerSpec {
    /// 2x2 patch in the top-left corner of a square image of `dim` pixels.
    /// Inputs that are not square images get their first four coordinates.
    pub fn top_left(dim: usize, pixel_value: f64) -> Self {
        let side = (dim as f64).sqrt().round() as usize;
        let pixel_indices = if side >= 2 && side * side == dim {
            vec![0, 1, side, side + 1]
        } else {
            (0..dim.min(4)).collect()
        };
        Self {
            pixel_indices,
            pixel_value,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.pixel_indices.is_empty() {
            return Err(Error::InvalidAttack("trigger has no pixels".into()));
        }
        if let Some(&bad) = self.pixel_indices.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidAttack(format!("trigger pixel {bad} outside input of {dim}")));
        }
        Ok(())
    }

    pub fn stamp(&self, row: &mut [f64]) {
        for &i in &self.pixel_indices {
            row[i] = self.pixel_value;
        }
    }
}

/// Copy of `data` with the trigger stamped on every row and labels untouched.
pub fn apply_trigger(data: &LabeledDataset, trigger: &TriggerSpec) -> Result<LabeledDataset> {
    trigger.validate(data.dim())?;
    let mut out = data.clone();
    for i in 0..out.len() {
        trigger.stamp(out.row_mut(i));
    }
    Ok(out)
}

fn poisoned_subset(len: usize, pdr: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = ((pdr * len as f64).ceil() as usize).min(len);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.truncate(count);
    order.sort_unstable();
    order
}

/// Relabels a seeded `ceil(pdr * len)` subset with a uniformly drawn different class.
pub fn label_flip(data: &LabeledDataset, pdr: f64, num_classes: usize, seed: u64) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::InvalidAttack("label flipping needs at least 2 classes".into()));
    }
    if !(0.0..=1.0).contains(&pdr) {
        return Err(Error::InvalidAttack(format!("pdr {pdr} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for i in poisoned_subset(data.len(), pdr, &mut rng) {
        let old = data.label(i);
        let mut new = rng.random_range(0..num_classes - 1);
        if new >= old {
            new += 1;
        }
        out.set_label(i, new);
    }
    Ok(out)
}

/// Reference plus i.i.d. gaussian noise on every coordinate.
pub fn random_update(reference: &ParameterVector, sigma: f64, seed: u64) -> Result<ParameterVector> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidAttack(format!("sigma {sigma} must be positive")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidAttack(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = reference.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
    reference.with_values(values)
}

struct ProjectedAscent<'a> {
    center: &'a [f64],
    radius: f64,
}

impl SgdHooks for ProjectedAscent<'_> {
    fn direction(&self) -> f64 {
        -1.0
    }

    fn after_step(&mut self, w: &mut [f64]) {
        project_onto_ball(w, self.center, self.radius);
    }
}

fn project_onto_ball(w: &mut [f64], center: &[f64], radius: f64) {
    let dist = w
        .iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if dist <= radius {
        return;
    }
    if radius == 0.0 {
        w.copy_from_slice(center);
        return;
    }
    let shrink = radius / dist;
    for (a, &c) in w.iter_mut().zip(center) {
        *a = c + (*a - c) * shrink;
    }
}

/// Gradient ascent on the training loss, projected after every step onto the
/// L2 ball of radius `tau` around `global`.
pub fn pgd_untargeted(
    global: &ParameterVector,
    data: &LabeledDataset,
    cfg: &TrainingConfig,
    tau: f64,
) -> Result<ParameterVector> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidAttack(format!("tau {tau} must be non-negative")));
    }
    let mut hooks = ProjectedAscent {
        center: global.values(),
        radius: tau,
    };
    let mut out = train_with_hooks(global, data, cfg, &mut hooks)?;
    // Guard against round-off pushing the final point just outside the ball.
    project_onto_ball(out.values_mut(), global.values(), tau * (1.0 - 1e-12));
    Ok(out)
}

/// Stamps the trigger on a seeded `ceil(pdr * len)` subset and relabels it to `target`.
pub fn pixel_backdoor_poison(
    data: &LabeledDataset,
    trigger: &TriggerSpec,
    target: usize,
    pdr: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    trigger.validate(data.dim())?;
    if !(0.0..=1.0).contains(&pdr) {
        return Err(Error::InvalidAttack(format!("pdr {pdr} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    for i in poisoned_subset(data.len(), pdr, &mut rng) {
        trigger.stamp(out.row_mut(i));
        out.set_label(i, target);
    }
    Ok(out)
}

/// `global + gamma * (malicious - global)`.
pub fn scale_update(malicious: &ParameterVector, global: &ParameterVector, gamma: f64) -> Result<ParameterVector> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidAttack(format!("gamma {gamma} must be >= 1")));
    }
    malicious.ensure_same_arch(global)?;
    let values = malicious
        .values()
        .iter()
        .zip(global.values())
        .map(|(m, g)| g + gamma * (m - g))
        .collect();
    global.with_values(values)
}

/// `count` copies of `template`, each with its own seeded gaussian noise.
pub fn concentrated_submission(
    template: &ParameterVector,
    count: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<ParameterVector>> {
    if count == 0 {
        return Err(Error::InvalidAttack("count must be >= 1".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidAttack(format!("noise_sigma {noise_sigma} must be non-negative")));
    }
    if noise_sigma == 0.0 {
        return Ok(vec![template.clone(); count]);
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidAttack(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let values = template.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
            template.with_values(values)
        })
        .collect()
}

/// Cosine distance between the fingerprint of `w` and `template`, with its
/// gradient with respect to `w`.
pub fn frequency_anomaly_loss(
    map: &FingerprintMap,
    w: &[f64],
    template: &FrequencyFingerprint,
) -> Result<(f64, Vec<f64>)> {
    let f = map.apply(w)?;
    if f.len() != template.len() {
        return Err(Error::DimensionMismatch(format!(
            "template fingerprint has length {}, model fingerprint {}",
            template.len(),
            f.len()
        )));
    }
    let nf = f.norm();
    let nt = template.norm();
    if nf == 0.0 {
        return Err(Error::ZeroNormFingerprint { index: 0 });
    }
    if nt == 0.0 {
        return Err(Error::ZeroNormFingerprint { index: 1 });
    }
    let dot: f64 = f.coeffs.iter().zip(&template.coeffs).map(|(a, b)| a * b).sum();
    let cos = dot / (nf * nt);
    // d(1 - cos)/df = -(t / (|f||t|) - cos * f / |f|^2)
    let g: Vec<f64> = f
        .coeffs
        .iter()
        .zip(&template.coeffs)
        .map(|(fi, ti)| -(ti / (nf * nt) - cos * fi / (nf * nf)))
        .collect();
    Ok((1.0 - cos, map.adjoint(&g)?))
}

struct FrequencyConstrained<'a> {
    map: FingerprintMap,
    template: &'a FrequencyFingerprint,
    alpha: f64,
}

impl SgdHooks for FrequencyConstrained<'_> {
    fn adjust_gradient(&mut self, w: &[f64], grad: &mut [f64]) -> Result<()> {
        if self.alpha == 1.0 {
            return Ok(());
        }
        let (loss, ano) = frequency_anomaly_loss(&self.map, w, self.template)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("frequency anomaly loss"));
        }
        for (g, a) in grad.iter_mut().zip(&ano) {
            *g = self.alpha * *g + (1.0 - self.alpha) * a;
        }
        Ok(())
    }
}

/// SGD on `alpha * L_class + (1 - alpha) * L_ano`, where `L_ano` is the cosine
/// distance between the model's fingerprint and a benign template.
pub fn adaptive_frequency_train(
    global: &ParameterVector,
    poisoned_data: &LabeledDataset,
    benign_template_fp: &FrequencyFingerprint,
    alpha: f64,
    cfg: &TrainingConfig,
) -> Result<ParameterVector> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidAttack(format!("alpha {alpha} outside (0, 1]")));
    }
    let mut hooks = FrequencyConstrained {
        map: FingerprintMap::new(global.len()),
        template: benign_template_fp,
        alpha,
    };
    train_with_hooks(global, poisoned_data, cfg, &mut hooks)
}

/// Replaces the low-frequency DCT coefficients of `w` with those of
/// `benign_source` and transforms back.
///
/// When the packed matrix has zero padding, part of a plain coefficient swap
/// lands in the padding and is lost on unpacking. The swap is the first step
/// of solving `F F^T y = F(b) - F(w)` for the fingerprint map `F`; conjugate
/// gradients finish the solve so that `w + F^T y` carries the benign
/// fingerprint exactly. Without padding the first step is already exact.
pub fn benign_freq_injection_epoch(w: &ParameterVector, benign_source: &ParameterVector) -> Result<ParameterVector> {
    w.ensure_same_arch(benign_source)?;
    let map = FingerprintMap::new(w.len());
    let target = map.apply(benign_source.values())?;
    let current = map.apply(w.values())?;
    let rhs: Vec<f64> = target.coeffs.iter().zip(&current.coeffs).map(|(t, c)| t - c).collect();
    let y = conjugate_gradient(&map, &rhs, 1e-14 * target.norm().max(current.norm()))?;
    let shift = map.adjoint(&y)?;
    let values = w.values().iter().zip(&shift).map(|(a, b)| a + b).collect();
    w.with_values(values)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `F F^T y = rhs`, stopping once the residual norm is below `tol`.
fn conjugate_gradient(map: &FingerprintMap, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let mut y = vec![0.0; rhs.len()];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for _ in 0..rhs.len().min(200) {
        if rs.sqrt() <= tol {
            break;
        }
        let ap = map.apply(&map.adjoint(&p)?)?.coeffs;
        let step = rs / dot(&p, &ap);
        for i in 0..y.len() {
            y[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let next = dot(&r, &r);
        let beta = next / rs;
        rs = next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    Ok(y)
}

struct InjectBetweenEpochs<'a> {
    source: &'a ParameterVector,
}

impl SgdHooks for InjectBetweenEpochs<'_> {
    fn between_epochs(&mut self, _epoch: usize, w: &mut [f64]) -> Result<()> {
        let current = self.source.with_values(w.to_vec())?;
        let injected = benign_freq_injection_epoch(&current, self.source)?;
        w.copy_from_slice(injected.values());
        Ok(())
    }
}

/// Backdoor training with the benign low frequencies restored after every
/// local epoch but the last.
pub fn train_with_benign_injection(
    global: &ParameterVector,
    poisoned_data: &LabeledDataset,
    benign_source: &ParameterVector,
    cfg: &TrainingConfig,
) -> Result<ParameterVector> {
    global.ensure_same_arch(benign_source)?;
    let mut hooks = InjectBetweenEpochs { source: benign_source };
    train_with_hooks(global, poisoned_data, cfg, &mut hooks)
}
