//! Cosine-distance clustering of fingerprints and selection of the accepted
//! (largest) cluster.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::FrequencyFingerprint;

pub mod hdbscan;

pub use hdbscan::hdbscan;

/// Label given to points outside every selected cluster.
pub const NOISE: i64 = -1;

/// Symmetric `K x K` matrix of distances in `[0, 2]` with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::DimensionMismatch(format!(
                "{} entries do not form a {k}x{k} matrix",
                entries.len()
            )));
        }
        for i in 0..k {
            if entries[i * k + i] != 0.0 {
                return Err(Error::InvalidClustering(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..k {
                let v = entries[i * k + j];
                if !v.is_finite() || !(0.0..=2.0).contains(&v) {
                    return Err(Error::InvalidClustering(format!(
                        "distance ({i}, {j}) = {v} is outside [0, 2]"
                    )));
                }
                if v != entries[j * k + i] {
                    return Err(Error::InvalidClustering(format!(
                        "distance ({i}, {j}) is not symmetric"
                    )));
                }
            }
        }
        Ok(Self { k, entries })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Copy with rows and columns reordered so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                entries[i * k + j] = self.get(perm[i], perm[j]);
            }
        }
        Self { k, entries }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// `k` of the core distance.
    pub min_samples: usize,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 2,
            min_samples: 1,
        }
    }
}

impl HdbscanParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 {
            return Err(Error::InvalidClustering("min_cluster_size must be >= 2".into()));
        }
        if self.min_samples < 1 {
            return Err(Error::InvalidClustering("min_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub(crate) fn check_for(&self, k: usize) -> Result<()> {
        self.validate()?;
        if k < self.min_cluster_size {
            return Err(Error::TooFewModels {
                needed: self.min_cluster_size,
                actual: k,
            });
        }
        if self.min_samples > k - 1 {
            return Err(Error::InvalidClustering(format!(
                "min_samples = {} needs at least {} points, got {k}",
                self.min_samples,
                self.min_samples + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    /// Non-noise label to member count.
    pub cluster_sizes: BTreeMap<i64, usize>,
}

impl ClusterAssignment {
    pub fn from_labels(labels: Vec<i64>) -> Self {
        let mut cluster_sizes = BTreeMap::new();
        for &l in labels.iter().filter(|&&l| l != NOISE) {
            *cluster_sizes.entry(l).or_insert(0) += 1;
        }
        Self {
            labels,
            cluster_sizes,
        }
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// `1 - cos(F_i, F_j)` for every pair, with an exact zero diagonal.
pub fn cosine_distance_matrix(fps: &[FrequencyFingerprint]) -> Result<DistanceMatrix> {
    if fps.len() < 2 {
        return Err(Error::TooFewModels {
            needed: 2,
            actual: fps.len(),
        });
    }
    let dim = fps[0].len();
    if let Some(bad) = fps.iter().position(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "fingerprint {bad} has length {}, expected {dim}",
            fps[bad].len()
        )));
    }
    let norms: Vec<f64> = fps.iter().map(FrequencyFingerprint::norm).collect();
    for (index, &n) in norms.iter().enumerate() {
        if n == 0.0 {
            return Err(Error::ZeroNormFingerprint { index });
        }
        if !n.is_finite() {
            return Err(Error::NonFinite("fingerprint"));
        }
    }
    let k = fps.len();
    let mut entries = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let dot: f64 = fps[i].coeffs.iter().zip(&fps[j].coeffs).map(|(a, b)| a * b).sum();
            let d = (1.0 - dot / (norms[i] * norms[j])).clamp(0.0, 2.0);
            entries[i * k + j] = d;
            entries[j * k + i] = d;
        }
    }
    Ok(DistanceMatrix { k, entries })
}

/// Indices of the largest non-noise cluster; equal sizes go to the smaller label.
pub fn select_accepted(assignment: &ClusterAssignment) -> Result<Vec<usize>> {
    let mut best: Option<(i64, usize)> = None;
    for (&label, &size) in &assignment.cluster_sizes {
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((label, size));
        }
    }
    let (label, _) = best.ok_or(Error::AllNoise)?;
    Ok(assignment
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(i, _)| i)
        .collect())
}

/// Result of clustering one round's fingerprints.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub distances: DistanceMatrix,
    pub assignment: ClusterAssignment,
    pub accepted: Vec<usize>,
}

pub fn cluster_fingerprints(
    fps: &[FrequencyFingerprint],
    params: &HdbscanParams,
) -> Result<FilterOutcome> {
    let distances = cosine_distance_matrix(fps)?;
    let assignment = hdbscan(&distances, params)?;
    let accepted = select_accepted(&assignment)?;
    Ok(FilterOutcome {
        distances,
        assignment,
        accepted,
    })
}

/// Indices of the models accepted for aggregation.
pub fn filter_models(fps: &[FrequencyFingerprint], params: &HdbscanParams) -> Result<Vec<usize>> {
    cluster_fingerprints(fps, params).map(|o| o.accepted)
}
