//! Aggregation rules: the plain mean over accepted models, sample-weighted
//! FedAvg, and the Krum / coordinate-median / trimmed-mean baselines.

use crate::error::{Error, Result};
use crate::model::ParameterVector;

#[derive(Debug, Clone)]
pub struct ClientContribution {
    pub params: ParameterVector,
    pub sample_count: usize,
}

fn check_same_arch(models: &[&ParameterVector]) -> Result<()> {
    let first = models.first().ok_or(Error::EmptyAccepted)?;
    for m in &models[1..] {
        first.ensure_same_arch(m)?;
    }
    Ok(())
}

fn mean_of(models: &[&ParameterVector]) -> Result<ParameterVector> {
    check_same_arch(models)?;
    let len = models[0].len();
    let mut acc = vec![0.0; len];
    for m in models {
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let l = models.len() as f64;
    for a in &mut acc {
        *a /= l;
    }
    models[0].with_values(acc)
}

/// Unweighted coordinate-wise mean over `models[accepted]`.
pub fn mean_accepted(models: &[ParameterVector], accepted: &[usize]) -> Result<ParameterVector> {
    if accepted.is_empty() {
        return Err(Error::EmptyAccepted);
    }
    let picked = accepted
        .iter()
        .map(|&i| {
            models.get(i).ok_or_else(|| {
                Error::DimensionMismatch(format!("accepted index {i} out of range for {} models", models.len()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(&picked)
}

/// `sum_i (n_i / n) W_i`.
pub fn fedavg_weighted(contribs: &[ClientContribution]) -> Result<ParameterVector> {
    if contribs.is_empty() {
        return Err(Error::EmptyAccepted);
    }
    if contribs.iter().any(|c| c.sample_count == 0) {
        return Err(Error::InvalidAggregation("sample counts must be positive".into()));
    }
    let models: Vec<&ParameterVector> = contribs.iter().map(|c| &c.params).collect();
    check_same_arch(&models)?;
    let total: usize = contribs.iter().map(|c| c.sample_count).sum();
    let mut acc = vec![0.0; models[0].len()];
    for c in contribs {
        let w = c.sample_count as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(c.params.values()) {
            *a += w * v;
        }
    }
    models[0].with_values(acc)
}

/// Index chosen by Krum: the model with the smallest sum of squared distances
/// to its `K - f - 2` nearest neighbours. Ties go to the lowest index.
pub fn krum_index(models: &[ParameterVector], f: usize) -> Result<usize> {
    let k = models.len();
    if k < 2 * f + 3 {
        return Err(Error::TooFewModels {
            needed: 2 * f + 3,
            actual: k,
        });
    }
    check_same_arch(&models.iter().collect::<Vec<_>>())?;
    let mut sq = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d: f64 = models[i]
                .values()
                .iter()
                .zip(models[j].values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sq[i * k + j] = d;
            sq[j * k + i] = d;
        }
    }
    let neighbours = k - f - 2;
    let mut best = (f64::INFINITY, 0);
    for i in 0..k {
        let mut row: Vec<f64> = (0..k).filter(|&j| j != i).map(|j| sq[i * k + j]).collect();
        row.sort_by(f64::total_cmp);
        let score: f64 = row[..neighbours].iter().sum();
        if score < best.0 {
            best = (score, i);
        }
    }
    Ok(best.1)
}

pub fn krum(models: &[ParameterVector], f: usize) -> Result<ParameterVector> {
    krum_index(models, f).map(|i| models[i].clone())
}

/// Applies `reduce` to the sorted values of every coordinate.
fn per_coordinate(
    models: &[ParameterVector],
    mut reduce: impl FnMut(&[f64]) -> f64,
) -> Result<ParameterVector> {
    let refs: Vec<&ParameterVector> = models.iter().collect();
    check_same_arch(&refs)?;
    let len = models[0].len();
    let mut column = vec![0.0; models.len()];
    let mut out = Vec::with_capacity(len);
    for c in 0..len {
        for (slot, m) in column.iter_mut().zip(models) {
            *slot = m.values()[c];
        }
        column.sort_by(f64::total_cmp);
        out.push(reduce(&column));
    }
    models[0].with_values(out)
}

pub fn coordinate_median(models: &[ParameterVector]) -> Result<ParameterVector> {
    per_coordinate(models, |sorted| {
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }
    })
}

/// Drops `floor(beta * K)` values from each end of every coordinate and
/// averages the rest.
pub fn trimmed_mean(models: &[ParameterVector], beta: f64) -> Result<ParameterVector> {
    if !(0.0..0.5).contains(&beta) {
        return Err(Error::InvalidAggregation(format!("trim fraction {beta} outside [0, 0.5)")));
    }
    if models.is_empty() {
        return Err(Error::EmptyAccepted);
    }
    let k = models.len();
    let trim = (beta * k as f64).floor() as usize;
    if 2 * trim >= k {
        return Err(Error::OverTrimmed { trim, count: k });
    }
    per_coordinate(models, |sorted| {
        let kept = &sorted[trim..k - trim];
        kept.iter().sum::<f64>() / kept.len() as f64
    })
}
