//! Datasets: IDX (MNIST layout) files, synthetic gaussian blobs, and the
//! IID-rate partitioning of a source dataset across clients.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::LabeledDataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a whole file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Loads an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Pixel bytes are scaled to `[0, 1]`. Either file may be gzip-compressed.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img = read_maybe_gz(images_path)?;
    let lab = read_maybe_gz(labels_path)?;

    check_magic(&img, IDX_IMAGES_MAGIC, images_path)?;
    check_magic(&lab, IDX_LABELS_MAGIC, labels_path)?;

    let n_images = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let pixels = img.get(16..16 + n_images * dim).ok_or_else(|| Error::Truncated {
        path: images_path.to_path_buf(),
    })?;
    let labels = lab.get(8..8 + n_labels).ok_or_else(|| Error::Truncated {
        path: labels_path.to_path_buf(),
    })?;

    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = labels.iter().map(|&b| usize::from(b)).collect();
    LabeledDataset::new(features, dim, labels)
}

/// Writes `data` as IDX files with images of shape `rows x cols`. Features
/// are clamped to `[0, 1]` and rounded to bytes. Paths ending in `.gz` are
/// gzip-compressed.
pub fn write_idx(
    data: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{rows}x{cols} images do not hold {} features",
            data.dim()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l > u8::MAX as usize) {
        return Err(Error::DimensionMismatch(format!("label {bad} does not fit in a byte")));
    }
    let n = data.len() as u32;
    let mut img = Vec::with_capacity(16 + data.features().len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(data.features().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));

    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(data.labels().iter().map(|&l| l as u8));

    write_maybe_gz(images_path.as_ref(), &img)?;
    write_maybe_gz(labels_path.as_ref(), &lab)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.flush()?;
    } else {
        let mut file = file;
        file.write_all(bytes)?;
        file.flush()?;
    }
    Ok(())
}

/// Gaussian blobs, `per_class` samples per class, class-major order. Class
/// `c` is centred on `(1 + c / (2 dim)) * (+/- e_(c mod dim))`.
pub fn make_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread.max(0.0)).expect("finite std");
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let mut mean = vec![0.0; dim];
        let sign = if (c / dim).is_multiple_of(2) { 1.0 } else { -1.0 };
        mean[c % dim] = sign * (1.0 + (c / (2 * dim)) as f64);
        for _ in 0..per_class {
            for &m in &mean {
                features.push(if spread > 0.0 { m + noise.sample(&mut rng) } else { m });
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, dim, labels).expect("consistent blob shapes")
}

/// Seeded split into `(train, held_out)` with `ceil(fraction * len)` held-out rows.
pub fn holdout_split(source: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidPartition(format!("held-out fraction {fraction} outside [0, 1)")));
    }
    let mut order: Vec<usize> = (0..source.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (fraction * source.len() as f64).ceil() as usize;
    let (test, train) = order.split_at(n_test);
    let mut test = test.to_vec();
    let mut train = train.to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((source.subset(&train), source.subset(&test)))
}

/// Sample indices assigned to each client.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub client_indices: Vec<Vec<usize>>,
    pub iid_rate: f64,
    pub num_clients: usize,
    /// Label group each client draws its non-IID share from.
    pub client_labels: Vec<usize>,
}

impl PartitionPlan {
    pub fn client_dataset(&self, source: &LabeledDataset, client: usize) -> LabeledDataset {
        source.subset(&self.client_indices[client])
    }

    pub fn validate(&self, source_len: usize) -> Result<()> {
        let mut seen = vec![false; source_len];
        for (c, idx) in self.client_indices.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidPartition(format!("client {c} has no samples")));
            }
            for &i in idx {
                if i >= source_len || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!(
                        "sample {i} out of range or assigned twice"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Number of samples each client takes from its own label group.
fn label_share(size: usize, iid_rate: f64) -> usize {
    ((1.0 - iid_rate) * size as f64).round() as usize
}

fn feasible(sizes: &[usize], client_labels: &[usize], pools: &[Vec<usize>], iid_rate: f64, total: usize) -> bool {
    if sizes.iter().sum::<usize>() > total {
        return false;
    }
    let mut demand = vec![0usize; pools.len()];
    for (&s, &l) in sizes.iter().zip(client_labels) {
        demand[l] += label_share(s, iid_rate);
    }
    demand.iter().zip(pools).all(|(&d, p)| d <= p.len())
}

/// Splits `source` across `num_clients`. Client `c` is bound to label group
/// `c mod num_classes`; a fraction `iid_rate` of its samples is drawn from
/// the whole dataset and the remainder from its label group only. Samples are
/// drawn without replacement.
///
/// With `samples_per_client = None` the source is split as evenly as possible
/// (sizes differ by at most one), shrinking the per-client size if the label
/// groups cannot supply their share.
pub fn iid_partition(
    source: &LabeledDataset,
    num_clients: usize,
    iid_rate: f64,
    samples_per_client: Option<usize>,
    seed: u64,
) -> Result<PartitionPlan> {
    if num_clients == 0 {
        return Err(Error::InvalidPartition("need at least one client".into()));
    }
    if !(0.0..=1.0).contains(&iid_rate) {
        return Err(Error::InvalidPartition(format!("iid_rate {iid_rate} outside [0, 1]")));
    }
    if source.len() < num_clients {
        return Err(Error::InvalidPartition(format!(
            "{} samples cannot cover {num_clients} clients",
            source.len()
        )));
    }
    let num_classes = source.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = vec![Vec::new(); num_classes];
    for (i, &l) in source.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let client_labels: Vec<usize> = (0..num_clients).map(|c| c % num_classes).collect();
    for &l in &client_labels {
        if pools[l].is_empty() && iid_rate < 1.0 {
            return Err(Error::LabelGroupExhausted { label: l });
        }
    }

    let total = source.len();
    let sizes: Vec<usize> = match samples_per_client {
        Some(0) => return Err(Error::InvalidPartition("samples_per_client must be positive".into())),
        Some(s) => vec![s; num_clients],
        None => {
            let even: Vec<usize> = (0..num_clients)
                .map(|c| total / num_clients + usize::from(c < total % num_clients))
                .collect();
            if feasible(&even, &client_labels, &pools, iid_rate, total) {
                even
            } else {
                let mut n = total / num_clients;
                while n > 0 && !feasible(&vec![n; num_clients], &client_labels, &pools, iid_rate, total) {
                    n -= 1;
                }
                vec![n; num_clients]
            }
        }
    };
    if sizes.iter().sum::<usize>() > total {
        return Err(Error::InvalidPartition(format!(
            "{} samples requested, source has {total}",
            sizes.iter().sum::<usize>()
        )));
    }

    let mut taken = vec![false; total];
    let mut client_indices: Vec<Vec<usize>> = Vec::with_capacity(num_clients);
    for (&size, &l) in sizes.iter().zip(&client_labels) {
        let share = label_share(size, iid_rate);
        if pools[l].len() < share {
            return Err(Error::LabelGroupExhausted { label: l });
        }
        let keep = pools[l].len() - share;
        let idx: Vec<usize> = pools[l].split_off(keep);
        for &i in &idx {
            taken[i] = true;
        }
        client_indices.push(idx);
    }
    let mut rest: Vec<usize> = (0..total).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    for (idx, &size) in client_indices.iter_mut().zip(&sizes) {
        let need = size - idx.len();
        idx.extend(rest.drain(rest.len() - need..));
    }

    let plan = PartitionPlan {
        client_indices,
        iid_rate,
        num_clients,
        client_labels,
    };
    plan.validate(total)?;
    Ok(plan)
}
