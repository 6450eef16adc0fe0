//! Slow reference implementations used to cross-check the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense symmetric matrix as nested vectors.
pub type Dense = Vec<Vec<f64>>;

fn density(d: f64) -> f64 {
    1.0 / if d > 1e-12 { d } else { 1e-12 }
}

struct RefCluster {
    parent: Option<usize>,
    stability: f64,
    children: Vec<usize>,
    members: Vec<usize>,
    survivors: Vec<usize>,
}

/// Connected components of `set` using only edges whose density is strictly
/// above `level`, ordered by smallest member.
fn components(set: &[usize], mr: &Dense, level: f64) -> Vec<Vec<usize>> {
    let mut label: Vec<Option<usize>> = vec![None; set.len()];
    let mut comps = Vec::new();
    for start in 0..set.len() {
        if label[start].is_some() {
            continue;
        }
        let id = comps.len();
        let mut comp = vec![set[start]];
        label[start] = Some(id);
        let mut frontier = vec![start];
        while let Some(a) = frontier.pop() {
            for b in 0..set.len() {
                if label[b].is_none() && density(mr[set[a]][set[b]]) > level {
                    label[b] = Some(id);
                    comp.push(set[b]);
                    frontier.push(b);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

fn grow(
    tree: &mut Vec<RefCluster>,
    parent: Option<usize>,
    members: Vec<usize>,
    birth: f64,
    levels: &[f64],
    mr: &Dense,
    mcs: usize,
) {
    let id = tree.len();
    tree.push(RefCluster {
        parent,
        stability: 0.0,
        children: Vec::new(),
        members: members.clone(),
        survivors: Vec::new(),
    });
    let mut alive = members;
    for &level in levels.iter().filter(|&&l| l > birth) {
        let comps = components(&alive, mr, level);
        if comps.len() == 1 {
            continue;
        }
        let (big, small): (Vec<_>, Vec<_>) = comps.into_iter().partition(|c| c.len() >= mcs);
        match big.len() {
            0 => {
                tree[id].stability += alive.len() as f64 * (level - birth);
                tree[id].survivors = alive;
                return;
            }
            1 => {
                let lost: usize = small.iter().map(Vec::len).sum();
                tree[id].stability += lost as f64 * (level - birth);
                alive = big.into_iter().next().unwrap();
            }
            _ => {
                tree[id].stability += alive.len() as f64 * (level - birth);
                tree[id].survivors = alive;
                for comp in big {
                    let child = tree.len();
                    tree[id].children.push(child);
                    grow(tree, Some(id), comp, level, levels, mr, mcs);
                }
                return;
            }
        }
    }
    unreachable!("every cluster ends once all edges are removed");
}

fn best(tree: &[RefCluster], c: usize, picks: &mut Vec<usize>) -> f64 {
    let mut below = Vec::new();
    let total: f64 = tree[c]
        .children
        .iter()
        .map(|&k| best(tree, k, &mut below))
        .sum();
    if tree[c].children.is_empty() || tree[c].stability >= total {
        picks.push(c);
        tree[c].stability
    } else {
        picks.extend(below);
        total
    }
}

/// Labels from the definitions: density levels, condensed clusters,
/// excess-of-mass selection with the root eligible.
pub fn reference_hdbscan(d: &Dense, min_cluster_size: usize, min_samples: usize) -> Vec<i64> {
    let n = d.len();
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i][j]).collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            others[min_samples - 1]
        })
        .collect();
    let mr: Dense = (0..n)
        .map(|i| (0..n).map(|j| d[i][j].max(core[i]).max(core[j])).collect())
        .collect();
    let mut levels: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            levels.push(density(mr[i][j]));
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();

    let mut tree = Vec::new();
    grow(&mut tree, None, (0..n).collect(), 0.0, &levels, &mr, min_cluster_size);
    let mut picks = Vec::new();
    best(&tree, 0, &mut picks);
    picks.sort_unstable();

    let mut labels = vec![-1i64; n];
    for (label, &c) in picks.iter().enumerate() {
        let pts = if tree[c].parent.is_none() {
            &tree[c].survivors
        } else {
            &tree[c].members
        };
        for &p in pts {
            labels[p] = label as i64;
        }
    }
    labels
}

/// Relabels clusters in order of first appearance so equal partitions compare equal.
pub fn canonical(labels: &[i64]) -> Vec<i64> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let next = map.len() as i64;
                *map.entry(l).or_insert(next)
            }
        })
        .collect()
}

/// Minimum spanning tree weight by enumerating every Prüfer sequence.
pub fn brute_force_mst_weight(w: &Dense) -> f64 {
    let n = w.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return w[0][1];
    }
    let mut seq = vec![0usize; n - 2];
    let mut best = f64::INFINITY;
    loop {
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut total = 0.0;
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            total += w[leaf][s];
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        total += w[rest[0]][rest[1]];
        best = best.min(total);

        let mut pos = 0;
        loop {
            if pos == seq.len() {
                return best;
            }
            seq[pos] += 1;
            if seq[pos] < n {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}

/// Random symmetric distance matrix in `[0, 2]`. Most draws plant up to
/// four groups with small internal distances. Quantised draws round to
/// multiples of 0.25 so that ties and zero distances show up often.
pub fn random_distances(rng: &mut ChaCha8Rng, n: usize, quantise: bool) -> Dense {
    let mut d = vec![vec![0.0; n]; n];
    let clustered = rng.random_bool(0.7);
    let k = rng.random_range(2..=4);
    let groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    for i in 0..n {
        for j in i + 1..n {
            let mut v: f64 = match (clustered, groups[i] == groups[j]) {
                (true, true) => rng.random_range(0.0..0.15),
                (true, false) => rng.random_range(0.8..2.0),
                _ => rng.random_range(0.0..2.0),
            };
            if quantise {
                v = (v * 4.0).round() / 4.0;
            }
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Partial derivatives of `f` at `x` by central differences.
pub fn central_differences(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over the two vectors.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
