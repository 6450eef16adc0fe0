//! HDBSCAN over a precomputed distance matrix.
//!
//! Pipeline: core distances, mutual reachability, Prim's MST over the
//! complete mutual-reachability graph, single-linkage merge tree, condensed
//! tree, excess-of-mass cluster selection.
//!
//! Conventions:
//! - the core distance of a point is the distance to its `min_samples`-th
//!   nearest *other* point;
//! - `lambda = 1 / max(d, MIN_DISTANCE)`, so coincident points get a large
//!   finite density instead of infinity;
//! - merges at equal lambda are one multi-way event, which makes the
//!   condensed tree independent of how MST ties were broken;
//! - the root is a selectable cluster. When it wins, only the points still
//!   attached to it when it finally dissolves or splits are labelled; points
//!   it shed earlier are noise.

use std::cmp::Ordering;

use super::{ClusterAssignment, DistanceMatrix, HdbscanParams};
use crate::error::{Error, Result};

/// Distances below this are treated as equal when converted to density.
pub const MIN_DISTANCE: f64 = 1e-12;

pub fn lambda(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl MstEdge {
    fn key(&self) -> (f64, usize, usize) {
        (self.weight, self.a.min(self.b), self.a.max(self.b))
    }
}

fn cmp_key(x: (f64, usize, usize), y: (f64, usize, usize)) -> Ordering {
    x.0.total_cmp(&y.0)
        .then(x.1.cmp(&y.1))
        .then(x.2.cmp(&y.2))
}

/// Distance from each point to its `k`-th nearest other point.
pub fn core_distances(d: &DistanceMatrix, k: usize) -> Vec<f64> {
    let n = d.len();
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            row[k - 1]
        })
        .collect()
}

pub fn mutual_reachability(d: &DistanceMatrix, core: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i * n + j] = d.get(i, j).max(core[i]).max(core[j]);
            }
        }
    }
    out
}

/// Prim's algorithm on a dense `n x n` weight matrix. Ties between candidate
/// edges go to the lexicographically smallest `(min, max)` endpoint pair.
/// Edges are returned sorted by `(weight, min endpoint, max endpoint)`.
pub fn prim_mst(weights: &[f64], n: usize) -> Vec<MstEdge> {
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<MstEdge>> = vec![None; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut newest = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for v in 0..n {
            if in_tree[v] {
                continue;
            }
            let cand = MstEdge {
                a: newest,
                b: v,
                weight: weights[newest * n + v],
            };
            let better = match best[v] {
                None => true,
                Some(cur) => cmp_key(cand.key(), cur.key()) == Ordering::Less,
            };
            if better {
                best[v] = Some(cand);
            }
        }
        let next = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&u, &v| cmp_key(best[u].unwrap().key(), best[v].unwrap().key()))
            .unwrap();
        edges.push(best[next].unwrap());
        in_tree[next] = true;
        newest = next;
    }
    edges.sort_by(|x, y| cmp_key(x.key(), y.key()));
    edges
}

/// Internal node of the single-linkage merge tree. Leaves are the points
/// `0..n`; node `n + t` is the `t`-th merge.
#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    /// Merge-tree node currently representing each root's component.
    node: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            node: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

fn single_linkage(mst: &[MstEdge], n: usize) -> Vec<Merge> {
    let mut uf = UnionFind::new(n);
    let mut sizes = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for e in mst {
        let ra = uf.find(e.a);
        let rb = uf.find(e.b);
        let size = sizes[ra] + sizes[rb];
        merges.push(Merge {
            left: uf.node[ra],
            right: uf.node[rb],
            distance: e.weight,
            size,
        });
        uf.parent[rb] = ra;
        sizes[ra] = size;
        uf.node[ra] = n + merges.len() - 1;
    }
    merges
}

#[derive(Debug, Clone)]
pub struct CondensedCluster {
    pub parent: Option<usize>,
    pub birth: f64,
    /// Lambda of the final split or dissolution.
    pub death: f64,
    pub stability: f64,
    pub children: Vec<usize>,
    /// Every point that was ever part of the cluster.
    pub points: Vec<usize>,
    /// Points still attached when the cluster split or dissolved.
    pub persistent: Vec<usize>,
}

struct Condenser<'a> {
    n: usize,
    merges: &'a [Merge],
    min_cluster_size: usize,
    clusters: Vec<CondensedCluster>,
}

impl Condenser<'_> {
    fn size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.merges[node - self.n].size
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                let m = self.merges[x - self.n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
    }

    /// Children of `node` after flattening descendants that merge at the same lambda.
    fn effective_children(&self, node: usize) -> Vec<usize> {
        let lam = lambda(self.merges[node - self.n].distance);
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            let m = self.merges[x - self.n];
            for child in [m.right, m.left] {
                if child >= self.n && lambda(self.merges[child - self.n].distance) == lam {
                    stack.push(child);
                } else {
                    out.push(child);
                }
            }
        }
        out.sort_by_key(|&c| {
            let mut pts = Vec::new();
            self.leaves(c, &mut pts);
            pts.into_iter().min().unwrap()
        });
        out
    }

    fn new_cluster(&mut self, parent: Option<usize>, birth: f64, node: usize) -> usize {
        let mut points = Vec::new();
        self.leaves(node, &mut points);
        points.sort_unstable();
        self.clusters.push(CondensedCluster {
            parent,
            birth,
            death: birth,
            stability: 0.0,
            children: Vec::new(),
            points,
            persistent: Vec::new(),
        });
        self.clusters.len() - 1
    }

    fn run(&mut self) {
        let root_node = self.n + self.merges.len() - 1;
        let root = self.new_cluster(None, 0.0, root_node);
        let mut work = vec![(root_node, root)];
        while let Some((node, c)) = work.pop() {
            let mut node = node;
            loop {
                let lam = lambda(self.merges[node - self.n].distance);
                let birth = self.clusters[c].birth;
                let kids = self.effective_children(node);
                let (big, small): (Vec<usize>, Vec<usize>) = kids
                    .into_iter()
                    .partition(|&k| self.size(k) >= self.min_cluster_size);
                let current = self.size(node) as f64;
                match big.len() {
                    0 => {
                        let cl = &mut self.clusters[c];
                        cl.stability += current * (lam - birth);
                        cl.death = lam;
                        let mut pts = Vec::new();
                        self.leaves(node, &mut pts);
                        pts.sort_unstable();
                        self.clusters[c].persistent = pts;
                        break;
                    }
                    1 => {
                        let shed: usize = small.iter().map(|&k| self.size(k)).sum();
                        self.clusters[c].stability += shed as f64 * (lam - birth);
                        node = big[0];
                    }
                    _ => {
                        let mut pts = Vec::new();
                        self.leaves(node, &mut pts);
                        pts.sort_unstable();
                        {
                            let cl = &mut self.clusters[c];
                            cl.stability += current * (lam - birth);
                            cl.death = lam;
                            cl.persistent = pts;
                        }
                        let mut created = Vec::with_capacity(big.len());
                        for &k in &big {
                            let id = self.new_cluster(Some(c), lam, k);
                            self.clusters[c].children.push(id);
                            created.push((k, id));
                        }
                        work.extend(created.into_iter().rev());
                        break;
                    }
                }
            }
        }
    }
}

/// Condensed cluster hierarchy; index 0 is the root.
pub fn condensed_tree(
    d: &DistanceMatrix,
    params: &HdbscanParams,
) -> Result<Vec<CondensedCluster>> {
    params.check_for(d.len())?;
    let n = d.len();
    let core = core_distances(d, params.min_samples);
    let mr = mutual_reachability(d, &core);
    let mst = prim_mst(&mr, n);
    let merges = single_linkage(&mst, n);
    let mut condenser = Condenser {
        n,
        merges: &merges,
        min_cluster_size: params.min_cluster_size,
        clusters: Vec::new(),
    };
    condenser.run();
    Ok(condenser.clusters)
}

/// Excess-of-mass selection. A cluster is kept when its own stability is at
/// least the best total achievable by its descendants.
pub fn select_clusters(tree: &[CondensedCluster]) -> Vec<usize> {
    let mut best = vec![0.0; tree.len()];
    let mut chosen = vec![false; tree.len()];
    // Children always have larger ids than their parent.
    for c in (0..tree.len()).rev() {
        let children_total: f64 = tree[c].children.iter().map(|&k| best[k]).sum();
        if tree[c].children.is_empty() || tree[c].stability >= children_total {
            best[c] = tree[c].stability;
            chosen[c] = true;
        } else {
            best[c] = children_total;
        }
    }
    // Keep only the topmost chosen cluster on each path.
    let mut selected = Vec::new();
    let mut stack = vec![0];
    while let Some(c) = stack.pop() {
        if chosen[c] {
            selected.push(c);
        } else {
            stack.extend(tree[c].children.iter().rev());
        }
    }
    selected.sort_unstable();
    selected
}

pub fn hdbscan(d: &DistanceMatrix, params: &HdbscanParams) -> Result<ClusterAssignment> {
    let n = d.len();
    if n < params.min_cluster_size {
        return Err(Error::TooFewModels {
            needed: params.min_cluster_size,
            actual: n,
        });
    }
    let tree = condensed_tree(d, params)?;
    let selected = select_clusters(&tree);
    let mut labels = vec![super::NOISE; n];
    for (label, &c) in selected.iter().enumerate() {
        let members = if c == 0 {
            &tree[c].persistent
        } else {
            &tree[c].points
        };
        for &p in members {
            labels[p] = label as i64;
        }
    }
    Ok(ClusterAssignment::from_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    e[i * n + j] = f(i.min(j), i.max(j));
                }
            }
        }
        DistanceMatrix::new(n, e).unwrap()
    }

    #[test]
    fn core_distance_excludes_self() {
        let d = matrix(3, |i, j| (j - i) as f64 * 0.5);
        assert_eq!(core_distances(&d, 1), vec![0.5, 0.5, 0.5]);
        assert_eq!(core_distances(&d, 2), vec![1.0, 0.5, 1.0]);
    }

    #[test]
    fn prim_breaks_ties_lexicographically() {
        // Every edge has weight 1: the tree is the star centred on 0.
        let n = 4;
        let w: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 0.0 } else { 1.0 }).collect();
        let mst = prim_mst(&w, n);
        let pairs: Vec<_> = mst.iter().map(|e| (e.a.min(e.b), e.a.max(e.b))).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn chain_condenses_into_single_root() {
        let d = matrix(4, |i, j| 0.1 * (j - i) as f64);
        let tree = condensed_tree(&d, &HdbscanParams::default()).unwrap();
        // All links are 0.1 so the chain dissolves in one event.
        assert_eq!(tree.len(), 1);
        assert_eq!(tree[0].persistent, vec![0, 1, 2, 3]);
    }

    #[test]
    fn selection_prefers_parent_on_ties() {
        let d = matrix(4, |_, _| 0.0);
        let a = hdbscan(&d, &HdbscanParams::default()).unwrap();
        assert_eq!(a.labels, vec![0; 4]);
    }

    #[test]
    fn min_cluster_size_must_be_reachable() {
        let d = matrix(3, |_, _| 0.5);
        let p = HdbscanParams {
            min_cluster_size: 4,
            min_samples: 1,
        };
        assert!(hdbscan(&d, &p).is_err());
        let p = HdbscanParams {
            min_cluster_size: 2,
            min_samples: 3,
        };
        assert!(hdbscan(&d, &p).is_err());
    }
}
