//! Agglomerative clustering driven by the Lance-Williams recurrence.
//!
//! Node ids follow the usual convention: leaves are `0..n`, and the `i`-th
//! merge creates node `n + i`. Creation order is therefore the node id, and
//! ties between equally close pairs go to the lexicographically smallest
//! `(lower id, higher id)` pair.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Upper triangle (without diagonal) of a symmetric dissimilarity matrix,
/// stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

#[inline]
fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    n * i - i * (i + 1) / 2 + j - i - 1
}

impl DistanceMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 points, got {n}")));
        }
        if values.len() != n * (n - 1) / 2 {
            return Err(Error::invalid(format!(
                "condensed matrix for {n} points needs {} values, got {}",
                n * (n - 1) / 2,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("invalid dissimilarity {v}")));
        }
        Ok(DistanceMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            Ordering::Equal => 0.0,
            Ordering::Less => self.values[condensed_index(self.n, i, j)],
            Ordering::Greater => self.values[condensed_index(self.n, j, i)],
        }
    }
}

/// Euclidean distance between every pair of points.
pub fn pairwise_distances(dataset: &Dataset) -> Result<DistanceMatrix> {
    let pts = dataset.points();
    let n = pts.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 points, got {n}")));
    }
    let values: Vec<f64> = (0..n - 1)
        .into_par_iter()
        .flat_map_iter(|i| (i + 1..n).map(move |j| euclidean(&pts[i].features, &pts[j].features)))
        .collect();
    DistanceMatrix::new(n, values)
}

/// Named Lance-Williams schemes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Linkage {
    #[default]
    Single,
    Complete,
    /// Group average (UPGMA); coefficients depend on cluster sizes.
    Average,
    /// Beta-flexible: `alpha_i = alpha_j = (1 - beta) / 2`, `gamma = 0`.
    Flexible {
        beta: f64,
    },
    /// Explicit recurrence coefficients.
    Custom {
        alpha_i: f64,
        alpha_j: f64,
        beta: f64,
        gamma: f64,
    },
}

/// The four coefficients of the recurrence for one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanceWilliams {
    pub alpha_i: f64,
    pub alpha_j: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Linkage {
    pub fn coefficients(&self, size_i: usize, size_j: usize) -> LanceWilliams {
        match *self {
            Linkage::Single => LanceWilliams {
                alpha_i: 0.5,
                alpha_j: 0.5,
                beta: 0.0,
                gamma: -0.5,
            },
            Linkage::Complete => LanceWilliams {
                alpha_i: 0.5,
                alpha_j: 0.5,
                beta: 0.0,
                gamma: 0.5,
            },
            Linkage::Average => {
                let total = (size_i + size_j) as f64;
                LanceWilliams {
                    alpha_i: size_i as f64 / total,
                    alpha_j: size_j as f64 / total,
                    beta: 0.0,
                    gamma: 0.0,
                }
            }
            Linkage::Flexible { beta } => LanceWilliams {
                alpha_i: (1.0 - beta) / 2.0,
                alpha_j: (1.0 - beta) / 2.0,
                beta,
                gamma: 0.0,
            },
            Linkage::Custom {
                alpha_i,
                alpha_j,
                beta,
                gamma,
            } => LanceWilliams {
                alpha_i,
                alpha_j,
                beta,
                gamma,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Linkage::Flexible { beta } if !(beta.is_finite() && beta < 1.0) => {
                Err(Error::invalid(format!("flexible linkage needs beta < 1, got {beta}")))
            }
            Linkage::Custom {
                alpha_i,
                alpha_j,
                beta,
                gamma,
            } if ![alpha_i, alpha_j, beta, gamma].iter().all(|c| c.is_finite()) => {
                Err(Error::invalid("linkage coefficients must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Whether merge heights are guaranteed nondecreasing toward the root.
    pub fn is_monotone(&self) -> bool {
        matches!(self, Linkage::Single | Linkage::Complete | Linkage::Average)
    }
}

/// Distance from cluster `k` to the union of clusters `i` and `j`.
pub fn lance_williams_update(
    d_ki: f64,
    d_kj: f64,
    d_ij: f64,
    size_i: usize,
    size_j: usize,
    _size_k: usize,
    linkage: Linkage,
) -> f64 {
    // The recurrence reduces to min/max here; evaluating those directly
    // keeps exact distance ties exact.
    match linkage {
        Linkage::Single => return d_ki.min(d_kj),
        Linkage::Complete => return d_ki.max(d_kj),
        _ => {}
    }
    let c = linkage.coefficients(size_i, size_j);
    c.alpha_i * d_ki + c.alpha_j * d_kj + c.beta * d_ij + c.gamma * (d_ki - d_kj).abs()
}

/// One agglomeration step. `left < right` by node id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DendrogramRepr {
    n_leaves: usize,
    merges: Vec<Merge>,
}

/// A complete binary merge tree over `n_leaves` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DendrogramRepr", into = "DendrogramRepr")]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
    parent: Vec<usize>,
}

impl TryFrom<DendrogramRepr> for Dendrogram {
    type Error = Error;

    fn try_from(r: DendrogramRepr) -> Result<Self> {
        Dendrogram::from_merges(r.n_leaves, r.merges)
    }
}

impl From<Dendrogram> for DendrogramRepr {
    fn from(d: Dendrogram) -> Self {
        DendrogramRepr {
            n_leaves: d.n_leaves,
            merges: d.merges,
        }
    }
}

impl Dendrogram {
    /// Validates and indexes a merge list.
    pub fn from_merges(n_leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        if n_leaves < 2 {
            return Err(Error::invalid("a dendrogram needs at least 2 leaves"));
        }
        if merges.len() != n_leaves - 1 {
            return Err(Error::Invariant(format!(
                "{} leaves need {} merges, found {}",
                n_leaves,
                n_leaves - 1,
                merges.len()
            )));
        }
        let total = 2 * n_leaves - 1;
        let mut parent = vec![usize::MAX; total];
        let mut sizes = vec![1usize; total];
        for (i, m) in merges.iter().enumerate() {
            let node = n_leaves + i;
            if m.left >= m.right || m.right >= node {
                return Err(Error::Invariant(format!(
                    "merge {i} joins {} and {}; children must be distinct earlier nodes in ascending order",
                    m.left, m.right
                )));
            }
            if !m.height.is_finite() || m.height < 0.0 {
                return Err(Error::Invariant(format!("merge {i} has height {}", m.height)));
            }
            for child in [m.left, m.right] {
                if parent[child] != usize::MAX {
                    return Err(Error::Invariant(format!("node {child} merged twice")));
                }
                parent[child] = node;
            }
            sizes[node] = sizes[m.left] + sizes[m.right];
            if sizes[node] != m.size {
                return Err(Error::Invariant(format!(
                    "merge {i} records size {} but its children hold {}",
                    m.size, sizes[node]
                )));
            }
        }
        Ok(Dendrogram {
            n_leaves,
            merges,
            parent,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn node_count(&self) -> usize {
        2 * self.n_leaves - 1
    }

    pub fn root(&self) -> usize {
        self.node_count() - 1
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    fn check(&self, node: usize) -> Result<()> {
        if node < self.node_count() {
            Ok(())
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    fn merge_of(&self, node: usize) -> Option<&Merge> {
        node.checked_sub(self.n_leaves).and_then(|i| self.merges.get(i))
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        self.merge_of(node).map(|m| (m.left, m.right))
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent.get(node).copied().filter(|&p| p != usize::MAX)
    }

    /// Merge height of an internal node; leaves sit at 0.
    pub fn height(&self, node: usize) -> f64 {
        self.merge_of(node).map_or(0.0, |m| m.height)
    }

    /// Number of leaves under `node`.
    pub fn size(&self, node: usize) -> usize {
        self.merge_of(node).map_or(1, |m| m.size)
    }

    /// Number of internal nodes in the subtree rooted at `node`.
    pub fn internal_count(&self, node: usize) -> usize {
        self.size(node) - 1
    }

    /// Leaf ids under `node`, ascending.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size(node));
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.children(v) {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => out.push(v),
            }
        }
        out.sort_unstable();
        out
    }

    /// Internal node ids under (and including) `node`.
    pub fn internal_nodes(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if let Some((l, r)) = self.children(v) {
                out.push(v);
                stack.push(l);
                stack.push(r);
            }
        }
        out
    }

    /// Heights of every internal node under `node`, ascending.
    pub fn subtree_heights(&self, node: usize) -> Result<Vec<f64>> {
        self.check(node)?;
        let mut h: Vec<f64> = self.internal_nodes(node).into_iter().map(|v| self.height(v)).collect();
        h.sort_by(f64::total_cmp);
        Ok(h)
    }

    /// True when no merge sits below one of its children.
    pub fn is_monotone(&self) -> bool {
        self.merges
            .iter()
            .all(|m| m.height >= self.height(m.left) && m.height >= self.height(m.right))
    }

    /// Same tree with every height multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Dendrogram {
        let mut d = self.clone();
        for m in &mut d.merges {
            m.height *= factor;
        }
        d
    }
}

/// Total order used to pick the next merge: distance, then creation ids.
#[inline]
fn pair_key(d: f64, a: usize, b: usize) -> (f64, usize, usize) {
    (d, a.min(b), a.max(b))
}

#[inline]
fn key_less(x: (f64, usize, usize), y: (f64, usize, usize)) -> bool {
    match x.0.total_cmp(&y.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (x.1, x.2) < (y.1, y.2),
    }
}

/// Repeatedly merges the two closest active clusters and updates distances
/// to the new cluster with the Lance-Williams recurrence.
///
/// Each active cluster caches its nearest partner; only rows whose cached
/// partner was consumed are rescanned. The merge sequence is identical to a
/// full pair scan at every step.
pub fn build_dendrogram(dist: &DistanceMatrix, linkage: Linkage) -> Result<Dendrogram> {
    linkage.validate()?;
    let n = dist.n();
    let mut d = dist.values().to_vec();
    let at = |i: usize, j: usize| {
        if i < j {
            condensed_index(n, i, j)
        } else {
            condensed_index(n, j, i)
        }
    };

    // Per slot: node id currently stored there, its leaf count, activity.
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut nn = vec![usize::MAX; n];
    let mut nn_key = vec![(f64::INFINITY, usize::MAX, usize::MAX); n];

    let rescan =
        |s: usize, d: &[f64], id: &[usize], active: &[bool], nn: &mut [usize], nn_key: &mut [(f64, usize, usize)]| {
            let mut best = usize::MAX;
            let mut best_key = (f64::INFINITY, usize::MAX, usize::MAX);
            for t in 0..n {
                if t == s || !active[t] {
                    continue;
                }
                let k = pair_key(d[at(s, t)], id[s], id[t]);
                if best == usize::MAX || key_less(k, best_key) {
                    best = t;
                    best_key = k;
                }
            }
            nn[s] = best;
            nn_key[s] = best_key;
        };

    for s in 0..n {
        rescan(s, &d, &id, &active, &mut nn, &mut nn_key);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut a = usize::MAX;
        for s in 0..n {
            if active[s] && (a == usize::MAX || key_less(nn_key[s], nn_key[a])) {
                a = s;
            }
        }
        let b = nn[a];
        let height = d[at(a, b)];
        let (size_a, size_b) = (size[a], size[b]);
        merges.push(Merge {
            left: id[a].min(id[b]),
            right: id[a].max(id[b]),
            height,
            size: size_a + size_b,
        });

        // The merged cluster lives in slot `a`; slot `b` retires.
        active[b] = false;
        id[a] = n + step;
        size[a] = size_a + size_b;
        if step == n - 2 {
            break;
        }
        let new_id = id[a];
        let mut stale = Vec::new();
        for k in 0..n {
            if !active[k] || k == a {
                continue;
            }
            let updated = lance_williams_update(d[at(k, a)], d[at(k, b)], height, size_a, size_b, size[k], linkage);
            d[at(k, a)] = updated;
            if nn[k] == a || nn[k] == b {
                stale.push(k);
            } else {
                let key = pair_key(updated, id[k], new_id);
                if key_less(key, nn_key[k]) {
                    nn[k] = a;
                    nn_key[k] = key;
                }
            }
        }
        rescan(a, &d, &id, &active, &mut nn, &mut nn_key);
        for k in stale {
            rescan(k, &d, &id, &active, &mut nn, &mut nn_key);
        }
    }
    Dendrogram::from_merges(n, merges)
}
