//! Multi-level dendrogram cutting.
//!
//! A subtree is cut just below the widest gap in its sorted merge heights.
//! The cut is kept only if no resulting subtree looks more fragmented than
//! its father, measured by the variation coefficient (std / mean) of the
//! histogram of merge heights. Kept cuts are explored recursively, so dense
//! regions get cut at lower levels than sparse ones.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::hierarchy::Dendrogram;

/// Equal-width histogram of merge heights over `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightHistogram {
    pub bar_counts: Vec<usize>,
    pub range: (f64, f64),
}

impl HeightHistogram {
    /// `heights` must be non-empty. The maximum lands in the last bin.
    pub fn new(heights: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
        }
        let (lo, hi) = heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| {
            (lo.min(h), hi.max(h))
        });
        if heights.is_empty() {
            return Err(Error::Empty("no heights to histogram".into()));
        }
        let mut bar_counts = vec![0usize; bins];
        let width = hi - lo;
        for &h in heights {
            let b = if width > 0.0 {
                (((h - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            bar_counts[b] += 1;
        }
        Ok(HeightHistogram {
            bar_counts,
            range: (lo, hi),
        })
    }

    /// Population standard deviation of the bar heights over their mean.
    /// A zero-width range counts as perfectly homogeneous.
    pub fn variation_coefficient(&self) -> f64 {
        if self.range.1 - self.range.0 <= 0.0 {
            return 0.0;
        }
        let b = self.bar_counts.len() as f64;
        let mean = self.bar_counts.iter().sum::<usize>() as f64 / b;
        let var = self.bar_counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / b;
        var.sqrt() / mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutConfig {
    /// Tolerance on how much a child may exceed its father's coefficient.
    pub alpha: f64,
    pub bins: usize,
    /// Subtrees with fewer internal nodes are kept whole without testing.
    pub min_nodes: usize,
    /// Treat a cut that isolates such an untestable fragment as abusive.
    pub reject_fragment_cuts: bool,
}

impl Default for CutConfig {
    fn default() -> Self {
        CutConfig {
            alpha: 1.0,
            bins: 10,
            min_nodes: 2,
            reject_fragment_cuts: true,
        }
    }
}

impl CutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.bins < 2 {
            return Err(Error::invalid(format!("bins must be >= 2, got {}", self.bins)));
        }
        if self.min_nodes < 2 {
            return Err(Error::invalid(format!(
                "min_nodes must be >= 2, got {}",
                self.min_nodes
            )));
        }
        Ok(())
    }
}

/// A partition of the leaves. Cluster `i` is exactly the leaf set of
/// dendrogram node `provenance[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
    pub provenance: Vec<usize>,
}

impl Clustering {
    pub fn from_nodes(dendrogram: &Dendrogram, mut nodes: Vec<usize>) -> Clustering {
        nodes.sort_by_key(|&v| dendrogram.leaves(v)[0]);
        Clustering {
            clusters: nodes.iter().map(|&v| dendrogram.leaves(v)).collect(),
            provenance: nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster index of every leaf.
    pub fn assignments(&self, n: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &m in members {
                out[m] = c;
            }
        }
        out
    }

    /// Checks disjointness and coverage of `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for members in &self.clusters {
            for &m in members {
                if m >= n || seen[m] {
                    return Err(Error::Invariant(format!("leaf {m} is out of range or in two clusters")));
                }
                seen[m] = true;
            }
        }
        match seen.iter().position(|s| !s) {
            Some(m) => Err(Error::Invariant(format!("leaf {m} is in no cluster"))),
            None => Ok(()),
        }
    }
}

pub fn variation_coefficient(dendrogram: &Dendrogram, node: usize, bins: usize) -> Result<f64> {
    let heights = dendrogram.subtree_heights(node)?;
    if heights.len() < 2 {
        return Err(Error::SubtreeTooSmall {
            node,
            internal: heights.len(),
        });
    }
    Ok(HeightHistogram::new(&heights, bins)?.variation_coefficient())
}

/// Height just above the widest gap between consecutive sorted merge
/// heights of the subtree; ties pick the highest gap.
fn gap_threshold(dendrogram: &Dendrogram, node: usize) -> Result<f64> {
    let heights = dendrogram.subtree_heights(node)?;
    if heights.len() < 2 {
        return Err(Error::SubtreeTooSmall {
            node,
            internal: heights.len(),
        });
    }
    let mut best = 0;
    for i in 0..heights.len() - 1 {
        if heights[i + 1] - heights[i] >= heights[best + 1] - heights[best] {
            best = i;
        }
    }
    Ok(heights[best + 1])
}

/// Roots of the forest left after removing every node of the subtree whose
/// height reaches the gap threshold. The subtree root itself is always
/// removed, so at least two roots come back.
pub fn gap_cut(dendrogram: &Dendrogram, node: usize) -> Result<Vec<usize>> {
    let threshold = gap_threshold(dendrogram, node)?;
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(v) = stack.pop() {
        match dendrogram.children(v) {
            Some((l, r)) if v == node || dendrogram.height(v) >= threshold => {
                stack.push(r);
                stack.push(l);
            }
            _ => out.push(v),
        }
    }
    Ok(out)
}

/// The two-point case: a root with one internal node is below any
/// reasonable `min_nodes` and stays whole.
pub fn multilevel_cut(dendrogram: &Dendrogram, config: &CutConfig) -> Result<Clustering> {
    config.validate()?;
    let mut clusters = Vec::new();
    let mut pending = vec![dendrogram.root()];
    while let Some(father) = pending.pop() {
        if dendrogram.internal_count(father) < config.min_nodes {
            clusters.push(father);
            continue;
        }
        let father_cv = variation_coefficient(dendrogram, father, config.bins)?;
        let children = gap_cut(dendrogram, father)?;
        let mut abusive = false;
        for &child in &children {
            if dendrogram.internal_count(child) < config.min_nodes {
                if config.reject_fragment_cuts {
                    abusive = true;
                    break;
                }
                continue;
            }
            if variation_coefficient(dendrogram, child, config.bins)? > config.alpha * father_cv {
                abusive = true;
                break;
            }
        }
        if abusive {
            clusters.push(father);
        } else {
            pending.extend(children.into_iter().rev());
        }
    }
    Ok(Clustering::from_nodes(dendrogram, clusters))
}

/// Classical horizontal cut into exactly `k` clusters: the `k - 1` most
/// recent merges are undone.
pub fn single_cut_baseline(dendrogram: &Dendrogram, k: usize) -> Result<Clustering> {
    let n = dendrogram.n_leaves();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k must be in 1..={n}, got {k}")));
    }
    // Undo merges from the most recent backward; merge order is height order
    // for monotone trees and creation order otherwise.
    let first_removed = n - 1 - (k - 1);
    let mut roots: Vec<usize> = (0..dendrogram.node_count())
        .filter(|&v| {
            let kept = v < n + first_removed;
            let parent_removed = dendrogram.parent(v).is_none_or(|p| p >= n + first_removed);
            kept && parent_removed
        })
        .collect();
    roots.sort_unstable();
    Ok(Clustering::from_nodes(dendrogram, roots))
}

/// Dichotomic search for the `alpha` maximizing `quality`.
///
/// The interval `[0, alpha_hi]` is halved `iterations` times; at each step the
/// midpoint is evaluated and the half whose endpoints score better is kept
/// (the lower half on ties, since fewer clusters is the simpler answer).
/// Returns the best alpha seen; earlier evaluations win ties. `alpha = 0` is
/// evaluated as the smallest positive `alpha`.
pub fn search_alpha<F>(
    dendrogram: &Dendrogram,
    labels: &[Label],
    base: &CutConfig,
    mut quality: F,
    alpha_hi: f64,
    iterations: usize,
) -> Result<f64>
where
    F: FnMut(&Clustering, &[Label]) -> f64,
{
    if !(alpha_hi.is_finite() && alpha_hi > 0.0) || iterations == 0 {
        return Err(Error::invalid(
            "alpha search needs alpha_hi > 0 and at least one iteration",
        ));
    }
    if labels.len() != dendrogram.n_leaves() {
        return Err(Error::DimensionMismatch {
            expected: dendrogram.n_leaves(),
            found: labels.len(),
        });
    }
    let mut score = |alpha: f64| -> Result<f64> {
        let config = CutConfig {
            alpha: alpha.max(f64::MIN_POSITIVE),
            ..*base
        };
        Ok(quality(&multilevel_cut(dendrogram, &config)?, labels))
    };

    let (mut lo, mut hi) = (0.0, alpha_hi);
    let mut q_hi = score(hi)?;
    let mut q_lo = score(lo)?;
    let (mut best, mut best_q) = (hi, q_hi);
    if q_lo > best_q {
        best = lo;
        best_q = q_lo;
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let q_mid = score(mid)?;
        if q_mid > best_q {
            best = mid;
            best_q = q_mid;
        }
        if q_lo >= q_hi {
            hi = mid;
            q_hi = q_mid;
        } else {
            lo = mid;
            q_lo = q_mid;
        }
    }
    Ok(best)
}

/// Fraction of points whose cluster maps to their class under the best
/// one-to-one matching of clusters to classes.
pub fn matched_agreement(clustering: &Clustering, labels: &[Label]) -> f64 {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let weights: Vec<Vec<f64>> = clustering
        .clusters
        .iter()
        .map(|members| {
            let mut row = vec![0.0; n_classes];
            for &m in members {
                row[labels[m]] += 1.0;
            }
            row
        })
        .collect();
    let matched = crate::assignment::max_weight_matching(&weights);
    matched / labels.len() as f64
}
