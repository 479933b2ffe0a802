//! Islets: pure subtrees of at least `P` same-class training points.
//!
//! Pure clusters are taken as they are. Impure clusters are searched inside
//! their own subtree for maximal pure subtrees. Everything left over forms the
//! residual set.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::hierarchy::Dendrogram;
use crate::multicut::Clustering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsletConfig {
    /// Smallest admissible islet.
    pub min_size: usize,
}

impl Default for IsletConfig {
    fn default() -> Self {
        IsletConfig { min_size: 15 }
    }
}

impl IsletConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 {
            return Err(Error::invalid("islet min_size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Islet {
    pub members: Vec<usize>,
    pub label: Label,
    /// Dendrogram node whose leaves are exactly `members`.
    pub provenance: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsletPartition {
    pub islets: Vec<Islet>,
    pub residual: Vec<usize>,
}

impl IsletPartition {
    pub fn covered(&self) -> usize {
        self.islets.iter().map(|i| i.members.len()).sum()
    }

    pub fn total(&self) -> usize {
        self.covered() + self.residual.len()
    }

    /// Verifies purity, the size gate and that islets plus residual
    /// partition `0..labels.len()`.
    pub fn check(&self, labels: &[Label], config: &IsletConfig) -> Result<()> {
        let n = labels.len();
        let mut seen = vec![false; n];
        let mut mark = |id: usize| -> Result<()> {
            if id >= n || seen[id] {
                return Err(Error::Invariant(format!(
                    "training id {id} is out of range or assigned twice"
                )));
            }
            seen[id] = true;
            Ok(())
        };
        for (i, islet) in self.islets.iter().enumerate() {
            if islet.members.len() < config.min_size {
                return Err(Error::Invariant(format!(
                    "islet {i} has {} members, below {}",
                    islet.members.len(),
                    config.min_size
                )));
            }
            for &m in &islet.members {
                mark(m)?;
                if labels[m] != islet.label {
                    return Err(Error::Invariant(format!("islet {i} is impure at id {m}")));
                }
            }
        }
        for &r in &self.residual {
            mark(r)?;
        }
        match seen.iter().position(|s| !s) {
            Some(id) => Err(Error::Invariant(format!("training id {id} is unassigned"))),
            None => Ok(()),
        }
    }
}

/// Label shared by every leaf under each node, if any.
fn pure_labels(dendrogram: &Dendrogram, labels: &[Label]) -> Vec<Option<Label>> {
    let n = dendrogram.n_leaves();
    let mut out: Vec<Option<Label>> = labels.iter().map(|&l| Some(l)).collect();
    out.reserve(n - 1);
    for m in dendrogram.merges() {
        let joined = match (out[m.left], out[m.right]) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        };
        out.push(joined);
    }
    out
}

pub fn detect_islets(
    dendrogram: &Dendrogram,
    clustering: &Clustering,
    labels: &[Label],
    config: &IsletConfig,
) -> Result<IsletPartition> {
    config.validate()?;
    let n = dendrogram.n_leaves();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if clustering.clusters.len() != clustering.provenance.len() {
        return Err(Error::invalid("clustering has mismatched provenance"));
    }
    clustering.check_partition(n)?;
    for (members, &node) in clustering.clusters.iter().zip(&clustering.provenance) {
        if node >= dendrogram.node_count() || dendrogram.size(node) != members.len() {
            return Err(Error::invalid(format!(
                "cluster provenance node {node} does not match its members"
            )));
        }
    }

    let pure = pure_labels(dendrogram, labels);
    let mut islets = Vec::new();
    let mut in_islet = vec![false; n];
    for &root in &clustering.provenance {
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            match (pure[v], dendrogram.children(v)) {
                (Some(label), _) => {
                    if dendrogram.size(v) >= config.min_size {
                        let members = dendrogram.leaves(v);
                        for &m in &members {
                            in_islet[m] = true;
                        }
                        islets.push(Islet {
                            members,
                            label,
                            provenance: v,
                        });
                    }
                }
                (None, Some((l, r))) => {
                    stack.push(r);
                    stack.push(l);
                }
                (None, None) => unreachable!("leaves are always pure"),
            }
        }
    }
    let residual = (0..n).filter(|&i| !in_islet[i]).collect();
    Ok(IsletPartition { islets, residual })
}

/// Fraction of training points that belong to an islet.
pub fn islet_coverage(partition: &IsletPartition) -> f64 {
    let total = partition.total();
    if total == 0 {
        return 0.0;
    }
    partition.covered() as f64 / total as f64
}
