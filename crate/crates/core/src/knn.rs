//! Exact k-nearest-neighbour search with unanimity or majority voting.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, LabeledPoint};
use crate::error::{Error, Result};
use crate::hierarchy::euclidean;

/// Who produced an accepted decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Index of the islet network that fired.
    Network(usize),
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept { label: Label, source: Source },
    Reject,
}

impl Decision {
    pub fn label(&self) -> Option<Label> {
        match self {
            Decision::Accept { label, .. } => Some(*label),
            Decision::Reject => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    /// Accept only when all k neighbours agree.
    #[default]
    Unanimity,
    /// Accept the most frequent label; a tie for first place rejects.
    Majority,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbour {
    pub id: usize,
    pub distance: f64,
    pub label: Label,
}

/// Labeled points searched by linear scan. Ids are the points' own ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    points: Vec<LabeledPoint>,
    dim: usize,
}

impl ReferenceSet {
    pub fn new(points: Vec<LabeledPoint>) -> Result<Self> {
        let dim = points
            .first()
            .ok_or_else(|| Error::Empty("reference set has no points".into()))?
            .features
            .len();
        if let Some(p) = points.iter().find(|p| p.features.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.features.len(),
            });
        }
        Ok(ReferenceSet { points, dim })
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        ReferenceSet {
            points: dataset.points().to_vec(),
            dim: dataset.dim(),
        }
    }

    /// The points of `dataset` whose ids are listed, keeping their ids.
    pub fn from_ids(dataset: &Dataset, ids: &[usize]) -> Result<Self> {
        let points = ids
            .iter()
            .map(|&id| {
                dataset
                    .points()
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no point with id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ReferenceSet::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn ids(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.id).collect()
    }

    fn check(&self, query: &[f64], k: usize) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if k == 0 || k > self.points.len() {
            return Err(Error::invalid(format!("k = {k} outside 1..={}", self.points.len())));
        }
        Ok(())
    }

    /// Every reference point ordered by (distance, id).
    pub fn ranked(&self, query: &[f64]) -> Result<Vec<Neighbour>> {
        self.check(query, 1)?;
        let mut all: Vec<Neighbour> = self
            .points
            .iter()
            .map(|p| Neighbour {
                id: p.id,
                distance: euclidean(query, &p.features),
                label: p.label,
            })
            .collect();
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        Ok(all)
    }
}

/// The `k` closest reference points, nearest first; equal distances are
/// ordered by smaller id.
pub fn nearest(refset: &ReferenceSet, query: &[f64], k: usize) -> Result<Vec<Neighbour>> {
    refset.check(query, k)?;
    let key = |n: &Neighbour| (n.distance, n.id);
    let mut best: Vec<Neighbour> = Vec::with_capacity(k + 1);
    for p in &refset.points {
        let cand = Neighbour {
            id: p.id,
            distance: euclidean(query, &p.features),
            label: p.label,
        };
        if best.len() == k {
            let worst = key(&best[k - 1]);
            if cand.distance.total_cmp(&worst.0).then(cand.id.cmp(&worst.1)).is_ge() {
                continue;
            }
        }
        let at = best.partition_point(|n| n.distance.total_cmp(&cand.distance).then(n.id.cmp(&cand.id)).is_lt());
        best.insert(at, cand);
        best.truncate(k);
    }
    Ok(best)
}

/// Applies the vote rule to an ordered neighbour list.
pub fn vote(neighbours: &[Neighbour], mode: VoteMode) -> Decision {
    let Some(first) = neighbours.first() else {
        return Decision::Reject;
    };
    let accept = |label| Decision::Accept {
        label,
        source: Source::Knn,
    };
    match mode {
        VoteMode::Unanimity => {
            if neighbours.iter().all(|n| n.label == first.label) {
                accept(first.label)
            } else {
                Decision::Reject
            }
        }
        VoteMode::Majority => {
            let mut counts: Vec<(Label, usize)> = Vec::new();
            for n in neighbours {
                match counts.iter_mut().find(|(l, _)| *l == n.label) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((n.label, 1)),
                }
            }
            let top = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
            let mut leaders = counts.iter().filter(|(_, c)| *c == top);
            match (leaders.next(), leaders.next()) {
                (Some((label, _)), None) => accept(*label),
                _ => Decision::Reject,
            }
        }
    }
}

pub fn knn_decide(refset: &ReferenceSet, query: &[f64], k: usize, mode: VoteMode) -> Result<Decision> {
    Ok(vote(&nearest(refset, query, k)?, mode))
}

/// Largest `k` for which the unanimity rule accepts on a ranked list
/// (0 for an empty list).
///
/// Since unanimity at `k + 1` implies unanimity at `k`, the query is
/// accepted at `k` exactly when `k <= unanimous_depth`.
pub fn unanimous_depth(ranked: &[Neighbour]) -> usize {
    match ranked.first() {
        None => 0,
        Some(first) => ranked
            .iter()
            .position(|n| n.label != first.label)
            .unwrap_or(ranked.len()),
    }
}
