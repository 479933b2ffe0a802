//! Labeled feature vectors: ingestion, resolution-pyramid features, synthetic
//! density-variation data and cross-validation splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class identifier: index into [`Dataset::class_names`].
pub type Label = usize;

/// Side of the finest pyramid level.
pub const PYRAMID_SIDE: usize = 8;
/// Length of a pyramid feature vector (1 + 4 + 16 + 64).
pub const PYRAMID_LEN: usize = 85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: Label,
}

/// A set of points sharing one feature dimension.
///
/// Ids are always `0..len()`. The class-name table is shared by every subset
/// taken from a dataset so that labels keep their meaning across splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<LabeledPoint>,
    dim: usize,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<Label>, class_names: Vec<String>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("dataset has no points".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature vectors must be non-empty"));
        }
        let mut points = Vec::with_capacity(features.len());
        for (id, (f, label)) in features.into_iter().zip(labels).enumerate() {
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            if let Some(v) = f.iter().find(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("point {id} has non-finite value {v}")));
            }
            if label >= class_names.len() {
                return Err(Error::invalid(format!(
                    "point {id} has label {label} but only {} classes are named",
                    class_names.len()
                )));
            }
            points.push(LabeledPoint { id, features: f, label });
        }
        Ok(Dataset {
            points,
            dim,
            class_names,
        })
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

    pub fn point(&self, id: usize) -> &LabeledPoint {
        &self.points[id]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> Vec<Label> {
        self.points.iter().map(|p| p.label).collect()
    }

    /// Labels present in the dataset, ascending.
    pub fn classes(&self) -> Vec<Label> {
        let mut present = vec![false; self.class_names.len()];
        for p in &self.points {
            present[p.label] = true;
        }
        (0..present.len()).filter(|&l| present[l]).collect()
    }

    /// The points at `ids`, renumbered `0..ids.len()` in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        if ids.is_empty() {
            return Err(Error::Empty("empty subset".into()));
        }
        let mut features = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            let p = self
                .points
                .get(id)
                .ok_or_else(|| Error::invalid(format!("subset id {id} out of range")))?;
            features.push(p.features.clone());
            labels.push(p.label);
        }
        Dataset::new(features, labels, self.class_names.clone())
    }

    /// Writes the dataset as headerless CSV: features, then the class name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for p in &self.points {
            let mut record: Vec<String> = p.features.iter().map(|v| v.to_string()).collect();
            record.push(self.class_names[p.label].clone());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Csv { path: PathBuf, skip_header: bool },
    IdxPair { images: PathBuf, labels: PathBuf },
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv { path, skip_header } => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            parse_csv(BufReader::new(file), *skip_header)
        }
        DataSource::IdxPair { images, labels } => load_idx_pair(images, labels),
    }
}

/// Parses comma-separated reals with the label in the last column. Label
/// strings are mapped to dense ids in first-seen order.
pub fn parse_csv<R: Read>(reader: R, skip_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, Label> = HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Parse(format!(
                "row {}: expected at least one feature and a label",
                row + 1
            )));
        }
        let (label, values) = record
            .iter()
            .collect::<Vec<_>>()
            .split_last()
            .map(|(l, v)| (l.to_string(), v.to_vec()))
            .expect("record has at least two fields");
        let row_features = values
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {s:?}: {e}", row + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = features.first().map(|f: &Vec<f64>| f.len()) {
            if first != row_features.len() {
                return Err(Error::DimensionMismatch {
                    expected: first,
                    found: row_features.len(),
                });
            }
        }
        let id = *index.entry(label.clone()).or_insert_with(|| {
            names.push(label);
            names.len() - 1
        });
        features.push(row_features);
        labels.push(id);
    }
    if features.is_empty() {
        return Err(Error::Empty("CSV contains no data rows".into()));
    }
    Dataset::new(features, labels, names)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse("truncated IDX header".into()))
}

/// Loads a big-endian IDX image file (magic 2051) and label file (magic
/// 2049). Grey levels are scaled to `[0, 1]` and each image is reduced to its
/// 85 pyramid features.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    parse_idx_pair(&img, &lab)
}

pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    if read_u32_be(images, 0)? != IDX_IMAGES_MAGIC {
        return Err(Error::Parse("bad magic number in IDX image file".into()));
    }
    if read_u32_be(labels, 0)? != IDX_LABELS_MAGIC {
        return Err(Error::Parse("bad magic number in IDX label file".into()));
    }
    let count = read_u32_be(images, 4)? as usize;
    let rows = read_u32_be(images, 8)? as usize;
    let cols = read_u32_be(images, 12)? as usize;
    let label_count = read_u32_be(labels, 4)? as usize;
    if count != label_count {
        return Err(Error::Parse(format!("{count} images but {label_count} labels")));
    }
    if count == 0 {
        return Err(Error::Empty("IDX files contain no items".into()));
    }
    if rows != cols {
        return Err(Error::Parse(format!("images are {rows}x{cols}, not square")));
    }
    let pixels = &images[16..];
    let raw_labels = &labels[8..];
    if pixels.len() < count * rows * cols || raw_labels.len() < count {
        return Err(Error::Parse("truncated IDX payload".into()));
    }

    let mut distinct: Vec<u8> = raw_labels[..count].to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let class_names = distinct.iter().map(|b| b.to_string()).collect();

    let area = rows * cols;
    let mut features = Vec::with_capacity(count);
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let grey: Vec<f64> = pixels[i * area..(i + 1) * area]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        features.push(pyramid_features_flat(&grey, rows)?);
        ids.push(distinct.binary_search(&raw_labels[i]).expect("label present"));
    }
    Dataset::new(features, ids, class_names)
}

/// Four-level resolution pyramid of a square grey-level image given as rows.
///
/// Output is the 1x1, 2x2, 4x4 and 8x8 levels concatenated coarse to fine,
/// each row-major. The 8x8 level is an area-weighted average of the input;
/// every coarser cell is the mean of its four children.
pub fn pyramid_features(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let side = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != side) {
        return Err(Error::invalid(format!(
            "grid is not square: {side} rows but a row of length {}",
            bad.len()
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    pyramid_features_flat(&flat, side)
}

/// As [`pyramid_features`], for a row-major `side x side` buffer.
pub fn pyramid_features_flat(pixels: &[f64], side: usize) -> Result<Vec<f64>> {
    if side < PYRAMID_SIDE {
        return Err(Error::invalid(format!(
            "grid side {side} is smaller than {PYRAMID_SIDE}"
        )));
    }
    if pixels.len() != side * side {
        return Err(Error::invalid(format!(
            "expected {} pixels for a {side}x{side} grid, found {}",
            side * side,
            pixels.len()
        )));
    }
    if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("grey level {v} outside [0, 1]")));
    }

    let weights = area_weights(side, PYRAMID_SIDE);
    // Separable resampling: rows first, then columns.
    let mut tmp = vec![0.0; PYRAMID_SIDE * side];
    for (o, w) in weights.iter().enumerate() {
        for c in 0..side {
            tmp[o * side + c] = w.iter().map(|&(i, wt)| wt * pixels[i * side + c]).sum();
        }
    }
    let mut finest = vec![0.0; PYRAMID_SIDE * PYRAMID_SIDE];
    for r in 0..PYRAMID_SIDE {
        for (o, w) in weights.iter().enumerate() {
            let v: f64 = w.iter().map(|&(i, wt)| wt * tmp[r * side + i]).sum();
            finest[r * PYRAMID_SIDE + o] = v.clamp(0.0, 1.0);
        }
    }

    let mut levels = vec![finest];
    let mut s = PYRAMID_SIDE;
    while s > 1 {
        let fine = levels.last().expect("non-empty");
        let half = s / 2;
        let mut coarse = vec![0.0; half * half];
        for r in 0..half {
            for c in 0..half {
                coarse[r * half + c] = 0.25
                    * (fine[2 * r * s + 2 * c]
                        + fine[2 * r * s + 2 * c + 1]
                        + fine[(2 * r + 1) * s + 2 * c]
                        + fine[(2 * r + 1) * s + 2 * c + 1]);
            }
        }
        levels.push(coarse);
        s = half;
    }
    let out: Vec<f64> = levels.into_iter().rev().flatten().collect();
    debug_assert_eq!(out.len(), PYRAMID_LEN);
    Ok(out)
}

/// For each of `out` cells along one axis, the input indices it overlaps and
/// their normalized overlap weights.
fn area_weights(input: usize, out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(input);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// One isotropic Gaussian blob of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub center: Vec<f64>,
    pub spread: f64,
    pub count: usize,
}

/// Draws `count` points around each center with standard deviation `spread`
/// per axis. Points are labeled by the index of their source cluster.
pub fn synth_density_variation(specs: &[ClusterSpec], seed: u64) -> Result<Dataset> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Empty("no clusters to generate".into()))?;
    let dim = first.center.len();
    for (i, s) in specs.iter().enumerate() {
        if s.count == 0 || s.spread.is_nan() || s.spread <= 0.0 || s.center.len() != dim || dim == 0 {
            return Err(Error::invalid(format!(
                "cluster {i}: need count > 0, spread > 0 and a {dim}-dimensional center"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (label, s) in specs.iter().enumerate() {
        for _ in 0..s.count {
            let x = s
                .center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + s.spread * z
                })
                .collect();
            features.push(x);
            labels.push(label);
        }
    }
    let names = (0..specs.len()).map(|i| format!("c{i}")).collect();
    Dataset::new(features, labels, names)
}

/// Three sparse clusters and a tight group of three dense ones whose spread
/// is a tenth of the sparse spread.
pub fn fig2_preset() -> Vec<ClusterSpec> {
    let sparse = |x: f64, y: f64| ClusterSpec {
        center: vec![x, y],
        spread: 1.0,
        count: 100,
    };
    let dense = |x: f64, y: f64| ClusterSpec {
        center: vec![x, y],
        spread: 0.1,
        count: 100,
    };
    vec![
        sparse(0.0, 0.0),
        sparse(12.0, 0.0),
        sparse(6.0, 10.0),
        dense(18.0, 10.0),
        dense(19.2, 10.0),
        dense(18.6, 11.0),
    ]
}

/// Index form of [`kfold_split`]: `(train, test)` id lists per fold.
///
/// Ids are shuffled with `seed`, then cut into `folds` contiguous test
/// chunks; the first `n % folds` chunks get one extra element.
pub fn kfold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::invalid(format!("{folds} folds for only {n} points")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut start = 0;
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let test = order[start..start + size].to_vec();
        let train = order[..start].iter().chain(&order[start + size..]).copied().collect();
        out.push((train, test));
        start += size;
    }
    Ok(out)
}

pub fn kfold_split(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    kfold_indices(dataset.len(), folds, seed)?
        .into_iter()
        .map(|(train, test)| Ok((dataset.subset(&train)?, dataset.subset(&test)?)))
        .collect()
}
