//! K-fold comparison of the distributed classifier with the unanimity k-NN
//! and a single multi-class MLP.

use serde::{Deserialize, Serialize};

use crate::dataset::{kfold_indices, Dataset};
use crate::ensemble::{
    build, default_theta_grid, derive_seed, sweep_knn_curve, sweep_network_detail, sweep_single_mlp_curve, CurvePoint,
    PipelineConfig,
};
use crate::error::{Error, Result};
use crate::islet::IsletPartition;
use crate::knn::ReferenceSet;
use crate::mlp::{init_network, train_classifier, Layout, TrainParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SingleMlpConfig {
    pub hidden: Vec<usize>,
    pub train: TrainParams,
}

impl Default for SingleMlpConfig {
    fn default() -> Self {
        SingleMlpConfig {
            hidden: vec![50, 20],
            train: TrainParams {
                max_epochs: 200,
                ..TrainParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalConfig {
    pub folds: usize,
    /// Seeds the fold split; per-fold seeds are derived from it.
    pub seed: u64,
    pub pipeline: PipelineConfig,
    /// Thresholds for the distributed and single-MLP curves, ascending.
    pub thetas: Vec<f64>,
    /// k values for the k-NN curve, descending.
    pub ks: Vec<usize>,
    pub single_mlp: SingleMlpConfig,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig {
            folds: 5,
            seed: 0,
            pipeline: PipelineConfig::default(),
            thetas: default_theta_grid(),
            ks: (1..=50).rev().collect(),
            single_mlp: SingleMlpConfig::default(),
        }
    }
}

impl CrossvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.single_mlp.train.validate()?;
        if self.folds < 2 {
            return Err(Error::invalid("crossval needs at least 2 folds"));
        }
        if self.thetas.is_empty() || self.thetas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("thetas must be non-empty and ascending"));
        }
        if self.thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::invalid("thetas must lie in [0, 1]"));
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.ks.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("ks must be non-empty, >= 1 and descending"));
        }
        if self.single_mlp.hidden.contains(&0) {
            return Err(Error::invalid("single_mlp.hidden sizes must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub alpha: f64,
    pub clusters: usize,
    pub islets: usize,
    pub coverage: f64,
    pub converged_networks: usize,
    /// Islets over the fold's training points, numbered `0..train_size`
    /// in the order of [`kfold_indices`].
    pub partition: IsletPartition,
    pub distributed: Vec<CurvePoint>,
    /// Share of test decisions taken by a network, per distributed point.
    pub network_share: Vec<f64>,
    pub knn: Vec<CurvePoint>,
    pub single_mlp: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub folds: Vec<FoldResult>,
    pub distributed: Vec<CurvePoint>,
    pub knn: Vec<CurvePoint>,
    pub single_mlp: Vec<CurvePoint>,
}

/// Point-by-point mean of curves sampled at the same parameters.
pub fn average_curves(curves: &[Vec<CurvePoint>]) -> Result<Vec<CurvePoint>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Empty("no curves to average".into()))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::invalid("curves have different lengths"));
    }
    let m = curves.len() as f64;
    (0..first.len())
        .map(|i| {
            let param = first[i].param;
            if curves.iter().any(|c| c[i].param != param) {
                return Err(Error::invalid(format!("curves disagree on parameter at row {i}")));
            }
            let mean = |f: fn(&CurvePoint) -> f64| curves.iter().map(|c| f(&c[i])).sum::<f64>() / m;
            Ok(CurvePoint {
                param,
                recognition: mean(|p| p.recognition),
                error: mean(|p| p.error),
                rejection: mean(|p| p.rejection),
            })
        })
        .collect()
}

/// The point with the lowest error (highest recognition among equals), if
/// that error does not exceed `max_error` percent.
pub fn lowest_error_point(curve: &[CurvePoint], max_error: f64) -> Option<CurvePoint> {
    let best = curve.iter().copied().reduce(|b, p| {
        if p.error < b.error || (p.error == b.error && p.recognition > b.recognition) {
            p
        } else {
            b
        }
    })?;
    (best.error <= max_error).then_some(best)
}

/// Highest recognition among points whose error is at most `max_error`.
pub fn best_recognition_within(curve: &[CurvePoint], max_error: f64) -> Option<CurvePoint> {
    curve
        .iter()
        .copied()
        .filter(|p| p.error <= max_error)
        .reduce(|b, p| if p.recognition > b.recognition { p } else { b })
}

pub fn run_fold(train: &Dataset, test: &Dataset, fold: usize, config: &CrossvalConfig) -> Result<FoldResult> {
    let pipeline = PipelineConfig {
        seed: derive_seed(config.seed, 10, fold),
        ..config.pipeline.clone()
    };
    let (clf, report) = build(train, &pipeline)?;
    let detail = sweep_network_detail(&clf, test, &config.thetas)?;

    let refset = ReferenceSet::from_dataset(train);
    let ks: Vec<usize> = config.ks.iter().copied().filter(|&k| k <= refset.len()).collect();
    let knn = sweep_knn_curve(&refset, test, &ks)?;

    let mlp_seed = derive_seed(config.seed, 11, fold);
    let layout = Layout::new(train.dim(), &config.single_mlp.hidden, train.class_names().len());
    let inputs: Vec<&[f64]> = train.points().iter().map(|p| p.features.as_slice()).collect();
    let mlp = train_classifier(
        init_network(&layout, mlp_seed)?,
        &inputs,
        &train.labels(),
        &TrainParams {
            seed: mlp_seed,
            ..config.single_mlp.train
        },
    )?;
    let single_mlp = sweep_single_mlp_curve(&mlp.network, test, &config.thetas)?;

    Ok(FoldResult {
        fold,
        train_size: train.len(),
        test_size: test.len(),
        alpha: report.alpha,
        clusters: report.clusters,
        islets: clf.networks().len(),
        coverage: report.coverage,
        converged_networks: clf.networks().iter().filter(|n| n.converged).count(),
        partition: report.partition,
        distributed: detail.iter().map(|d| d.point).collect(),
        network_share: detail
            .iter()
            .map(|d| d.network_decisions as f64 / test.len() as f64)
            .collect(),
        knn,
        single_mlp,
    })
}

/// Runs every fold in order and averages the three curves across folds.
pub fn crossval(data: &Dataset, config: &CrossvalConfig) -> Result<CrossvalReport> {
    crossval_with(data, config, |_| {})
}

/// [`crossval`] with a callback after each finished fold.
pub fn crossval_with(
    data: &Dataset,
    config: &CrossvalConfig,
    mut on_fold: impl FnMut(&FoldResult),
) -> Result<CrossvalReport> {
    config.validate()?;
    let mut folds = Vec::with_capacity(config.folds);
    for (fold, (train_ids, test_ids)) in kfold_indices(data.len(), config.folds, config.seed)?
        .into_iter()
        .enumerate()
    {
        let result = run_fold(&data.subset(&train_ids)?, &data.subset(&test_ids)?, fold, config)?;
        on_fold(&result);
        folds.push(result);
    }
    let collect = |f: fn(&FoldResult) -> &Vec<CurvePoint>| -> Vec<Vec<CurvePoint>> {
        folds.iter().map(|r| f(r).clone()).collect()
    };
    Ok(CrossvalReport {
        distributed: average_curves(&collect(|r| &r.distributed))?,
        knn: average_curves(&collect(|r| &r.knn))?,
        single_mlp: average_curves(&collect(|r| &r.single_mlp))?,
        folds,
    })
}
