//! The distributed classifier: one two-class network per islet, completed by
//! a unanimity k-NN, plus the recognition/error/rejection curves used to
//! compare it with the baselines.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label, LabeledPoint};
use crate::error::{Error, Result};
use crate::hierarchy::{build_dendrogram, pairwise_distances, Linkage};
use crate::islet::{detect_islets, islet_coverage, IsletConfig, IsletPartition};
use crate::knn::{knn_decide, unanimous_depth, Decision, ReferenceSet, Source, VoteMode};
use crate::mlp::{argmax, default_ladder, escalate_architecture, Network, TrainParams};
use crate::multicut::{multilevel_cut, search_alpha, CutConfig};

/// Which training points the fallback k-NN searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefsetChoice {
    #[default]
    Full,
    /// Only points outside every islet.
    Residual,
}

/// Choose alpha by dichotomic search for the best islet coverage on a seeded
/// random fraction of the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaSearch {
    pub fraction: f64,
    pub alpha_hi: f64,
    pub iterations: usize,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        AlphaSearch {
            fraction: 0.3,
            alpha_hi: 10.0,
            iterations: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub linkage: Linkage,
    pub cut: CutConfig,
    /// When set, replaces `cut.alpha`.
    pub alpha_search: Option<AlphaSearch>,
    pub islet: IsletConfig,
    pub train: TrainParams,
    /// Hidden layouts tried per islet, in order.
    pub ladder: Vec<Vec<usize>>,
    /// Caps each network's negatives at this multiple of its positives.
    pub negative_ratio: Option<f64>,
    pub refset: RefsetChoice,
    /// Fallback k-NN size.
    pub k: usize,
    pub theta: f64,
    /// When several networks fire, take the largest output instead of
    /// deferring to the k-NN.
    pub tie_break: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            linkage: Linkage::default(),
            cut: CutConfig::default(),
            alpha_search: None,
            islet: IsletConfig::default(),
            train: TrainParams::default(),
            ladder: default_ladder(),
            negative_ratio: None,
            refset: RefsetChoice::Full,
            k: 3,
            theta: 0.5,
            tie_break: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.linkage.validate()?;
        self.cut.validate()?;
        self.islet.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.alpha_search {
            if !(s.fraction > 0.0 && s.fraction <= 1.0) {
                return Err(Error::invalid("alpha_search.fraction must be in (0, 1]"));
            }
            if !(s.alpha_hi.is_finite() && s.alpha_hi > 0.0) || s.iterations == 0 {
                return Err(Error::invalid("alpha_search needs alpha_hi > 0 and iterations >= 1"));
            }
        }
        if self.ladder.is_empty() || self.ladder.iter().flatten().any(|&h| h == 0) {
            return Err(Error::invalid("ladder must be non-empty with layer sizes >= 1"));
        }
        if let Some(r) = self.negative_ratio {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::invalid("negative_ratio must be > 0"));
            }
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        check_theta(self.theta)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("theta {theta} outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsletNetwork {
    pub network: Network,
    pub label: Label,
    pub converged: bool,
    /// Ladder index of the retained layout.
    pub rung: usize,
    pub epochs: usize,
}

/// What `build` did besides producing the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildReport {
    pub alpha: f64,
    pub clusters: usize,
    pub partition: IsletPartition,
    pub coverage: f64,
    /// No islet was found, so the classifier is a plain k-NN.
    pub knn_only: bool,
    /// A residual reference set was requested but empty, so the full
    /// training set is used instead.
    pub residual_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModularClassifier {
    networks: Vec<IsletNetwork>,
    refset: ReferenceSet,
    refset_choice: RefsetChoice,
    k: usize,
    theta: f64,
    tie_break: bool,
    class_names: Vec<String>,
}

/// Applies the cooperation rule to one query.
///
/// `outputs[i]` is network `i`'s output; it fires when the output is at least
/// `theta`. Exactly one firing network decides alone. Otherwise the decision
/// comes from `fallback`, unless `tie_break` is set and several fired, in
/// which case the largest output wins (lowest index on ties).
pub fn combine<F>(outputs: &[f64], labels: &[Label], theta: f64, tie_break: bool, fallback: F) -> Result<Decision>
where
    F: FnOnce() -> Result<Decision>,
{
    if outputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: outputs.len(),
        });
    }
    let mut fired = (0..outputs.len()).filter(|&i| outputs[i] >= theta);
    let first = fired.next();
    let second = fired.next();
    match (first, second) {
        (Some(i), None) => Ok(Decision::Accept {
            label: labels[i],
            source: Source::Network(i),
        }),
        (Some(i), Some(_)) if tie_break => {
            let best = (i..outputs.len()).filter(|&j| outputs[j] >= theta).fold(i, |b, j| {
                if outputs[j] > outputs[b] {
                    j
                } else {
                    b
                }
            });
            Ok(Decision::Accept {
                label: labels[best],
                source: Source::Network(best),
            })
        }
        _ => fallback(),
    }
}

impl ModularClassifier {
    pub fn new(
        networks: Vec<IsletNetwork>,
        refset: ReferenceSet,
        refset_choice: RefsetChoice,
        k: usize,
        theta: f64,
        tie_break: bool,
        class_names: Vec<String>,
    ) -> Result<Self> {
        check_theta(theta)?;
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        for (i, n) in networks.iter().enumerate() {
            let layout = n.network.layout();
            if layout.input != refset.dim() || layout.output != 1 {
                return Err(Error::invalid(format!(
                    "network {i} has layout {layout:?}, expected {} inputs and 1 output",
                    refset.dim()
                )));
            }
            if n.label >= class_names.len() {
                return Err(Error::invalid(format!("network {i} has unknown label {}", n.label)));
            }
        }
        if let Some(p) = refset.points().iter().find(|p| p.label >= class_names.len()) {
            return Err(Error::invalid(format!("reference point {} has unknown label", p.id)));
        }
        Ok(ModularClassifier {
            networks,
            refset,
            refset_choice,
            k,
            theta,
            tie_break,
            class_names,
        })
    }

    pub fn networks(&self) -> &[IsletNetwork] {
        &self.networks
    }

    pub fn refset(&self) -> &ReferenceSet {
        &self.refset
    }

    pub fn refset_choice(&self) -> RefsetChoice {
        self.refset_choice
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn tie_break(&self) -> bool {
        self.tie_break
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn dim(&self) -> usize {
        self.refset.dim()
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(ModularClassifier { theta, ..self.clone() })
    }

    /// The fallback uses `min(k, |refset|)` neighbours.
    fn effective_k(&self) -> usize {
        self.k.min(self.refset.len())
    }

    pub fn outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        self.networks
            .iter()
            .map(|n| n.network.forward(x).map(|y| y[0]))
            .collect()
    }

    fn labels(&self) -> Vec<Label> {
        self.networks.iter().map(|n| n.label).collect()
    }

    pub fn classify(&self, x: &[f64]) -> Result<Decision> {
        let outputs = self.outputs(x)?;
        combine(&outputs, &self.labels(), self.theta, self.tie_break, || {
            knn_decide(&self.refset, x, self.effective_k(), VoteMode::Unanimity)
        })
    }

    pub fn classify_all(&self, test: &Dataset) -> Result<Vec<Decision>> {
        test.points().par_iter().map(|p| self.classify(&p.features)).collect()
    }
}

/// Builds the distributed classifier from a training set.
pub fn build(train: &Dataset, config: &PipelineConfig) -> Result<(ModularClassifier, BuildReport)> {
    config.validate()?;
    if train.classes().len() < 2 {
        return Err(Error::invalid("training set needs at least two classes"));
    }
    let labels = train.labels();
    let alpha = match &config.alpha_search {
        Some(search) => choose_alpha(train, config, search)?,
        None => config.cut.alpha,
    };
    let cut = CutConfig { alpha, ..config.cut };
    let dendrogram = build_dendrogram(&pairwise_distances(train)?, config.linkage)?;
    let clustering = multilevel_cut(&dendrogram, &cut)?;
    let partition = detect_islets(&dendrogram, &clustering, &labels, &config.islet)?;
    partition.check(&labels, &config.islet)?;

    let networks = partition
        .islets
        .par_iter()
        .enumerate()
        .map(|(i, islet)| {
            let mut inside = vec![false; train.len()];
            for &m in &islet.members {
                inside[m] = true;
            }
            let positives: Vec<&[f64]> = islet
                .members
                .iter()
                .map(|&m| train.point(m).features.as_slice())
                .collect();
            let mut negative_ids: Vec<usize> = (0..train.len()).filter(|&j| !inside[j]).collect();
            if let Some(ratio) = config.negative_ratio {
                let cap = ((ratio * positives.len() as f64).ceil() as usize).max(1);
                if cap < negative_ids.len() {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, i));
                    let mut picked = rand::seq::index::sample(&mut rng, negative_ids.len(), cap).into_vec();
                    picked.sort_unstable();
                    negative_ids = picked.into_iter().map(|j| negative_ids[j]).collect();
                }
            }
            let negatives: Vec<&[f64]> = negative_ids
                .iter()
                .map(|&j| train.point(j).features.as_slice())
                .collect();
            let params = TrainParams {
                seed: derive_seed(config.seed, 2, i),
                ..config.train
            };
            let out = escalate_architecture(&positives, &negatives, &config.ladder, &params)?;
            Ok(IsletNetwork {
                network: out.network,
                label: islet.label,
                converged: out.converged,
                rung: out.rung,
                epochs: out.epochs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (refset, residual_fallback) = match config.refset {
        RefsetChoice::Full => (ReferenceSet::from_dataset(train), false),
        RefsetChoice::Residual if partition.residual.is_empty() => (ReferenceSet::from_dataset(train), true),
        RefsetChoice::Residual => (ReferenceSet::from_ids(train, &partition.residual)?, false),
    };
    let report = BuildReport {
        alpha,
        clusters: clustering.len(),
        coverage: islet_coverage(&partition),
        knn_only: networks.is_empty(),
        residual_fallback,
        partition,
    };
    let clf = ModularClassifier::new(
        networks,
        refset,
        config.refset,
        config.k,
        config.theta,
        config.tie_break,
        train.class_names().to_vec(),
    )?;
    Ok((clf, report))
}

fn choose_alpha(train: &Dataset, config: &PipelineConfig, search: &AlphaSearch) -> Result<f64> {
    let take = ((search.fraction * train.len() as f64).round() as usize).clamp(2.min(train.len()), train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3, 0));
    let mut ids = rand::seq::index::sample(&mut rng, train.len(), take).into_vec();
    ids.sort_unstable();
    let sample = train.subset(&ids)?;
    let d = build_dendrogram(&pairwise_distances(&sample)?, config.linkage)?;
    let islet = config.islet;
    search_alpha(
        &d,
        &sample.labels(),
        &config.cut,
        |clustering, labels| {
            detect_islets(&d, clustering, labels, &islet)
                .map(|p| islet_coverage(&p))
                .unwrap_or(0.0)
        },
        search.alpha_hi,
        search.iterations,
    )
}

/// One operating point. `param` is theta for threshold sweeps and k for k-NN
/// sweeps. Rates are percentages of the presented points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub param: f64,
    pub recognition: f64,
    pub error: f64,
    pub rejection: f64,
}

impl CurvePoint {
    pub fn total(&self) -> f64 {
        self.recognition + self.error + self.rejection
    }
}

fn tally<'a>(decisions: impl IntoIterator<Item = &'a Decision>, truth: &[Label], param: f64) -> CurvePoint {
    let (mut right, mut wrong, mut rejected) = (0usize, 0usize, 0usize);
    for (d, &t) in decisions.into_iter().zip(truth) {
        match d.label() {
            Some(l) if l == t => right += 1,
            Some(_) => wrong += 1,
            None => rejected += 1,
        }
    }
    let n = truth.len() as f64;
    CurvePoint {
        param,
        recognition: 100.0 * right as f64 / n,
        error: 100.0 * wrong as f64 / n,
        rejection: 100.0 * rejected as f64 / n,
    }
}

/// Percentages of correct, wrong and rejected decisions.
pub fn score(decisions: &[Decision], truth: &[Label], param: f64) -> Result<CurvePoint> {
    if truth.is_empty() {
        return Err(Error::Empty("no test points".into()));
    }
    if decisions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            found: decisions.len(),
        });
    }
    Ok(tally(decisions, truth, param))
}

fn check_test(test: &Dataset, dim: usize) -> Result<()> {
    if test.is_empty() {
        return Err(Error::Empty("no test points".into()));
    }
    if test.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: test.dim(),
        });
    }
    Ok(())
}

pub fn evaluate(clf: &ModularClassifier, test: &Dataset) -> Result<CurvePoint> {
    check_test(test, clf.dim())?;
    score(&clf.classify_all(test)?, &test.labels(), clf.theta)
}

/// A curve point together with the number of decisions taken by networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetailedPoint {
    pub point: CurvePoint,
    pub network_decisions: usize,
}

/// Threshold sweep of the distributed classifier. The k-NN fallback and the
/// network outputs are computed once per test point and reused across
/// thresholds; each point equals `evaluate` at that theta.
pub fn sweep_network_detail(clf: &ModularClassifier, test: &Dataset, thetas: &[f64]) -> Result<Vec<DetailedPoint>> {
    check_test(test, clf.dim())?;
    for &t in thetas {
        check_theta(t)?;
    }
    let labels = clf.labels();
    let k = clf.effective_k();
    let per_point: Vec<(Vec<f64>, Decision)> = test
        .points()
        .par_iter()
        .map(|p| {
            let outputs = clf.outputs(&p.features)?;
            let fallback = knn_decide(&clf.refset, &p.features, k, VoteMode::Unanimity)?;
            Ok((outputs, fallback))
        })
        .collect::<Result<_>>()?;
    let truth = test.labels();
    thetas
        .iter()
        .map(|&theta| {
            let decisions = per_point
                .iter()
                .map(|(outputs, fallback)| combine(outputs, &labels, theta, clf.tie_break, || Ok(*fallback)))
                .collect::<Result<Vec<_>>>()?;
            let network_decisions = decisions
                .iter()
                .filter(|d| {
                    matches!(
                        d,
                        Decision::Accept {
                            source: Source::Network(_),
                            ..
                        }
                    )
                })
                .count();
            Ok(DetailedPoint {
                point: tally(&decisions, &truth, theta),
                network_decisions,
            })
        })
        .collect()
}

pub fn sweep_network_curve(clf: &ModularClassifier, test: &Dataset, thetas: &[f64]) -> Result<Vec<CurvePoint>> {
    Ok(sweep_network_detail(clf, test, thetas)?
        .into_iter()
        .map(|d| d.point)
        .collect())
}

/// Unanimity k-NN at each `k`, reusing one full ranking per test point.
pub fn sweep_knn_curve(refset: &ReferenceSet, test: &Dataset, ks: &[usize]) -> Result<Vec<CurvePoint>> {
    check_test(test, refset.dim())?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > refset.len()) {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", refset.len())));
    }
    let ranked: Vec<(usize, Label)> = test
        .points()
        .par_iter()
        .map(|p| {
            let r = refset.ranked(&p.features)?;
            Ok((unanimous_depth(&r), r[0].label))
        })
        .collect::<Result<_>>()?;
    let truth = test.labels();
    Ok(ks
        .iter()
        .map(|&k| {
            let decisions: Vec<Decision> = ranked
                .iter()
                .map(|&(depth, label)| {
                    if k <= depth {
                        Decision::Accept {
                            label,
                            source: Source::Knn,
                        }
                    } else {
                        Decision::Reject
                    }
                })
                .collect();
            tally(&decisions, &truth, k as f64)
        })
        .collect())
}

/// A multi-output network accepts its arg-max class when the largest output
/// reaches theta.
pub fn sweep_single_mlp_curve(network: &Network, test: &Dataset, thetas: &[f64]) -> Result<Vec<CurvePoint>> {
    check_test(test, network.layout().input)?;
    for &t in thetas {
        check_theta(t)?;
    }
    let best: Vec<(Label, f64)> = test
        .points()
        .par_iter()
        .map(|p| {
            let y = network.forward(&p.features)?;
            let c = argmax(&y);
            Ok((c, y[c]))
        })
        .collect::<Result<_>>()?;
    let truth = test.labels();
    Ok(thetas
        .iter()
        .map(|&theta| {
            let decisions: Vec<Decision> = best
                .iter()
                .map(|&(label, out)| {
                    if out >= theta {
                        Decision::Accept {
                            label,
                            source: Source::Network(0),
                        }
                    } else {
                        Decision::Reject
                    }
                })
                .collect();
            tally(&decisions, &truth, theta)
        })
        .collect())
}

/// `steps` thresholds from 0.5 rising geometrically toward 1, ending at 0.999.
pub fn theta_grid(steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..steps)
            .map(|i| 1.0 - 0.5 * 0.002f64.powf(i as f64 / (steps - 1) as f64))
            .collect(),
    }
}

pub fn default_theta_grid() -> Vec<f64> {
    theta_grid(50)
}

pub const CURVE_HEADER: [&str; 4] = ["theta_or_k", "recognition", "error", "rejection"];

pub fn write_curve_csv<W: Write>(writer: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CURVE_HEADER)?;
    for p in points {
        w.write_record([
            p.param.to_string(),
            p.recognition.to_string(),
            p.error.to_string(),
            p.rejection.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("curve csv", e))?;
    Ok(())
}

pub fn read_curve_csv<R: Read>(reader: R) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(CURVE_HEADER) {
        return Err(Error::Parse(format!("curve header must be {}", CURVE_HEADER.join(","))));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse("short curve row".into()))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("curve value: {e}")))
            };
            Ok(CurvePoint {
                param: field(0)?,
                recognition: field(1)?,
                error: field(2)?,
                rejection: field(3)?,
            })
        })
        .collect()
}

/// Serialized form of a [`ModularClassifier`]. The reference points are
/// embedded so the bundle is usable on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub dim: usize,
    pub class_names: Vec<String>,
    pub networks: Vec<IsletNetwork>,
    pub refset_choice: RefsetChoice,
    pub refset_ids: Vec<usize>,
    pub refset_points: Vec<LabeledPoint>,
    pub k: usize,
    pub theta: f64,
    pub tie_break: bool,
}

impl ModularClassifier {
    pub fn to_bundle(&self) -> Bundle {
        Bundle {
            dim: self.dim(),
            class_names: self.class_names.clone(),
            networks: self.networks.clone(),
            refset_choice: self.refset_choice,
            refset_ids: self.refset.ids(),
            refset_points: self.refset.points().to_vec(),
            k: self.k,
            theta: self.theta,
            tie_break: self.tie_break,
        }
    }

    pub fn from_bundle(bundle: Bundle) -> Result<Self> {
        if bundle.refset_ids != bundle.refset_points.iter().map(|p| p.id).collect::<Vec<_>>() {
            return Err(Error::invalid("bundle reference ids do not match its points"));
        }
        let refset = ReferenceSet::new(bundle.refset_points)?;
        if refset.dim() != bundle.dim {
            return Err(Error::DimensionMismatch {
                expected: bundle.dim,
                found: refset.dim(),
            });
        }
        ModularClassifier::new(
            bundle.networks,
            refset,
            bundle.refset_choice,
            bundle.k,
            bundle.theta,
            bundle.tie_break,
            bundle.class_names,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Layer, Layout};

    fn accept(label: Label, source: Source) -> Decision {
        Decision::Accept { label, source }
    }

    /// A 1-input network whose output is `sigmoid(w * x + b)`.
    fn unit(w: f64, b: f64) -> Network {
        Network::from_layers(
            Layout::new(1, &[], 1),
            vec![Layer {
                weights: vec![w],
                biases: vec![b],
            }],
        )
        .unwrap()
    }

    fn line_dataset(xs: &[(f64, Label)]) -> Dataset {
        Dataset::new(
            xs.iter().map(|(x, _)| vec![*x]).collect(),
            xs.iter().map(|(_, l)| *l).collect(),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn cooperation_rule_cases() {
        let labels = [0, 1, 2];
        let knn = || Ok(accept(1, Source::Knn));
        // one fires
        assert_eq!(
            combine(&[0.1, 0.9, 0.2], &labels, 0.5, false, knn).unwrap(),
            accept(1, Source::Network(1))
        );
        assert_eq!(
            combine(&[0.1, 0.2, 0.6], &labels, 0.5, false, knn).unwrap(),
            accept(2, Source::Network(2))
        );
        // none fire
        assert_eq!(
            combine(&[0.1, 0.2, 0.3], &labels, 0.5, false, knn).unwrap(),
            accept(1, Source::Knn)
        );
        // two fire
        assert_eq!(
            combine(&[0.7, 0.9, 0.3], &labels, 0.5, false, knn).unwrap(),
            accept(1, Source::Knn)
        );
        assert_eq!(
            combine(&[0.7, 0.9, 0.3], &labels, 0.5, false, || Ok(Decision::Reject)).unwrap(),
            Decision::Reject
        );
        // optional tie-break
        assert_eq!(
            combine(&[0.7, 0.9, 0.3], &labels, 0.5, true, knn).unwrap(),
            accept(1, Source::Network(1))
        );
        assert_eq!(
            combine(&[0.9, 0.9, 0.3], &labels, 0.5, true, knn).unwrap(),
            accept(0, Source::Network(0))
        );
        // threshold is inclusive
        assert_eq!(
            combine(&[0.5], &[2], 0.5, false, knn).unwrap(),
            accept(2, Source::Network(0))
        );
        // no networks at all
        assert_eq!(combine(&[], &[], 0.5, false, knn).unwrap(), accept(1, Source::Knn));
        assert!(combine(&[0.1], &[], 0.5, false, knn).is_err());
    }

    #[test]
    fn fallback_is_not_consulted_when_one_network_fires() {
        let d = combine(&[0.9], &[0], 0.5, false, || panic!("k-NN must not run")).unwrap();
        assert_eq!(d, accept(0, Source::Network(0)));
    }

    #[test]
    fn score_examples() {
        let truth = [0, 0, 1, 1, 2];
        let all_right: Vec<Decision> = truth.iter().map(|&l| accept(l, Source::Knn)).collect();
        let p = score(&all_right, &truth, 0.0).unwrap();
        assert_eq!((p.recognition, p.error, p.rejection), (100.0, 0.0, 0.0));
        let p = score(&[Decision::Reject; 5], &truth, 0.0).unwrap();
        assert_eq!((p.recognition, p.error, p.rejection), (0.0, 0.0, 100.0));
        let mixed = [
            accept(0, Source::Knn),
            accept(0, Source::Network(0)),
            accept(1, Source::Knn),
            accept(0, Source::Knn),
            Decision::Reject,
        ];
        let p = score(&mixed, &truth, 0.0).unwrap();
        assert_eq!((p.recognition, p.error, p.rejection), (60.0, 20.0, 20.0));
        assert!(score(&[], &[], 0.0).is_err());
    }

    #[test]
    fn theta_grid_shape() {
        let g = default_theta_grid();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 0.5);
        assert!((g[49] - 0.999).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        // Gaps to 1 shrink by a constant factor.
        let r = (1.0 - g[1]) / (1.0 - g[0]);
        assert!(((1.0 - g[30]) / (1.0 - g[29]) - r).abs() < 1e-9);
    }

    fn toy_classifier(theta: f64) -> (ModularClassifier, Dataset) {
        let train = line_dataset(&[(0.0, 0), (0.1, 0), (0.2, 0), (5.0, 1), (5.1, 1), (9.0, 2), (9.1, 2)]);
        let networks = vec![
            // fires for small x
            IsletNetwork {
                network: unit(-4.0, 8.0),
                label: 0,
                converged: true,
                rung: 0,
                epochs: 1,
            },
            // fires for large x
            IsletNetwork {
                network: unit(4.0, -28.0),
                label: 2,
                converged: true,
                rung: 0,
                epochs: 1,
            },
        ];
        let clf = ModularClassifier::new(
            networks,
            ReferenceSet::from_dataset(&train),
            RefsetChoice::Full,
            2,
            theta,
            false,
            train.class_names().to_vec(),
        )
        .unwrap();
        let test = line_dataset(&[(0.05, 0), (5.05, 1), (9.05, 2), (4.0, 2)]);
        (clf, test)
    }

    #[test]
    fn classify_routes_through_networks_and_knn() {
        let (clf, test) = toy_classifier(0.5);
        let d: Vec<Decision> = clf.classify_all(&test).unwrap();
        assert_eq!(d[0], accept(0, Source::Network(0)));
        assert_eq!(d[1], accept(1, Source::Knn));
        assert_eq!(d[2], accept(2, Source::Network(1)));
        assert_eq!(d[3], accept(1, Source::Knn));
        assert!(clf.classify(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn theta_one_is_pure_knn() {
        let (clf, test) = toy_classifier(1.0);
        for p in test.points() {
            assert_eq!(
                clf.classify(&p.features).unwrap(),
                knn_decide(clf.refset(), &p.features, clf.k(), VoteMode::Unanimity).unwrap()
            );
        }
    }

    #[test]
    fn sweep_matches_pointwise_evaluation() {
        let (clf, test) = toy_classifier(0.5);
        let thetas = [0.0, 0.3, 0.5, 0.5, 0.9, 1.0];
        let curve = sweep_network_curve(&clf, &test, &thetas).unwrap();
        for (p, &t) in curve.iter().zip(&thetas) {
            assert_eq!(*p, evaluate(&clf.with_theta(t).unwrap(), &test).unwrap());
            assert!((p.total() - 100.0).abs() < 1e-9);
        }
        assert_eq!(curve[2], curve[3]);
        assert!(sweep_network_curve(&clf, &test, &[1.5]).is_err());
    }

    #[test]
    fn knn_sweep_examples() {
        let train = line_dataset(&[(0.0, 0), (1.0, 0), (2.0, 1), (3.0, 1), (4.0, 1)]);
        let refset = ReferenceSet::from_dataset(&train);
        let test = line_dataset(&[(0.0, 0), (2.0, 1), (1.4, 0)]);
        let ks = [5, 4, 3, 2, 1];
        let curve = sweep_knn_curve(&refset, &test, &ks).unwrap();
        for (p, &k) in curve.iter().zip(&ks) {
            let decisions: Vec<Decision> = test
                .points()
                .iter()
                .map(|q| knn_decide(&refset, &q.features, k, VoteMode::Unanimity).unwrap())
                .collect();
            assert_eq!(*p, score(&decisions, &test.labels(), k as f64).unwrap());
        }
        assert!(curve.windows(2).all(|w| w[0].recognition <= w[1].recognition));
        // The duplicate of a reference point is accepted at k = 1.
        assert_eq!(curve[4].rejection, 0.0);
        assert!(sweep_knn_curve(&refset, &test, &[6]).is_err());
    }

    #[test]
    fn single_mlp_sweep_examples() {
        let net = Network::from_layers(
            Layout::new(1, &[], 2),
            vec![Layer {
                weights: vec![2.0, -2.0],
                biases: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        let test = line_dataset(&[(1.0, 0), (-1.0, 1), (0.1, 1)]);
        let curve = sweep_single_mlp_curve(&net, &test, &[0.0, 0.6, 0.9, 1.0]).unwrap();
        assert_eq!(curve[0].rejection, 0.0);
        assert!((curve[0].recognition - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(curve[3].rejection, 100.0);
        assert!(curve.windows(2).all(|w| w[0].rejection <= w[1].rejection));
    }

    #[test]
    fn curve_csv_round_trip() {
        let pts = vec![
            CurvePoint {
                param: 0.5,
                recognition: 100.0 / 3.0,
                error: 0.0,
                rejection: 200.0 / 3.0,
            },
            CurvePoint {
                param: 3.0,
                recognition: 90.0,
                error: 1.5,
                rejection: 8.5,
            },
        ];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta_or_k,recognition,error,rejection\n"));
        assert_eq!(read_curve_csv(buf.as_slice()).unwrap(), pts);
        assert!(read_curve_csv("a,b,c,d\n".as_bytes()).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let (clf, _) = toy_classifier(0.7);
        let json = serde_json::to_string(&clf.to_bundle()).unwrap();
        let back = ModularClassifier::from_bundle(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, clf);
        let mut bad = clf.to_bundle();
        bad.refset_ids.pop();
        assert!(ModularClassifier::from_bundle(bad).is_err());
    }

    fn blob_dataset() -> Dataset {
        use crate::dataset::{synth_density_variation, ClusterSpec};
        let specs = [
            ClusterSpec {
                center: vec![0.0, 0.0],
                spread: 0.3,
                count: 30,
            },
            ClusterSpec {
                center: vec![20.0, 0.0],
                spread: 0.3,
                count: 30,
            },
            ClusterSpec {
                center: vec![0.0, 20.0],
                spread: 0.3,
                count: 10,
            },
        ];
        synth_density_variation(&specs, 4).unwrap()
    }

    fn quick_config() -> PipelineConfig {
        PipelineConfig {
            islet: IsletConfig { min_size: 15 },
            ladder: vec![vec![2], vec![5]],
            train: TrainParams {
                max_epochs: 200,
                ..TrainParams::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn tight_blobs_get_networks() {
        let data = blob_dataset();
        let (clf, report) = build(&data, &quick_config()).unwrap();
        report
            .partition
            .check(&data.labels(), &IsletConfig { min_size: 15 })
            .unwrap();
        let mut labels: Vec<Label> = clf.networks().iter().map(|n| n.label).collect();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1]);
        assert!(!report.knn_only);
        assert!(clf.networks().iter().all(|n| n.converged));
        let p = evaluate(&clf, &data).unwrap();
        assert_eq!(p.recognition, 100.0);
    }

    #[test]
    fn oversized_p_degrades_to_knn() {
        let data = blob_dataset();
        let config = PipelineConfig {
            islet: IsletConfig { min_size: 31 },
            ..quick_config()
        };
        let (clf, report) = build(&data, &config).unwrap();
        assert!(clf.networks().is_empty());
        assert!(report.knn_only);
        for p in data.points() {
            assert_eq!(
                clf.classify(&p.features).unwrap(),
                knn_decide(clf.refset(), &p.features, 3, VoteMode::Unanimity).unwrap()
            );
        }
    }

    #[test]
    fn residual_refset_and_fallback() {
        let data = blob_dataset();
        let config = PipelineConfig {
            refset: RefsetChoice::Residual,
            ..quick_config()
        };
        let (clf, report) = build(&data, &config).unwrap();
        assert_eq!(clf.refset().ids(), report.partition.residual);
        assert!(!report.residual_fallback);

        let pure = line_dataset(
            &(0..40)
                .map(|i| (i as f64 * 0.5 + if i < 20 { 0.0 } else { 100.0 }, i / 20))
                .collect::<Vec<_>>(),
        );
        let config = PipelineConfig {
            refset: RefsetChoice::Residual,
            ..quick_config()
        };
        let (clf, report) = build(&pure, &config).unwrap();
        assert!(report.partition.residual.is_empty());
        assert!(report.residual_fallback);
        assert_eq!(clf.refset().len(), 40);
    }

    #[test]
    fn build_is_deterministic() {
        let data = blob_dataset();
        let config = PipelineConfig {
            negative_ratio: Some(1.0),
            alpha_search: Some(AlphaSearch::default()),
            ..quick_config()
        };
        let (a, ra) = build(&data, &config).unwrap();
        let (b, rb) = build(&data, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn build_rejects_bad_input() {
        let one_class = line_dataset(&[(0.0, 0), (1.0, 0)]);
        assert!(build(&one_class, &PipelineConfig::default()).is_err());
        let data = blob_dataset();
        assert!(build(
            &data,
            &PipelineConfig {
                theta: 1.5,
                ..quick_config()
            }
        )
        .is_err());
        assert!(build(&data, &PipelineConfig { k: 0, ..quick_config() }).is_err());
        assert!(build(
            &data,
            &PipelineConfig {
                ladder: vec![],
                ..quick_config()
            }
        )
        .is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = PipelineConfig {
            alpha_search: Some(AlphaSearch::default()),
            ..PipelineConfig::default()
        };
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"kk":3}"#).is_err());
    }
}
