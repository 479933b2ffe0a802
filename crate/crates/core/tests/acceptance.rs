//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use topomod::dataset::{fig2_preset, kfold_indices, load_idx_pair, synth_density_variation};
use topomod::ensemble::{build, combine, sweep_knn_curve, write_curve_csv, IsletNetwork, RefsetChoice};
use topomod::hierarchy::{build_dendrogram, euclidean, pairwise_distances};
use topomod::knn::knn_decide;
use topomod::mlp::{default_ladder, escalate_architecture, init_network, Layer};
use topomod::multicut::{matched_agreement, multilevel_cut, single_cut_baseline, variation_coefficient};
use topomod::protocol::{best_recognition_within, crossval, lowest_error_point, CrossvalConfig, CrossvalReport};
use topomod::{
    ClusterSpec, CurvePoint, CutConfig, Dataset, Decision, IsletConfig, IsletPartition, Label, LabeledPoint, Layout,
    Linkage, ModularClassifier, Network, PipelineConfig, ReferenceSet, Source, TrainParams, VoteMode,
};

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

/// Islet partitions collected from every pipeline run, checked at the end.
#[derive(Default)]
struct Runs {
    partitions: Vec<(String, IsletPartition, Vec<Label>, usize)>,
}

impl Runs {
    fn record(&mut self, what: impl Into<String>, partition: &IsletPartition, labels: Vec<Label>, min_size: usize) {
        self.partitions.push((what.into(), partition.clone(), labels, min_size));
    }
}

fn main() -> ExitCode {
    let digits = load_digits();
    let mut runs = Runs::default();
    let mut outcomes = Vec::new();

    outcomes.push(timed(
        1,
        "dendrogram matches naive agglomeration",
        Duration::from_secs(10),
        dendrogram_oracle,
    ));
    outcomes.push(timed(
        2,
        "multi-level cut beats single cut on fig2",
        Duration::from_secs(60),
        fig2_cuts,
    ));
    fig2_pipelines(&mut runs);
    outcomes.push(timed(
        3,
        "variation coefficient grows with clusters",
        Duration::from_secs(30),
        coefficient_sensitivity,
    ));
    outcomes.push(timed(
        4,
        "cluster count nondecreasing in alpha",
        Duration::from_secs(30),
        alpha_monotonicity,
    ));
    outcomes.push(timed(
        6,
        "MLP gradient check and XOR",
        Duration::from_secs(60),
        mlp_checks,
    ));
    outcomes.push(timed(
        7,
        "k-NN brute force and monotone sweep",
        Duration::from_secs(30),
        || knn_checks(&digits),
    ));
    outcomes.push(timed(
        8,
        "cooperation rule and theta = 1 equivalence",
        Duration::MAX,
        || cooperation(&digits, &mut runs),
    ));
    outcomes.push(timed(9, "digits 5-fold trend", Duration::from_secs(30 * 60), || {
        digits_trend(&digits, &mut runs)
    }));
    outcomes.push(timed(10, "crossval CSVs are byte-identical", Duration::MAX, || {
        reproducibility(&digits, &mut runs)
    }));
    outcomes.push(timed(5, "islet soundness on every pipeline run", Duration::MAX, || {
        islet_soundness(&runs)
    }));

    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary");
    for o in &outcomes {
        println!("{}", line(o));
    }
    if outcomes.iter().all(|o| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn line(o: &Outcome) -> String {
    format!(
        "criterion {:>2} {} - {} ({}; {:.1?})",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.title,
        o.detail,
        o.elapsed
    )
}

fn timed<F>(id: usize, title: &'static str, limit: Duration, f: F) -> Outcome
where
    F: FnOnce() -> (bool, String),
{
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    if !in_time {
        detail.push_str(&format!("; over the {limit:?} budget"));
    }
    let o = Outcome {
        id,
        title,
        pass: ok && in_time,
        detail,
        elapsed,
    };
    println!("{}", line(&o));
    o
}

fn load_digits() -> Dataset {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits");
    load_idx_pair(
        &dir.join("digits-images-idx3-ubyte"),
        &dir.join("digits-labels-idx1-ubyte"),
    )
    .expect("digit data under data/digits")
}

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect()
}

// ---------------------------------------------------------------- 1

/// Agglomerates from scratch, recomputing every cluster distance from the
/// points. Ties go to the lowest (smaller id, larger id) node pair.
fn naive_heights(points: &[Vec<f64>], linkage: Linkage) -> Vec<(f64, BTreeSet<usize>)> {
    let n = points.len();
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    let mut next = n;
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ia, ma) = &active[a];
                let (ib, mb) = &active[b];
                let pair = ma.iter().flat_map(|&x| mb.iter().map(move |&y| (x, y)));
                let ds: Vec<f64> = pair.map(|(x, y)| euclidean(&points[x], &points[y])).collect();
                let d = match linkage {
                    Linkage::Single => ds.iter().copied().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => ds.iter().copied().fold(0.0, f64::max),
                    Linkage::Average => ds.iter().sum::<f64>() / ds.len() as f64,
                    _ => unreachable!(),
                };
                let key = (d, (*ia).min(*ib), (*ia).max(*ib));
                if best.is_none_or(|(bd, lo, hi, _, _)| key < (bd, lo, hi)) {
                    best = Some((key.0, key.1, key.2, a, b));
                }
            }
        }
        let (d, _, _, a, b) = best.unwrap();
        let mut members = active[a].1.clone();
        members.extend(&active[b].1);
        active.remove(b);
        active.remove(a);
        out.push((d, members.iter().copied().collect()));
        active.push((next, members));
        next += 1;
    }
    out
}

fn dendrogram_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let linkages = [Linkage::Single, Linkage::Complete, Linkage::Average];
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(2..=50);
        let dim = rng.random_range(1..=5);
        let points = gaussian_points(&mut rng, n, dim);
        let linkage = linkages[case % 3];
        let data = Dataset::new(points.clone(), vec![0; n], vec!["x".into()]).unwrap();
        let tree = build_dendrogram(&pairwise_distances(&data).unwrap(), linkage).unwrap();
        let naive = naive_heights(&points, linkage);
        let mut ok = tree.merges().len() == naive.len();
        for (i, (m, (h, members))) in tree.merges().iter().zip(&naive).enumerate() {
            let diff = (m.height - h).abs();
            worst = worst.max(diff);
            let leaves: BTreeSet<usize> = tree.leaves(n + i).into_iter().collect();
            ok &= diff <= 1e-9 && &leaves == members && m.size == members.len();
        }
        if !ok {
            failures += 1;
        }
    }
    (
        failures == 0,
        format!("{failures}/50 mismatches, max height diff {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 2

/// Best agreement over injective cluster-to-class assignments, by search.
fn brute_agreement(clusters: &[Vec<usize>], labels: &[Label]) -> f64 {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let counts: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut v = vec![0; classes];
            for &i in c {
                v[labels[i]] += 1;
            }
            v
        })
        .collect();
    fn search(counts: &[Vec<usize>], used: &mut Vec<bool>, at: usize) -> usize {
        if at == counts.len() {
            return 0;
        }
        let mut best = search(counts, used, at + 1);
        for class in 0..used.len() {
            if !used[class] {
                used[class] = true;
                best = best.max(counts[at][class] + search(counts, used, at + 1));
                used[class] = false;
            }
        }
        best
    }
    search(&counts, &mut vec![false; classes], 0) as f64 / labels.len() as f64
}

fn fig2_cuts() -> (bool, String) {
    let linkage = PipelineConfig::default().linkage;
    let mut recovered = Vec::new();
    let mut oracle_ok = true;
    let mut notes = Vec::new();
    for seed in 0..10 {
        let data = synth_density_variation(&fig2_preset(), seed).unwrap();
        let labels = data.labels();
        let tree = build_dendrogram(&pairwise_distances(&data).unwrap(), linkage).unwrap();
        let multi = multilevel_cut(&tree, &CutConfig::default()).unwrap();
        let single = single_cut_baseline(&tree, 6).unwrap();
        let (am, asg) = (matched_agreement(&multi, &labels), matched_agreement(&single, &labels));
        if multi.len() <= 9 {
            oracle_ok &= (am - brute_agreement(&multi.clusters, &labels)).abs() < 1e-12;
        }
        oracle_ok &= (asg - brute_agreement(&single.clusters, &labels)).abs() < 1e-12;
        notes.push(format!("s{seed}:{}@{:.3}/{:.3}", multi.len(), am, asg));
        if multi.len() == 6 && am >= 0.95 {
            recovered.push((seed, asg));
        }
    }
    let single_below = recovered.iter().all(|&(_, a)| a < 0.95);
    let pass = recovered.len() >= 8 && single_below && oracle_ok;
    (
        pass,
        format!(
            "{}/10 seeds recovered, single cut < 0.95 on all of them: {single_below}, matching oracle agrees: {oracle_ok}; seed:clusters@multi/single {}",
            recovered.len(),
            notes.join(" ")
        ),
    )
}

/// Full pipeline runs on the fig2 data, kept for the islet soundness check.
fn fig2_pipelines(runs: &mut Runs) {
    for seed in 0..10 {
        let data = synth_density_variation(&fig2_preset(), seed).unwrap();
        let config = PipelineConfig {
            ladder: default_ladder()[..4].to_vec(),
            train: TrainParams {
                max_epochs: 100,
                patience: Some(20),
                ..Default::default()
            },
            seed,
            ..Default::default()
        };
        let (_, report) = build(&data, &config).unwrap();
        runs.record(
            format!("fig2 seed {seed}"),
            &report.partition,
            data.labels(),
            IsletConfig::default().min_size,
        );
    }
}

// ---------------------------------------------------------------- 3

fn coefficient_sensitivity() -> (bool, String) {
    let linkage = PipelineConfig::default().linkage;
    let root_cv = |specs: &[ClusterSpec], seed: u64| {
        let data = synth_density_variation(specs, seed).unwrap();
        let tree = build_dendrogram(&pairwise_distances(&data).unwrap(), linkage).unwrap();
        variation_coefficient(&tree, tree.root(), CutConfig::default().bins).unwrap()
    };
    let spec = |x: f64, count: usize| ClusterSpec {
        center: vec![x, 0.0],
        spread: 1.0,
        count,
    };
    let mut wins = 0;
    for draw in 0..20u64 {
        let one = root_cv(&[spec(0.0, 200)], 100 + draw);
        let two = root_cv(&[spec(-5.0, 100), spec(5.0, 100)], 200 + draw);
        if two > one {
            wins += 1;
        }
    }
    (
        wins >= 18,
        format!("2-cluster root coefficient larger in {wins}/20 draws"),
    )
}

// ---------------------------------------------------------------- 4

fn alpha_monotonicity() -> (bool, String) {
    let alphas = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let linkages = [
        Linkage::Single,
        Linkage::Complete,
        Linkage::Average,
        Linkage::Flexible { beta: -0.25 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    let mut rows = Vec::new();
    for t in 0..10 {
        let specs: Vec<ClusterSpec> = (0..rng.random_range(1..=6))
            .map(|_| ClusterSpec {
                center: vec![rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)],
                spread: rng.random_range(0.1..2.0),
                count: rng.random_range(5..40),
            })
            .collect();
        let data = synth_density_variation(&specs, t).unwrap();
        let tree = build_dendrogram(&pairwise_distances(&data).unwrap(), linkages[t as usize % 4]).unwrap();
        let counts: Vec<usize> = alphas
            .iter()
            .map(|&alpha| {
                multilevel_cut(
                    &tree,
                    &CutConfig {
                        alpha,
                        ..Default::default()
                    },
                )
                .unwrap()
                .len()
            })
            .collect();
        if counts.windows(2).any(|w| w[0] > w[1]) {
            bad += 1;
        }
        rows.push(format!("{counts:?}"));
    }
    (bad == 0, format!("{bad}/10 violations; counts {}", rows.join(" ")))
}

// ---------------------------------------------------------------- 5

fn islet_soundness(runs: &Runs) -> (bool, String) {
    let mut broken = Vec::new();
    for (what, partition, labels, min_size) in &runs.partitions {
        let mut seen = vec![0usize; labels.len()];
        let mut ok = true;
        for islet in &partition.islets {
            ok &= islet.members.len() >= *min_size;
            for &m in &islet.members {
                ok &= m < labels.len() && labels[m] == islet.label;
                if m < labels.len() {
                    seen[m] += 1;
                }
            }
        }
        for &r in &partition.residual {
            ok &= r < labels.len();
            if r < labels.len() {
                seen[r] += 1;
            }
        }
        ok &= seen.iter().all(|&c| c == 1);
        if !ok {
            broken.push(what.clone());
        }
    }
    let islets: usize = runs.partitions.iter().map(|r| r.1.islets.len()).sum();
    (
        broken.is_empty() && !runs.partitions.is_empty(),
        format!("{} runs, {islets} islets, unsound: {:?}", runs.partitions.len(), broken),
    )
}

// ---------------------------------------------------------------- 6

fn param_mut(net: &mut Network, layer: usize, index: usize) -> &mut f64 {
    let l = &mut net.layers_mut()[layer];
    let nw = l.weights.len();
    if index < nw {
        &mut l.weights[index]
    } else {
        &mut l.biases[index - nw]
    }
}

fn mlp_checks() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=5)).collect();
        let layout = Layout::new(rng.random_range(1..=4), &hidden, rng.random_range(1..=3));
        let net = init_network(&layout, case).unwrap();
        let x: Vec<f64> = (0..layout.input).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..layout.output)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect();
        let grad = net.gradient(&x, &t).unwrap();
        for (li, g) in grad.iter().enumerate() {
            let analytic: Vec<f64> = g.weights.iter().chain(&g.biases).copied().collect();
            for (pi, &a) in analytic.iter().enumerate() {
                let mut plus = net.clone();
                *param_mut(&mut plus, li, pi) += h;
                let mut minus = net.clone();
                *param_mut(&mut minus, li, pi) -= h;
                let numeric = (plus.loss(&x, &t).unwrap() - minus.loss(&x, &t).unwrap()) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
    }

    let xor_pos: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let xor_neg: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    let pos: Vec<&[f64]> = xor_pos.iter().map(Vec::as_slice).collect();
    let neg: Vec<&[f64]> = xor_neg.iter().map(Vec::as_slice).collect();
    let ladder = &default_ladder()[..3];
    let xor = escalate_architecture(&pos, &neg, ladder, &TrainParams::default()).unwrap();
    (
        worst < 1e-4 && xor.converged && xor.rung < 3,
        format!(
            "max relative error {worst:.2e}; XOR converged={} at rung {} after {} epochs",
            xor.converged, xor.rung, xor.epochs
        ),
    )
}

// ---------------------------------------------------------------- 7

fn brute_decide(points: &[LabeledPoint], query: &[f64], k: usize, mode: VoteMode) -> Decision {
    let mut all: Vec<(f64, usize, Label)> = points
        .iter()
        .map(|p| (euclidean(&p.features, query), p.id, p.label))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let top = &all[..k];
    let accept = |label| Decision::Accept {
        label,
        source: Source::Knn,
    };
    match mode {
        VoteMode::Unanimity => {
            if top.iter().all(|n| n.2 == top[0].2) {
                accept(top[0].2)
            } else {
                Decision::Reject
            }
        }
        VoteMode::Majority => {
            let mut counts = std::collections::BTreeMap::new();
            for n in top {
                *counts.entry(n.2).or_insert(0usize) += 1;
            }
            let max = *counts.values().max().unwrap();
            let winners: Vec<Label> = counts.iter().filter(|e| *e.1 == max).map(|e| *e.0).collect();
            if winners.len() == 1 {
                accept(winners[0])
            } else {
                Decision::Reject
            }
        }
    }
}

fn knn_checks(digits: &Dataset) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut checked = 0;
    for &n in &[1usize, 2, 9, 40, 120, 200] {
        // Coarse integer grid so equal distances occur.
        let points: Vec<LabeledPoint> = (0..n)
            .map(|id| LabeledPoint {
                id,
                features: vec![f64::from(rng.random_range(0..6u8)), f64::from(rng.random_range(0..6u8))],
                label: rng.random_range(0..3),
            })
            .collect();
        let refset = ReferenceSet::new(points.clone()).unwrap();
        for _ in 0..15 {
            let q = vec![
                rng.random_range(-1.0..6.0f64).round(),
                rng.random_range(-1.0..6.0f64).round(),
            ];
            for k in [1, 2, 3, 5, 8, n].into_iter().filter(|&k| k <= n) {
                for mode in [VoteMode::Unanimity, VoteMode::Majority] {
                    checked += 1;
                    if knn_decide(&refset, &q, k, mode).unwrap() != brute_decide(&points, &q, k, mode) {
                        mismatches += 1;
                    }
                }
            }
        }
    }

    let ids = kfold_indices(digits.len(), 3, 77).unwrap();
    let train = digits.subset(&ids[0].1[..500]).unwrap();
    let test = digits.subset(&ids[1].1).unwrap();
    let refset = ReferenceSet::from_dataset(&train);
    let ks: Vec<usize> = (1..=refset.len()).rev().collect();
    let curve = sweep_knn_curve(&refset, &test, &ks).unwrap();
    // Curve is ordered by descending k, so recognition must not fall.
    let monotone = curve.windows(2).all(|w| w[1].recognition >= w[0].recognition);
    let mut sweep_agrees = true;
    for p in curve.iter().filter(|p| [1.0, 3.0, 10.0, 100.0].contains(&p.param)) {
        let k = p.param as usize;
        let correct = test
            .points()
            .iter()
            .filter(|q| brute_decide(refset.points(), &q.features, k, VoteMode::Unanimity).label() == Some(q.label))
            .count();
        sweep_agrees &= (100.0 * correct as f64 / test.len() as f64 - p.recognition).abs() < 1e-9;
    }
    (
        mismatches == 0 && monotone && sweep_agrees,
        format!(
            "{mismatches}/{checked} brute-force mismatches; recognition monotone over k=500..1: {monotone} ({:.1}% -> {:.1}%); sweep matches brute force: {sweep_agrees}",
            curve[0].recognition,
            curve.last().unwrap().recognition
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Network whose output is `value` for every input.
fn constant_network(dim: usize, value: f64) -> Network {
    let layout = Layout::new(dim, &[1], 1);
    let layers = vec![
        Layer {
            weights: vec![0.0; dim],
            biases: vec![0.0],
        },
        Layer {
            weights: vec![0.0],
            biases: vec![(value / (1.0 - value)).ln()],
        },
    ];
    Network::from_layers(layout, layers).unwrap()
}

fn expected_rule(outputs: &[f64], labels: &[Label], theta: f64, tie_break: bool, knn: Decision) -> Decision {
    let fired: Vec<usize> = (0..outputs.len()).filter(|&i| outputs[i] >= theta).collect();
    let pick = |i: usize| Decision::Accept {
        label: labels[i],
        source: Source::Network(i),
    };
    match fired.len() {
        1 => pick(fired[0]),
        0 => knn,
        _ if tie_break => {
            let mut best = fired[0];
            for &i in &fired[1..] {
                if outputs[i] > outputs[best] {
                    best = i;
                }
            }
            pick(best)
        }
        _ => knn,
    }
}

fn cooperation(digits: &Dataset, runs: &mut Runs) -> (bool, String) {
    // Truth table over every fire pattern of four networks, two k-NN states
    // and both tie-break settings.
    let net_labels: Vec<Label> = vec![0, 1, 0, 2];
    let levels = [0.2, 0.7, 0.9];
    let accepting = vec![
        LabeledPoint {
            id: 0,
            features: vec![0.0, 0.0],
            label: 2,
        },
        LabeledPoint {
            id: 1,
            features: vec![0.1, 0.0],
            label: 2,
        },
        LabeledPoint {
            id: 2,
            features: vec![0.0, 0.1],
            label: 2,
        },
        LabeledPoint {
            id: 3,
            features: vec![5.0, 5.0],
            label: 0,
        },
    ];
    let mut rejecting = accepting.clone();
    rejecting[1].label = 1;
    let mut rows = 0;
    let mut wrong = 0;
    for refpoints in [accepting, rejecting] {
        let refset = ReferenceSet::new(refpoints.clone()).unwrap();
        let knn = knn_decide(&refset, &[0.0, 0.0], 3, VoteMode::Unanimity).unwrap();
        for code in 0..levels.len().pow(net_labels.len() as u32) {
            let outputs: Vec<f64> = (0..net_labels.len())
                .map(|i| levels[code / levels.len().pow(i as u32) % levels.len()])
                .collect();
            for tie_break in [false, true] {
                let networks = outputs
                    .iter()
                    .zip(&net_labels)
                    .map(|(&v, &label)| IsletNetwork {
                        network: constant_network(2, v),
                        label,
                        converged: true,
                        rung: 0,
                        epochs: 0,
                    })
                    .collect();
                let clf = ModularClassifier::new(
                    networks,
                    refset.clone(),
                    RefsetChoice::Full,
                    3,
                    0.5,
                    tie_break,
                    vec!["a".into(), "b".into(), "c".into()],
                )
                .unwrap();
                let want = expected_rule(&outputs, &net_labels, 0.5, tie_break, knn);
                let got = clf.classify(&[0.0, 0.0]).unwrap();
                let direct = combine(&outputs, &net_labels, 0.5, tie_break, || Ok(knn)).unwrap();
                rows += 1;
                if got != want || direct != want {
                    wrong += 1;
                }
            }
        }
    }

    // Degenerate threshold on a trained classifier, with both reference sets.
    let ids = kfold_indices(digits.len(), 3, 88).unwrap();
    let train = digits.subset(&ids[0].1).unwrap();
    let test = digits.subset(&ids[1].1).unwrap();
    let mut differing = 0;
    let mut compared = 0;
    let mut networks = 0;
    for refset in [RefsetChoice::Full, RefsetChoice::Residual] {
        let config = PipelineConfig {
            ladder: default_ladder()[..3].to_vec(),
            train: TrainParams {
                max_epochs: 60,
                ..Default::default()
            },
            refset,
            seed: 8,
            ..Default::default()
        };
        let (clf, report) = build(&train, &config).unwrap();
        runs.record(
            format!("theta=1 build {refset:?}"),
            &report.partition,
            train.labels(),
            config.islet.min_size,
        );
        networks += clf.networks().len();
        let clf = clf.with_theta(1.0).unwrap();
        let k = clf.k().min(clf.refset().len());
        for q in test.points() {
            compared += 1;
            let knn = knn_decide(clf.refset(), &q.features, k, VoteMode::Unanimity).unwrap();
            if clf.classify(&q.features).unwrap() != knn {
                differing += 1;
            }
        }
    }
    (
        wrong == 0 && differing == 0 && networks > 0,
        format!(
            "{wrong}/{rows} truth-table rows wrong; {differing}/{compared} theta=1 decisions differ from k-NN ({networks} networks)"
        ),
    )
}

// ---------------------------------------------------------------- 9

/// Settings used for the digit runs: the library defaults with a per-rung
/// budget of 200 epochs and early stopping after 30 flat epochs.
fn digits_config() -> CrossvalConfig {
    let mut config = CrossvalConfig::default();
    config.pipeline.train.max_epochs = 200;
    config.pipeline.train.patience = Some(30);
    config.single_mlp.train.max_epochs = 50;
    config
}

fn record_folds(digits: &Dataset, config: &CrossvalConfig, report: &CrossvalReport, runs: &mut Runs, tag: &str) {
    let splits = kfold_indices(digits.len(), config.folds, config.seed).unwrap();
    for (fold, (train_ids, _)) in report.folds.iter().zip(&splits) {
        let labels = train_ids.iter().map(|&i| digits.point(i).label).collect();
        runs.record(
            format!("{tag} fold {}", fold.fold),
            &fold.partition,
            labels,
            config.pipeline.islet.min_size,
        );
    }
}

fn identity_holds(curve: &[CurvePoint]) -> bool {
    curve.iter().all(|p| (p.total() - 100.0).abs() <= 1e-9)
}

fn fmt_point(p: Option<CurvePoint>) -> String {
    p.map_or("none".into(), |p| {
        format!("{:.1}%@{:.2}%({})", p.recognition, p.error, p.param)
    })
}

fn digits_trend(digits: &Dataset, runs: &mut Runs) -> (bool, String) {
    let config = digits_config();
    let report = crossval(digits, &config).unwrap();
    record_folds(digits, &config, &report, runs, "digits");

    let mut wins = 0;
    let mut within_wins = 0;
    let mut identity =
        identity_holds(&report.distributed) && identity_holds(&report.knn) && identity_holds(&report.single_mlp);
    for f in &report.folds {
        identity &= identity_holds(&f.distributed) && identity_holds(&f.knn) && identity_holds(&f.single_mlp);
        let (d, k) = (lowest_error_point(&f.distributed, 0.5), lowest_error_point(&f.knn, 0.5));
        let win = matches!((d, k), (Some(d), Some(k)) if d.recognition >= k.recognition);
        wins += usize::from(win);
        let (bd, bk) = (
            best_recognition_within(&f.distributed, 0.5),
            best_recognition_within(&f.knn, 0.5),
        );
        within_wins += usize::from(matches!((bd, bk), (Some(d), Some(k)) if d.recognition >= k.recognition));
        println!(
            "    fold {}: {} islets cover {:.1}%, {}/{} converged; lowest-error distributed {} k-NN {} MLP {}; best within 0.5%: distributed {} k-NN {}",
            f.fold,
            f.islets,
            100.0 * f.coverage,
            f.converged_networks,
            f.islets,
            fmt_point(d),
            fmt_point(k),
            fmt_point(lowest_error_point(&f.single_mlp, 0.5)),
            fmt_point(bd),
            fmt_point(bk),
        );
    }
    (
        wins >= 3 && identity,
        format!(
            "distributed >= k-NN at the lowest-error point on {wins}/5 folds; identity holds: {identity}; (info: best recognition within 0.5% error favours distributed on {within_wins}/5)"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn curve_bytes(report: &CrossvalReport) -> Vec<Vec<u8>> {
    let mut curves: Vec<&[CurvePoint]> = vec![&report.distributed, &report.knn, &report.single_mlp];
    for f in &report.folds {
        curves.extend([f.distributed.as_slice(), &f.knn, &f.single_mlp]);
    }
    curves
        .into_iter()
        .map(|c| {
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, c).unwrap();
            buf
        })
        .collect()
}

fn reproducibility(digits: &Dataset, runs: &mut Runs) -> (bool, String) {
    let mut config = CrossvalConfig {
        seed: 10,
        ..CrossvalConfig::default()
    };
    config.pipeline.ladder.truncate(3);
    config.pipeline.train.max_epochs = 60;
    config.pipeline.negative_ratio = Some(3.0);
    config.single_mlp.train.max_epochs = 20;
    let first = crossval(digits, &config).unwrap();
    let second = crossval(digits, &config).unwrap();
    record_folds(digits, &config, &first, runs, "repro");
    let (a, b) = (curve_bytes(&first), curve_bytes(&second));
    let same = a == b;
    let bytes: usize = a.iter().map(Vec::len).sum();
    (same, format!("{} CSVs, {bytes} bytes, identical: {same}", a.len()))
}
