//! `topomod`: run the clustering and modular-classifier pipeline stage by
//! stage, with every artifact written to disk.

mod artifact;
mod config;
mod failure;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use topomod::dataset::{fig2_preset, load_dataset, synth_density_variation};
use topomod::ensemble::{
    build, score, sweep_knn_curve, sweep_network_curve, sweep_single_mlp_curve, write_curve_csv, Bundle,
};
use topomod::hierarchy::{build_dendrogram, pairwise_distances};
use topomod::islet::{detect_islets, islet_coverage};
use topomod::mlp::{init_network, train_classifier};
use topomod::multicut::multilevel_cut;
use topomod::protocol::{crossval_with, FoldResult};
use topomod::{
    Clustering, CurvePoint, DataSource, Dataset, Decision, Dendrogram, IsletPartition, Layout, ModularClassifier,
    ReferenceSet, Source, TrainParams,
};

use artifact::{read_json, write_csv, write_json, Stamp};
use config::RunConfig;
use failure::{exit_code, Failure};

#[derive(Parser, Debug)]
#[command(
    name = "topomod",
    version,
    about = "Multi-level clustering and islet-network classification"
)]
struct Cli {
    /// TOML run configuration
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// CSV dataset with the class label in the last column
    #[arg(long, conflicts_with_all = ["idx_images", "idx_labels"])]
    data: Option<PathBuf>,

    /// The CSV starts with a header row
    #[arg(long)]
    header: bool,

    /// IDX image file (magic 2051)
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,

    /// IDX label file (magic 2049)
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Preset {
    /// Three sparse and three dense Gaussian clusters in the plane
    Fig2,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled dataset as CSV
    Synth {
        #[arg(long, value_enum, default_value = "fig2")]
        preset: Preset,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build the dendrogram of a dataset
    Cluster {
        #[command(flatten)]
        data: DataArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Multi-level cut of a dendrogram
    Cut {
        #[arg(long)]
        dendrogram: PathBuf,
        /// Override the configured alpha
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Extract islets from a clustering
    Islets {
        #[arg(long)]
        dendrogram: PathBuf,
        #[arg(long)]
        clustering: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build the distributed classifier and save it as a bundle
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Label query points with a trained bundle
    Classify {
        #[arg(long)]
        model: PathBuf,
        /// Query CSV; with --labelled the last column is a class label
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        labelled: bool,
        #[arg(long)]
        header: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the distributed, k-NN and single-MLP curves for one split
    Curve {
        #[arg(long)]
        model: PathBuf,
        /// Training CSV the model was built from
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        header: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// K-fold cross-validation of all three classifiers
    Crossval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Command::Crossval { folds: Some(f), .. } = &cli.command {
        config.folds = *f;
    }
    if let Command::Cut { alpha: Some(a), .. } = &cli.command {
        config.pipeline.cut.alpha = *a;
    }
    config.validate()?;
    let stamp = Stamp {
        config_hash: config.hash()?,
        seed: config.seed,
    };

    match cli.command {
        Command::Synth { preset, out } => synth(preset, &out, &config, &stamp),
        Command::Cluster { data, out } => {
            let ds = load(&data, &config)?;
            let d = build_dendrogram(&pairwise_distances(&ds)?, config.pipeline.linkage)?;
            write_json(&out, &stamp, "dendrogram", &d)?;
            println!("{} leaves, root height {}", d.n_leaves(), d.height(d.root()));
            Ok(())
        }
        Command::Cut { dendrogram, out, .. } => {
            let d: Dendrogram = read_json(&dendrogram, "dendrogram")?.data;
            let c = multilevel_cut(&d, &config.pipeline.cut)?;
            write_json(&out, &stamp, "clustering", &c)?;
            println!("{} clusters", c.len());
            Ok(())
        }
        Command::Islets {
            dendrogram,
            clustering,
            data,
            out,
        } => {
            let d: Dendrogram = read_json(&dendrogram, "dendrogram")?.data;
            let c: Clustering = read_json(&clustering, "clustering")?.data;
            let ds = load(&data, &config)?;
            let partition = detect_islets(&d, &c, &ds.labels(), &config.pipeline.islet)?;
            let coverage = islet_coverage(&partition);
            write_json(&out, &stamp, "islets", &IsletReport { partition, coverage })?;
            println!("coverage {coverage}");
            Ok(())
        }
        Command::Train { data, out } => {
            let ds = load(&data, &config)?;
            let (clf, report) = build(&ds, &config.pipeline())?;
            write_json(&out, &stamp, "bundle", &clf.to_bundle())?;
            println!(
                "{} islet networks ({} converged), coverage {}, alpha {}",
                clf.networks().len(),
                clf.networks().iter().filter(|n| n.converged).count(),
                report.coverage,
                report.alpha
            );
            Ok(())
        }
        Command::Classify {
            model,
            queries,
            labelled,
            header,
            out,
        } => classify(&model, &queries, labelled, header, &out, &stamp),
        Command::Curve {
            model,
            train,
            test,
            header,
            out_dir,
        } => {
            let clf = load_model(&model)?;
            let read = |p: &Path| {
                load_source(&DataSource::Csv {
                    path: p.to_path_buf(),
                    skip_header: header,
                })
            };
            let train = aligned(read(&train)?, clf.class_names())?;
            let test = aligned(read(&test)?, clf.class_names())?;
            let dir = out_dir_of(out_dir, &config);
            let thetas = config.thetas();
            let ks: Vec<usize> = config.ks.iter().copied().filter(|&k| k <= train.len()).collect();
            let distributed = sweep_network_curve(&clf, &test, &thetas)?;
            let knn = sweep_knn_curve(&ReferenceSet::from_dataset(&train), &test, &ks)?;
            let mlp = single_mlp(&train, &config)?;
            let single = sweep_single_mlp_curve(&mlp, &test, &thetas)?;
            for (name, curve) in [("distributed", &distributed), ("knn", &knn), ("single_mlp", &single)] {
                write_curve(&dir.join(format!("{name}.csv")), &stamp, curve)?;
            }
            println!("curves written to {}", dir.display());
            Ok(())
        }
        Command::Crossval { data, out_dir, .. } => {
            let ds = load(&data, &config)?;
            let dir = out_dir_of(out_dir, &config);
            let report = crossval_with(&ds, &config.crossval(), |f| {
                println!("fold {}: {} islets, coverage {:.3}", f.fold, f.islets, f.coverage);
            })?;
            for f in &report.folds {
                for (name, curve) in [
                    ("distributed", &f.distributed),
                    ("knn", &f.knn),
                    ("single_mlp", &f.single_mlp),
                ] {
                    write_curve(&dir.join(format!("fold{}_{name}.csv", f.fold)), &stamp, curve)?;
                }
            }
            for (name, curve) in [
                ("distributed", &report.distributed),
                ("knn", &report.knn),
                ("single_mlp", &report.single_mlp),
            ] {
                write_curve(&dir.join(format!("mean_{name}.csv")), &stamp, curve)?;
            }
            let summary: Vec<FoldSummary> = report.folds.iter().map(FoldSummary::from).collect();
            write_json(&dir.join("summary.json"), &stamp, "crossval-summary", &summary)?;
            println!("curves written to {}", dir.display());
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IsletReport {
    partition: IsletPartition,
    coverage: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FoldSummary {
    fold: usize,
    train_size: usize,
    test_size: usize,
    alpha: f64,
    clusters: usize,
    islets: usize,
    coverage: f64,
    converged_networks: usize,
    network_share: Vec<f64>,
}

impl From<&FoldResult> for FoldSummary {
    fn from(f: &FoldResult) -> Self {
        FoldSummary {
            fold: f.fold,
            train_size: f.train_size,
            test_size: f.test_size,
            alpha: f.alpha,
            clusters: f.clusters,
            islets: f.islets,
            coverage: f.coverage,
            converged_networks: f.converged_networks,
            network_share: f.network_share.clone(),
        }
    }
}

fn synth(preset: Preset, out: &Path, config: &RunConfig, stamp: &Stamp) -> Result<()> {
    let specs = match preset {
        Preset::Fig2 => fig2_preset(),
    };
    let ds = synth_density_variation(&specs, config.seed)?;
    let mut body = Vec::new();
    ds.write_csv(&mut body)?;
    write_csv(out, stamp, "dataset", &body)?;
    println!("{} points in {} classes", ds.len(), ds.class_names().len());
    Ok(())
}

fn load_source(source: &DataSource) -> Result<Dataset> {
    let what = match source {
        DataSource::Csv { path, .. } => path.display().to_string(),
        DataSource::IdxPair { images, .. } => images.display().to_string(),
    };
    load_dataset(source).with_context(|| format!("loading {what}"))
}

fn load(args: &DataArgs, config: &RunConfig) -> Result<Dataset> {
    let paths = &config.paths;
    let source = if let Some(path) = &args.data {
        DataSource::Csv {
            path: path.clone(),
            skip_header: args.header,
        }
    } else if let (Some(images), Some(labels)) = (&args.idx_images, &args.idx_labels) {
        DataSource::IdxPair {
            images: images.clone(),
            labels: labels.clone(),
        }
    } else if let Some(path) = &paths.data {
        DataSource::Csv {
            path: path.clone(),
            skip_header: paths.header || args.header,
        }
    } else if let (Some(images), Some(labels)) = (&paths.idx_images, &paths.idx_labels) {
        DataSource::IdxPair {
            images: images.clone(),
            labels: labels.clone(),
        }
    } else {
        return Err(Failure::config("no dataset given (use --data, --idx-images/--idx-labels or [paths])").into());
    };
    load_source(&source)
}

fn out_dir_of(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_model(path: &Path) -> Result<ModularClassifier> {
    let bundle: Bundle = read_json(path, "bundle")?.data;
    Ok(ModularClassifier::from_bundle(bundle)?)
}

/// Re-expresses `ds` labels in the model's class-name order.
fn aligned(ds: Dataset, names: &[String]) -> Result<Dataset> {
    let labels = ds
        .points()
        .iter()
        .map(|p| {
            let name = &ds.class_names()[p.label];
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Failure::data(format!("class {name:?} is unknown to the model")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let features = ds.points().iter().map(|p| p.features.clone()).collect();
    Ok(Dataset::new(features, labels, names.to_vec())?)
}

fn single_mlp(train: &Dataset, config: &RunConfig) -> Result<topomod::Network> {
    let layout = Layout::new(train.dim(), &config.single_mlp.hidden, train.class_names().len());
    let inputs: Vec<&[f64]> = train.points().iter().map(|p| p.features.as_slice()).collect();
    let out = train_classifier(
        init_network(&layout, config.seed)?,
        &inputs,
        &train.labels(),
        &TrainParams {
            seed: config.seed,
            ..config.single_mlp.train
        },
    )?;
    Ok(out.network)
}

fn write_curve(path: &Path, stamp: &Stamp, curve: &[CurvePoint]) -> Result<()> {
    let mut body = Vec::new();
    write_curve_csv(&mut body, curve)?;
    write_csv(path, stamp, "curve", &body)
}

fn read_features(path: &Path, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            rec.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Failure::data(format!("{} row {}: {s:?}: {e}", path.display(), row + 1)).into())
                })
                .collect()
        })
        .collect()
}

fn classify(model: &Path, queries: &Path, labelled: bool, header: bool, out: &Path, stamp: &Stamp) -> Result<()> {
    let clf = load_model(model)?;
    let (features, truth) = if labelled {
        let ds = aligned(
            load_source(&DataSource::Csv {
                path: queries.to_path_buf(),
                skip_header: header,
            })?,
            clf.class_names(),
        )?;
        let labels = ds.labels();
        (ds.points().iter().map(|p| p.features.clone()).collect(), Some(labels))
    } else {
        (read_features(queries, header)?, None)
    };
    let decisions = features
        .iter()
        .map(|x| clf.classify(x))
        .collect::<topomod::Result<Vec<Decision>>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "label", "source"])?;
    for (id, d) in decisions.iter().enumerate() {
        let (label, source) = match d {
            Decision::Accept { label, source } => (
                clf.class_names()[*label].clone(),
                match source {
                    Source::Network(i) => format!("network{i}"),
                    Source::Knn => "knn".to_string(),
                },
            ),
            Decision::Reject => (String::new(), "reject".to_string()),
        };
        w.write_record([id.to_string(), label, source])?;
    }
    let body = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
    write_csv(out, stamp, "decisions", &body)?;
    match truth {
        Some(t) => {
            let p = score(&decisions, &t, clf.theta())?;
            println!(
                "recognition {:.3}% error {:.3}% rejection {:.3}%",
                p.recognition, p.error, p.rejection
            );
        }
        None => println!("{} queries labelled", decisions.len()),
    }
    Ok(())
}
