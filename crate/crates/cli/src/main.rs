use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nolgat::gradsuite::{op_suite, ModelFixture};
use nolgat::graph::{build_hop_index, build_knn_graph, Dataset};
use nolgat::model::RelaxationMode;
use nolgat::pipeline::{
    compute_metrics, feature_csv, featurize_hashed, read_feature_csv, read_text_corpus,
    run_experiment, synth_corpus, synth_longrange, ExperimentConfig,
};
use nolgat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nolgat",
    version,
    about = "Neighborhood-order learning graph attention networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the KNN graph of a dataset, write its edge list and print hop statistics.
    BuildGraph(BuildGraph),
    /// Run the experiment described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Generate benchmark files.
    Synth {
        #[command(subcommand)]
        kind: Synth,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Score a prediction file against a truth file (one 0/1 per line).
    Metrics {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Optional 0/1 file selecting the evaluated lines.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BuildGraph {
    /// Feature CSV (`id,label,f0,...`).
    #[arg(long, conflicts_with_all = ["documents", "labels"])]
    dataset: Option<PathBuf>,
    /// One document per line, hashed into `feature_dim` buckets.
    #[arg(long, requires = "labels")]
    documents: Option<PathBuf>,
    #[arg(long, requires = "documents")]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    feature_dim: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = nolgat::graph::DEFAULT_MAX_ORDER_CAP)]
    max_order_cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Synth {
    /// Disjoint paths whose labels sit exactly `distance` hops away.
    Longrange {
        #[arg(long, default_value_t = 2000)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        distance: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Two-class text corpus: documents.txt and labels.txt.
    Corpus {
        #[arg(long, default_value_t = 500)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, body).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn read_bits(path: &Path) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Data(format!(
                "{}:{}: expected 0 or 1, got {other:?}",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn build_graph(args: &BuildGraph) -> Result<()> {
    let dataset = match (&args.dataset, &args.documents, &args.labels) {
        (Some(path), _, _) => read_feature_csv(path)?,
        (None, Some(docs), Some(labels)) => {
            let corpus = read_text_corpus(docs, labels)?;
            let features = featurize_hashed(&corpus.ids, &corpus.documents, args.feature_dim)?;
            Dataset::new(features, corpus.labels, corpus.ids)?
        }
        _ => {
            return Err(Error::Config(
                "pass --dataset or --documents with --labels".into(),
            ))
        }
    };
    let graph = build_knn_graph(&dataset.features, args.k)?;
    write(&args.out, &graph.to_edge_list())?;
    let hop = build_hop_index(&graph, args.max_order_cap)?;
    let sizes: Vec<usize> = (1..=hop.max_order())
        .map(|r| (0..hop.num_nodes()).map(|v| hop.ring(v, r).len()).sum())
        .collect();
    let stats = serde_json::json!({
        "nodes": graph.num_nodes(),
        "edges": graph.num_edges(),
        "effective_diameter": hop.effective_diameter(),
        "max_order": hop.max_order(),
        "ring_pairs_per_order": sizes,
        "edge_list": args.out.display().to_string(),
    });
    println!("{}", to_json(&stats));
    Ok(())
}

fn train(config: &Path, output_dir: Option<&Path>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.to_path_buf();
    }
    let results = run_experiment(&cfg)?;
    let files = results.write(&cfg.output_dir)?;
    for row in &results.aggregate {
        println!(
            "{:8} k={:<5} fraction={:<4} acc={:.4}±{:.4} macro_f1={:.4}±{:.4} interest_f1={:.4}±{:.4}",
            row.model.as_str(),
            row.knn_k.map(|k| k.to_string()).unwrap_or_else(|| "edges".into()),
            row.label_fraction,
            row.mean.accuracy,
            row.std.accuracy,
            row.mean.macro_f1,
            row.std.macro_f1,
            row.mean.interest_f1,
            row.std.interest_f1,
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn synth(kind: &Synth) -> Result<()> {
    match kind {
        Synth::Longrange {
            nodes,
            distance,
            seed,
            out_dir,
        } => {
            let b = synth_longrange(*nodes, *distance, *seed)?;
            write(&out_dir.join("features.csv"), &feature_csv(&b.dataset))?;
            write(&out_dir.join("edges.tsv"), &b.graph.to_edge_list())?;
            println!("wrote {} nodes to {}", b.dataset.len(), out_dir.display());
        }
        Synth::Corpus {
            docs,
            seed,
            out_dir,
        } => {
            let c = synth_corpus(*docs, *seed)?;
            write(
                &out_dir.join("documents.txt"),
                &(c.documents.join("\n") + "\n"),
            )?;
            let labels: String = c.labels.iter().map(|y| format!("{y}\n")).collect();
            write(&out_dir.join("labels.txt"), &labels)?;
            println!(
                "wrote {} documents to {}",
                c.documents.len(),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn gradcheck(seed: u64, tolerance: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (name, report) in op_suite(seed)? {
        println!("op {name:24} max_rel_err {:.3e}", report.max_relative_error);
        worst = worst.max(report.max_relative_error);
    }
    type Check = (RelaxationMode, &'static str, fn(&str) -> bool);
    let checks: [Check; 3] = [
        (RelaxationMode::DenseSoft, "all parameters", |_| true),
        (
            RelaxationMode::DenseRelaxed,
            "last-layer embedding + mlp",
            |n| n.starts_with("psi1") || n.starts_with("mlp"),
        ),
        (
            RelaxationMode::StraightThrough,
            "last-layer embedding + mlp",
            |n| n.starts_with("psi1") || n.starts_with("mlp"),
        ),
    ];
    for (mode, scope, select) in checks {
        let fixture = ModelFixture::random(20, seed, mode)?;
        let report = fixture.check(select)?;
        let (name, idx) = report.worst.clone().unwrap_or_default();
        println!(
            "model {:16} {scope:28} max_rel_err {:.3e} (worst {name}[{idx}]: analytic {:.6e}, numeric {:.6e})",
            mode.as_str(),
            report.max_relative_error,
            report.worst_analytic,
            report.worst_numeric
        );
        worst = worst.max(report.max_relative_error);
    }
    if worst >= tolerance {
        return Err(Error::Numerical(format!(
            "max relative error {worst:.3e} exceeds {tolerance:e}"
        )));
    }
    println!("all checks below {tolerance:e}");
    Ok(())
}

fn metrics(predictions: &Path, truth: &Path, mask: Option<&Path>) -> Result<()> {
    let p = read_bits(predictions)?;
    let t = read_bits(truth)?;
    let m = match mask {
        Some(path) => read_bits(path)?.into_iter().map(|b| b == 1).collect(),
        None => vec![true; t.len()],
    };
    println!("{}", to_json(&compute_metrics(&p, &t, &m)?));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildGraph(args) => build_graph(args),
        Command::Train { config, output_dir } => train(config, output_dir.as_deref()),
        Command::Synth { kind } => synth(kind),
        Command::Gradcheck { seed, tolerance } => gradcheck(*seed, *tolerance),
        Command::Metrics {
            predictions,
            truth,
            mask,
        } => metrics(predictions, truth, mask.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
