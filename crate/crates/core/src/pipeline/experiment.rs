use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_hop_index, build_knn_graph, Dataset, SparseGraph};
use crate::model::GraphContext;

use super::config::{ExperimentConfig, FeaturizerKind, ModelKind};
use super::featurize::{featurize_hashed, read_feature_csv, read_text_corpus};
use super::metrics::{Confusion, MetricSummary, MetricsReport};
use super::split::make_split;
use super::train::{train, ChosenOrderRecord, TrainOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub model: ModelKind,
    /// `None` when the graph came from an edge file.
    pub knn_k: Option<usize>,
    pub label_fraction: f64,
    pub repetition: usize,
    /// Runs sharing a pair id used the same graph, split and seed.
    pub pair_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub interest_f1: f64,
    pub confusion: Confusion,
    pub loss_curve: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub chosen_orders: Vec<ChosenOrderRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: ModelKind,
    pub knn_k: Option<usize>,
    pub label_fraction: f64,
    pub runs: usize,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config_echo: ExperimentConfig,
    /// Seconds since the Unix epoch; the only nondeterministic field.
    pub timestamp: u64,
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentResults {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("serializing results: {e}")))
    }

    /// `model,knn_k,label_fraction,metric,mean,std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,knn_k,label_fraction,metric,mean,std\n");
        for row in &self.aggregate {
            let k = row.knn_k.map(|k| k.to_string()).unwrap_or_default();
            for (metric, mean, std) in [
                ("accuracy", row.mean.accuracy, row.std.accuracy),
                ("macro_f1", row.mean.macro_f1, row.std.macro_f1),
                ("interest_f1", row.mean.interest_f1, row.std.interest_f1),
            ] {
                let _ = writeln!(
                    out,
                    "{},{k},{},{metric},{mean},{std}",
                    row.model.as_str(),
                    row.label_fraction
                );
            }
        }
        out
    }

    /// `epoch,layer,node_id,chosen_order` rows over every run that recorded them.
    pub fn chosen_orders_csv(&self) -> String {
        let mut out = String::from("pair_id,model,epoch,layer,node_id,chosen_order\n");
        for run in &self.runs {
            for rec in &run.chosen_orders {
                for (v, r) in rec.orders.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{v},{r}",
                        run.pair_id,
                        run.model.as_str(),
                        rec.epoch,
                        rec.layer
                    );
                }
            }
        }
        out
    }

    /// Writes `results.json`, `results.csv` and, when recorded,
    /// `chosen_orders.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            (dir.join("results.json"), self.to_json()?),
            (dir.join("results.csv"), self.to_csv()),
        ];
        if self.runs.iter().any(|r| !r.chosen_orders.is_empty()) {
            files.push((dir.join("chosen_orders.csv"), self.chosen_orders_csv()));
        }
        for (path, body) in &files {
            std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

/// Reads and featurizes the dataset named by the config.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let missing = |k: &str| Error::Config(format!("missing `{k}`"));
    match config.featurizer {
        FeaturizerKind::Precomputed => read_feature_csv(
            config
                .dataset
                .as_deref()
                .ok_or_else(|| missing("dataset"))?,
        ),
        FeaturizerKind::HashedTf => {
            let corpus = read_text_corpus(
                config
                    .documents
                    .as_deref()
                    .ok_or_else(|| missing("documents"))?,
                config.labels.as_deref().ok_or_else(|| missing("labels"))?,
            )?;
            let features = featurize_hashed(&corpus.ids, &corpus.documents, config.feature_dim)?;
            Dataset::new(features, corpus.labels, corpus.ids)
        }
    }
}

fn graphs(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<Vec<(Option<usize>, SparseGraph)>> {
    if let Some(path) = &config.edges {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        return Ok(vec![(
            None,
            SparseGraph::from_edge_list(dataset.len(), &text)?,
        )]);
    }
    config
        .knn_k
        .iter()
        .map(|&k| Ok((Some(k), build_knn_graph(&dataset.features, k)?)))
        .collect()
}

/// Seed of repetition `rep`; shared by every model in the pair.
fn run_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add(rep as u64)
}

/// Loads the dataset and runs the protocol on it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let dataset = load_dataset(config).map_err(|e| e.in_stage("featurize"))?;
    run_experiment_on(config, &dataset)
}

/// Graph construction, then for every graph, label fraction and
/// repetition: one split and one training run per model.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<ExperimentResults> {
    let graphs = graphs(config, dataset).map_err(|e| e.in_stage("build-graph"))?;
    let mut runs = Vec::new();
    for (knn_k, graph) in graphs {
        let hop =
            build_hop_index(&graph, config.max_order_cap).map_err(|e| e.in_stage("hop-index"))?;
        let ctx = GraphContext::new(hop).map_err(|e| e.in_stage("hop-index"))?;
        for &fraction in &config.label_fraction {
            for rep in 0..config.repetitions {
                let seed = run_seed(config.seed, rep);
                let split =
                    make_split(&dataset.labels, fraction, seed).map_err(|e| e.in_stage("split"))?;
                let k_tag = knn_k
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "edges".into());
                for &model in &config.models {
                    let mut mc = config.model.clone();
                    mc.baseline = model == ModelKind::Baseline;
                    let opts = TrainOptions {
                        epochs: config.epochs,
                        seed,
                        adam: config.adam,
                        chosen_orders_every: (config.chosen_orders_every > 0)
                            .then_some(config.chosen_orders_every),
                    };
                    let out = train(&mc, dataset, &ctx, &split.labeled_mask, &opts)
                        .map_err(|e| e.in_stage("train"))?;
                    runs.push(RunRecord {
                        seed,
                        model,
                        knn_k,
                        label_fraction: fraction,
                        repetition: rep,
                        pair_id: format!("k{k_tag}-f{fraction}-r{rep}"),
                        accuracy: out.metrics.accuracy,
                        macro_f1: out.metrics.macro_f1,
                        interest_f1: out.metrics.interest_f1,
                        confusion: out.metrics.confusion,
                        loss_curve: out.loss_curve,
                        chosen_orders: out.chosen_orders,
                    });
                }
            }
        }
    }
    let aggregate = aggregate(&runs)?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(ExperimentResults {
        config_echo: config.clone(),
        timestamp,
        runs,
        aggregate,
    })
}

fn aggregate(runs: &[RunRecord]) -> Result<Vec<AggregateRow>> {
    // f64 fractions are keyed by bit pattern; order follows first appearance.
    let mut groups: BTreeMap<(ModelKind, Option<usize>, u64), Vec<&RunRecord>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in runs {
        let key = (r.model, r.knn_k, r.label_fraction.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order.sort_by_key(|a| (a.0, a.1));
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let report = MetricsReport::from_runs(
                members
                    .iter()
                    .map(|r| super::metrics::Metrics::from_confusion(r.confusion))
                    .collect(),
            )?;
            Ok(AggregateRow {
                model: key.0,
                knn_k: key.1,
                label_fraction: f64::from_bits(key.2),
                runs: members.len(),
                mean: report.mean,
                std: report.std,
            })
        })
        .collect()
}
