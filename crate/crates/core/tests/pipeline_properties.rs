mod common;

use nolgat::graph::{build_hop_index, Dataset, FeatureMatrix};
use nolgat::model::{GraphContext, NolGatConfig};
use nolgat::pipeline::{
    compute_metrics, make_split, run_experiment_on, synth_longrange, train, ExperimentConfig,
    ModelKind, TrainOptions,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let rows: Vec<Vec<f64>> = common::random_matrix(n, 4, 0.1, 1.0, &mut rng)
        .into_iter()
        .zip(&labels)
        .map(|(mut r, &y)| {
            r[0] += f64::from(y);
            r
        })
        .collect();
    let ids = (0..n).map(|i| format!("d{i}")).collect();
    Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), labels, ids).unwrap()
}

fn quick_config() -> ExperimentConfig {
    let mut config = ExperimentConfig {
        epochs: 5,
        repetitions: 2,
        ..Default::default()
    };
    config.model.hidden = vec![8, 4];
    config.model.heads = vec![2, 2];
    config.model.mlp_hidden = vec![4];
    config
}

#[test]
fn loss_halves_on_the_synthetic_task() {
    let bench = synth_longrange(600, 3, 1).unwrap();
    let ctx = GraphContext::new(build_hop_index(&bench.graph, 8).unwrap()).unwrap();
    let split = make_split(&bench.dataset.labels, 0.3, 1).unwrap();
    let opts = TrainOptions {
        epochs: 200,
        seed: 1,
        ..Default::default()
    };
    let out = train(
        &NolGatConfig::default(),
        &bench.dataset,
        &ctx,
        &split.labeled_mask,
        &opts,
    )
    .unwrap();
    let (first, last) = (out.loss_curve[0], *out.loss_curve.last().unwrap());
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn ten_repetitions_give_ten_runs_and_a_spread() {
    let dataset = toy_dataset(40, 1);
    let config = ExperimentConfig {
        repetitions: 10,
        knn_k: vec![4],
        label_fraction: vec![0.3],
        ..quick_config()
    };
    let results = run_experiment_on(&config, &dataset).unwrap();
    assert_eq!(results.runs.len(), 20);
    assert_eq!(results.aggregate.len(), 2);
    for row in &results.aggregate {
        assert_eq!(row.runs, 10);
        assert!(row.std.accuracy >= 0.0 && row.std.accuracy.is_finite());
    }
}

#[test]
fn default_k_sweep_has_six_rows_per_model() {
    let dataset = toy_dataset(30, 2);
    let config = ExperimentConfig {
        repetitions: 1,
        epochs: 2,
        label_fraction: vec![0.2],
        ..quick_config()
    };
    assert_eq!(config.knn_k, vec![3, 4, 5, 6, 7, 8]);
    let results = run_experiment_on(&config, &dataset).unwrap();
    for model in [ModelKind::Nolgat, ModelKind::Baseline] {
        let mut ks: Vec<_> = results
            .aggregate
            .iter()
            .filter(|r| r.model == model)
            .map(|r| r.knn_k)
            .collect();
        ks.dedup();
        assert_eq!(ks.len(), 6);
    }
}

#[test]
fn models_are_paired_on_split_and_seed() {
    let dataset = toy_dataset(30, 3);
    let config = ExperimentConfig {
        knn_k: vec![3],
        label_fraction: vec![0.2, 0.3],
        ..quick_config()
    };
    let results = run_experiment_on(&config, &dataset).unwrap();
    assert_eq!(results.runs.len(), 8);
    for run in results.runs.iter().filter(|r| r.model == ModelKind::Nolgat) {
        let twin = results
            .runs
            .iter()
            .find(|r| r.model == ModelKind::Baseline && r.pair_id == run.pair_id)
            .expect("baseline twin");
        assert_eq!(twin.seed, run.seed);
        assert_eq!(twin.confusion.total(), run.confusion.total());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_stratified_within_one(
        labels in proptest::collection::vec(0u8..2, 4..300),
        fraction in 0.05f64..0.95,
        seed in 0u64..1000,
    ) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let smallest = labels.iter().filter(|&&y| y == 0).count().min(labels.iter().filter(|&&y| y == 1).count());
        let split = match make_split(&labels, fraction, seed) {
            Ok(s) => s,
            Err(e) => {
                // only refused when some class would get no labeled member
                prop_assert!((fraction * smallest as f64).round() == 0.0, "{}", e);
                return Ok(());
            }
        };
        let again = make_split(&labels, fraction, seed).unwrap();
        prop_assert_eq!(&split.labeled_mask, &again.labeled_mask);
        let total = split.num_labeled() as f64;
        for class in [0u8, 1] {
            let in_class = labels.iter().filter(|&&y| y == class).count() as f64;
            let picked = labels.iter().zip(&split.labeled_mask).filter(|(&y, &m)| m && y == class).count() as f64;
            let proportional = total * in_class / labels.len() as f64;
            prop_assert!((picked - proportional).abs() <= 1.0 + 1e-9, "class {} picked {} vs {}", class, picked, proportional);
        }
    }

    #[test]
    fn metrics_are_bounded_and_consistent(
        data in proptest::collection::vec((0u8..2, 0u8..2, any::<bool>()), 1..120),
    ) {
        let pred: Vec<u8> = data.iter().map(|d| d.0).collect();
        let truth: Vec<u8> = data.iter().map(|d| d.1).collect();
        let mut mask: Vec<bool> = data.iter().map(|d| d.2).collect();
        mask[0] = true;
        let m = compute_metrics(&pred, &truth, &mask).unwrap();
        let c = m.confusion;
        prop_assert_eq!(c.total(), mask.iter().filter(|&&b| b).count());
        prop_assert_eq!(m.accuracy, (c.tp + c.tn) as f64 / c.total() as f64);
        for v in [m.accuracy, m.macro_f1, m.interest_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        // swapping both label sets mirrors the confusion matrix
        let flip = |v: &[u8]| v.iter().map(|y| 1 - y).collect::<Vec<_>>();
        let mirrored = compute_metrics(&flip(&pred), &flip(&truth), &mask).unwrap();
        prop_assert_eq!(mirrored.confusion.tp, c.tn);
        prop_assert_eq!(mirrored.confusion.fp, c.fn_);
        prop_assert!((mirrored.macro_f1 - m.macro_f1).abs() < 1e-12);
    }
}
