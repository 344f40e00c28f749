mod common;

use std::rc::Rc;

use nolgat::diffcore::{grad_check, ParamStore, Tape, Tensor};
use nolgat::graph::SparseGraph;
use nolgat::layers::{EdgeList, GatV2Layer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    graph: SparseGraph,
    features: Vec<Vec<f64>>,
    layer: GatV2Layer,
    params: ParamStore,
}

fn instance(seed: u64, concat: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(5..25);
    let graph = common::erdos_renyi(n, 0.2, &mut rng);
    let features = common::random_matrix(n, 5, -2.0, 2.0, &mut rng);
    let layer = GatV2Layer::new("psi0", 5, 6, 3, concat).unwrap();
    let mut params = ParamStore::new(seed);
    layer.register(&mut params).unwrap();
    for k in 0..3 {
        for x in params.value_mut(&layer.bias_name(k)).unwrap().data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    Instance {
        graph,
        features,
        layer,
        params,
    }
}

fn neighborhoods(g: &SparseGraph) -> Vec<Vec<usize>> {
    (0..g.num_nodes())
        .map(|v| g.neighbors(v).to_vec())
        .collect()
}

fn run_layer(inst: &Instance, features: &[Vec<f64>], nbrs: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let bindings = inst.params.bind(&mut tape);
    let h = tape.constant(Tensor::from_rows(features).unwrap());
    let edges = EdgeList::with_self_loops(nbrs).unwrap();
    let out = inst.layer.forward(&mut tape, &bindings, h, &edges).unwrap();
    let t = tape.value(out);
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[test]
fn matches_dense_oracle() {
    for seed in 0..20 {
        for concat in [true, false] {
            let inst = instance(seed, concat);
            let nbrs = neighborhoods(&inst.graph);
            let got = run_layer(&inst, &inst.features, &nbrs);
            let want = common::dense_gatv2(&inst.params, "psi0", 3, concat, &inst.features, &nbrs);
            for (a, b) in got.iter().flatten().zip(want.iter().flatten()) {
                assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    for seed in 0..10 {
        let inst = instance(seed, true);
        let edges = EdgeList::with_self_loops(&neighborhoods(&inst.graph)).unwrap();
        let mut tape = Tape::new();
        let bindings = inst.params.bind(&mut tape);
        let h = tape.constant(Tensor::from_rows(&inst.features).unwrap());
        let scores = inst.layer.scores(&mut tape, &bindings, h, &edges).unwrap();
        let segments: Rc<[usize]> = edges.targets().into();
        let alpha = tape.segment_softmax(scores, segments).unwrap();
        let alpha = tape.value(alpha);
        let n = inst.graph.num_nodes();
        for head in 0..3 {
            let mut sums = vec![0.0; n];
            for (e, &t) in edges.targets().iter().enumerate() {
                let a = alpha.get(e, head);
                assert!(a >= 0.0);
                sums[t] += a;
            }
            for s in sums {
                assert!((s - 1.0).abs() < 1e-12, "{s}");
            }
        }
    }
}

#[test]
fn output_ignores_nodes_outside_neighborhood() {
    for seed in 0..10 {
        let inst = instance(seed, true);
        let nbrs = neighborhoods(&inst.graph);
        let base = run_layer(&inst, &inst.features, &nbrs);
        let n = inst.graph.num_nodes();
        for w in 0..n {
            let mut perturbed = inst.features.clone();
            perturbed[w].iter_mut().for_each(|x| *x += 1.7);
            let out = run_layer(&inst, &perturbed, &nbrs);
            for v in (0..n).filter(|&v| v != w && !nbrs[v].contains(&w)) {
                assert_eq!(out[v], base[v], "node {v} moved when {w} changed");
            }
        }
    }
}

#[test]
fn permuting_nodes_permutes_outputs() {
    for seed in 0..10 {
        let inst = instance(seed, false);
        let n = inst.graph.num_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let nbrs = neighborhoods(&inst.graph);
        let mut pf = vec![Vec::new(); n];
        let mut pn = vec![Vec::new(); n];
        for v in 0..n {
            pf[perm[v]] = inst.features[v].clone();
            pn[perm[v]] = nbrs[v].iter().map(|&u| perm[u]).collect();
        }
        let base = run_layer(&inst, &inst.features, &nbrs);
        let moved = run_layer(&inst, &pf, &pn);
        for v in 0..n {
            for (a, b) in base[v].iter().zip(&moved[perm[v]]) {
                // neighbor order changes the summation order, nothing else
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    for seed in 0..5 {
        let inst = instance(seed, true);
        let edges = EdgeList::with_self_loops(&neighborhoods(&inst.graph)).unwrap();
        let features = Tensor::from_rows(&inst.features).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = inst.graph.num_nodes();
        let weights =
            Tensor::new(n, 6, (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let report = grad_check(
            |tape, bindings| {
                let h = tape.constant(features.clone());
                let out = inst.layer.forward(tape, bindings, h, &edges)?;
                let w = tape.constant(weights.clone());
                let weighted = tape.mul(out, w)?;
                tape.sum(weighted)
            },
            &inst.params,
            1e-6,
            |_| true,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "seed {seed}: {report:?}");
    }
}
