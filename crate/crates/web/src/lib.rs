//! Browser demo bindings. Every export returns a JSON string so the page
//! needs nothing beyond `JSON.parse`; the same functions are plain Rust
//! underneath and are tested natively.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nolgat::graph::{build_hop_index, build_knn_graph, FeatureMatrix, SparseGraph};
use nolgat::model::{GraphContext, NolGatConfig};
use nolgat::pipeline::{make_split, synth_longrange, train, TrainOptions};
use nolgat::sampler::{gumbel_softmax, st_sample, SampleKey, SupportMask};
use nolgat::{Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn js(r: Result<Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

fn parse_weights(text: &str) -> Result<Vec<f64>> {
    let w: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))
        })
        .collect::<Result<_>>()?;
    if w.is_empty()
        || w.len() > 16
        || w.iter().any(|x| !(*x >= 0.0))
        || w.iter().sum::<f64>() <= 0.0
    {
        return Err(Error::InvalidArgument(
            "need 1 to 16 nonnegative weights, not all zero".into(),
        ));
    }
    Ok(w)
}

/// Draws `draws` straight-through samples from the normalized `weights`
/// (zero weights are masked out) and reports empirical frequencies, the
/// mean relaxed scores and one example relaxed vector.
pub fn sample_orders(weights: &str, temperature: f64, draws: u32, seed: u64) -> Result<Value> {
    let w = parse_weights(weights)?;
    let total: f64 = w.iter().sum();
    let target: Vec<f64> = w.iter().map(|x| x / total).collect();
    let mask = SupportMask::new(w.iter().map(|&x| x > 0.0).collect())?;
    let log_probs: Vec<f64> = target
        .iter()
        .map(|p| if *p > 0.0 { p.ln() } else { 0.0 })
        .collect();
    let mut rng = SampleKey {
        seed,
        epoch: 0,
        layer: 0,
        node: 0,
    }
    .rng();
    let mut counts = vec![0u32; w.len()];
    let mut mean_relaxed = vec![0.0; w.len()];
    let mut example = Vec::new();
    for i in 0..draws.max(1) {
        let s = st_sample(&log_probs, temperature, &mask, &mut rng)?;
        counts[s.chosen] += 1;
        for (m, r) in mean_relaxed.iter_mut().zip(&s.relaxed) {
            *m += r;
        }
        if i == 0 {
            example = s.relaxed;
        }
    }
    let n = f64::from(draws.max(1));
    let empirical: Vec<f64> = counts.iter().map(|&c| f64::from(c) / n).collect();
    let l1: f64 = empirical
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).abs())
        .sum();
    let noiseless = gumbel_softmax(&log_probs, &vec![0.0; w.len()], temperature, &mask)?;
    Ok(json!({
        "target": target,
        "empirical": empirical,
        "l1": l1,
        "mean_relaxed": mean_relaxed.iter().map(|m| m / n).collect::<Vec<_>>(),
        "example_relaxed": example,
        "noiseless_relaxed": noiseless,
    }))
}

fn layout_graph(kind: &str, n: usize, seed: u64) -> Result<(Vec<[f64; 2]>, SparseGraph)> {
    match kind {
        "path" => {
            let pos = (0..n).map(|i| [(i as f64 + 0.5) / n as f64, 0.5]).collect();
            let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
            Ok((pos, SparseGraph::from_edges(n, &edges)?))
        }
        "grid" => {
            let side = (n as f64).sqrt().ceil().max(2.0) as usize;
            let n = side * side;
            let pos = (0..n)
                .map(|i| {
                    [
                        ((i % side) as f64 + 0.5) / side as f64,
                        ((i / side) as f64 + 0.5) / side as f64,
                    ]
                })
                .collect();
            let mut edges = Vec::new();
            for i in 0..n {
                if i % side + 1 < side {
                    edges.push((i, i + 1));
                }
                if i + side < n {
                    edges.push((i, i + side));
                }
            }
            Ok((pos, SparseGraph::from_edges(n, &edges)?))
        }
        "knn" => {
            let mut rng = SampleKey {
                seed,
                epoch: 0,
                layer: 0,
                node: 1,
            }
            .rng();
            let pos: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    [
                        nolgat::sampler::uniform_open(&mut rng),
                        nolgat::sampler::uniform_open(&mut rng),
                    ]
                })
                .collect();
            // centred coordinates plus a constant: cosine similarity then
            // tracks planar proximity closely enough for a picture
            let rows: Vec<Vec<f64>> = pos
                .iter()
                .map(|p| vec![p[0] - 0.5, p[1] - 0.5, 0.35])
                .collect();
            let g = build_knn_graph(&FeatureMatrix::from_rows(&rows)?, 3.min(n - 1))?;
            Ok((pos, g))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown graph kind {other:?}"
        ))),
    }
}

/// Lays out a small graph and returns the exact-distance rings of `node`.
pub fn hop_rings(kind: &str, n: usize, node: usize, seed: u64) -> Result<Value> {
    if !(2..=400).contains(&n) {
        return Err(Error::InvalidArgument(
            "node count must lie in 2..=400".into(),
        ));
    }
    let (pos, g) = layout_graph(kind, n, seed)?;
    let hop = build_hop_index(&g, 64)?;
    let node = node.min(g.num_nodes() - 1);
    let rings: Vec<Vec<usize>> = (1..=hop.max_order())
        .map(|r| hop.ring(node, r).to_vec())
        .collect();
    Ok(json!({
        "positions": pos,
        "edges": g.edges(),
        "node": node,
        "rings": rings,
        "max_order": hop.max_order(),
        "eccentricity": hop.eccentricity()[node],
    }))
}

/// Trains a small NOL-GAT and a plain GATv2 on the long-range path task
/// and reports accuracy, loss curves and the chosen-order histogram.
pub fn longrange_demo(distance: usize, epochs: u64, seed: u64) -> Result<Value> {
    if !(1..=4).contains(&distance) || epochs > 400 {
        return Err(Error::InvalidArgument(
            "distance must lie in 1..=4 and epochs in 0..=400".into(),
        ));
    }
    let bench = synth_longrange(40 * distance, distance, seed)?;
    let ctx = GraphContext::new(build_hop_index(&bench.graph, 8)?)?;
    let split = make_split(&bench.dataset.labels, 0.5, seed)?;
    let mut out = serde_json::Map::new();
    for (name, baseline) in [("nolgat", false), ("baseline", true)] {
        let config = NolGatConfig {
            hidden: vec![16, 8],
            heads: vec![2, 1],
            mlp_hidden: vec![8],
            baseline,
            ..Default::default()
        };
        let opts = TrainOptions {
            epochs,
            seed,
            chosen_orders_every: Some(0),
            ..Default::default()
        };
        let run = train(&config, &bench.dataset, &ctx, &split.labeled_mask, &opts)?;
        let histograms: Vec<Vec<usize>> = run
            .chosen_orders
            .iter()
            .map(|rec| {
                let mut h = vec![0; ctx.num_orders()];
                for &r in &rec.orders {
                    h[r] += 1;
                }
                h
            })
            .collect();
        out.insert(
            name.into(),
            json!({
                "accuracy": run.metrics.accuracy,
                "macro_f1": run.metrics.macro_f1,
                "loss_curve": run.loss_curve,
                "order_histograms": histograms,
            }),
        );
    }
    out.insert("nodes".into(), json!(bench.dataset.len()));
    out.insert("distance".into(), json!(distance));
    Ok(Value::Object(out))
}

#[wasm_bindgen(js_name = sampleOrders)]
pub fn sample_orders_js(
    weights: &str,
    temperature: f64,
    draws: u32,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(sample_orders(weights, temperature, draws, u64::from(seed)))
}

#[wasm_bindgen(js_name = hopRings)]
pub fn hop_rings_js(
    kind: &str,
    n: u32,
    node: u32,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(hop_rings(kind, n as usize, node as usize, u64::from(seed)))
}

#[wasm_bindgen(js_name = longrangeDemo)]
pub fn longrange_demo_js(
    distance: u32,
    epochs: u32,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    js(longrange_demo(
        distance as usize,
        u64::from(epochs),
        u64::from(seed),
    ))
}
