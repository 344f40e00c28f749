use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Dataset, FeatureMatrix, SparseGraph};

use super::featurize::Corpus;

/// Noise features appended after the planted bit.
const LONGRANGE_NOISE_DIMS: usize = 7;
const LONGRANGE_NOISE_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LongRangeBenchmark {
    pub dataset: Dataset,
    pub graph: SparseGraph,
    pub distance: usize,
}

/// Disjoint paths of `2 * distance` nodes. Feature 0 of every node is its
/// own random bit (±1); the rest is small seeded noise. A node's label is
/// the bit of the unique node exactly `distance` hops away on its path, so
/// every node is labeled and no model with a smaller receptive field can do
/// better than chance.
///
/// The node count is rounded down to a multiple of `2 * distance`.
pub fn synth_longrange(n_nodes: usize, distance: usize, seed: u64) -> Result<LongRangeBenchmark> {
    if distance == 0 {
        return Err(Error::InvalidArgument("distance must be at least 1".into()));
    }
    if n_nodes < 4 * distance {
        return Err(Error::InvalidArgument(format!(
            "need at least {} nodes for distance {distance}, got {n_nodes}",
            4 * distance
        )));
    }
    let path_len = 2 * distance;
    let n = n_nodes / path_len * path_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();

    let dim = 1 + LONGRANGE_NOISE_DIMS;
    let mut rows = Vec::with_capacity(n * dim);
    for &b in &bits {
        rows.push(if b == 1 { 1.0 } else { -1.0 });
        for _ in 0..LONGRANGE_NOISE_DIMS {
            rows.push(rng.gen_range(-LONGRANGE_NOISE_SCALE..LONGRANGE_NOISE_SCALE));
        }
    }

    let mut edges = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for start in (0..n).step_by(path_len) {
        for i in 0..path_len {
            if i + 1 < path_len {
                edges.push((start + i, start + i + 1));
            }
            let partner = if i < distance {
                i + distance
            } else {
                i - distance
            };
            labels.push(bits[start + partner]);
        }
    }
    let ids = (0..n).map(|i| format!("n{i}")).collect();
    Ok(LongRangeBenchmark {
        dataset: Dataset::new(FeatureMatrix::new(n, dim, rows)?, labels, ids)?,
        graph: SparseGraph::from_edges(n, &edges)?,
        distance,
    })
}

const SHARED_VOCAB: usize = 300;
const TOPIC_VOCAB: usize = 40;
const TOPIC_RATE: f64 = 0.12;

/// Two-class synthetic text corpus. Documents mix a shared vocabulary with
/// a class-specific one; classes are balanced.
pub fn synth_corpus(n_docs: usize, seed: u64) -> Result<Corpus> {
    if n_docs < 2 {
        return Err(Error::InvalidArgument("need at least two documents".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..n_docs).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    let documents = labels
        .iter()
        .map(|&y| {
            let len = rng.gen_range(20..40);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(TOPIC_RATE) {
                        let t = rng.gen_range(0..TOPIC_VOCAB);
                        if y == 1 {
                            format!("claim{t}")
                        } else {
                            format!("report{t}")
                        }
                    } else {
                        // Zipf-ish: squares favour low indices.
                        let u: f64 = rng.gen();
                        format!("w{}", (u * u * SHARED_VOCAB as f64) as usize)
                    }
                })
                .collect();
            words.join(" ")
        })
        .collect();
    let ids = (0..n_docs).map(|i| i.to_string()).collect();
    Ok(Corpus {
        ids,
        documents,
        labels,
    })
}
