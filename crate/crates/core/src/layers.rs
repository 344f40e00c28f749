//! GATv2 attention over caller-supplied neighborhoods, and the MLP head.

use std::rc::Rc;

use crate::diffcore::{Bindings, ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const ATTENTION_SLOPE: f64 = 0.2;

/// Target-grouped `(target, source)` pairs. Every target owns at least one
/// edge, so per-target softmax segments are never empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeList {
    num_nodes: usize,
    targets: Rc<[usize]>,
    sources: Rc<[usize]>,
}

impl EdgeList {
    /// One segment per node: its listed sources followed by a self-loop.
    /// A node listing itself is not duplicated.
    pub fn with_self_loops<N: AsRef<[usize]>>(neighborhoods: &[N]) -> Result<Self> {
        let n = neighborhoods.len();
        let mut targets = Vec::new();
        let mut sources = Vec::new();
        for (v, nb) in neighborhoods.iter().enumerate() {
            for &u in nb.as_ref() {
                if u >= n {
                    return Err(Error::InvalidArgument(format!(
                        "neighbor {u} of node {v} out of range"
                    )));
                }
                if u != v {
                    targets.push(v);
                    sources.push(u);
                }
            }
            targets.push(v);
            sources.push(v);
        }
        Ok(Self {
            num_nodes: n,
            targets: targets.into(),
            sources: sources.into(),
        })
    }

    /// Explicit pairs, regrouped by target (stable within a target).
    pub fn from_pairs(num_nodes: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = pairs.to_vec();
        sorted.sort_by_key(|&(t, _)| t);
        if let Some(&(t, s)) = sorted
            .iter()
            .find(|&&(t, s)| t >= num_nodes || s >= num_nodes)
        {
            return Err(Error::InvalidArgument(format!(
                "edge ({t}, {s}) out of range"
            )));
        }
        let mut seen = vec![false; num_nodes];
        sorted.iter().for_each(|&(t, _)| seen[t] = true);
        if let Some(v) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidArgument(format!(
                "node {v} has no incoming edge"
            )));
        }
        Ok(Self {
            num_nodes,
            targets: sorted.iter().map(|&(t, _)| t).collect(),
            sources: sorted.iter().map(|&(_, s)| s).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }
}

/// Multi-head GATv2 layer. Per head: a shared projection `w`
/// (`in_dim x head_dim`), an attention vector `a` (`head_dim x 1`) and an
/// output bias (`1 x head_dim`, zero at init).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GatV2Layer {
    pub name: String,
    pub in_dim: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub concat_heads: bool,
}

impl GatV2Layer {
    /// `out_width` is the total output width: split across heads when
    /// concatenating, per head when averaging.
    pub fn new(
        name: impl Into<String>,
        in_dim: usize,
        out_width: usize,
        heads: usize,
        concat_heads: bool,
    ) -> Result<Self> {
        let name = name.into();
        if heads == 0 || out_width == 0 || in_dim == 0 {
            return Err(Error::Config(format!(
                "{name}: widths and heads must be positive"
            )));
        }
        let head_dim = if concat_heads {
            if !out_width.is_multiple_of(heads) {
                return Err(Error::Config(format!(
                    "{name}: width {out_width} not divisible by {heads} heads"
                )));
            }
            out_width / heads
        } else {
            out_width
        };
        Ok(Self {
            name,
            in_dim,
            head_dim,
            heads,
            concat_heads,
        })
    }

    pub fn out_dim(&self) -> usize {
        if self.concat_heads {
            self.head_dim * self.heads
        } else {
            self.head_dim
        }
    }

    pub fn weight_name(&self, head: usize) -> String {
        format!("{}.head{head}.w", self.name)
    }

    pub fn attention_name(&self, head: usize) -> String {
        format!("{}.head{head}.a", self.name)
    }

    pub fn bias_name(&self, head: usize) -> String {
        format!("{}.head{head}.bias", self.name)
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        for k in 0..self.heads {
            store.insert_glorot(self.weight_name(k), self.in_dim, self.head_dim)?;
            store.insert_glorot(self.attention_name(k), self.head_dim, 1)?;
            store.insert_zeros(self.bias_name(k), 1, self.head_dim)?;
        }
        Ok(())
    }

    fn check_input(&self, tape: &Tape, h: Var, edges: &EdgeList) -> Result<()> {
        let [n, d] = tape.shape(h);
        if d != self.in_dim {
            return Err(Error::shape(
                "gatv2",
                format!("{}: input width {d}, expected {}", self.name, self.in_dim),
            ));
        }
        if n != edges.num_nodes() {
            return Err(Error::shape(
                "gatv2",
                format!(
                    "{}: {n} embeddings for {} nodes",
                    self.name,
                    edges.num_nodes()
                ),
            ));
        }
        Ok(())
    }

    /// Per-edge attention logits of one head, built from primitive ops.
    fn head_logits(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        h: Var,
        edges: &EdgeList,
        head: usize,
    ) -> Result<Var> {
        let projected = tape.matmul(h, params.get(&self.weight_name(head))?)?;
        let at_target = tape.gather_rows(projected, edges.targets.clone())?;
        let at_source = tape.gather_rows(projected, edges.sources.clone())?;
        let joint = tape.add(at_target, at_source)?;
        let activated = tape.leaky_relu(joint, ATTENTION_SLOPE)?;
        tape.matmul(activated, params.get(&self.attention_name(head))?)
    }

    /// Per-edge, per-head attention logits `a . LeakyReLU(W h_v + W h_u)`,
    /// shape `[edges, heads]`.
    pub fn scores(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        h: Var,
        edges: &EdgeList,
    ) -> Result<Var> {
        self.check_input(tape, h, edges)?;
        let mut out: Option<Var> = None;
        for k in 0..self.heads {
            let logits = self.head_logits(tape, params, h, edges, k)?;
            out = Some(match out {
                None => logits,
                Some(prev) => tape.concat_cols(prev, logits)?,
            });
        }
        Ok(out.expect("at least one head"))
    }

    /// Attention-weighted aggregation per head, `ELU(sum_u alpha_vu W h_u + b)`,
    /// heads concatenated or averaged.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        h: Var,
        edges: &EdgeList,
    ) -> Result<Var> {
        self.check_input(tape, h, edges)?;
        let mut heads = Vec::with_capacity(self.heads);
        for k in 0..self.heads {
            let projected = tape.matmul(h, params.get(&self.weight_name(k))?)?;
            let aggregated = tape.gat_attention(
                projected,
                params.get(&self.attention_name(k))?,
                edges.targets.clone(),
                edges.sources.clone(),
                ATTENTION_SLOPE,
            )?;
            let biased = tape.add(aggregated, params.get(&self.bias_name(k))?)?;
            heads.push(tape.elu(biased)?);
        }
        let mut out = heads[0];
        for &next in &heads[1..] {
            out = if self.concat_heads {
                tape.concat_cols(out, next)?
            } else {
                tape.add(out, next)?
            };
        }
        if !self.concat_heads && self.heads > 1 {
            out = tape.scale(out, 1.0 / self.heads as f64)?;
        }
        Ok(out)
    }
}

/// Dense head: ELU hidden layers, logistic output of width 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub name: String,
    /// Input width, hidden widths, then 1.
    pub widths: Vec<usize>,
}

impl Mlp {
    pub fn new(name: impl Into<String>, in_dim: usize, hidden: &[usize]) -> Result<Self> {
        let name = name.into();
        if in_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!("{name}: widths must be positive")));
        }
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(Self { name, widths })
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.w", self.name)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.b", self.name)
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn register(&self, store: &mut ParamStore) -> Result<()> {
        for (i, pair) in self.widths.windows(2).enumerate() {
            store.insert_glorot(self.weight_name(i), pair[0], pair[1])?;
            store.insert_zeros(self.bias_name(i), 1, pair[1])?;
        }
        Ok(())
    }

    /// Probabilities `[n, 1]`.
    pub fn forward(&self, tape: &mut Tape, params: &Bindings, h: Var) -> Result<Var> {
        let [_, d] = tape.shape(h);
        if d != self.widths[0] {
            return Err(Error::shape(
                "mlp",
                format!("input width {d}, expected {}", self.widths[0]),
            ));
        }
        let mut x = h;
        for i in 0..self.num_layers() {
            let z = tape.matmul(x, params.get(&self.weight_name(i))?)?;
            let z = tape.add(z, params.get(&self.bias_name(i))?)?;
            x = if i + 1 == self.num_layers() {
                tape.sigmoid(z)?
            } else {
                tape.elu(z)?
            };
        }
        Ok(x)
    }
}

/// Label 1 iff probability >= 0.5.
pub fn hard_labels(probabilities: &[f64]) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn setup(layer: &GatV2Layer, seed: u64) -> ParamStore {
        let mut store = ParamStore::new(seed);
        layer.register(&mut store).unwrap();
        store
    }

    #[test]
    fn output_widths() {
        let cat = GatV2Layer::new("l", 5, 12, 4, true).unwrap();
        assert_eq!((cat.head_dim, cat.out_dim()), (3, 12));
        let avg = GatV2Layer::new("l", 5, 7, 4, false).unwrap();
        assert_eq!((avg.head_dim, avg.out_dim()), (7, 7));
        assert!(GatV2Layer::new("l", 5, 10, 4, true).is_err());
    }

    #[test]
    fn zero_attention_vector_gives_uniform_attention() {
        let layer = GatV2Layer::new("g", 3, 2, 1, true).unwrap();
        let mut store = setup(&layer, 1);
        store.value_mut("g.head0.a").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(
            Tensor::from_rows(&[
                vec![1.0, 2.0, 3.0],
                vec![0.5, -1.0, 0.0],
                vec![2.0, 2.0, -2.0],
            ])
            .unwrap(),
        );
        let edges = EdgeList::with_self_loops(&[vec![1, 2], vec![0], vec![]]).unwrap();
        let s = layer.scores(&mut tape, &b, h, &edges).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
        let alpha = tape
            .segment_softmax(s, Rc::from(edges.targets().to_vec()))
            .unwrap();
        let a = tape.value(alpha).data();
        assert!(a[..3].iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(a[3..5].iter().all(|&v| v == 0.5));
        assert_eq!(a[5], 1.0);
    }

    #[test]
    fn identical_sources_get_identical_logits() {
        let layer = GatV2Layer::new("g", 2, 4, 2, true).unwrap();
        let store = setup(&layer, 5);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(
            Tensor::from_rows(&[vec![0.3, -0.7], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
        );
        let edges = EdgeList::with_self_loops(&[vec![1, 2], vec![], vec![]]).unwrap();
        let s = layer.scores(&mut tape, &b, h, &edges).unwrap();
        let v = tape.value(s);
        assert_eq!(v.row(0), v.row(1));
    }

    #[test]
    fn empty_neighborhood_is_self_projection() {
        let layer = GatV2Layer::new("g", 2, 3, 1, true).unwrap();
        let store = setup(&layer, 2);
        let x = vec![0.4, -1.3];
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(Tensor::from_rows(&[x.clone(), vec![5.0, 5.0]]).unwrap());
        let edges = EdgeList::with_self_loops(&[Vec::<usize>::new(), vec![0]]).unwrap();
        let out = layer.forward(&mut tape, &b, h, &edges).unwrap();
        let w = store.value("g.head0.w").unwrap();
        for j in 0..3 {
            let z: f64 = (0..2).map(|i| x[i] * w.get(i, j)).sum();
            let expected = if z > 0.0 { z } else { z.exp_m1() };
            assert!((tape.value(out).get(0, j) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_features_identical_outputs() {
        let layer = GatV2Layer::new("g", 3, 4, 2, false).unwrap();
        let store = setup(&layer, 8);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(Tensor::from_rows(&vec![vec![0.2, -0.1, 0.9]; 4]).unwrap());
        let edges =
            EdgeList::with_self_loops(&[vec![1], vec![0, 2, 3], vec![], vec![1, 2]]).unwrap();
        let out = layer.forward(&mut tape, &b, h, &edges).unwrap();
        let v = tape.value(out);
        for r in 1..4 {
            for c in 0..4 {
                assert!((v.get(r, c) - v.get(0, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let layer = GatV2Layer::new("g", 3, 4, 1, true).unwrap();
        let store = setup(&layer, 0);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(Tensor::zeros(2, 2));
        let edges = EdgeList::with_self_loops(&[vec![1], vec![0]]).unwrap();
        assert!(layer.forward(&mut tape, &b, h, &edges).is_err());
    }

    #[test]
    fn from_pairs_groups_and_validates() {
        let e = EdgeList::from_pairs(2, &[(1, 0), (0, 0), (1, 1)]).unwrap();
        assert_eq!(e.targets(), &[0, 1, 1]);
        assert_eq!(e.sources(), &[0, 0, 1]);
        assert!(EdgeList::from_pairs(2, &[(0, 0)]).is_err());
    }

    #[test]
    fn mlp_zero_weights_give_half() {
        let mlp = Mlp::new("mlp", 3, &[4]).unwrap();
        let mut store = ParamStore::new(0);
        mlp.register(&mut store).unwrap();
        for name in [mlp.weight_name(0), mlp.weight_name(1)] {
            store.value_mut(&name).unwrap().data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h =
            tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 0.0, 9.0]]).unwrap());
        let p = mlp.forward(&mut tape, &b, h).unwrap();
        assert_eq!(tape.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn mlp_single_layer_logit_ten() {
        let mlp = Mlp::new("mlp", 1, &[]).unwrap();
        let mut store = ParamStore::new(0);
        mlp.register(&mut store).unwrap();
        store.value_mut("mlp.0.w").unwrap().data_mut()[0] = 5.0;
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = tape.constant(Tensor::column(vec![2.0]));
        let p = mlp.forward(&mut tape, &b, h).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((tape.value(p).data()[0] - expected).abs() < 1e-15);
        // the quoted value is rounded to five decimals
        assert!((expected - 0.99995).abs() < 5e-6);
    }

    #[test]
    fn half_probability_predicts_positive() {
        assert_eq!(hard_labels(&[0.5, 0.4999, 0.93]), vec![1, 0, 1]);
    }
}
