//! Layered hop/embedding network composition.
//!
//! At layer `l` the hop network (a GATv2 layer over the fixed order
//! `phi_hop`) emits logits over the orders `0..=max_order` for every node.
//! A straight-through Gumbel-Softmax draw picks one order per node, and the
//! embedding network (another GATv2 layer) aggregates over the nodes at
//! exactly that distance, plus a self-loop. Baseline mode skips the hop
//! network and always aggregates over 1-hop neighbors, which is a plain
//! GATv2 stack.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Bindings, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::HopIndex;
use crate::layers::{EdgeList, GatV2Layer, Mlp};
use crate::sampler::{gumbel_softmax_rows, uniform_open, SampleKey};

/// How gradients reach the hop network through the discrete order choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationMode {
    /// Aggregate only over the chosen order and multiply the result by a
    /// scalar whose forward value is 1 and whose gradient is the relaxed
    /// score of the chosen order.
    StraightThrough,
    /// Aggregate over every order and weight by the straight-through
    /// one-hot (forward) / relaxed scores (backward).
    DenseRelaxed,
    /// Aggregate over every order weighted by the relaxed scores in both
    /// passes. Fully differentiable; the forward pass is a soft mixture.
    DenseSoft,
}

impl RelaxationMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "straight-through" => Ok(Self::StraightThrough),
            "dense-relaxed" => Ok(Self::DenseRelaxed),
            "dense-soft" => Ok(Self::DenseSoft),
            other => Err(Error::Config(format!("unknown relaxation mode {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::StraightThrough => "straight-through",
            Self::DenseRelaxed => "dense-relaxed",
            Self::DenseSoft => "dense-soft",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NolGatConfig {
    /// Order the hop network aggregates over.
    pub phi_hop: usize,
    /// Embedding-network output width per layer; its length is the layer count.
    pub hidden: Vec<usize>,
    /// Attention heads per layer. Heads are concatenated except in the
    /// last layer, where they are averaged.
    pub heads: Vec<usize>,
    /// Heads of the hop network (averaged).
    pub phi_heads: usize,
    pub mlp_hidden: Vec<usize>,
    pub temperature: f64,
    /// Linearly anneal the temperature to 0.1 over training.
    pub anneal_temperature: bool,
    pub relaxation: RelaxationMode,
    pub baseline: bool,
    /// Evaluate with noise-free argmax order selection instead of sampling.
    pub argmax_eval: bool,
    /// Inverted dropout on each layer's input during training.
    pub dropout: f64,
}

impl Default for NolGatConfig {
    fn default() -> Self {
        Self {
            phi_hop: 1,
            hidden: vec![128, 64],
            heads: vec![4, 4],
            phi_heads: 1,
            mlp_hidden: vec![32],
            temperature: 1.0,
            anneal_temperature: false,
            relaxation: RelaxationMode::StraightThrough,
            baseline: false,
            argmax_eval: false,
            dropout: 0.0,
        }
    }
}

impl NolGatConfig {
    pub fn num_layers(&self) -> usize {
        self.hidden.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.heads.len() != self.hidden.len() {
            return Err(Error::Config(format!(
                "{} head counts for {} layers",
                self.heads.len(),
                self.hidden.len()
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.phi_heads == 0 {
            return Err(Error::Config("phi_heads must be positive".into()));
        }
        Ok(())
    }

    /// Temperature at a 1-based training epoch.
    pub fn temperature_at(&self, epoch: u64, epochs: u64) -> f64 {
        if !self.anneal_temperature || epochs <= 1 {
            return self.temperature;
        }
        let frac = (epoch.saturating_sub(1)) as f64 / (epochs - 1) as f64;
        self.temperature + (0.1 - self.temperature) * frac.min(1.0)
    }
}

/// Hop index plus per-order edge lists, built once per graph.
pub struct GraphContext {
    hop: HopIndex,
    per_order: Vec<EdgeList>,
    support: Rc<[bool]>,
}

impl GraphContext {
    pub fn new(hop: HopIndex) -> Result<Self> {
        let per_order = (0..=hop.max_order())
            .map(|r| EdgeList::with_self_loops(&hop.neighborhoods(r)?))
            .collect::<Result<Vec<_>>>()?;
        let support: Vec<bool> = (0..hop.num_nodes()).flat_map(|v| hop.support(v)).collect();
        Ok(Self {
            hop,
            per_order,
            support: support.into(),
        })
    }

    pub fn hop_index(&self) -> &HopIndex {
        &self.hop
    }

    pub fn num_nodes(&self) -> usize {
        self.hop.num_nodes()
    }

    pub fn num_orders(&self) -> usize {
        self.hop.num_orders()
    }

    /// Edge list aggregating every node over order `r` (plus self-loops).
    pub fn order_edges(&self, r: usize) -> &EdgeList {
        &self.per_order[r]
    }

    /// Flattened `[n, orders]` support mask.
    pub fn support(&self) -> Rc<[bool]> {
        self.support.clone()
    }

    /// 1-hop neighborhoods; self-loops only when the graph has no edges.
    pub fn adjacency_edges(&self) -> &EdgeList {
        &self.per_order[self.hop.max_order().min(1)]
    }
}

/// Per-pass sampling controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub seed: u64,
    pub epoch: u64,
    pub temperature: f64,
    /// Zero noise: choose the most probable supported order.
    pub argmax: bool,
    /// Enables dropout.
    pub training: bool,
}

impl ForwardOptions {
    pub fn new(seed: u64, epoch: u64, temperature: f64) -> Self {
        Self {
            seed,
            epoch,
            temperature,
            argmax: false,
            training: false,
        }
    }
}

pub struct ForwardOutput {
    /// `[n, 1]` class-1 probabilities.
    pub probabilities: Var,
    /// `chosen[l][v]`: order used by node `v` at layer `l`.
    pub chosen: Vec<Vec<usize>>,
}

const DROPOUT_STREAM: u64 = 1 << 32;

/// All learnable state of one model.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: NolGatConfig,
    pub params: ParamStore,
    pub phi: Vec<GatV2Layer>,
    pub psi: Vec<GatV2Layer>,
    pub mlp: Mlp,
    num_orders: usize,
}

impl ModelState {
    pub fn new(config: NolGatConfig, in_dim: usize, hop: &HopIndex, seed: u64) -> Result<Self> {
        config.validate()?;
        let num_orders = hop.num_orders();
        if !config.baseline && config.phi_hop > hop.max_order() {
            return Err(Error::Config(format!(
                "phi_hop {} exceeds max order {}",
                config.phi_hop,
                hop.max_order()
            )));
        }
        let mut params = ParamStore::new(seed);
        let mut phi = Vec::new();
        let mut psi = Vec::new();
        let mut width = in_dim;
        let layers = config.num_layers();
        for l in 0..layers {
            let last = l + 1 == layers;
            if !config.baseline {
                let p = GatV2Layer::new(
                    format!("phi{l}"),
                    width,
                    num_orders,
                    config.phi_heads,
                    false,
                )?;
                p.register(&mut params)?;
                phi.push(p);
            }
            let e = GatV2Layer::new(
                format!("psi{l}"),
                width,
                config.hidden[l],
                config.heads[l],
                !last,
            )?;
            e.register(&mut params)?;
            width = e.out_dim();
            psi.push(e);
        }
        let mlp = Mlp::new("mlp", width, &config.mlp_hidden)?;
        mlp.register(&mut params)?;
        Ok(Self {
            config,
            params,
            phi,
            psi,
            mlp,
            num_orders,
        })
    }

    pub fn num_orders(&self) -> usize {
        self.num_orders
    }

    fn check_context(&self, ctx: &GraphContext) -> Result<()> {
        if ctx.num_orders() != self.num_orders {
            return Err(Error::shape(
                "model",
                format!(
                    "model built for {} orders, graph has {}",
                    self.num_orders,
                    ctx.num_orders()
                ),
            ));
        }
        Ok(())
    }

    /// Hop-network logits `[n, orders]` at layer `l`.
    pub fn hop_distribution(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        l: usize,
        h_prev: Var,
        ctx: &GraphContext,
    ) -> Result<Var> {
        let phi = self
            .phi
            .get(l)
            .ok_or_else(|| Error::InvalidArgument(format!("no hop network at layer {l}")))?;
        phi.forward(tape, params, h_prev, ctx.order_edges(self.config.phi_hop))
    }

    /// Gumbel noise for layer `l`, zero on unsupported orders.
    pub fn layer_noise(&self, ctx: &GraphContext, l: usize, opts: &ForwardOptions) -> Tensor {
        let n = ctx.num_nodes();
        let g = self.num_orders;
        let mut noise = Tensor::zeros(n, g);
        if opts.argmax {
            return noise;
        }
        let support = ctx.support();
        for v in 0..n {
            let key = SampleKey {
                seed: opts.seed,
                epoch: opts.epoch,
                layer: l as u64,
                node: v as u64,
            };
            for (r, x) in key.gumbel_vector(g).into_iter().enumerate() {
                if support[v * g + r] {
                    noise.data_mut()[v * g + r] = x;
                }
            }
        }
        noise
    }

    fn dropout(&self, tape: &mut Tape, h: Var, l: usize, opts: &ForwardOptions) -> Result<Var> {
        let p = self.config.dropout;
        if !opts.training || p == 0.0 {
            return Ok(h);
        }
        let [n, d] = tape.shape(h);
        let mut rng = SampleKey {
            seed: opts.seed,
            epoch: opts.epoch,
            layer: DROPOUT_STREAM + l as u64,
            node: 0,
        }
        .rng();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n * d)
            .map(|_| {
                if uniform_open(&mut rng) < p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let m = tape.constant(Tensor::new(n, d, mask)?);
        tape.mul(h, m)
    }

    /// One layer: pick an order per node, then aggregate over it.
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        l: usize,
        h_prev: Var,
        ctx: &GraphContext,
        opts: &ForwardOptions,
    ) -> Result<(Var, Vec<usize>)> {
        self.check_context(ctx)?;
        let h_prev = self.dropout(tape, h_prev, l, opts)?;
        let psi = &self.psi[l];
        let n = ctx.num_nodes();
        if self.config.baseline {
            let out = psi.forward(tape, params, h_prev, ctx.adjacency_edges())?;
            return Ok((out, vec![1; n]));
        }
        let g = self.num_orders;
        let support = ctx.support();
        let logits = self.hop_distribution(tape, params, l, h_prev, ctx)?;
        let log_probs = tape.row_log_softmax(logits, Some(support.clone()))?;
        let noise = self.layer_noise(ctx, l, opts);
        let (relaxed, chosen) =
            gumbel_softmax_rows(tape, log_probs, &noise, opts.temperature, support)?;
        let mut hard = Tensor::zeros(n, g);
        for (v, &r) in chosen.iter().enumerate() {
            hard.data_mut()[v * g + r] = 1.0;
        }

        let h_next = match self.config.relaxation {
            RelaxationMode::StraightThrough => {
                let hop = ctx.hop_index();
                let neighborhoods: Vec<&[usize]> = chosen
                    .iter()
                    .enumerate()
                    .map(|(v, &r)| hop.ring(v, r))
                    .collect();
                let edges = EdgeList::with_self_loops(&neighborhoods)?;
                let out = psi.forward(tape, params, h_prev, &edges)?;
                let hard_var = tape.constant(hard);
                let picked = tape.mul(relaxed, hard_var)?;
                let ones = tape.constant(Tensor::filled(g, 1, 1.0));
                let picked = tape.matmul(picked, ones)?;
                let scale = tape.straight_through(picked, Tensor::filled(n, 1, 1.0))?;
                tape.mul(out, scale)?
            }
            mode => {
                let weights = if mode == RelaxationMode::DenseRelaxed {
                    tape.straight_through(relaxed, hard)?
                } else {
                    relaxed
                };
                let mut acc: Option<Var> = None;
                for r in 0..g {
                    let out = psi.forward(tape, params, h_prev, ctx.order_edges(r))?;
                    let mut unit = Tensor::zeros(g, 1);
                    unit.data_mut()[r] = 1.0;
                    let unit = tape.constant(unit);
                    let column = tape.matmul(weights, unit)?;
                    let term = tape.mul(out, column)?;
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => tape.add(prev, term)?,
                    });
                }
                acc.expect("at least one order")
            }
        };
        Ok((h_next, chosen))
    }

    /// All layers followed by the MLP head.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bindings,
        features: &Tensor,
        ctx: &GraphContext,
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.check_context(ctx)?;
        if features.rows() != ctx.num_nodes() {
            return Err(Error::shape(
                "model",
                format!(
                    "{} feature rows for {} nodes",
                    features.rows(),
                    ctx.num_nodes()
                ),
            ));
        }
        let mut h = tape.constant(features.clone());
        let mut chosen = Vec::with_capacity(self.psi.len());
        for l in 0..self.psi.len() {
            let (next, c) = self.layer_forward(tape, params, l, h, ctx, opts)?;
            h = next;
            chosen.push(c);
        }
        let probabilities = self.mlp.forward(tape, params, h)?;
        Ok(ForwardOutput {
            probabilities,
            chosen,
        })
    }

    /// Forward pass on a throwaway tape.
    pub fn predict(
        &self,
        features: &Tensor,
        ctx: &GraphContext,
        opts: &ForwardOptions,
    ) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &params, features, ctx, opts)?;
        Ok((tape.value(out.probabilities).data().to_vec(), out.chosen))
    }
}
