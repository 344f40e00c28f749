//! Finite-difference gradient suites shared by the test suite and the CLI.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, Bindings, GradCheckReport, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::graph::{build_hop_index, SparseGraph};
use crate::model::{ForwardOptions, GraphContext, ModelState, NolGatConfig, RelaxationMode};
use crate::pipeline::masked_bce_loss;

pub const FD_EPS: f64 = 1e-6;

type LossFn = Box<dyn Fn(&mut Tape, &Bindings) -> Result<Var>>;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// Values in [-2, 2] kept at least 0.05 away from 0, where the piecewise
/// activations have their kink.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// `sum(out * r)` with a fixed random `r`, so every output entry matters.
fn weighted_sum(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let r = tape.constant(r.clone());
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

struct OpCase {
    name: &'static str,
    params: ParamStore,
    loss: LossFn,
}

fn op_cases(seed: u64) -> Result<Vec<OpCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let mut case = |name: &'static str, inputs: Vec<(&str, Tensor)>, loss: LossFn| -> Result<()> {
        let mut params = ParamStore::new(seed);
        for (n, t) in inputs {
            params.insert(n, t)?;
        }
        cases.push(OpCase { name, params, loss });
        Ok(())
    };

    let (a, b) = (
        uniform(&mut rng, 3, 4, -2.0, 2.0),
        uniform(&mut rng, 4, 2, -2.0, 2.0),
    );
    let r = uniform(&mut rng, 3, 2, -1.0, 1.0);
    case(
        "matmul",
        vec![("a", a), ("b", b)],
        Box::new(move |t, p| {
            let y = t.matmul(p.get("a")?, p.get("b")?)?;
            weighted_sum(t, y, &r)
        }),
    )?;

    for (name, bshape) in [
        ("add", [3, 4]),
        ("add-row-broadcast", [1, 4]),
        ("add-col-broadcast", [3, 1]),
        ("add-scalar", [1, 1]),
    ] {
        let a = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let b = uniform(&mut rng, bshape[0], bshape[1], -2.0, 2.0);
        let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
        case(
            name,
            vec![("a", a), ("b", b)],
            Box::new(move |t, p| {
                let y = t.add(p.get("a")?, p.get("b")?)?;
                weighted_sum(t, y, &r)
            }),
        )?;
    }
    for (name, bshape) in [
        ("mul", [3, 4]),
        ("mul-row-broadcast", [1, 4]),
        ("mul-col-broadcast", [3, 1]),
        ("mul-scalar", [1, 1]),
    ] {
        let a = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let b = uniform(&mut rng, bshape[0], bshape[1], -2.0, 2.0);
        let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
        case(
            name,
            vec![("a", a), ("b", b)],
            Box::new(move |t, p| {
                let y = t.mul(p.get("a")?, p.get("b")?)?;
                weighted_sum(t, y, &r)
            }),
        )?;
    }

    let (a, b) = (
        uniform(&mut rng, 3, 2, -2.0, 2.0),
        uniform(&mut rng, 3, 3, -2.0, 2.0),
    );
    let r = uniform(&mut rng, 3, 5, -1.0, 1.0);
    case(
        "concat-cols",
        vec![("a", a), ("b", b)],
        Box::new(move |t, p| {
            let y = t.concat_cols(p.get("a")?, p.get("b")?)?;
            weighted_sum(t, y, &r)
        }),
    )?;

    type Unary = fn(&mut Tape, Var) -> Result<Var>;
    let unaries: [(&'static str, Unary, bool); 7] = [
        ("leaky-relu", |t, x| t.leaky_relu(x, 0.2), false),
        ("elu", |t, x| t.elu(x), false),
        ("exp", |t, x| t.exp(x), false),
        ("ln", |t, x| t.ln(x), true),
        ("sigmoid", |t, x| t.sigmoid(x), false),
        ("scale", |t, x| t.scale(x, -1.7), false),
        ("clamp", |t, x| t.clamp(x, -1.0, 1.0), false),
    ];
    for (name, f, positive) in unaries {
        let x = if positive {
            uniform(&mut rng, 3, 4, 0.1, 2.0)
        } else {
            away_from_zero(&mut rng, 3, 4)
        };
        let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
        case(
            name,
            vec![("x", x)],
            Box::new(move |t, p| {
                let y = f(t, p.get("x")?)?;
                weighted_sum(t, y, &r)
            }),
        )?;
    }

    let mask: Rc<[bool]> = Rc::from(vec![
        true, false, true, true, true, true, false, true, true, true, true, false,
    ]);
    for (name, masked) in [("row-softmax", false), ("row-softmax-masked", true)] {
        let x = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
        let m = masked.then(|| mask.clone());
        case(
            name,
            vec![("x", x)],
            Box::new(move |t, p| {
                let y = t.row_softmax(p.get("x")?, m.clone())?;
                weighted_sum(t, y, &r)
            }),
        )?;
    }
    for (name, masked) in [("row-log-softmax", false), ("row-log-softmax-masked", true)] {
        let x = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
        let m = masked.then(|| mask.clone());
        case(
            name,
            vec![("x", x)],
            Box::new(move |t, p| {
                let y = t.row_log_softmax(p.get("x")?, m.clone())?;
                // masked entries are -inf; exp maps them to an exact 0
                let y = if m.is_some() { t.exp(y)? } else { y };
                weighted_sum(t, y, &r)
            }),
        )?;
    }

    let segments: Rc<[usize]> = Rc::from(vec![0, 0, 0, 1, 2, 2]);
    let x = uniform(&mut rng, 6, 2, -2.0, 2.0);
    let r = uniform(&mut rng, 6, 2, -1.0, 1.0);
    let s = segments.clone();
    case(
        "segment-softmax",
        vec![("x", x)],
        Box::new(move |t, p| {
            let y = t.segment_softmax(p.get("x")?, s.clone())?;
            weighted_sum(t, y, &r)
        }),
    )?;
    let x = uniform(&mut rng, 6, 2, -2.0, 2.0);
    let r = uniform(&mut rng, 4, 2, -1.0, 1.0);
    let s = segments.clone();
    case(
        "segment-sum",
        vec![("x", x)],
        Box::new(move |t, p| {
            let y = t.segment_sum(p.get("x")?, s.clone(), 4)?;
            weighted_sum(t, y, &r)
        }),
    )?;
    let x = uniform(&mut rng, 4, 3, -2.0, 2.0);
    let r = uniform(&mut rng, 5, 3, -1.0, 1.0);
    let index: Rc<[usize]> = Rc::from(vec![2, 0, 2, 3, 2]);
    case(
        "gather-rows",
        vec![("x", x)],
        Box::new(move |t, p| {
            let y = t.gather_rows(p.get("x")?, index.clone())?;
            weighted_sum(t, y, &r)
        }),
    )?;
    let projected = uniform(&mut rng, 4, 3, -2.0, 2.0);
    let attention = uniform(&mut rng, 3, 1, -2.0, 2.0);
    let r = uniform(&mut rng, 4, 3, -1.0, 1.0);
    let targets: Rc<[usize]> = Rc::from(vec![0, 0, 1, 2, 2, 2, 3]);
    let sources: Rc<[usize]> = Rc::from(vec![0, 1, 1, 0, 2, 3, 3]);
    case(
        "gat-attention",
        vec![("p", projected), ("a", attention)],
        Box::new(move |t, p| {
            let y = t.gat_attention(
                p.get("p")?,
                p.get("a")?,
                targets.clone(),
                sources.clone(),
                0.2,
            )?;
            weighted_sum(t, y, &r)
        }),
    )?;
    for (name, mean) in [("sum", false), ("mean", true)] {
        let x = uniform(&mut rng, 3, 4, -2.0, 2.0);
        let r = uniform(&mut rng, 3, 4, -1.0, 1.0);
        case(
            name,
            vec![("x", x)],
            Box::new(move |t, p| {
                // square first so the reduction sees a nonconstant gradient
                let rc = t.constant(r.clone());
                let x = p.get("x")?;
                let y = t.mul(x, rc)?;
                let y = t.mul(y, x)?;
                if mean {
                    t.mean(y)
                } else {
                    t.sum(y)
                }
            }),
        )?;
    }
    Ok(cases)
}

/// One finite-difference check per differentiable operation kind.
///
/// The straight-through operation is excluded: its forward value is a
/// constant by construction, so central differences are zero while the
/// analytic gradient is the surrogate's.
pub fn op_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    op_cases(seed)?
        .into_iter()
        .map(|c| {
            let loss = c.loss;
            let report = grad_check(|t, b| loss(t, b), &c.params, FD_EPS, |_| true)?;
            Ok((c.name, report))
        })
        .collect()
}

/// Small two-layer model on a random graph, with frozen sampler noise.
pub struct ModelFixture {
    pub model: ModelState,
    pub ctx: GraphContext,
    pub features: Tensor,
    pub labels: Vec<u8>,
    pub labeled: Vec<bool>,
    pub opts: ForwardOptions,
}

impl ModelFixture {
    /// Erdős–Rényi graph with `n` nodes and edge probability 0.15,
    /// 8-dimensional features in [-1, 1].
    pub fn random(n: usize, seed: u64, relaxation: RelaxationMode) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(0.15) {
                    edges.push((u, v));
                }
            }
        }
        let graph = SparseGraph::from_edges(n, &edges)?;
        let hop = build_hop_index(&graph, 8)?;
        let features = uniform(&mut rng, n, 8, -1.0, 1.0);
        let labels = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let labeled = (0..n).map(|i| i % 2 == 0).collect();
        let config = NolGatConfig {
            hidden: vec![8, 6],
            heads: vec![2, 2],
            phi_heads: 1,
            mlp_hidden: vec![4],
            relaxation,
            ..Default::default()
        };
        let mut model = ModelState::new(config, 8, &hop, seed)?;
        // Random biases instead of zeros so their gradients are generic.
        let names: Vec<String> = model
            .params
            .names()
            .filter(|n| n.ends_with("bias"))
            .map(str::to_string)
            .collect();
        for name in names {
            for x in model.params.value_mut(&name)?.data_mut() {
                *x = rng.gen_range(-0.5..0.5);
            }
        }
        Ok(Self {
            model,
            ctx: GraphContext::new(hop)?,
            features,
            labels,
            labeled,
            opts: ForwardOptions::new(seed, 1, 1.0),
        })
    }

    pub fn loss(&self, tape: &mut Tape, params: &Bindings) -> Result<Var> {
        let out = self
            .model
            .forward(tape, params, &self.features, &self.ctx, &self.opts)?;
        masked_bce_loss(tape, out.probabilities, &self.labels, &self.labeled)
    }

    pub fn check(&self, select: impl Fn(&str) -> bool) -> Result<GradCheckReport> {
        grad_check(|t, b| self.loss(t, b), &self.model.params, FD_EPS, select)
    }
}
