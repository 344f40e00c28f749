use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kind together with its attributes.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// `[m, k] x [k, n]`.
    MatMul,
    /// Second operand may broadcast as `[1, n]`, `[m, 1]` or `[1, 1]`.
    Add,
    /// Elementwise product, same broadcasting as [`Op::Add`].
    Mul,
    /// Concatenation along the last axis.
    ConcatCols,
    LeakyRelu {
        slope: f64,
    },
    Elu,
    Exp,
    Ln,
    Sigmoid,
    /// Softmax along each row. Masked-out entries (`false`) are excluded
    /// from the normalization, produce exactly 0 and receive zero gradient.
    RowSoftmax {
        mask: Option<Rc<[bool]>>,
    },
    /// Log-softmax along each row. Masked-out entries produce `-inf` and
    /// receive zero gradient.
    RowLogSoftmax {
        mask: Option<Rc<[bool]>>,
    },
    /// Softmax over rows sharing a segment id, independently per column.
    /// Segment ids must be nondecreasing with one id per row.
    SegmentSoftmax {
        segments: Rc<[usize]>,
    },
    /// Sums rows sharing a segment id into `num_segments` output rows.
    SegmentSum {
        segments: Rc<[usize]>,
        num_segments: usize,
    },
    /// Output row `i` is input row `index[i]`.
    GatherRows {
        index: Rc<[usize]>,
    },
    Scale {
        factor: f64,
    },
    Mean,
    Sum,
    /// Clamp into `[lo, hi]`; gradient passes only strictly inside.
    Clamp {
        lo: f64,
        hi: f64,
    },
    /// Forward value is `forward`, backward is the identity onto the input.
    StraightThrough {
        forward: Rc<Tensor>,
    },
    /// Fused GATv2 attention aggregation over an edge list sorted by target.
    /// Inputs are projected features `p` `[n, d]` and the attention vector
    /// `a` `[d, 1]`; edge `e` scores `a . LeakyReLU(p[t_e] + p[s_e])`, scores
    /// are softmax-normalized per target and output row `v` is the weighted
    /// sum of `p[s_e]` over the edges into `v`. Rows without edges are 0.
    GatAttention {
        targets: Rc<[usize]>,
        sources: Rc<[usize]>,
        slope: f64,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::ConcatCols => "concat",
            Op::LeakyRelu { .. } => "leaky-relu",
            Op::Elu => "elu",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sigmoid => "sigmoid",
            Op::RowSoftmax { .. } => "row-softmax",
            Op::RowLogSoftmax { .. } => "row-log-softmax",
            Op::SegmentSoftmax { .. } => "segment-softmax",
            Op::SegmentSum { .. } => "segment-sum",
            Op::GatherRows { .. } => "gather-rows",
            Op::Scale { .. } => "scale",
            Op::Mean => "mean",
            Op::Sum => "sum",
            Op::Clamp { .. } => "clamp",
            Op::StraightThrough { .. } => "straight-through",
            Op::GatAttention { .. } => "gat-attention",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf => 0,
            Op::MatMul | Op::Add | Op::Mul | Op::ConcatCols | Op::GatAttention { .. } => 2,
            _ => 1,
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    parents: Vec<Var>,
    requires_grad: bool,
}

/// Records one forward pass. Dropped and rebuilt every step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            parents,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Vec::new(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].parents
    }

    /// Accumulated gradient; zeros when the node was never reached.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()))
    }

    /// Evaluates `op` on `inputs` and records it.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::shape(
                op.name(),
                format!("expected {} inputs, got {}", op.arity(), inputs.len()),
            ));
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(out, op, inputs.to_vec(), requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::ConcatCols, &[a, b])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.apply(Op::LeakyRelu { slope }, &[x])
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Elu, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Exp, &[x])
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Ln, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn row_softmax(&mut self, x: Var, mask: Option<Rc<[bool]>>) -> Result<Var> {
        self.apply(Op::RowSoftmax { mask }, &[x])
    }

    pub fn row_log_softmax(&mut self, x: Var, mask: Option<Rc<[bool]>>) -> Result<Var> {
        self.apply(Op::RowLogSoftmax { mask }, &[x])
    }

    pub fn segment_softmax(&mut self, x: Var, segments: Rc<[usize]>) -> Result<Var> {
        self.apply(Op::SegmentSoftmax { segments }, &[x])
    }

    pub fn segment_sum(
        &mut self,
        x: Var,
        segments: Rc<[usize]>,
        num_segments: usize,
    ) -> Result<Var> {
        self.apply(
            Op::SegmentSum {
                segments,
                num_segments,
            },
            &[x],
        )
    }

    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        self.apply(Op::GatherRows { index }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(Op::Scale { factor }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Sum, &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Op::Clamp { lo, hi }, &[x])
    }

    pub fn straight_through(&mut self, surrogate: Var, forward: Tensor) -> Result<Var> {
        self.apply(
            Op::StraightThrough {
                forward: Rc::new(forward),
            },
            &[surrogate],
        )
    }

    pub fn gat_attention(
        &mut self,
        projected: Var,
        attention: Var,
        targets: Rc<[usize]>,
        sources: Rc<[usize]>,
        slope: f64,
    ) -> Result<Var> {
        self.apply(
            Op::GatAttention {
                targets,
                sources,
                slope,
            },
            &[projected, attention],
        )
    }

    /// Reverse sweep from a scalar root. Gradients accumulate into every
    /// node that requires them; call on a fresh tape for fresh gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != [1, 1] {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {shape:?}"),
            ));
        }
        for node in &mut self.nodes[..=root.0] {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let Some(upstream) = node.grad.as_ref() else {
                continue;
            };
            let parents = node.parents.clone();
            let inputs: Vec<&Tensor> = parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let contribs = vjp(&node.op, &inputs, &node.value, upstream);
            for (parent, contrib) in parents.iter().zip(contribs) {
                let target = &mut self.nodes[parent.0];
                if !target.requires_grad {
                    continue;
                }
                match target.grad.as_mut() {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(contrib.data())
                        .for_each(|(a, c)| *a += c),
                    None => target.grad = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    (b.rows() == a.rows() || b.rows() == 1) && (b.cols() == a.cols() || b.cols() == 1)
}

#[inline]
fn bidx(b: &Tensor, r: usize, c: usize) -> usize {
    let br = if b.rows() == 1 { 0 } else { r };
    let bc = if b.cols() == 1 { 0 } else { c };
    br * b.cols() + bc
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn check_segments(op: &'static str, segments: &[usize], rows: usize) -> Result<()> {
    if segments.len() != rows {
        return Err(Error::shape(
            op,
            format!("{} segment ids for {rows} rows", segments.len()),
        ));
    }
    if segments.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(format!(
            "{op}: segment ids must be nondecreasing"
        )));
    }
    Ok(())
}

fn check_gat(
    op: &'static str,
    p: &Tensor,
    a: &Tensor,
    targets: &[usize],
    sources: &[usize],
) -> Result<()> {
    if a.shape() != [p.cols(), 1] {
        return Err(Error::shape(
            op,
            format!("attention {:?} for features {:?}", a.shape(), p.shape()),
        ));
    }
    if targets.len() != sources.len() {
        return Err(Error::shape(
            op,
            format!("{} targets vs {} sources", targets.len(), sources.len()),
        ));
    }
    check_segments(op, targets, targets.len())?;
    if let Some(&bad) = targets.iter().chain(sources).find(|&&i| i >= p.rows()) {
        return Err(Error::shape(
            op,
            format!("node {bad} out of {} rows", p.rows()),
        ));
    }
    Ok(())
}

/// Per-edge attention weights: segment softmax of the GATv2 scores.
fn gat_alpha(p: &Tensor, a: &Tensor, targets: &[usize], sources: &[usize], slope: f64) -> Vec<f64> {
    let d = p.cols();
    let a = a.data();
    let mut alpha: Vec<f64> = targets
        .iter()
        .zip(sources)
        .map(|(&t, &s)| {
            let (pt, ps) = (p.row(t), p.row(s));
            (0..d)
                .map(|k| {
                    let z = pt[k] + ps[k];
                    a[k] * if z > 0.0 { z } else { slope * z }
                })
                .sum()
        })
        .collect();
    for (s, e) in segment_runs(targets) {
        let max = alpha[s..e]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in &mut alpha[s..e] {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in &mut alpha[s..e] {
            *x /= total;
        }
    }
    alpha
}

/// Contiguous `[start, end)` row ranges, one per run of equal segment ids.
fn segment_runs(segments: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=segments.len() {
        if i == segments.len() || segments[i] != segments[start] {
            runs.push((start, i));
            start = i;
        }
    }
    runs
}

fn check_mask(op: &'static str, mask: &Option<Rc<[bool]>>, x: &Tensor) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::shape(
                op,
                format!("mask of {} entries for shape {:?}", m.len(), x.shape()),
            ));
        }
    }
    Ok(())
}

fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let name = op.name();
    let out = match op {
        Op::Leaf => unreachable!("leaves are not applied"),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.cols() != b.rows() {
                return Err(Error::shape(
                    name,
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            gemm(a, false, b, false)
        }
        Op::Add | Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if !broadcast_ok(a, b) {
                return Err(Error::shape(
                    name,
                    format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape()),
                ));
            }
            let mut out = a.clone();
            let cols = a.cols();
            for r in 0..a.rows() {
                for c in 0..cols {
                    let bv = b.data()[bidx(b, r, c)];
                    let o = &mut out.data_mut()[r * cols + c];
                    if matches!(op, Op::Add) {
                        *o += bv;
                    } else {
                        *o *= bv;
                    }
                }
            }
            out
        }
        Op::ConcatCols => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rows() != b.rows() {
                return Err(Error::shape(
                    name,
                    format!("{:?} with {:?}", a.shape(), b.shape()),
                ));
            }
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Tensor::new(a.rows(), a.cols() + b.cols(), data)?
        }
        Op::LeakyRelu { slope } => {
            let s = *slope;
            map(inputs[0], |v| if v > 0.0 { v } else { s * v })
        }
        Op::Elu => map(inputs[0], |v| if v > 0.0 { v } else { v.exp_m1() }),
        Op::Exp => map(inputs[0], f64::exp),
        Op::Ln => map(inputs[0], f64::ln),
        Op::Sigmoid => map(inputs[0], sigmoid),
        Op::RowSoftmax { mask } => {
            let x = inputs[0];
            check_mask(name, mask, x)?;
            let mut out = Tensor::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * x.cols() + c]);
                let row = x.row(r);
                let max = (0..x.cols())
                    .filter(|&c| keep(c))
                    .map(|c| row[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                let o = &mut out.data_mut()[r * x.cols()..(r + 1) * x.cols()];
                let mut total = 0.0;
                for c in 0..x.cols() {
                    if keep(c) {
                        o[c] = (row[c] - max).exp();
                        total += o[c];
                    }
                }
                o.iter_mut().for_each(|v| *v /= total);
            }
            out
        }
        Op::RowLogSoftmax { mask } => {
            let x = inputs[0];
            check_mask(name, mask, x)?;
            let mut out = Tensor::filled(x.rows(), x.cols(), f64::NEG_INFINITY);
            for r in 0..x.rows() {
                let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * x.cols() + c]);
                let row = x.row(r);
                let max = (0..x.cols())
                    .filter(|&c| keep(c))
                    .map(|c| row[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = (0..x.cols())
                    .filter(|&c| keep(c))
                    .map(|c| (row[c] - max).exp())
                    .sum();
                let lse = max + total.ln();
                for c in 0..x.cols() {
                    if keep(c) {
                        out.data_mut()[r * x.cols() + c] = row[c] - lse;
                    }
                }
            }
            out
        }
        Op::SegmentSoftmax { segments } => {
            let x = inputs[0];
            check_segments(name, segments, x.rows())?;
            let cols = x.cols();
            let mut out = Tensor::zeros(x.rows(), cols);
            for (s, e) in segment_runs(segments) {
                for c in 0..cols {
                    let max = (s..e)
                        .map(|r| x.data()[r * cols + c])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for r in s..e {
                        let v = (x.data()[r * cols + c] - max).exp();
                        out.data_mut()[r * cols + c] = v;
                        total += v;
                    }
                    for r in s..e {
                        out.data_mut()[r * cols + c] /= total;
                    }
                }
            }
            out
        }
        Op::SegmentSum {
            segments,
            num_segments,
        } => {
            let x = inputs[0];
            check_segments(name, segments, x.rows())?;
            if let Some(&last) = segments.last() {
                if last >= *num_segments {
                    return Err(Error::shape(
                        name,
                        format!("segment id {last} >= {num_segments} segments"),
                    ));
                }
            }
            let cols = x.cols();
            let mut out = Tensor::zeros(*num_segments, cols);
            for (r, &s) in segments.iter().enumerate() {
                let src = x.row(r);
                let dst = &mut out.data_mut()[s * cols..(s + 1) * cols];
                dst.iter_mut().zip(src).for_each(|(d, v)| *d += v);
            }
            out
        }
        Op::GatherRows { index } => {
            let x = inputs[0];
            if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::shape(
                    name,
                    format!("row index {bad} out of {} rows", x.rows()),
                ));
            }
            let mut data = Vec::with_capacity(index.len() * x.cols());
            for &i in index.iter() {
                data.extend_from_slice(x.row(i));
            }
            Tensor::new(index.len(), x.cols(), data)?
        }
        Op::Scale { factor } => {
            let f = *factor;
            map(inputs[0], |v| v * f)
        }
        Op::Mean => {
            let x = inputs[0];
            if x.is_empty() {
                return Err(Error::shape(name, "mean of empty tensor"));
            }
            Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        }
        Op::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            map(inputs[0], |v| v.clamp(lo, hi))
        }
        Op::GatAttention {
            targets,
            sources,
            slope,
        } => {
            let (p, a) = (inputs[0], inputs[1]);
            check_gat(name, p, a, targets, sources)?;
            let alpha = gat_alpha(p, a, targets, sources, *slope);
            let d = p.cols();
            let mut out = Tensor::zeros(p.rows(), d);
            for ((&t, &s), &w) in targets.iter().zip(sources.iter()).zip(&alpha) {
                let src = p.row(s);
                let dst = &mut out.data_mut()[t * d..(t + 1) * d];
                dst.iter_mut().zip(src).for_each(|(o, v)| *o += w * v);
            }
            out
        }
        Op::StraightThrough { forward } => {
            if forward.shape() != inputs[0].shape() {
                return Err(Error::shape(
                    name,
                    format!(
                        "forward value {:?} vs surrogate {:?}",
                        forward.shape(),
                        inputs[0].shape()
                    ),
                ));
            }
            (**forward).clone()
        }
    };
    Ok(out)
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Reduces a gradient shaped like `a` onto the (possibly broadcast) shape of `b`.
fn reduce_to(b: &Tensor, full: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(b.rows(), b.cols());
    for r in 0..full.rows() {
        for c in 0..full.cols() {
            out.data_mut()[bidx(b, r, c)] += full.data()[r * full.cols() + c];
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.rows(),
        a.cols(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("same shape")
}

/// Vector-Jacobian products, one per input.
fn vjp(op: &Op, inputs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Tensor> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![gemm(g, false, b, true), gemm(a, true, g, false)]
        }
        Op::Add => vec![g.clone(), reduce_to(inputs[1], g)],
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let cols = a.cols();
            let mut ga = g.clone();
            let mut gb_full = g.clone();
            for r in 0..a.rows() {
                for c in 0..cols {
                    let i = r * cols + c;
                    ga.data_mut()[i] *= b.data()[bidx(b, r, c)];
                    gb_full.data_mut()[i] *= a.data()[i];
                }
            }
            vec![ga, reduce_to(b, &gb_full)]
        }
        Op::ConcatCols => {
            let (a, b) = (inputs[0], inputs[1]);
            let mut ga = Vec::with_capacity(a.len());
            let mut gb = Vec::with_capacity(b.len());
            for r in 0..g.rows() {
                let row = g.row(r);
                ga.extend_from_slice(&row[..a.cols()]);
                gb.extend_from_slice(&row[a.cols()..]);
            }
            vec![
                Tensor::new(a.rows(), a.cols(), ga).expect("shape"),
                Tensor::new(b.rows(), b.cols(), gb).expect("shape"),
            ]
        }
        Op::LeakyRelu { slope } => {
            vec![zip_map(
                inputs[0],
                g,
                |x, gv| if x > 0.0 { gv } else { slope * gv },
            )]
        }
        Op::Elu => vec![zip_map(inputs[0], g, |x, gv| {
            if x > 0.0 {
                gv
            } else {
                gv * x.exp()
            }
        })],
        Op::Exp => vec![zip_map(out, g, |y, gv| y * gv)],
        Op::Ln => vec![zip_map(inputs[0], g, |x, gv| gv / x)],
        Op::Sigmoid => vec![zip_map(out, g, |y, gv| gv * y * (1.0 - y))],
        Op::RowSoftmax { mask } => {
            let cols = out.cols();
            let mut gx = Tensor::zeros(out.rows(), cols);
            for r in 0..out.rows() {
                let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * cols + c]);
                let y = out.row(r);
                let gr = g.row(r);
                let dot: f64 = (0..cols).filter(|&c| keep(c)).map(|c| y[c] * gr[c]).sum();
                for c in (0..cols).filter(|&c| keep(c)) {
                    gx.data_mut()[r * cols + c] = y[c] * (gr[c] - dot);
                }
            }
            vec![gx]
        }
        Op::RowLogSoftmax { mask } => {
            let cols = out.cols();
            let mut gx = Tensor::zeros(out.rows(), cols);
            for r in 0..out.rows() {
                let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * cols + c]);
                let y = out.row(r);
                let gr = g.row(r);
                let total: f64 = (0..cols).filter(|&c| keep(c)).map(|c| gr[c]).sum();
                for c in (0..cols).filter(|&c| keep(c)) {
                    gx.data_mut()[r * cols + c] = gr[c] - y[c].exp() * total;
                }
            }
            vec![gx]
        }
        Op::SegmentSoftmax { segments } => {
            let cols = out.cols();
            let mut gx = Tensor::zeros(out.rows(), cols);
            for (s, e) in segment_runs(segments) {
                for c in 0..cols {
                    let dot: f64 = (s..e)
                        .map(|r| out.data()[r * cols + c] * g.data()[r * cols + c])
                        .sum();
                    for r in s..e {
                        let i = r * cols + c;
                        gx.data_mut()[i] = out.data()[i] * (g.data()[i] - dot);
                    }
                }
            }
            vec![gx]
        }
        Op::SegmentSum { segments, .. } => {
            let cols = g.cols();
            let mut data = Vec::with_capacity(segments.len() * cols);
            for &s in segments.iter() {
                data.extend_from_slice(g.row(s));
            }
            vec![Tensor::new(segments.len(), cols, data).expect("shape")]
        }
        Op::GatherRows { index } => {
            let x = inputs[0];
            let cols = x.cols();
            let mut gx = Tensor::zeros(x.rows(), cols);
            for (r, &i) in index.iter().enumerate() {
                let dst = &mut gx.data_mut()[i * cols..(i + 1) * cols];
                dst.iter_mut().zip(g.row(r)).for_each(|(d, v)| *d += v);
            }
            vec![gx]
        }
        Op::Scale { factor } => vec![map(g, |v| v * factor)],
        Op::Mean => {
            let x = inputs[0];
            let v = g.data()[0] / x.len() as f64;
            vec![Tensor::filled(x.rows(), x.cols(), v)]
        }
        Op::Sum => {
            let x = inputs[0];
            vec![Tensor::filled(x.rows(), x.cols(), g.data()[0])]
        }
        Op::Clamp { lo, hi } => vec![zip_map(inputs[0], g, |x, gv| {
            if x > *lo && x < *hi {
                gv
            } else {
                0.0
            }
        })],
        Op::StraightThrough { .. } => vec![g.clone()],
        Op::GatAttention {
            targets,
            sources,
            slope,
        } => {
            let (p, a) = (inputs[0], inputs[1]);
            let d = p.cols();
            let alpha = gat_alpha(p, a, targets, sources, *slope);
            let mut gp = Tensor::zeros(p.rows(), d);
            let mut ga = vec![0.0; d];
            // d loss / d alpha_e, and the direct message path
            let mut dalpha: Vec<f64> = Vec::with_capacity(alpha.len());
            for ((&t, &s), &w) in targets.iter().zip(sources.iter()).zip(&alpha) {
                let gt = g.row(t);
                dalpha.push(gt.iter().zip(p.row(s)).map(|(x, y)| x * y).sum());
                let dst = &mut gp.data_mut()[s * d..(s + 1) * d];
                dst.iter_mut().zip(gt).for_each(|(o, v)| *o += w * v);
            }
            // through the softmax onto the scores
            for (s, e) in segment_runs(targets) {
                let dot: f64 = (s..e).map(|i| alpha[i] * dalpha[i]).sum();
                for i in s..e {
                    dalpha[i] = alpha[i] * (dalpha[i] - dot);
                }
            }
            let av = a.data();
            let mut dz = vec![0.0; d];
            for ((&t, &s), &ds) in targets.iter().zip(sources.iter()).zip(&dalpha) {
                let (pt, ps) = (p.row(t), p.row(s));
                for k in 0..d {
                    let z = pt[k] + ps[k];
                    let (act, slope_k) = if z > 0.0 {
                        (z, 1.0)
                    } else {
                        (slope * z, *slope)
                    };
                    ga[k] += ds * act;
                    dz[k] = ds * av[k] * slope_k;
                }
                for (o, v) in gp.data_mut()[t * d..(t + 1) * d].iter_mut().zip(&dz) {
                    *o += v;
                }
                for (o, v) in gp.data_mut()[s * d..(s + 1) * d].iter_mut().zip(&dz) {
                    *o += v;
                }
            }
            vec![gp, Tensor::new(d, 1, ga).expect("shape")]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn row_softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![0.0, 0.0]]));
        let y = tape.row_softmax(x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0, 2.0]]));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.2, 2.0]);
    }

    #[test]
    fn segment_softmax_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![1.0, 1.0, 1.0]));
        let y = tape.segment_softmax(x, Rc::from(vec![0, 0, 1])).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5, 1.0]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_entries() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![0.3, 5.0, 0.3]]));
        let y = tape
            .row_softmax(x, Some(Rc::from(vec![true, false, true])))
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.0, 0.5]);
        let w = tape.constant(t(&[vec![1.0], vec![7.0], vec![-2.0]]));
        let s = tape.matmul(y, w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data()[1], 0.0);
    }

    #[test]
    fn backward_quadratic() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0, 3.0]]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![0.3, -7.0], vec![2.0, 1.5]]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[1.0; 4]);
    }

    #[test]
    fn disconnected_param_has_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0]]));
        let p = tape.param(t(&[vec![5.0]]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(p).data(), &[0.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        // f(x) = x*x + x, f'(x) = 2x + 1
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let f = tape.add(sq, x).unwrap();
        tape.backward(f).unwrap();
        assert_eq!(tape.value(f).data(), &[12.0]);
        assert_eq!(tape.grad(x).data(), &[7.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![1.0, 2.0]]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn segment_ids_must_be_sorted() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::column(vec![1.0, 2.0]));
        assert!(tape.segment_softmax(x, Rc::from(vec![1, 0])).is_err());
        assert!(tape.segment_sum(x, Rc::from(vec![0]), 1).is_err());
    }

    #[test]
    fn ln_propagates_ieee() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[vec![-1.0, 0.0]]));
        let y = tape.ln(x).unwrap();
        assert!(tape.value(y).data()[0].is_nan());
        assert_eq!(tape.value(y).data()[1], f64::NEG_INFINITY);
    }

    #[test]
    fn straight_through_forward_and_backward() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[vec![0.2, 0.8]]));
        let y = tape.straight_through(x, t(&[vec![0.0, 1.0]])).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 1.0]);
        let w = tape.constant(t(&[vec![3.0], vec![-1.0]]));
        let s = tape.matmul(y, w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).data(), &[3.0, -1.0]);
    }

    #[test]
    fn gat_attention_matches_composed_ops() {
        let p_val = t(&[vec![0.3, -1.2], vec![1.5, 0.4], vec![-0.7, 0.9]]);
        let a_val = t(&[vec![0.8], vec![-1.1]]);
        let targets: Rc<[usize]> = Rc::from(vec![0, 0, 1, 2, 2, 2]);
        let sources: Rc<[usize]> = Rc::from(vec![0, 2, 1, 0, 1, 2]);

        let mut fused = Tape::new();
        let p = fused.param(p_val.clone());
        let a = fused.param(a_val.clone());
        let y = fused
            .gat_attention(p, a, targets.clone(), sources.clone(), 0.2)
            .unwrap();
        let l = fused.sum(y).unwrap();
        fused.backward(l).unwrap();

        let mut plain = Tape::new();
        let p2 = plain.param(p_val);
        let a2 = plain.param(a_val);
        let pt = plain.gather_rows(p2, targets.clone()).unwrap();
        let ps = plain.gather_rows(p2, sources.clone()).unwrap();
        let z = plain.add(pt, ps).unwrap();
        let z = plain.leaky_relu(z, 0.2).unwrap();
        let logits = plain.matmul(z, a2).unwrap();
        let alpha = plain.segment_softmax(logits, targets.clone()).unwrap();
        let msg = plain.mul(ps, alpha).unwrap();
        let y2 = plain.segment_sum(msg, targets, 3).unwrap();
        let l2 = plain.sum(y2).unwrap();
        plain.backward(l2).unwrap();

        let close = |x: &Tensor, y: &Tensor| {
            x.data()
                .iter()
                .zip(y.data())
                .all(|(a, b)| (a - b).abs() < 1e-14)
        };
        assert!(close(fused.value(y), plain.value(y2)));
        assert!(close(&fused.grad(p), &plain.grad(p2)));
        assert!(close(&fused.grad(a), &plain.grad(a2)));
    }

    #[test]
    fn gat_attention_validates_edges() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::zeros(2, 2));
        let a = tape.param(Tensor::zeros(2, 1));
        let bad_a = tape.param(Tensor::zeros(3, 1));
        assert!(tape
            .gat_attention(p, bad_a, Rc::from(vec![0]), Rc::from(vec![0]), 0.2)
            .is_err());
        assert!(tape
            .gat_attention(p, a, Rc::from(vec![1, 0]), Rc::from(vec![0, 0]), 0.2)
            .is_err());
        assert!(tape
            .gat_attention(p, a, Rc::from(vec![0]), Rc::from(vec![2]), 0.2)
            .is_err());
        assert!(tape
            .gat_attention(p, a, Rc::from(vec![0]), Rc::from(vec![0, 1]), 0.2)
            .is_err());
    }
}
