use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::layers::hard_labels;
use crate::model::{ForwardOptions, GraphContext, ModelState, NolGatConfig};

use super::loss::masked_bce_loss;
use super::metrics::{compute_metrics, Metrics};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: u64,
    /// Seeds both parameter initialization and the sampling streams.
    pub seed: u64,
    pub adam: AdamConfig,
    /// Record chosen orders every this many epochs (and after evaluation).
    /// `None` records nothing.
    pub chosen_orders_every: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            seed: 0,
            adam: AdamConfig::default(),
            chosen_orders_every: None,
        }
    }
}

/// One chosen-order snapshot. `epoch` 0 marks the evaluation pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChosenOrderRecord {
    pub epoch: u64,
    pub layer: usize,
    pub orders: Vec<usize>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub metrics: Metrics,
    pub loss_curve: Vec<f64>,
    /// Probabilities from the evaluation pass for every node.
    pub probabilities: Vec<f64>,
    pub chosen_orders: Vec<ChosenOrderRecord>,
}

pub(crate) fn feature_tensor(dataset: &Dataset) -> Result<Tensor> {
    let f = &dataset.features;
    Tensor::new(f.n(), f.dim(), f.data().to_vec())
}

/// Full-graph training on the labeled nodes, then evaluation on the rest.
pub fn train(
    config: &NolGatConfig,
    dataset: &Dataset,
    ctx: &GraphContext,
    labeled_mask: &[bool],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let n = dataset.len();
    if labeled_mask.len() != n || ctx.num_nodes() != n {
        return Err(Error::shape(
            "train",
            format!(
                "{n} nodes, {} mask entries, graph of {}",
                labeled_mask.len(),
                ctx.num_nodes()
            ),
        ));
    }
    let features = feature_tensor(dataset)?;
    let mut model = ModelState::new(
        config.clone(),
        dataset.features.dim(),
        ctx.hop_index(),
        opts.seed,
    )?;
    let mut adam = AdamState::new(opts.adam);
    let mut loss_curve = Vec::with_capacity(opts.epochs as usize);
    let mut chosen_orders = Vec::new();

    for epoch in 1..=opts.epochs {
        let mut fwd =
            ForwardOptions::new(opts.seed, epoch, config.temperature_at(epoch, opts.epochs));
        fwd.training = true;
        let mut tape = Tape::new();
        let bindings = model.params.bind(&mut tape);
        let out = model.forward(&mut tape, &bindings, &features, ctx, &fwd)?;
        let loss = masked_bce_loss(&mut tape, out.probabilities, &dataset.labels, labeled_mask)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {value} at epoch {epoch}"
            )));
        }
        loss_curve.push(value);
        if opts
            .chosen_orders_every
            .is_some_and(|every| every > 0 && epoch % every == 0)
        {
            record(&mut chosen_orders, epoch, out.chosen);
        }
        tape.backward(loss)?;
        model.params.collect_grads(&tape, &bindings);
        adam_step(&mut model.params, &mut adam)
            .map_err(|e| Error::Numerical(format!("epoch {epoch}: {e}")))?;
    }

    let mut eval = ForwardOptions::new(
        opts.seed,
        opts.epochs + 1,
        config.temperature_at(opts.epochs, opts.epochs),
    );
    eval.argmax = config.argmax_eval;
    let (probabilities, chosen) = model.predict(&features, ctx, &eval)?;
    if probabilities.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical(
            "non-finite probability at evaluation".into(),
        ));
    }
    if opts.chosen_orders_every.is_some() {
        record(&mut chosen_orders, 0, chosen);
    }
    let unlabeled: Vec<bool> = labeled_mask.iter().map(|m| !m).collect();
    let metrics = compute_metrics(&hard_labels(&probabilities), &dataset.labels, &unlabeled)?;
    Ok(TrainOutcome {
        model,
        metrics,
        loss_curve,
        probabilities,
        chosen_orders,
    })
}

fn record(out: &mut Vec<ChosenOrderRecord>, epoch: u64, chosen: Vec<Vec<usize>>) {
    for (layer, orders) in chosen.into_iter().enumerate() {
        out.push(ChosenOrderRecord {
            epoch,
            layer,
            orders,
        });
    }
}
