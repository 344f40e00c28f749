use std::rc::Rc;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Mean binary cross-entropy over labeled nodes only. Probabilities are
/// clamped to `[1e-12, 1 - 1e-12]` before the logs.
pub fn masked_bce_loss(
    tape: &mut Tape,
    probabilities: Var,
    labels: &[u8],
    labeled_mask: &[bool],
) -> Result<Var> {
    let [n, c] = tape.shape(probabilities);
    if c != 1 || labels.len() != n || labeled_mask.len() != n {
        return Err(Error::shape(
            "masked_bce_loss",
            format!(
                "probabilities [{n}, {c}], {} labels, {} mask",
                labels.len(),
                labeled_mask.len()
            ),
        ));
    }
    let index: Vec<usize> = (0..n).filter(|&i| labeled_mask[i]).collect();
    if index.is_empty() {
        return Err(Error::Data("labeled set is empty".into()));
    }
    let m = index.len();
    let y: Vec<f64> = index.iter().map(|&i| f64::from(labels[i])).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();

    let p = tape.gather_rows(probabilities, Rc::from(index))?;
    let p = tape.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR)?;
    let log_p = tape.ln(p)?;
    let neg_p = tape.scale(p, -1.0)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let q = tape.add(neg_p, one)?;
    let log_q = tape.ln(q)?;
    let y = tape.constant(Tensor::column(y));
    let not_y = tape.constant(Tensor::column(not_y));
    let pos = tape.mul(log_p, y)?;
    let neg = tape.mul(log_q, not_y)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum(both)?;
    tape.scale(total, -1.0 / m as f64)
}
