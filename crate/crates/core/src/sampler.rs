//! Gumbel noise, Gumbel-Softmax relaxation and straight-through
//! categorical sampling over neighborhood orders.
//!
//! The forward choice is the Gumbel-max argmax of the perturbed log
//! probabilities; the relaxed scores are the tempered softmax of the same
//! perturbed values, so `argmax(relaxed) == chosen` always holds.
//! Unsupported orders are masked at the logit level: they get zero
//! probability, zero relaxed score and zero gradient.

use std::rc::Rc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `-ln(-ln(u))` for `u` in the open unit interval.
pub fn gumbel_noise(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "uniform draw must lie in (0, 1), got {u}"
        )));
    }
    Ok(-(-u.ln()).ln())
}

/// Uniform draw in the open interval (0, 1) with 53 bits of resolution.
pub fn uniform_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Which orders are available to a node. At least one entry is true.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportMask(Vec<bool>);

impl SupportMask {
    pub fn new(mask: Vec<bool>) -> Result<Self> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument(
                "support mask has no supported entry".into(),
            ));
        }
        Ok(Self(mask))
    }

    pub fn all(len: usize) -> Self {
        Self(vec![true; len.max(1)])
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_supported(&self, i: usize) -> bool {
        self.0[i]
    }
}

/// A straight-through draw: `hard` feeds the forward pass, `relaxed`
/// carries the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct STSample {
    pub hard: Vec<f64>,
    pub relaxed: Vec<f64>,
    pub chosen: usize,
}

/// Counter-style key for sampler randomness. Each `(seed, epoch, layer,
/// node)` tuple owns an independent stream, so draws do not depend on
/// evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleKey {
    pub seed: u64,
    pub epoch: u64,
    pub layer: u64,
    pub node: u64,
}

impl SampleKey {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut bytes = [0u8; 32];
        for (chunk, word) in bytes
            .chunks_exact_mut(8)
            .zip([self.seed, self.epoch, self.layer, self.node])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }

    /// `len` Gumbel(0, 1) draws from this key's stream.
    pub fn gumbel_vector(&self, len: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..len)
            .map(|_| gumbel_noise(uniform_open(&mut rng)).expect("open-interval draw"))
            .collect()
    }
}

/// Index of the largest supported score; ties go to the lower index.
pub fn argmax_supported(scores: &[f64], mask: &SupportMask) -> usize {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if mask.is_supported(i) && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.expect("support mask has a supported entry")
}

fn check_inputs(log_probs: &[f64], mask: &SupportMask, temperature: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if log_probs.len() != mask.len() {
        return Err(Error::shape(
            "gumbel-softmax",
            format!(
                "{} log probabilities, mask of {}",
                log_probs.len(),
                mask.len()
            ),
        ));
    }
    Ok(())
}

/// Softmax of `(log_probs + noise) / temperature` over supported entries.
pub fn gumbel_softmax(
    log_probs: &[f64],
    noise: &[f64],
    temperature: f64,
    mask: &SupportMask,
) -> Result<Vec<f64>> {
    check_inputs(log_probs, mask, temperature)?;
    if noise.len() != log_probs.len() {
        return Err(Error::shape("gumbel-softmax", "noise length differs"));
    }
    let scaled: Vec<f64> = log_probs
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    let max = scaled
        .iter()
        .enumerate()
        .filter(|&(i, _)| mask.is_supported(i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if mask.is_supported(i) {
                (v - max).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Straight-through draw with fresh Gumbel noise from `rng`.
pub fn st_sample(
    log_probs: &[f64],
    temperature: f64,
    mask: &SupportMask,
    rng: &mut impl RngCore,
) -> Result<STSample> {
    check_inputs(log_probs, mask, temperature)?;
    let noise: Vec<f64> = (0..log_probs.len())
        .map(|_| gumbel_noise(uniform_open(rng)))
        .collect::<Result<_>>()?;
    st_sample_with_noise(log_probs, &noise, temperature, mask)
}

/// Straight-through draw with caller-supplied noise.
pub fn st_sample_with_noise(
    log_probs: &[f64],
    noise: &[f64],
    temperature: f64,
    mask: &SupportMask,
) -> Result<STSample> {
    let relaxed = gumbel_softmax(log_probs, noise, temperature, mask)?;
    let perturbed: Vec<f64> = log_probs.iter().zip(noise).map(|(l, g)| l + g).collect();
    let chosen = argmax_supported(&perturbed, mask);
    let mut hard = vec![0.0; log_probs.len()];
    hard[chosen] = 1.0;
    Ok(STSample {
        hard,
        relaxed,
        chosen,
    })
}

/// Row-wise Gumbel-Softmax on the tape: `log_probs` and `noise` are
/// `[n, orders]` and `mask` flattens the per-row supports. Returns the
/// relaxed scores and the chosen order of every row.
pub fn gumbel_softmax_rows(
    tape: &mut Tape,
    log_probs: Var,
    noise: &Tensor,
    temperature: f64,
    mask: Rc<[bool]>,
) -> Result<(Var, Vec<usize>)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let [n, orders] = tape.shape(log_probs);
    if noise.shape() != [n, orders] {
        return Err(Error::shape(
            "gumbel-softmax",
            "noise shape differs from log probabilities",
        ));
    }
    // masked noise stays finite; masked log-probs are -inf either way
    let noise_var = tape.constant(noise.clone());
    let perturbed = tape.add(log_probs, noise_var)?;
    let chosen = (0..n)
        .map(|r| {
            let row_mask = SupportMask::new(mask[r * orders..(r + 1) * orders].to_vec())?;
            Ok(argmax_supported(tape.value(perturbed).row(r), &row_mask))
        })
        .collect::<Result<Vec<_>>>()?;
    let scaled = tape.scale(perturbed, 1.0 / temperature)?;
    let relaxed = tape.row_softmax(scaled, Some(mask))?;
    Ok((relaxed, chosen))
}
