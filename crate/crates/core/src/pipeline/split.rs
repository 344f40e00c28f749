use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Labeled/unlabeled partition.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub label_fraction: f64,
    pub labeled_mask: Vec<bool>,
}

impl SplitSpec {
    pub fn num_labeled(&self) -> usize {
        self.labeled_mask.iter().filter(|&&m| m).count()
    }
}

/// Stratified sample without replacement: each class contributes
/// `round(fraction * class_size)` labeled nodes.
pub fn make_split(labels: &[u8], fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "label fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; labels.len()];
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::Data(format!("class {class} has no members")));
        }
        let take = (fraction * members.len() as f64).round() as usize;
        if take == 0 {
            return Err(Error::Data(format!(
                "fraction {fraction} labels no member of class {class} ({} members)",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            mask[i] = true;
        }
    }
    Ok(SplitSpec {
        seed,
        label_fraction: fraction,
        labeled_mask: mask,
    })
}
