use crate::error::{Error, Result};

/// `n x dim` node features, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != n * dim {
            return Err(Error::Data(format!(
                "{} feature values for {n} rows of width {dim}",
                rows.len()
            )));
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature at node {}",
                i / dim.max(1)
            )));
        }
        Ok(Self { n, dim, rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Data(format!(
                "row {i} has width {}, expected {dim}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.rows
    }

    /// First all-zero row, if any.
    pub fn first_zero_row(&self) -> Option<usize> {
        (0..self.n).find(|&i| self.row(i).iter().all(|&v| v == 0.0))
    }
}

/// Features, binary labels and the observed-label mask.
///
/// Labels of unlabeled nodes are kept only for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<u8>,
    pub labeled_mask: Vec<bool>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        let n = features.n();
        if labels.len() != n || ids.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows, {} labels, {} ids",
                labels.len(),
                ids.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Data(format!("label of {} must be 0 or 1", ids[i])));
        }
        Ok(Self {
            features,
            labels,
            labeled_mask: vec![true; n],
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.len() {
            return Err(Error::Data("mask length differs from node count".into()));
        }
        self.labeled_mask = mask;
        Ok(self)
    }

    pub fn unlabeled_mask(&self) -> Vec<bool> {
        self.labeled_mask.iter().map(|&m| !m).collect()
    }
}
