use std::hash::Hasher;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Dataset, FeatureMatrix};

/// Raw documents with labels and ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub ids: Vec<String>,
    pub documents: Vec<String>,
    pub labels: Vec<u8>,
}

/// FNV-1a 64-bit hash of a token.
pub fn hash_token(token: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

fn tokens(doc: &str) -> impl Iterator<Item = String> + '_ {
    doc.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed term frequencies, L2-normalized. Tokens are lowercased runs of
/// alphanumeric characters.
pub fn featurize_hashed(ids: &[String], documents: &[String], dim: usize) -> Result<FeatureMatrix> {
    if dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    let mut rows = Vec::with_capacity(documents.len() * dim);
    for (i, doc) in documents.iter().enumerate() {
        let mut counts = vec![0.0f64; dim];
        let mut any = false;
        for t in tokens(doc) {
            counts[(hash_token(&t) % dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            let id = ids.get(i).map_or_else(|| i.to_string(), Clone::clone);
            return Err(Error::Data(format!("document {id} is empty")));
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        rows.extend(counts.into_iter().map(|c| c / norm));
    }
    FeatureMatrix::new(documents.len(), dim, rows)
}

/// Header-bearing CSV: `id,label,f0,...,f(d-1)`.
pub fn read_feature_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text)
}

pub(crate) fn parse_feature_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header: {e}")))?
        .clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Data("header must be id,label,f0,...".into()));
    }
    let dim = headers.len() - 2;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("csv: {e}")))?;
        let id = record.get(0).unwrap_or_default().to_string();
        if record.len() != dim + 2 {
            return Err(Error::Data(format!(
                "row {id} has {} feature columns, expected {dim}",
                record.len().saturating_sub(2)
            )));
        }
        let label: u8 = match &record[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Data(format!(
                    "row {id}: label {other:?} is not 0 or 1"
                )))
            }
        };
        for field in record.iter().skip(2) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {id}: bad value {field:?}")))?,
            );
        }
        ids.push(id);
        labels.push(label);
    }
    let features = FeatureMatrix::new(ids.len(), dim, values)?;
    Dataset::new(features, labels, ids)
}

/// Renders a dataset in the format [`read_feature_csv`] accepts.
pub fn feature_csv(dataset: &Dataset) -> String {
    let mut out = String::from("id,label");
    for j in 0..dataset.features.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..dataset.len() {
        out.push_str(&format!("{},{}", dataset.ids[i], dataset.labels[i]));
        for x in dataset.features.row(i) {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

/// One document per line plus a parallel file with one 0/1 label per line.
/// Ids are line numbers starting at 0.
pub fn read_text_corpus(docs: &Path, labels: &Path) -> Result<Corpus> {
    let doc_text = std::fs::read_to_string(docs).map_err(|e| Error::io(docs, e))?;
    let label_text = std::fs::read_to_string(labels).map_err(|e| Error::io(labels, e))?;
    parse_text_corpus(&doc_text, &label_text)
}

pub(crate) fn parse_text_corpus(doc_text: &str, label_text: &str) -> Result<Corpus> {
    let documents: Vec<String> = doc_text.lines().map(str::to_string).collect();
    let labels = label_text
        .lines()
        .enumerate()
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Data(format!("label line {}: {other:?}", i + 1))),
        })
        .collect::<Result<Vec<u8>>>()?;
    if labels.len() != documents.len() {
        return Err(Error::Data(format!(
            "{} documents but {} labels",
            documents.len(),
            labels.len()
        )));
    }
    let ids = (0..documents.len()).map(|i| i.to_string()).collect();
    Ok(Corpus {
        ids,
        documents,
        labels,
    })
}
