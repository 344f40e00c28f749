use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::graph::DEFAULT_MAX_ORDER_CAP;
use crate::model::{NolGatConfig, RelaxationMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeaturizerKind {
    /// Header-bearing CSV `id,label,f0,..` passed through unchanged.
    Precomputed,
    /// One document per line plus a parallel label file, hashed term counts.
    HashedTf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nolgat,
    Baseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nolgat => "nolgat",
            Self::Baseline => "baseline",
        }
    }
}

/// Everything one `train` invocation needs. Parsed from a flat
/// `key = value` file; `#` starts a comment, lists are comma separated,
/// relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub featurizer: FeaturizerKind,
    /// Feature CSV (precomputed).
    pub dataset: Option<PathBuf>,
    /// Document and label files (hashed-tf).
    pub documents: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Precomputed edge list; replaces the KNN sweep.
    pub edges: Option<PathBuf>,
    pub feature_dim: usize,
    pub knn_k: Vec<usize>,
    pub label_fraction: Vec<f64>,
    pub epochs: u64,
    pub repetitions: usize,
    pub seed: u64,
    pub models: Vec<ModelKind>,
    pub max_order_cap: usize,
    /// 0 disables chosen-order export.
    pub chosen_orders_every: u64,
    pub output_dir: PathBuf,
    pub model: NolGatConfig,
    pub adam: AdamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            featurizer: FeaturizerKind::Precomputed,
            dataset: None,
            documents: None,
            labels: None,
            edges: None,
            feature_dim: 500,
            knn_k: vec![3, 4, 5, 6, 7, 8],
            label_fraction: vec![0.1, 0.2, 0.3],
            epochs: 200,
            repetitions: 10,
            seed: 0,
            models: vec![ModelKind::Nolgat, ModelKind::Baseline],
            max_order_cap: DEFAULT_MAX_ORDER_CAP,
            chosen_orders_every: 0,
            output_dir: PathBuf::from("results"),
            model: NolGatConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c = Self::default();
        let path = |v: &str| base_dir.join(v);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "featurizer" => {
                    c.featurizer = match value {
                        "precomputed" => FeaturizerKind::Precomputed,
                        "hashed-tf" => FeaturizerKind::HashedTf,
                        other => {
                            return Err(Error::Config(format!("unknown featurizer {other:?}")))
                        }
                    }
                }
                "dataset" => c.dataset = Some(path(value)),
                "documents" => c.documents = Some(path(value)),
                "labels" => c.labels = Some(path(value)),
                "edges" => c.edges = Some(path(value)),
                "output_dir" => c.output_dir = path(value),
                "feature_dim" => c.feature_dim = parse_value(key, value)?,
                "knn_k" => c.knn_k = parse_list(key, value)?,
                "label_fraction" => c.label_fraction = parse_list(key, value)?,
                "epochs" => c.epochs = parse_value(key, value)?,
                "repetitions" => c.repetitions = parse_value(key, value)?,
                "seed" => c.seed = parse_value(key, value)?,
                "models" => {
                    c.models = parse_list::<String>(key, value)?
                        .iter()
                        .map(|m| match m.as_str() {
                            "nolgat" => Ok(ModelKind::Nolgat),
                            "baseline" => Ok(ModelKind::Baseline),
                            other => Err(Error::Config(format!("unknown model {other:?}"))),
                        })
                        .collect::<Result<_>>()?
                }
                "max_order_cap" => c.max_order_cap = parse_value(key, value)?,
                "chosen_orders_every" => c.chosen_orders_every = parse_value(key, value)?,
                "phi_hop" => c.model.phi_hop = parse_value(key, value)?,
                "hidden" => c.model.hidden = parse_list(key, value)?,
                "heads" => c.model.heads = parse_list(key, value)?,
                "phi_heads" => c.model.phi_heads = parse_value(key, value)?,
                "mlp_hidden" => c.model.mlp_hidden = parse_list(key, value)?,
                "temperature" => c.model.temperature = parse_value(key, value)?,
                "anneal_temperature" => c.model.anneal_temperature = parse_value(key, value)?,
                "relaxation" => c.model.relaxation = RelaxationMode::parse(value)?,
                "argmax_eval" => c.model.argmax_eval = parse_value(key, value)?,
                "dropout" => c.model.dropout = parse_value(key, value)?,
                "learning_rate" => c.adam.learning_rate = parse_value(key, value)?,
                "beta1" => c.adam.beta1 = parse_value(key, value)?,
                "beta2" => c.adam.beta2 = parse_value(key, value)?,
                "epsilon" => c.adam.epsilon = parse_value(key, value)?,
                "weight_decay" => c.adam.weight_decay = parse_value(key, value)?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.featurizer {
            FeaturizerKind::Precomputed if self.dataset.is_none() => {
                return bad("precomputed featurizer needs `dataset`".into())
            }
            FeaturizerKind::HashedTf if self.documents.is_none() || self.labels.is_none() => {
                return bad("hashed-tf featurizer needs `documents` and `labels`".into())
            }
            _ => {}
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.edges.is_none() && (self.knn_k.is_empty() || self.knn_k.contains(&0)) {
            return bad("knn_k must list positive values".into());
        }
        if self.label_fraction.is_empty()
            || self.label_fraction.iter().any(|f| !(*f > 0.0 && *f < 1.0))
        {
            return bad("every label_fraction must lie in (0, 1)".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("models must not be empty".into());
        }
        if self.max_order_cap == 0 {
            return bad("max_order_cap must be at least 1".into());
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        self.model.validate()
    }

    /// Renders the config back in the file format it was parsed from.
    pub fn to_text(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv(
            "featurizer",
            match self.featurizer {
                FeaturizerKind::Precomputed => "precomputed".into(),
                FeaturizerKind::HashedTf => "hashed-tf".into(),
            },
        );
        for (k, p) in [
            ("dataset", &self.dataset),
            ("documents", &self.documents),
            ("labels", &self.labels),
            ("edges", &self.edges),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        kv("output_dir", self.output_dir.display().to_string());
        kv("feature_dim", self.feature_dim.to_string());
        kv("knn_k", list(&self.knn_k));
        kv("label_fraction", list(&self.label_fraction));
        kv("epochs", self.epochs.to_string());
        kv("repetitions", self.repetitions.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "models",
            self.models
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("max_order_cap", self.max_order_cap.to_string());
        kv("chosen_orders_every", self.chosen_orders_every.to_string());
        let m = &self.model;
        kv("phi_hop", m.phi_hop.to_string());
        kv("hidden", list(&m.hidden));
        kv("heads", list(&m.heads));
        kv("phi_heads", m.phi_heads.to_string());
        kv("mlp_hidden", list(&m.mlp_hidden));
        kv("temperature", m.temperature.to_string());
        kv("anneal_temperature", m.anneal_temperature.to_string());
        kv("relaxation", m.relaxation.as_str().into());
        kv("argmax_eval", m.argmax_eval.to_string());
        kv("dropout", m.dropout.to_string());
        let a = &self.adam;
        kv("learning_rate", a.learning_rate.to_string());
        kv("beta1", a.beta1.to_string());
        kv("beta2", a.beta2.to_string());
        kv("epsilon", a.epsilon.to_string());
        kv("weight_decay", a.weight_decay.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "dataset = data.csv\nepochs = 5 # short\n";

    #[test]
    fn defaults_follow_the_protocol() {
        let c = ExperimentConfig::parse(BASIC, Path::new("/cfg")).unwrap();
        assert_eq!(c.knn_k, vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(c.label_fraction, vec![0.1, 0.2, 0.3]);
        assert_eq!(c.repetitions, 10);
        assert_eq!(c.feature_dim, 500);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.dataset.as_deref(), Some(Path::new("/cfg/data.csv")));
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let err = ExperimentConfig::parse("dataset = a\nlearning_rat = 0.1\n", Path::new(""))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learning_rat"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "dataset = a\nlabel_fraction = 0\n",
            "dataset = a\nlabel_fraction = 1.5\n",
            "dataset = a\nrepetitions = 0\n",
            "dataset = a\nknn_k = x\n",
            "featurizer = hashed-tf\ndocuments = d\n",
            "epochs 3\n",
            "featurizer = precomputed\n",
            "dataset = a\nrelaxation = soft\n",
        ] {
            assert!(
                ExperimentConfig::parse(text, Path::new("")).is_err(),
                "{text}"
            );
        }
    }

    #[test]
    fn text_roundtrip() {
        let text = "featurizer = hashed-tf\ndocuments = d.txt\nlabels = l.txt\nknn_k = 4,6\n\
                    models = nolgat\nrelaxation = dense-relaxed\nhidden = 16,8\nheads = 2,1\n\
                    learning_rate = 0.005\nanneal_temperature = true\n";
        let c = ExperimentConfig::parse(text, Path::new("")).unwrap();
        let again = ExperimentConfig::parse(&c.to_text(), Path::new("")).unwrap();
        assert_eq!(c, again);
    }
}
