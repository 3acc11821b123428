//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use supnorm_core::data::{gen_domain_shift, gen_mixture_classification};
use supnorm_core::model::NormType;
use supnorm_core::Dataset;

use crate::error::{Error, Result};
use crate::formats::read_text;

/// Parameters of a synthetic dataset, tagged by generator name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Mixture {
        k: usize,
        classes: usize,
        n_per_context: usize,
        dim: usize,
        context_shift: f64,
        class_margin: f64,
        seed: u64,
    },
    /// Written as one dataset: source rows (context 0) then target rows
    /// (context 1).
    DomainShift {
        classes: usize,
        n_source: usize,
        n_target: usize,
        dim: usize,
        scale_shift: f64,
        mean_shift: f64,
        seed: u64,
    },
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            GeneratorSpec::Mixture { k, classes, n_per_context, dim, context_shift, class_margin, seed } => {
                Ok(gen_mixture_classification(k, classes, n_per_context, dim, context_shift, class_margin, seed)?)
            }
            GeneratorSpec::DomainShift { classes, n_source, n_target, dim, scale_shift, mean_shift, seed } => {
                let (source, target) = gen_domain_shift(classes, n_source, n_target, dim, scale_shift, mean_shift, seed)?;
                Ok(source.concat(&target)?)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    File { path: PathBuf },
    Generated(GeneratorSpec),
}

/// Where per-sample contexts come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContextSpec {
    /// The dataset's recorded context labels.
    #[default]
    GroundTruth,
    /// k-means clusters of the training features.
    Kmeans { k: usize },
    /// Class label `c` belongs to context `superclass_map[c]`.
    Labels { superclass_map: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train on the labeled training split, evaluate on the held-out split.
    #[default]
    Supervised,
    /// Samples of `target_context` are unlabeled during training; evaluation
    /// uses only held-out target samples.
    Adaptation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
}

fn default_alpha() -> f64 {
    supnorm_core::norm::DEFAULT_MOMENTUM
}

fn default_eps() -> f64 {
    supnorm_core::norm::DEFAULT_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(default = "default_alpha")]
    pub momentum_alpha: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub seeds: Vec<u64>,
    /// Mixture components for `mn`; defaults to the number of contexts.
    #[serde(default)]
    pub mn_components: Option<usize>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub target_context: Option<usize>,
    /// Evaluate `sbn` with contexts inferred from its running statistics.
    #[serde(default)]
    pub unknown_contexts: bool,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub contexts: ContextSpec,
    pub methods: Vec<String>,
    pub model: ModelSpec,
    pub training: TrainingSpec,
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        if inner.is_data() {
            Error::config(e.path().to_string(), inner.to_string())
        } else {
            Error::parse("config", inner)
        }
    })
}

impl ExperimentConfig {
    /// Parses and validates; a relative dataset path is kept as written.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = parse_json(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative dataset path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::from_json(&read_text(path)?)?;
        if let DatasetSpec::File { path: data } = &mut config.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn method_types(&self) -> Result<Vec<NormType>> {
        self.methods
            .iter()
            .map(|m| {
                NormType::from_name(m)
                    .ok_or_else(|| Error::config("methods", format!("unknown method {m:?}; expected bn, ln, in, mn or sbn")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        let types = self.method_types()?;
        if let Some(dup) = self.methods.iter().enumerate().find(|(i, m)| self.methods[..*i].contains(m)) {
            return Err(Error::config("methods", format!("{:?} listed twice", dup.1)));
        }
        if t.seeds.is_empty() {
            return Err(Error::config("training.seeds", "at least one seed is required"));
        }
        if t.epochs < 1 {
            return Err(Error::config("training.epochs", "must be at least 1"));
        }
        if t.batch_size < 2 {
            return Err(Error::config("training.batch_size", "must be at least 2"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::config("training.lr", "must be positive"));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::config("training.weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&t.momentum_alpha) {
            return Err(Error::config("training.momentum_alpha", "must be in [0, 1)"));
        }
        if !(t.eps > 0.0) {
            return Err(Error::config("training.eps", "must be positive"));
        }
        if t.mn_components == Some(0) {
            return Err(Error::config("training.mn_components", "must be at least 1"));
        }
        if t.threads == Some(0) {
            return Err(Error::config("training.threads", "must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be positive"));
        }
        match &self.contexts {
            ContextSpec::Kmeans { k: 0 } => return Err(Error::config("contexts.k", "must be at least 1")),
            ContextSpec::Labels { superclass_map } if superclass_map.is_empty() => {
                return Err(Error::config("contexts.superclass_map", "must map every class"))
            }
            _ => {}
        }
        if t.protocol == Protocol::Adaptation {
            if t.target_context.is_none() {
                return Err(Error::config("training.target_context", "required by the adaptation protocol"));
            }
            if self.contexts != ContextSpec::GroundTruth {
                return Err(Error::config("contexts.source", "the adaptation protocol needs ground_truth contexts"));
            }
        }
        if types.contains(&NormType::Supervised) && self.model.hidden.is_empty() {
            return Err(Error::config("model.hidden", "normalization needs at least one hidden layer"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "dataset": {"generator": "mixture", "k": 2, "classes": 2, "n_per_context": 20, "dim": 3,
                    "context_shift": 10.0, "class_margin": 2.0, "seed": 1},
        "contexts": {"source": "kmeans", "k": 2},
        "methods": ["bn", "sbn"],
        "model": {"hidden": [8]},
        "training": {"epochs": 2, "batch_size": 8, "lr": 0.001, "weight_decay": 0.0001, "seeds": [0, 1]}
    }"#;

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json(text).unwrap_err() {
            Error::BadConfig { field, .. } => field,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.contexts, ContextSpec::Kmeans { k: 2 });
        assert_eq!(c.training.momentum_alpha, 0.9);
        assert_eq!(c.training.protocol, Protocol::Supervised);
        assert_eq!(c.method_types().unwrap(), vec![NormType::Batch, NormType::Supervised]);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn violations_name_the_field() {
        assert_eq!(field_of(&BASE.replace("\"seeds\": [0, 1]", "\"seeds\": []")), "training.seeds");
        assert_eq!(field_of(&BASE.replace("\"batch_size\": 8", "\"batch_size\": 1")), "training.batch_size");
        assert_eq!(field_of(&BASE.replace("\"epochs\": 2", "\"epochs\": 0")), "training.epochs");
        assert_eq!(field_of(&BASE.replace("[\"bn\", \"sbn\"]", "[]")), "methods");
        assert_eq!(field_of(&BASE.replace("\"sbn\"", "\"gn\"")), "methods");
        assert_eq!(field_of(&BASE.replace("\"lr\"", "\"learning_rate\"")), "training.learning_rate");
        assert_eq!(field_of(&BASE.replace("\"epochs\": 2", "\"epochs\": \"two\"")), "training.epochs");
        assert_eq!(field_of(&BASE.replace("\"k\": 2}", "\"k\": 0}")), "contexts.k");
    }

    #[test]
    fn syntax_errors_are_parse_errors() {
        assert_eq!(ExperimentConfig::from_json("{\"methods\": [").unwrap_err().code(), "parse-error");
    }

    #[test]
    fn domain_shift_generator_concatenates_domains() {
        let spec = GeneratorSpec::from_json(
            r#"{"generator":"domain_shift","classes":2,"n_source":10,"n_target":6,"dim":2,
                "scale_shift":3.0,"mean_shift":5.0,"seed":4}"#,
        )
        .unwrap();
        let ds = spec.generate().unwrap();
        assert_eq!(ds.len(), 16);
        let ctx = ds.context_labels.unwrap();
        assert_eq!(ctx.iter().filter(|&&c| c == 1).count(), 6);
        assert_eq!(&ctx[..10], &[0; 10]);
    }
}
