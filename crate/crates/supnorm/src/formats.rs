//! JSON file formats.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, and read with exact float parsing, so every format
//! round-trips bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use supnorm_core::data::DatasetMeta;
use supnorm_core::model::{Dense, Norm, NormType};
use supnorm_core::{ChannelVector, Dataset, GmmModel, KMeansModel, Matrix, Mlp, NormState};

use crate::error::{Error, Result};

pub const DATASET_VERSION: u64 = 1;
pub const CHECKPOINT_VERSION: u64 = 1;

/// A value with a JSON file representation.
pub trait JsonFormat: Sized {
    const WHAT: &'static str;
    fn to_json(&self) -> String;
    fn from_json(text: &str) -> Result<Self>;
}

pub fn save<T: JsonFormat>(value: &T, path: &Path) -> Result<()> {
    write_atomic(path, value.to_json().as_bytes())
}

pub fn load<T: JsonFormat>(path: &Path) -> Result<T> {
    T::from_json(&read_text(path)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    save(ds, path)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    load(path)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes next to `path` and renames into place, so readers never see a
/// partially written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).and_then(|_| tmp.as_file().sync_all()).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn encode<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn decode<T: DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(what, &e))
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u64,
}

fn check_version(what: &str, text: &str, expected: u64) -> Result<()> {
    let probe: VersionProbe = decode(what, text)?;
    if probe.version != expected {
        return Err(Error::BadVersion { expected, found: probe.version });
    }
    Ok(())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, cols: usize) -> Result<Matrix> {
    if let Some(r) = rows.iter().position(|r| r.len() != cols) {
        return Err(supnorm_core::Error::ShapeMismatch(format!("row {r} has {} values, expected {cols}", rows[r].len())).into());
    }
    let n = rows.len();
    Ok(Matrix::new(n, cols, rows.into_iter().flatten().collect())?)
}

fn vectors(rows: Vec<Vec<f64>>) -> Vec<ChannelVector> {
    rows.into_iter().map(ChannelVector).collect()
}

fn plain(vs: &[ChannelVector]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.0.clone()).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    generator: String,
    k_true: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    version: u64,
    dim: usize,
    classes: usize,
    features: Vec<Vec<f64>>,
    class_labels: Vec<usize>,
    context_labels: Option<Vec<usize>>,
    meta: MetaFile,
}

impl JsonFormat for Dataset {
    const WHAT: &'static str = "dataset";

    fn to_json(&self) -> String {
        encode(&DatasetFile {
            version: DATASET_VERSION,
            dim: self.dim(),
            classes: self.class_count,
            features: self.features.to_rows(),
            class_labels: self.class_labels.clone(),
            context_labels: self.context_labels.clone(),
            meta: MetaFile { generator: self.meta.generator.clone(), k_true: self.meta.k_true, seed: self.meta.seed },
        })
    }

    fn from_json(text: &str) -> Result<Self> {
        check_version(Self::WHAT, text, DATASET_VERSION)?;
        let f: DatasetFile = decode(Self::WHAT, text)?;
        let features = matrix_from_rows(f.features, f.dim)?;
        let meta = DatasetMeta { generator: f.meta.generator, k_true: f.meta.k_true, seed: f.meta.seed };
        Ok(Dataset::new(features, f.class_labels, f.context_labels, f.classes, meta)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormStateFile {
    k: usize,
    eps: f64,
    alpha: f64,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    lambda: Vec<f64>,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
    #[serde(default)]
    batches_seen: u64,
}

impl NormStateFile {
    fn from_state(s: &NormState) -> Self {
        Self {
            k: s.k(),
            eps: s.eps,
            alpha: s.momentum_alpha,
            gamma: s.gamma.0.clone(),
            beta: s.beta.0.clone(),
            lambda: s.lambda.clone(),
            running_mean: plain(&s.running_mean),
            running_var: plain(&s.running_var),
            batches_seen: s.batches_seen,
        }
    }

    fn into_state(self) -> Result<NormState> {
        if self.k != self.lambda.len() {
            return Err(supnorm_core::Error::WrongArity { expected: self.k, got: self.lambda.len() }.into());
        }
        let state = NormState {
            gamma: ChannelVector(self.gamma),
            beta: ChannelVector(self.beta),
            eps: self.eps,
            momentum_alpha: self.alpha,
            running_mean: vectors(self.running_mean),
            running_var: vectors(self.running_var),
            lambda: self.lambda,
            batches_seen: self.batches_seen,
        };
        state.validate()?;
        Ok(state)
    }
}

impl JsonFormat for NormState {
    const WHAT: &'static str = "normalization state";

    fn to_json(&self) -> String {
        encode(&NormStateFile::from_state(self))
    }

    fn from_json(text: &str) -> Result<Self> {
        decode::<NormStateFile>(Self::WHAT, text)?.into_state()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmFile {
    k: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl GmmFile {
    fn from_model(g: &GmmModel) -> Self {
        Self { k: g.k(), weights: g.weights.clone(), means: plain(&g.means), vars: plain(&g.vars) }
    }

    fn into_model(self) -> Result<GmmModel> {
        if self.k != self.weights.len() {
            return Err(supnorm_core::Error::WrongArity { expected: self.k, got: self.weights.len() }.into());
        }
        Ok(GmmModel::new(self.weights, vectors(self.means), vectors(self.vars))?)
    }
}

impl JsonFormat for GmmModel {
    const WHAT: &'static str = "mixture model";

    fn to_json(&self) -> String {
        encode(&GmmFile::from_model(self))
    }

    fn from_json(text: &str) -> Result<Self> {
        decode::<GmmFile>(Self::WHAT, text)?.into_model()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KMeansFile {
    k: usize,
    dim: usize,
    centroids: Vec<Vec<f64>>,
    #[serde(default)]
    inertia: f64,
    #[serde(default)]
    iterations_run: usize,
}

impl JsonFormat for KMeansModel {
    const WHAT: &'static str = "k-means model";

    fn to_json(&self) -> String {
        encode(&KMeansFile {
            k: self.k(),
            dim: self.dim(),
            centroids: self.centroids.to_rows(),
            inertia: self.inertia,
            iterations_run: self.iterations_run,
        })
    }

    fn from_json(text: &str) -> Result<Self> {
        let f: KMeansFile = decode(Self::WHAT, text)?;
        if f.k != f.centroids.len() || f.k == 0 {
            return Err(supnorm_core::Error::WrongArity { expected: f.k, got: f.centroids.len() }.into());
        }
        if !(f.inertia >= 0.0) {
            return Err(supnorm_core::Error::BadParameter("inertia must be non-negative".into()).into());
        }
        Ok(KMeansModel { centroids: matrix_from_rows(f.centroids, f.dim)?, inertia: f.inertia, iterations_run: f.iterations_run })
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Activation {
    Relu,
    None,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormFile {
    kind: String,
    state: NormStateFile,
    gmm: Option<GmmFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    activation: Activation,
    norm: Option<NormFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u64,
    class_count: usize,
    layers: Vec<LayerFile>,
}

impl JsonFormat for Mlp {
    const WHAT: &'static str = "checkpoint";

    fn to_json(&self) -> String {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerFile {
                weights: l.weights.to_rows(),
                bias: l.bias.clone(),
                activation: if l.relu { Activation::Relu } else { Activation::None },
                norm: l.norm.as_ref().map(|n| NormFile {
                    kind: n.kind.name().to_string(),
                    state: NormStateFile::from_state(&n.state),
                    gmm: n.gmm.as_ref().map(GmmFile::from_model),
                }),
            })
            .collect();
        encode(&CheckpointFile { version: CHECKPOINT_VERSION, class_count: self.class_count, layers })
    }

    fn from_json(text: &str) -> Result<Self> {
        check_version(Self::WHAT, text, CHECKPOINT_VERSION)?;
        let f: CheckpointFile = decode(Self::WHAT, text)?;
        let mut layers = Vec::with_capacity(f.layers.len());
        for (i, l) in f.layers.into_iter().enumerate() {
            let cols = l.weights.first().map_or(0, Vec::len);
            let norm = match l.norm {
                None => None,
                Some(n) => {
                    let kind = NormType::from_name(&n.kind)
                        .ok_or_else(|| supnorm_core::Error::BadParameter(format!("layer {i}: unknown normalization {:?}", n.kind)))?;
                    Some(Norm { kind, state: n.state.into_state()?, gmm: n.gmm.map(GmmFile::into_model).transpose()? })
                }
            };
            layers.push(Dense { weights: matrix_from_rows(l.weights, cols)?, bias: l.bias, norm, relu: l.activation == Activation::Relu });
        }
        Ok(Mlp::from_layers(layers, f.class_count)?)
    }
}
