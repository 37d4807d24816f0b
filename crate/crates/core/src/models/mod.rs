//! Classifiers: random forest and a small 1-D CNN, behind one model container.

pub mod cnn;
pub mod forest;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, LabelMap};
use crate::matrix::Matrix;

pub use cnn::{CnnNet, CnnParams, ConvBlock, TrainHistory};
pub use forest::{FeaturesPerSplit, RandomForest, RfParams};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RandomForest,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    RandomForest { params: RfParams, forest: RandomForest },
    Cnn { params: CnnParams, net: CnnNet },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub train_seconds: f64,
    /// CNN only.
    pub final_train_loss: Option<f64>,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub label_map: LabelMap,
    pub feature_names: Vec<String>,
    pub body: ModelBody,
    pub training_metadata: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub probabilities: Matrix,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.body {
            ModelBody::RandomForest { .. } => ModelKind::RandomForest,
            ModelBody::Cnn { .. } => ModelKind::Cnn,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn predict(&self, features: &Matrix) -> Result<Prediction> {
        if features.cols() != self.feature_names.len() {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.feature_names.len(),
                features.cols()
            )));
        }
        let probabilities = match &self.body {
            ModelBody::RandomForest { forest, .. } => forest.predict_proba(features)?,
            ModelBody::Cnn { net, .. } => net.predict_proba(features)?,
        };
        let labels = probabilities.row_iter().map(argmax).collect();
        Ok(Prediction {
            labels,
            probabilities,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: TrainedModel = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        if let ModelBody::Cnn { net, .. } = &mut m.body {
            net.restore()?;
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

pub fn train_random_forest(train: &Dataset, p: &RfParams) -> Result<TrainedModel> {
    let started = Instant::now();
    let forest = RandomForest::fit(train.features(), train.labels(), train.n_classes(), p)?;
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        label_map: train.label_map().clone(),
        feature_names: train.feature_names().to_vec(),
        body: ModelBody::RandomForest {
            params: p.clone(),
            forest,
        },
        training_metadata: TrainingMetadata {
            train_seconds: started.elapsed().as_secs_f64(),
            final_train_loss: None,
            trained: true,
        },
    })
}

/// Untrained CNN sized for `input_len` features and the label map's classes.
pub fn build_cnn(
    p: &CnnParams,
    feature_names: Vec<String>,
    label_map: LabelMap,
) -> Result<TrainedModel> {
    let net = CnnNet::new(p, feature_names.len(), label_map.len())?;
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        label_map,
        feature_names,
        body: ModelBody::Cnn {
            params: p.clone(),
            net,
        },
        training_metadata: TrainingMetadata::default(),
    })
}

pub fn train_cnn(
    m: TrainedModel,
    train: &Dataset,
    validation: &Dataset,
    p: &CnnParams,
) -> Result<(TrainedModel, TrainHistory)> {
    let TrainedModel {
        label_map,
        feature_names,
        body,
        ..
    } = m;
    let ModelBody::Cnn { mut net, .. } = body else {
        return Err(Error::invalid("train_cnn needs a CNN model"));
    };
    if train.label_map() != &label_map {
        return Err(Error::shape("training labels differ from the model's label map"));
    }
    let val = (validation.n_rows() > 0).then(|| (validation.features(), validation.labels()));
    let history = cnn::train(&mut net, train.features(), train.labels(), val, p)?;
    let model = TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        label_map,
        feature_names,
        body: ModelBody::Cnn {
            params: p.clone(),
            net,
        },
        training_metadata: TrainingMetadata {
            train_seconds: history.train_seconds,
            final_train_loss: Some(history.final_train_loss),
            trained: true,
        },
    };
    Ok((model, history))
}
