//! Linear scorers over node features.
//!
//! One affine map per head: `distance` regresses a square-root distance per
//! class, `direction` scores the four actions per class, `pair` produces one
//! score per class for a single image (the two members of a pair share weights).

mod loss;
mod train;

pub use loss::{
    loss_direction, loss_direction_grad, loss_distance, loss_distance_grad, loss_pair, loss_pair_grad, DistanceLoss,
};
pub use train::{train, TrainReport, TrainingCity};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Distance,
    Direction,
    Pair,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Distance, Head::Direction, Head::Pair];

    pub fn outputs(self, classes: usize) -> usize {
        match self {
            Head::Direction => classes * 4,
            Head::Distance | Head::Pair => classes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::Distance => "distance",
            Head::Direction => "direction",
            Head::Pair => "pair",
        }
    }

    pub fn parse(s: &str) -> Result<Head> {
        match s.trim() {
            "distance" => Ok(Head::Distance),
            "direction" => Ok(Head::Direction),
            "pair" => Ok(Head::Pair),
            other => Err(NavError::InvalidConfig(format!("unknown head {other:?}"))),
        }
    }
}

impl std::str::FromStr for Head {
    type Err = NavError;

    fn from_str(s: &str) -> Result<Head> {
        Head::parse(s)
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr0: f64,
    /// Epochs after which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_epochs: Vec<u32>,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Geographic weighting factor; only the direction and pair heads use it.
    pub lambda_geo: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults: 8 epochs, drops after epochs 4 and 6, momentum 0.9,
    /// decay 5e-4, lambda 0.9; lr 1e-4 for distance and 1e-3 otherwise.
    pub fn for_head(head: Head) -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 64,
            lr0: if head == Head::Distance { 1e-4 } else { 1e-3 },
            lr_drop_epochs: vec![4, 6],
            lr_drop_factor: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda_geo: 0.9,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NavError::InvalidConfig(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_drop_factor > 0.0) {
            return bad("lr_drop_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0,1) and weight_decay >= 0".into());
        }
        if !(self.lambda_geo > 0.0 && self.lambda_geo < 1.0) {
            return bad(format!("lambda_geo must be in (0,1), got {}", self.lambda_geo));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: u32) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&d| d < epoch).count() as i32;
        self.lr0 / self.lr_drop_factor.powi(drops)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerModel<T> {
    head: Head,
    dims: usize,
    classes: usize,
    /// `(dims + 1) x outputs`, row-major; the last row is the bias.
    weights: Vec<T>,
    feature_hash: String,
    config: TrainConfig,
}

impl<T: Scalar> ScorerModel<T> {
    pub fn zeros(head: Head, dims: usize, classes: usize, config: TrainConfig) -> Self {
        ScorerModel {
            head,
            dims,
            classes,
            weights: vec![T::zero(); (dims + 1) * head.outputs(classes)],
            feature_hash: String::new(),
            config,
        }
    }

    pub fn from_weights(head: Head, dims: usize, classes: usize, weights: Vec<T>, config: TrainConfig) -> Result<Self> {
        let expected = (dims + 1) * head.outputs(classes);
        if weights.len() != expected {
            return Err(NavError::DimensionMismatch { expected, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(NavError::malformed("model", "non-finite weight"));
        }
        Ok(ScorerModel { head, dims, classes, weights, feature_hash: String::new(), config })
    }

    pub fn with_feature_hash(mut self, hash: impl Into<String>) -> Self {
        self.feature_hash = hash.into();
        self
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn outputs(&self) -> usize {
        self.head.outputs(self.classes)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn feature_hash(&self) -> &str {
        &self.feature_hash
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Affine map of one feature vector.
    pub fn predict(&self, feature: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.outputs()];
        self.predict_into(feature, &mut out)?;
        Ok(out)
    }

    pub fn predict_into(&self, feature: &[T], out: &mut [T]) -> Result<()> {
        if feature.len() != self.dims {
            return Err(NavError::DimensionMismatch { expected: self.dims, got: feature.len() });
        }
        let k = self.outputs();
        out.copy_from_slice(&self.weights[self.dims * k..]);
        for (i, &x) in feature.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            let row = &self.weights[i * k..(i + 1) * k];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + x * w;
            }
        }
        Ok(())
    }

    /// Model document: versioned JSON with head, shape, row-major weights and the
    /// training config. Weights use shortest round-trip formatting, so
    /// save, load, save is byte-identical.
    pub fn to_document(&self, config_hash: &str) -> Result<String> {
        let k = self.outputs();
        let doc = ModelDocument {
            format: "citynav-model".into(),
            version: 1,
            config_hash: config_hash.into(),
            head: self.head,
            dims: self.dims,
            classes: self.classes,
            outputs: k,
            feature_hash: self.feature_hash.clone(),
            config: self.config.clone(),
            weights: self.weights.chunks(k).map(|r| r.iter().map(|w| w.as_f64()).collect()).collect(),
        };
        crate::artifact::to_pretty_json(&doc)
    }

    pub fn from_document(text: &str) -> Result<(Self, String)> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != "citynav-model" || doc.version != 1 {
            return Err(NavError::malformed("model file", format!("unsupported format {} v{}", doc.format, doc.version)));
        }
        if doc.outputs != doc.head.outputs(doc.classes) || doc.weights.len() != doc.dims + 1 {
            return Err(NavError::malformed("model file", "shape does not match head"));
        }
        if doc.weights.iter().any(|r| r.len() != doc.outputs) {
            return Err(NavError::malformed("model file", "ragged weight rows"));
        }
        let weights = doc.weights.into_iter().flatten().map(T::lit).collect();
        let model = ScorerModel::from_weights(doc.head, doc.dims, doc.classes, weights, doc.config)?
            .with_feature_hash(doc.feature_hash);
        Ok((model, doc.config_hash))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    config_hash: String,
    head: Head,
    dims: usize,
    classes: usize,
    outputs: usize,
    feature_hash: String,
    config: TrainConfig,
    weights: Vec<Vec<f64>>,
}
