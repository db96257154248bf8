use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_direction_grad, loss_distance_grad, loss_pair_grad};
use super::{Head, ScorerModel, TrainConfig};
use crate::citygraph::{Action, CityGraph, Heading, Location};
use crate::error::{NavError, Result};
use crate::labeling::{geo_weight, LabelSet, PairLabel};
use crate::rng;
use crate::scalar::Scalar;
use crate::search::DistanceField;
use crate::synthfeat::FeatureTable;

/// Everything the trainer needs from one city. `fields[c]` is the distance
/// field of class `c`; it supplies the path length for geographic weighting.
#[derive(Clone, Copy)]
pub struct TrainingCity<'a, T> {
    pub graph: &'a CityGraph,
    pub features: &'a FeatureTable<T>,
    pub labels: &'a LabelSet<T>,
    pub fields: &'a [DistanceField],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub head: Head,
    /// Mean weighted loss per sample, one entry per epoch, measured during the pass.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub samples_used: usize,
    /// Nodes (or pairs) dropped because every class was masked.
    pub samples_masked: usize,
}

enum Target<T> {
    Distance(Vec<Option<T>>),
    Direction(Vec<Option<Action>>, Vec<T>),
    Pair(Vec<PairLabel>, Vec<T>),
}

struct Sample<T> {
    city: usize,
    rows: (usize, usize),
    target: Target<T>,
}

fn weights_at<T: Scalar>(fields: &[DistanceField], loc: Location, lambda: T) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            let l = f.value_at(loc).ok_or(NavError::UnpopulatedLocation(loc))?;
            geo_weight(l, lambda)
        })
        .collect()
}

fn row_of<T: Scalar>(city: &TrainingCity<'_, T>, node: crate::citygraph::NodeId) -> Result<usize> {
    city.features.row_index(city.graph, node).ok_or(NavError::UnknownNode(node))
}

fn collect_samples<T: Scalar>(head: Head, cities: &[TrainingCity<'_, T>], lambda: T) -> Result<(Vec<Sample<T>>, usize)> {
    let mut samples = Vec::new();
    let mut masked = 0;
    for (ci, city) in cities.iter().enumerate() {
        let classes = city.labels.direction.class_count();
        if head != Head::Distance && city.fields.len() != classes {
            return Err(NavError::DimensionMismatch { expected: classes, got: city.fields.len() });
        }
        match head {
            Head::Distance => {
                for node in city.graph.nodes() {
                    let label = city.labels.distance.row(node).to_vec();
                    if label.iter().all(Option::is_none) {
                        masked += 1;
                        continue;
                    }
                    let r = row_of(city, node)?;
                    samples.push(Sample { city: ci, rows: (r, r), target: Target::Distance(label) });
                }
            }
            Head::Direction => {
                for node in city.graph.nodes() {
                    let label: Vec<Option<Action>> = (0..classes).map(|c| city.labels.direction.label(node, c)).collect();
                    if label.iter().all(Option::is_none) {
                        masked += 1;
                        continue;
                    }
                    let r = row_of(city, node)?;
                    let w = weights_at(city.fields, node.location(), lambda)?;
                    samples.push(Sample { city: ci, rows: (r, r), target: Target::Direction(label, w) });
                }
            }
            Head::Pair => {
                // One sample per (location, heading pair), labels gathered across classes.
                let mut grouped: std::collections::BTreeMap<(Location, Heading, Heading), Vec<PairLabel>> =
                    Default::default();
                for c in 0..classes {
                    for rec in city.labels.pairs.records(c) {
                        let entry =
                            grouped.entry((rec.loc, rec.first, rec.second)).or_insert_with(|| vec![PairLabel::Ignore; classes]);
                        entry[c] = rec.label;
                    }
                }
                for ((loc, a, b), label) in grouped {
                    if label.iter().all(|l| *l == PairLabel::Ignore) {
                        masked += 1;
                        continue;
                    }
                    let r1 = row_of(city, loc.with_heading(a))?;
                    let r2 = row_of(city, loc.with_heading(b))?;
                    let w = weights_at(city.fields, loc, lambda)?;
                    samples.push(Sample { city: ci, rows: (r1, r2), target: Target::Pair(label, w) });
                }
            }
        }
    }
    Ok((samples, masked))
}

/// Adds `x ⊗ g` (with a trailing bias input of 1) into `acc`.
fn accumulate<T: Scalar>(acc: &mut [T], x: &[T], g: &[T]) {
    let k = g.len();
    for (i, &xi) in x.iter().chain(std::iter::once(&T::one())).enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (a, &gj) in acc[i * k..(i + 1) * k].iter_mut().zip(g) {
            *a = *a + xi * gj;
        }
    }
}

/// Mini-batch SGD with momentum and weight decay over the samples of all
/// `cities`. The learning rate follows `config.lr_at(epoch)`; each epoch visits
/// the samples in an order drawn from `config.seed`.
pub fn train<T: Scalar>(
    head: Head,
    cities: &[TrainingCity<'_, T>],
    config: &TrainConfig,
    feature_hash: &str,
) -> Result<(ScorerModel<T>, TrainReport)> {
    config.validate()?;
    let first = cities.first().ok_or_else(|| NavError::Empty("no training cities".into()))?;
    let dims = first.features.dims();
    let classes = first.labels.direction.class_count();
    for c in cities {
        if c.features.dims() != dims {
            return Err(NavError::DimensionMismatch { expected: dims, got: c.features.dims() });
        }
        if c.labels.direction.class_count() != classes {
            return Err(NavError::DimensionMismatch { expected: classes, got: c.labels.direction.class_count() });
        }
    }
    let (samples, masked) = collect_samples(head, cities, T::lit(config.lambda_geo))?;
    if samples.is_empty() {
        return Err(NavError::Empty(format!("no labeled samples for the {head} head")));
    }

    let mut model = ScorerModel::zeros(head, dims, classes, config.clone()).with_feature_hash(feature_hash);
    let k = model.outputs();
    let bound = (3.0 / (dims + 1) as f64).sqrt();
    let mut init = rng::seeded(config.seed, &[0x696e_6974]);
    for w in model.weights_mut() {
        *w = T::lit(init.gen_range(-bound..bound));
    }

    let n_w = model.weights().len();
    let mut velocity = vec![T::zero(); n_w];
    let mut grad = vec![T::zero(); n_w];
    let mut out1 = vec![T::zero(); k];
    let mut out2 = vec![T::zero(); k];
    let momentum = T::lit(config.momentum);
    let decay = T::lit(config.weight_decay);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs as usize);

    for epoch in 1..=config.epochs {
        let lr = T::lit(config.lr_at(epoch));
        order.shuffle(&mut rng::seeded(config.seed, &[0x7368_7566, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            for &si in batch {
                let s = &samples[si];
                let feats = cities[s.city].features;
                let x1 = feats.row(s.rows.0);
                model.predict_into(x1, &mut out1)?;
                let value = match &s.target {
                    Target::Distance(label) => {
                        let (v, g) = loss_distance_grad(&out1, label);
                        accumulate(&mut grad, x1, &g);
                        v
                    }
                    Target::Direction(label, w) => {
                        let (v, g) = loss_direction_grad(&out1, label, w);
                        accumulate(&mut grad, x1, &g);
                        v
                    }
                    Target::Pair(label, w) => {
                        let x2 = feats.row(s.rows.1);
                        model.predict_into(x2, &mut out2)?;
                        let (v, g1, g2) = loss_pair_grad(&out1, &out2, label, w);
                        accumulate(&mut grad, x1, &g1);
                        accumulate(&mut grad, x2, &g2);
                        v
                    }
                };
                total += value.as_f64();
            }
            let scale = T::one() / T::lit(batch.len() as f64);
            for ((w, v), g) in model.weights_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let step = *g * scale + decay * *w;
                *v = momentum * *v + lr * step;
                *w = *w - *v;
            }
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() {
            return Err(NavError::InvalidConfig(format!("training diverged at epoch {epoch}")));
        }
        epoch_losses.push(mean);
    }

    let final_loss = *epoch_losses.last().unwrap_or(&0.0);
    let report = TrainReport { head, epoch_losses, final_loss, samples_used: samples.len(), samples_masked: masked };
    Ok((model, report))
}
