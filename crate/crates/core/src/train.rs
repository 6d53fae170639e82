//! Mini-batch training with label-smoothed cross-entropy and Adam.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::{Adam, AdamConfig, Scalar, Tape};
use crate::model::{EncodedQuery, Forward, Model, ModelError};
use crate::rng;
use crate::sampler::QuerySample;
use crate::syntax::templates;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup: u64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warmup: 1000,
            label_smoothing: 0.1,
            batch_size: 64,
            max_steps: 10_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.lr > 0.0
            && self.batch_size > 0
            && self.max_steps > 0
            && (0.0..1.0).contains(&self.label_smoothing);
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(
                "lr, batch_size and max_steps must be positive and label_smoothing in [0, 1)".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("query type `{0}` is not a training type")]
    UnseenType(String),
    #[error("training query {index} of type `{type_name}` has no answers")]
    NoAnswers { type_name: String, index: u64 },
    #[error("loss became {loss} at step {step}")]
    NonFinite { step: u64, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query: EncodedQuery,
    pub answers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Encodes training samples; targets are the training-graph answers.
pub fn prepare_examples<T: Scalar>(
    model: &Model<T>,
    samples: &[QuerySample],
) -> Result<Vec<TrainExample>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let seen = templates::by_name(&s.type_name).is_some_and(|t| t.seen);
            if !seen {
                return Err(TrainError::UnseenType(s.type_name.clone()));
            }
            if s.split.a_id.is_empty() {
                return Err(TrainError::NoAnswers {
                    type_name: s.type_name.clone(),
                    index: s.index,
                });
            }
            Ok(TrainExample {
                query: model.prepare(&s.query)?,
                answers: s.split.a_id.iter().map(|&e| e as usize).collect(),
            })
        })
        .collect()
}

/// Runs `config.max_steps` optimisation steps over shuffled epochs.
///
/// `on_step` sees the model after every update and may stop training early
/// by returning `false`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    examples: &[TrainExample],
    config: &TrainConfig,
    mut on_step: impl FnMut(&Model<T>, &StepLog) -> bool,
) -> Result<Vec<StepLog>, TrainError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut opt = Adam::new(AdamConfig {
        lr: config.lr,
        warmup: config.warmup,
        ..AdamConfig::default()
    });
    let mut dropout_rng = rng::stream(config.seed, &[rng::label("dropout")]);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut log = Vec::with_capacity(config.max_steps as usize);
    for step in 1..=config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng::stream(config.seed, &[rng::label("shuffle"), epoch]));
                epoch += 1;
                cursor = 0;
            }
            batch.push(&examples[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = {
            let mut tape = Tape::new();
            let queries: Vec<&EncodedQuery> = batch.iter().map(|e| &e.query).collect();
            let mut fwd = Forward {
                rng: Some(&mut dropout_rng),
            };
            let logits = model.logits(&mut tape, &queries, &mut fwd)?;
            let answers: Vec<Vec<usize>> = batch.iter().map(|e| e.answers.clone()).collect();
            let loss = tape
                .smoothed_cross_entropy(logits, &answers, config.label_smoothing)
                .map_err(ModelError::from)?;
            let value = tape.value(loss).data[0].to_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFinite { step, loss: value });
            }
            (value, tape.backward(loss).into_params(&model.params))
        };
        opt.step(&mut model.params, &grads);
        let entry = StepLog {
            step,
            loss,
            lr: opt.current_lr(),
        };
        log.push(entry);
        if !on_step(model, &entry) {
            break;
        }
    }
    Ok(log)
}
