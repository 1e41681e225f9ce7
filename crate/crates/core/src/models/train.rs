use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::Forest;
use super::metrics::{argmax, ConfusionCounts};
use super::nn::balanced_class_weights;
use super::{
    build_network, ArchitectureKind, ModelError, ModelId, ModelParams, ModelSpec, TrainedModel, MODEL_SCHEMA_VERSION,
};
use crate::label::SquatLabel;
use crate::preprocess::{DatasetSplit, FeatureTensor, TensorChannel, SERIES_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTensor {
    pub tensor: FeatureTensor,
    pub label: SquatLabel,
}

/// A tensor with its class index under one model's mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tensor: FeatureTensor,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub class_weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            class_weighted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub train_examples: usize,
    pub val_examples: usize,
}

/// Applies a model's class map; Model A keeps only Labels 1 and 2.
pub fn build_training_view(model: ModelId, corpus: &[LabeledTensor]) -> Result<Vec<Example>, ModelError> {
    let view: Vec<Example> = corpus
        .iter()
        .filter_map(|lt| {
            model.class_of(lt.label).map(|class| Example {
                tensor: lt.tensor.clone(),
                class,
            })
        })
        .collect();
    for class in 0..model.n_classes() {
        if !view.iter().any(|e| e.class == class) {
            return Err(ModelError::EmptyClass { model, class });
        }
    }
    Ok(view)
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-7;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn macro_f1(n_classes: usize, targets: &[usize], probs: &[Vec<f64>]) -> f64 {
    ConfusionCounts::from_pairs(n_classes, targets.iter().copied().zip(probs.iter().map(|p| argmax(p)))).macro_f1()
}

/// Trains one model on `splits` using only `channels`. Neural nets keep the
/// epoch with the best validation macro-F1 (ties go to the lower validation
/// loss) and stop after `patience` epochs without an F1 improvement.
pub fn train(
    model: ModelId,
    arch: ArchitectureKind,
    splits: &DatasetSplit<Example>,
    channels: &[TensorChannel],
    config: TrainConfig,
    seed: u64,
) -> Result<TrainedModel, ModelError> {
    if channels.is_empty() {
        return Err(ModelError::NoChannels);
    }
    let n_classes = model.n_classes();
    for class in 0..n_classes {
        if !splits.train.iter().any(|e| e.class == class) {
            return Err(ModelError::EmptyClass { model, class });
        }
    }
    let gather = |set: &[Example]| -> (Vec<Vec<f64>>, Vec<usize>) {
        set.iter().map(|e| (e.tensor.gather(channels), e.class)).unzip()
    };
    let (train_x, train_y) = gather(&splits.train);
    let (val_x, val_y) = gather(&splits.val);

    let (params, summary) = match arch {
        ArchitectureKind::Forest(hyper) => {
            let forest = Forest::fit(hyper, &train_x, &train_y, n_classes, channels.len(), SERIES_LEN, seed);
            let val_probs: Vec<Vec<f64>> = val_x.iter().map(|x| forest.predict_proba(x)).collect();
            let summary = TrainingSummary {
                epochs_run: 1,
                best_epoch: 1,
                best_val_macro_f1: if val_y.is_empty() { 0.0 } else { macro_f1(n_classes, &val_y, &val_probs) },
                train_examples: train_x.len(),
                val_examples: val_x.len(),
            };
            (ModelParams::Forest(forest), summary)
        }
        _ => {
            let net = build_network(&arch, channels.len(), SERIES_LEN, n_classes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = net.init(&mut rng);
            let weights = if config.class_weighted {
                balanced_class_weights(&train_y, n_classes)
            } else {
                vec![1.0; n_classes]
            };
            let mut adam = Adam::new(params.len(), config.learning_rate);
            let mut order: Vec<usize> = (0..train_x.len()).collect();
            let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0usize, params.clone());
            let mut epochs_run = 0;
            for epoch in 1..=config.max_epochs {
                epochs_run = epoch;
                order.shuffle(&mut rng);
                for chunk in order.chunks(config.batch_size.max(1)) {
                    let xs: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
                    let ys: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
                    let (loss, grad) = net.loss_and_grad(&params, &xs, &ys, &weights, Some(&mut rng));
                    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                        return Err(ModelError::TrainingDiverged { epoch });
                    }
                    adam.step(&mut params, &grad);
                }
                let (eval_x, eval_y) = if val_x.is_empty() { (&train_x, &train_y) } else { (&val_x, &val_y) };
                let refs: Vec<&[f64]> = eval_x.iter().map(Vec::as_slice).collect();
                let logits = net.logits(&params, &refs);
                let (val_loss, _) = super::nn::weighted_cross_entropy(&logits, eval_y, &weights, n_classes);
                let probs: Vec<Vec<f64>> =
                    logits.rows().into_iter().map(|r| super::nn::probabilities(r, n_classes)).collect();
                let f1 = macro_f1(n_classes, eval_y, &probs);
                if f1 > best.0 || (f1 == best.0 && val_loss < best.1) {
                    let improved = f1 > best.0;
                    let last_improvement = if improved { epoch } else { best.2 };
                    best = (f1, val_loss, last_improvement, params.clone());
                }
                if epoch - best.2 >= config.patience {
                    break;
                }
            }
            let summary = TrainingSummary {
                epochs_run,
                best_epoch: best.2,
                best_val_macro_f1: best.0,
                train_examples: train_x.len(),
                val_examples: val_x.len(),
            };
            (ModelParams::Neural { values: best.3 }, summary)
        }
    };

    Ok(TrainedModel {
        version: MODEL_SCHEMA_VERSION,
        spec: ModelSpec::for_model(model),
        arch,
        selected_channels: channels.to_vec(),
        params,
        config,
        train_seed: seed,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub model_id: ModelId,
    pub counts: ConfusionCounts,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    /// Mean single-example inference time over the split, milliseconds.
    pub mean_latency_ms: f64,
    pub examples: usize,
}

/// Per-class F1 over argmax predictions, timing each example on its own.
pub fn evaluate(model: &TrainedModel, test: &[Example]) -> Result<Evaluation, ModelError> {
    let n_classes = model.n_classes();
    let mut counts = ConfusionCounts::new(n_classes);
    let mut total = 0.0;
    for example in test {
        let start = Instant::now();
        let prediction = model.predict(&example.tensor)?;
        total += start.elapsed().as_secs_f64();
        counts.record(example.class, prediction.class);
    }
    Ok(Evaluation {
        model_id: model.model_id(),
        f1: counts.f1_scores(),
        macro_f1: counts.macro_f1(),
        counts,
        mean_latency_ms: if test.is_empty() { 0.0 } else { 1e3 * total / test.len() as f64 },
        examples: test.len(),
    })
}
