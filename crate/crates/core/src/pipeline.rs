//! End-to-end training flow shared by the CLI and the acceptance suite:
//! corpus → tensors → per-model views → all-channel training → attribution →
//! channel selection → retraining on the selected channels → evaluation.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    channel_scores, select_channels, shapley_attribute, stratified_sample, AttributionError, AttributionMap, Baseline,
    ChannelScores, Selection, SelectionStrategy,
};
use crate::label::SquatLabel;
use crate::models::{
    build_training_view, evaluate, train, ArchName, ArchitectureKind, Evaluation, Example, LabeledTensor, ModelError,
    ModelId, TrainConfig, TrainedModel,
};
use crate::preprocess::{
    assemble_tensor, sanitize, split_dataset, DatasetSplit, ExclusionReason, OutlierThresholds, PreprocessError,
    RawClip, SanitizeOutcome, TensorChannel,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("clip {0} has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
}

/// Architecture and channel strategy for one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub model: ModelId,
    pub arch: ArchName,
    pub strategy: SelectionStrategy,
}

/// The deployed configuration: LSTM on positive channels for A, 1D-CNN on
/// intersected channels for B, LSTM on intersected channels for C and D.
pub const FINAL_CHOICES: [ModelChoice; 4] = [
    ModelChoice {
        model: ModelId::A,
        arch: ArchName::Lstm,
        strategy: SelectionStrategy::Positive,
    },
    ModelChoice {
        model: ModelId::B,
        arch: ArchName::Cnn1d,
        strategy: SelectionStrategy::Intersected,
    },
    ModelChoice {
        model: ModelId::C,
        arch: ArchName::Lstm,
        strategy: SelectionStrategy::Intersected,
    },
    ModelChoice {
        model: ModelId::D,
        arch: ArchName::Lstm,
        strategy: SelectionStrategy::Intersected,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub split_seed: u64,
    pub train_seed: u64,
    pub train: TrainConfig,
    /// Tensors explained per model.
    pub shap_samples: usize,
    pub shap_permutations: usize,
    pub shap_seed: u64,
    pub thresholds: OutlierThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            split_seed: 7,
            train_seed: 11,
            train: TrainConfig::default(),
            shap_samples: 64,
            shap_permutations: 1,
            shap_seed: 13,
            thresholds: OutlierThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub clip_id: String,
    pub reason: ExclusionReason,
}

/// Preprocessed labeled tensors split 8:1:1 per label.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: DatasetSplit<LabeledTensor>,
    pub excluded: Vec<Excluded>,
}

pub fn prepare_dataset(clips: &[RawClip], config: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let mut tensors = Vec::with_capacity(clips.len());
    let mut excluded = Vec::new();
    for clip in clips {
        let label = clip.label.ok_or_else(|| PipelineError::Unlabeled(clip.clip_id.clone()))?;
        match sanitize(clip, &config.thresholds) {
            SanitizeOutcome::Clean(clean) => tensors.push(LabeledTensor {
                tensor: assemble_tensor(&clean)?,
                label,
            }),
            SanitizeOutcome::Excluded { reason, .. } => excluded.push(Excluded {
                clip_id: clip.clip_id.clone(),
                reason,
            }),
        }
    }
    let split = split_dataset(&tensors, |t| t.label.number() as usize, config.split_seed)?;
    Ok(Dataset { split, excluded })
}

/// One model's class-labeled view of every part of the split.
pub fn model_view(dataset: &Dataset, model: ModelId) -> Result<DatasetSplit<Example>, ModelError> {
    let view = |part: &[LabeledTensor]| -> Vec<Example> {
        part.iter()
            .filter_map(|lt| {
                model.class_of(lt.label).map(|class| Example {
                    tensor: lt.tensor.clone(),
                    class,
                })
            })
            .collect()
    };
    // Reuses the view builder for its empty-class check on the training part.
    build_training_view(model, &dataset.split.train)?;
    Ok(DatasetSplit {
        train: view(&dataset.split.train),
        val: view(&dataset.split.val),
        test: view(&dataset.split.test),
    })
}

fn stage_seed(base: u64, model: ModelId, stage: u64) -> u64 {
    base ^ ((model as u64 + 1) << 8 | stage).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn train_model(
    choice: ModelChoice,
    view: &DatasetSplit<Example>,
    channels: &[TensorChannel],
    config: &PipelineConfig,
    stage: u64,
) -> Result<TrainedModel, ModelError> {
    train(
        choice.model,
        ArchitectureKind::standard(choice.arch, choice.model),
        view,
        channels,
        config.train,
        stage_seed(config.train_seed, choice.model, stage),
    )
}

/// Attribution of `model` over a class-stratified sample of the training
/// part, against the training-part mean.
pub fn explain(
    model: &TrainedModel,
    view: &DatasetSplit<Example>,
    config: &PipelineConfig,
) -> Result<AttributionMap, AttributionError> {
    let baseline = Baseline::mean_of(view.train.iter().map(|e| &e.tensor));
    let pool: Vec<_> = view.train.iter().map(|e| (e.tensor.clone(), e.class)).collect();
    let seed = stage_seed(config.shap_seed, model.model_id(), 0);
    let samples = stratified_sample(&pool, model.n_classes(), config.shap_samples, seed);
    shapley_attribute(model, &samples, &baseline, config.shap_permutations, seed)
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub choice: ModelChoice,
    pub full: TrainedModel,
    pub full_eval: Evaluation,
    pub attribution: AttributionMap,
    pub scores: ChannelScores,
    pub selection: Selection,
    pub selected: TrainedModel,
    pub selected_eval: Evaluation,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub train_full: Duration,
    pub attribution: Duration,
    pub train_selected: Duration,
}

/// Trains on all channels, explains, selects and retrains one model.
pub fn run_model(choice: ModelChoice, dataset: &Dataset, config: &PipelineConfig) -> Result<ModelRun, PipelineError> {
    let view = model_view(dataset, choice.model)?;
    let all: Vec<TensorChannel> = TensorChannel::all().collect();

    let t = Instant::now();
    let full = train_model(choice, &view, &all, config, 0)?;
    let train_full = t.elapsed();
    let full_eval = evaluate(&full, &view.test)?;

    let t = Instant::now();
    let attribution = explain(&full, &view, config)?;
    let attribution_time = t.elapsed();
    let scores = channel_scores(&attribution);
    let selection = select_channels(&scores, choice.strategy);

    let t = Instant::now();
    let selected = if choice.strategy == SelectionStrategy::All {
        full.clone()
    } else {
        train_model(choice, &view, &selection.channels, config, 1)?
    };
    let train_selected = t.elapsed();
    let selected_eval = evaluate(&selected, &view.test)?;

    Ok(ModelRun {
        choice,
        full,
        full_eval,
        attribution,
        scores,
        selection,
        selected,
        selected_eval,
        timings: StageTimings {
            train_full,
            attribution: attribution_time,
            train_selected,
        },
    })
}

pub fn run_pipeline(
    dataset: &Dataset,
    choices: &[ModelChoice],
    config: &PipelineConfig,
) -> Result<Vec<ModelRun>, PipelineError> {
    choices.iter().map(|&c| run_model(c, dataset, config)).collect()
}

/// Labels whose test tensors a model never saw: the per-label test part.
pub fn test_tensors(dataset: &Dataset, label: SquatLabel) -> impl Iterator<Item = &LabeledTensor> {
    dataset.split.test.iter().filter(move |t| t.label == label)
}
