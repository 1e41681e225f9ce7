//! The four diagnosis models (A–D), their three candidate architectures, and
//! training / prediction / evaluation.

mod cnn;
pub mod gradcheck;
pub mod forest;
mod lstm;
pub mod metrics;
mod nn;
mod train;

use std::fmt;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cnn::CnnHyper;
pub use forest::{Forest, ForestHyper};
pub use lstm::LstmHyper;
pub use gradcheck::{gradient_check, GradientCheck};
pub use metrics::{argmax, f1_score, ConfusionCounts};
pub use train::{build_training_view, evaluate, train, Evaluation, Example, LabeledTensor, TrainConfig, TrainingSummary};

use crate::label::SquatLabel;
use crate::preprocess::{FeatureTensor, TensorChannel, SERIES_LEN};

/// Current model-file schema version.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("class {class} of model {model} has no examples")]
    EmptyClass { model: ModelId, class: usize },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },
    #[error("input has {got} values, model expects {expected} ({channels} channels)")]
    ChannelMismatch { expected: usize, got: usize, channels: usize },
    #[error("no channels selected")]
    NoChannels,
    #[error("model spec for {0} does not match the canonical class map")]
    InconsistentSpec(ModelId),
    #[error("invalid model set: {0}")]
    ModelSet(String),
    #[error(transparent)]
    Preprocess(#[from] crate::preprocess::PreprocessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    A,
    B,
    C,
    D,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::A, ModelId::B, ModelId::C, ModelId::D];

    pub fn letter(self) -> char {
        match self {
            ModelId::A => 'A',
            ModelId::B => 'B',
            ModelId::C => 'C',
            ModelId::D => 'D',
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(ModelId::A),
            "B" => Some(ModelId::B),
            "C" => Some(ModelId::C),
            "D" => Some(ModelId::D),
            _ => None,
        }
    }

    /// Label-to-class mapping; `None` means the label is not in this model's
    /// training data (only Model A drops labels).
    pub fn class_of(self, label: SquatLabel) -> Option<usize> {
        use SquatLabel::*;
        match (self, label) {
            (ModelId::A, Good) => Some(0),
            (ModelId::A, TooShallow) => Some(1),
            (ModelId::A, _) => None,
            (ModelId::B, PosteriorPelvicTilt) => Some(1),
            (ModelId::B, AnteriorPelvicTilt) => Some(2),
            (ModelId::C, HipRisingTooFast) => Some(1),
            (ModelId::D, ExcessiveHipDominant) => Some(1),
            (ModelId::D, ExcessiveKneeDominant) => Some(2),
            _ => Some(0),
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            ModelId::A | ModelId::C => 2,
            ModelId::B | ModelId::D => 3,
        }
    }

    /// The issue each nonzero class stands for.
    pub fn issue_for_class(self, class: usize) -> Option<SquatLabel> {
        use SquatLabel::*;
        match (self, class) {
            (ModelId::A, 1) => Some(TooShallow),
            (ModelId::B, 1) => Some(PosteriorPelvicTilt),
            (ModelId::B, 2) => Some(AnteriorPelvicTilt),
            (ModelId::C, 1) => Some(HipRisingTooFast),
            (ModelId::D, 1) => Some(ExcessiveHipDominant),
            (ModelId::D, 2) => Some(ExcessiveKneeDominant),
            _ => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Model {}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingScope {
    Labels1And2Only,
    AllLabels,
}

/// Self-describing copy of a model's class mapping, stored in model files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: ModelId,
    pub n_classes: usize,
    pub training_scope: TrainingScope,
    /// (label number, class index) for every label the model trains on.
    pub class_map: Vec<(u8, usize)>,
}

impl ModelSpec {
    pub fn for_model(model_id: ModelId) -> Self {
        Self {
            model_id,
            n_classes: model_id.n_classes(),
            training_scope: if model_id == ModelId::A {
                TrainingScope::Labels1And2Only
            } else {
                TrainingScope::AllLabels
            },
            class_map: SquatLabel::ALL
                .iter()
                .filter_map(|&l| model_id.class_of(l).map(|c| (l.number(), c)))
                .collect(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        *self == Self::for_model(self.model_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    Cnn1d,
    Lstm,
    Forest,
}

impl ArchName {
    pub const ALL: [ArchName; 3] = [ArchName::Cnn1d, ArchName::Lstm, ArchName::Forest];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Cnn1d => "cnn1d",
            ArchName::Lstm => "lstm",
            ArchName::Forest => "forest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnn1d" | "cnn" | "1d-cnn" => Some(ArchName::Cnn1d),
            "lstm" => Some(ArchName::Lstm),
            "forest" | "rf" | "random-forest" => Some(ArchName::Forest),
            _ => None,
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchitectureKind {
    Cnn1d(CnnHyper),
    Lstm(LstmHyper),
    Forest(ForestHyper),
}

impl ArchitectureKind {
    /// Full-size architecture. LSTM dropout is 0.5 for Models A and C and 0.4
    /// for B and D.
    pub fn standard(name: ArchName, model: ModelId) -> Self {
        match name {
            ArchName::Cnn1d => ArchitectureKind::Cnn1d(CnnHyper::default()),
            ArchName::Lstm => ArchitectureKind::Lstm(LstmHyper::with_dropout(match model {
                ModelId::A | ModelId::C => 0.5,
                ModelId::B | ModelId::D => 0.4,
            })),
            ArchName::Forest => ArchitectureKind::Forest(ForestHyper::default()),
        }
    }

    pub fn name(&self) -> ArchName {
        match self {
            ArchitectureKind::Cnn1d(_) => ArchName::Cnn1d,
            ArchitectureKind::Lstm(_) => ArchName::Lstm,
            ArchitectureKind::Forest(_) => ArchName::Forest,
        }
    }
}

/// Differentiable classifier over flattened channel-major inputs.
pub(crate) trait Network: Send + Sync {
    fn n_params(&self) -> usize;
    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn logits(&self, params: &[f64], inputs: &[&[f64]]) -> Array2<f64>;
    /// Mean weighted cross-entropy over the batch and its parameter gradient.
    /// Dropout is active only when an RNG is supplied.
    fn loss_and_grad(
        &self,
        params: &[f64],
        inputs: &[&[f64]],
        targets: &[usize],
        class_weights: &[f64],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>);
}

pub(crate) fn build_network(arch: &ArchitectureKind, n_channels: usize, len: usize, n_classes: usize) -> Box<dyn Network> {
    match *arch {
        ArchitectureKind::Cnn1d(h) => Box::new(cnn::Cnn::new(h, n_channels, len, n_classes)),
        ArchitectureKind::Lstm(h) => Box::new(lstm::Lstm::new(h, n_channels, len, n_classes)),
        ArchitectureKind::Forest(_) => unreachable!("forests are not gradient-trained"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Neural {
        #[serde(with = "crate::container::f64_blob")]
        values: Vec<f64>,
    },
    Forest(Forest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub spec: ModelSpec,
    pub arch: ArchitectureKind,
    pub selected_channels: Vec<TensorChannel>,
    pub params: ModelParams,
    pub config: TrainConfig,
    pub train_seed: u64,
    pub summary: TrainingSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class: usize,
    pub elapsed: Duration,
}

impl TrainedModel {
    pub fn model_id(&self) -> ModelId {
        self.spec.model_id
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn input_len(&self) -> usize {
        self.selected_channels.len() * SERIES_LEN
    }

    /// Short provenance tag: model letter, architecture, channel count and a
    /// fingerprint of the parameters.
    pub fn version_tag(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        };
        match &self.params {
            ModelParams::Neural { values } => values.iter().for_each(|v| eat(&v.to_le_bytes())),
            ModelParams::Forest(f) => f.trees.iter().for_each(|t| {
                t.nodes.iter().for_each(|n| match n {
                    forest::Node::Leaf { class } => eat(&(*class as u64).to_le_bytes()),
                    forest::Node::Split { feature, threshold, .. } => {
                        eat(&(*feature as u64).to_le_bytes());
                        eat(&threshold.to_le_bytes());
                    }
                })
            }),
        }
        eat(&self.train_seed.to_le_bytes());
        format!(
            "{}-{}-{}ch-{:016x}",
            self.model_id().letter(),
            self.arch.name(),
            self.selected_channels.len(),
            hash
        )
    }

    /// Class probabilities for a batch of already-gathered inputs.
    pub fn predict_inputs(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>, ModelError> {
        let expected = self.input_len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != expected) {
            return Err(ModelError::ChannelMismatch {
                expected,
                got: bad.len(),
                channels: self.selected_channels.len(),
            });
        }
        Ok(match &self.params {
            ModelParams::Forest(forest) => inputs.iter().map(|x| forest.predict_proba(x)).collect(),
            ModelParams::Neural { values } => {
                let net = build_network(&self.arch, self.selected_channels.len(), SERIES_LEN, self.n_classes());
                let logits = net.logits(values, inputs);
                logits
                    .rows()
                    .into_iter()
                    .map(|row| nn::probabilities(row, self.n_classes()))
                    .collect()
            }
        })
    }

    pub fn predict(&self, tensor: &FeatureTensor) -> Result<Prediction, ModelError> {
        let start = Instant::now();
        let input = tensor.gather(&self.selected_channels);
        let probabilities = self.predict_inputs(&[&input])?.pop().expect("one prediction");
        let class = argmax(&probabilities);
        Ok(Prediction {
            probabilities,
            class,
            elapsed: start.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table3_mapping() {
        assert_eq!(ModelId::B.class_of(SquatLabel::HipRisingTooFast), Some(0));
        assert_eq!(ModelId::D.class_of(SquatLabel::ExcessiveKneeDominant), Some(2));
        assert_eq!(ModelId::A.class_of(SquatLabel::PosteriorPelvicTilt), None);
        assert_eq!(ModelId::C.class_of(SquatLabel::HipRisingTooFast), Some(1));
        for id in ModelId::ALL {
            let spec = ModelSpec::for_model(id);
            assert!(spec.is_canonical());
            for (label, class) in spec.class_map {
                let issue = id.issue_for_class(class);
                if class == 0 {
                    assert_eq!(issue, None);
                } else {
                    assert_eq!(issue.map(SquatLabel::number), Some(label));
                }
            }
        }
    }

    #[test]
    fn dropout_assignment() {
        let dropout = |id| match ArchitectureKind::standard(ArchName::Lstm, id) {
            ArchitectureKind::Lstm(h) => h.dropout,
            _ => unreachable!(),
        };
        assert_eq!(dropout(ModelId::A), 0.5);
        assert_eq!(dropout(ModelId::C), 0.5);
        assert_eq!(dropout(ModelId::B), 0.4);
        assert_eq!(dropout(ModelId::D), 0.4);
    }
}
