//! Fusing the four model heads into an issue set, grading and advice.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::label::SquatLabel;
use crate::models::{ModelError, ModelId, TrainedModel};
use crate::preprocess::FeatureTensor;

pub const FULL_POINTS: f64 = 100.0;

/// Points deducted per issue label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreCard;

impl ScoreCard {
    pub fn deduction(label: SquatLabel) -> f64 {
        match label {
            SquatLabel::Good => 0.0,
            SquatLabel::TooShallow => 15.0,
            SquatLabel::PosteriorPelvicTilt => 20.0,
            SquatLabel::AnteriorPelvicTilt => 10.0,
            SquatLabel::HipRisingTooFast => 10.0,
            SquatLabel::ExcessiveHipDominant => 27.5,
            SquatLabel::ExcessiveKneeDominant => 27.5,
        }
    }
}

/// The four trained heads, one per model id.
#[derive(Debug, Clone)]
pub struct ModelSet {
    models: [TrainedModel; 4],
}

impl ModelSet {
    /// Accepts the models in any order; each id must appear once and all
    /// must share one schema version.
    pub fn new(models: Vec<TrainedModel>) -> Result<Self, ModelError> {
        let mut slots: [Option<TrainedModel>; 4] = Default::default();
        for m in models {
            let i = m.model_id() as usize;
            if slots[i].is_some() {
                return Err(ModelError::ModelSet(format!("{} given twice", m.model_id())));
            }
            if !m.spec.is_canonical() {
                return Err(ModelError::InconsistentSpec(m.model_id()));
            }
            slots[i] = Some(m);
        }
        if let Some(i) = slots.iter().position(Option::is_none) {
            return Err(ModelError::ModelSet(format!("{} missing", ModelId::ALL[i])));
        }
        let models: Vec<TrainedModel> = slots.into_iter().flatten().collect();
        if models.iter().any(|m| m.version != models[0].version) {
            return Err(ModelError::ModelSet("schema versions differ".into()));
        }
        Ok(Self {
            models: models.try_into().expect("four models"),
        })
    }

    pub fn get(&self, id: ModelId) -> &TrainedModel {
        &self.models[id as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrainedModel> {
        self.models.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub model: ModelId,
    pub probabilities: Vec<f64>,
    pub class: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    /// Sorted by label number; empty for a good squat.
    pub issues: Vec<SquatLabel>,
    pub heads: Vec<HeadOutput>,
}

/// Issue set implied by one predicted class per head (A, B, C, D order).
pub fn issues_from_classes(classes: [usize; 4]) -> Vec<SquatLabel> {
    let mut issues: Vec<SquatLabel> = ModelId::ALL
        .iter()
        .zip(classes)
        .filter_map(|(m, c)| m.issue_for_class(c))
        .collect();
    issues.sort();
    issues
}

pub fn diagnose(tensor: &FeatureTensor, models: &ModelSet) -> Result<DiagnosisResult, ModelError> {
    let mut heads = Vec::with_capacity(4);
    for model in models.iter() {
        let p = model.predict(tensor)?;
        heads.push(HeadOutput {
            model: model.model_id(),
            probabilities: p.probabilities,
            class: p.class,
            version: model.version_tag(),
        });
    }
    let classes = [heads[0].class, heads[1].class, heads[2].class, heads[3].class];
    Ok(DiagnosisResult {
        issues: issues_from_classes(classes),
        heads,
    })
}

pub fn grade_issues(issues: &[SquatLabel]) -> f64 {
    let total: f64 = issues.iter().map(|&l| ScoreCard::deduction(l)).sum();
    (FULL_POINTS - total).clamp(0.0, FULL_POINTS)
}

pub fn grade(result: &DiagnosisResult) -> f64 {
    grade_issues(&result.issues)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advice {
    pub key: String,
    pub text: String,
    /// Key of the demonstration clip the UI links to.
    pub demo: String,
}

fn advice_text(label: SquatLabel) -> &'static str {
    match label {
        SquatLabel::Good => "Good squat. Keep the same depth and tempo.",
        SquatLabel::TooShallow => "Sit deeper: bend hips and knees until the thighs reach parallel.",
        SquatLabel::PosteriorPelvicTilt => {
            "Your lower back rounds at the bottom. Stop slightly higher and keep the chest up."
        }
        SquatLabel::AnteriorPelvicTilt => "Avoid arching the lower back; brace the core before descending.",
        SquatLabel::HipRisingTooFast => "Drive up with the chest and hips together instead of lifting the hips first.",
        SquatLabel::ExcessiveHipDominant => "Let the knees travel forward more; the torso is leaning too far.",
        SquatLabel::ExcessiveKneeDominant => "Sit back more at the start; the knees move forward too early.",
    }
}

pub fn advice_for(label: SquatLabel) -> Advice {
    Advice {
        key: label.key().to_string(),
        text: advice_text(label).to_string(),
        demo: format!("demo/{}", label.key()),
    }
}

pub fn advise(result: &DiagnosisResult) -> Vec<Advice> {
    advise_issues(&result.issues)
}

pub fn advise_issues(issues: &[SquatLabel]) -> Vec<Advice> {
    if issues.is_empty() {
        return vec![advice_for(SquatLabel::Good)];
    }
    let mut sorted = issues.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.into_iter().map(advice_for).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedSquat {
    pub clip_id: String,
    pub diagnosis: DiagnosisResult,
    pub score: f64,
    pub advice: Vec<Advice>,
    pub inference_ms: f64,
}

/// Diagnose, grade and advise one preprocessed rep, timing the whole step.
pub fn grade_tensor(tensor: &FeatureTensor, models: &ModelSet) -> Result<GradedSquat, ModelError> {
    let start = Instant::now();
    let diagnosis = diagnose(tensor, models)?;
    let score = grade(&diagnosis);
    let advice = advise(&diagnosis);
    Ok(GradedSquat {
        clip_id: tensor.clip_id.clone(),
        diagnosis,
        score,
        advice,
        inference_ms: duration_ms(start.elapsed()),
    })
}

pub fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Every issue set the four heads can produce.
pub fn feasible_issue_sets() -> Vec<Vec<SquatLabel>> {
    let mut out = Vec::new();
    for a in 0..2 {
        for b in 0..3 {
            for c in 0..2 {
                for d in 0..3 {
                    out.push(issues_from_classes([a, b, c, d]));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SquatLabel::*;

    #[test]
    fn class_mapping() {
        assert!(issues_from_classes([0, 0, 0, 0]).is_empty());
        assert_eq!(issues_from_classes([1, 0, 1, 0]), vec![TooShallow, HipRisingTooFast]);
        assert_eq!(issues_from_classes([0, 2, 0, 2]), vec![AnteriorPelvicTilt, ExcessiveKneeDominant]);
    }

    #[test]
    fn grade_examples() {
        assert_eq!(grade_issues(&[]), 100.0);
        assert_eq!(grade_issues(&[TooShallow]), 85.0);
        assert_eq!(grade_issues(&[TooShallow, PosteriorPelvicTilt, HipRisingTooFast, ExcessiveHipDominant]), 27.5);
    }

    #[test]
    fn feasible_sets_are_antitone_and_never_clamped() {
        let sets = feasible_issue_sets();
        assert_eq!(sets.len(), 36);
        let unique: std::collections::HashSet<_> = sets.iter().cloned().collect();
        assert_eq!(unique.len(), 36);
        let mut lowest = f64::INFINITY;
        for s in &sets {
            let raw = FULL_POINTS - s.iter().map(|&l| ScoreCard::deduction(l)).sum::<f64>();
            assert!(raw >= 0.0);
            assert_eq!(grade_issues(s), raw);
            lowest = lowest.min(raw);
            assert!(!(s.contains(&PosteriorPelvicTilt) && s.contains(&AnteriorPelvicTilt)));
            assert!(!(s.contains(&ExcessiveHipDominant) && s.contains(&ExcessiveKneeDominant)));
            for t in &sets {
                if s.iter().all(|l| t.contains(l)) {
                    assert!(grade_issues(t) <= grade_issues(s));
                }
            }
        }
        assert_eq!(lowest, 27.5);
    }

    #[test]
    fn clamp_on_adversarial_input() {
        let all = [ExcessiveHipDominant, ExcessiveKneeDominant, PosteriorPelvicTilt, ExcessiveHipDominant, TooShallow];
        assert_eq!(grade_issues(&all), 0.0);
    }

    #[test]
    fn advice_order_and_keys() {
        let a = advise_issues(&[HipRisingTooFast]);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].key, "hip_rising_too_fast");
        assert_eq!(advise_issues(&[])[0].key, "good_squat");
        let keys: Vec<_> = advise_issues(&[ExcessiveKneeDominant, PosteriorPelvicTilt]).into_iter().map(|a| a.key).collect();
        assert_eq!(keys, vec!["posterior_pelvic_tilt", "excessive_knee_dominant"]);
    }

    proptest! {
        #[test]
        fn score_always_within_bounds(labels in proptest::collection::vec(0u8..7, 0..12)) {
            let issues: Vec<SquatLabel> = labels.iter().map(|&n| SquatLabel::from_number(n + 1).unwrap()).collect();
            let s = grade_issues(&issues);
            prop_assert!((0.0..=100.0).contains(&s));
        }
    }
}
