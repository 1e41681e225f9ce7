#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use squat_core::diagnosis::{advise_issues, grade_issues, DiagnosisResult, GradedSquat};
use squat_core::kinematics::{FeatureFrame, JointFrame};
use squat_core::label::SquatLabel;
use squat_core::preprocess::RawClip;
use squat_core::session::RepGrader;
use squat_core::synthgen::{generate_clip, session_stream, GenConfig, StreamOptions, SyntheticClip};

/// Grades every rep as a too-shallow squat, except those listed in `fail`
/// (by grading order, from 1), which fail.
#[derive(Clone, Default)]
pub struct FakeGrader {
    pub fail: HashSet<usize>,
    calls: Arc<Mutex<usize>>,
}

impl FakeGrader {
    pub fn failing(reps: &[usize]) -> Self {
        Self {
            fail: reps.iter().copied().collect(),
            ..Self::default()
        }
    }
}

impl RepGrader for FakeGrader {
    fn grade(&self, clip: &RawClip) -> Result<GradedSquat, String> {
        let n = {
            let mut c = self.calls.lock().unwrap();
            *c += 1;
            *c
        };
        if self.fail.contains(&n) {
            return Err(format!("grader refused rep {n}"));
        }
        let issues = vec![SquatLabel::TooShallow];
        Ok(GradedSquat {
            clip_id: clip.clip_id.clone(),
            score: grade_issues(&issues),
            advice: advise_issues(&issues),
            diagnosis: DiagnosisResult { issues, heads: Vec::new() },
            inference_ms: 0.1,
        })
    }
}

pub fn clips(reps: usize) -> Vec<SyntheticClip> {
    (0..reps)
        .map(|i| generate_clip(SquatLabel::ALL[i % 7], &GenConfig::default(), 100 + i as u64))
        .collect()
}

/// One scripted set of `reps` reps at 30 fps, bar racked before and after.
pub fn scripted_set(reps: usize) -> Vec<JointFrame> {
    let clips = clips(reps);
    let curves: Vec<&[FeatureFrame]> = clips.iter().map(|c| c.rep.as_slice()).collect();
    session_stream(&curves, &StreamOptions::default()).unwrap()
}

pub fn good_clip(id: &str) -> RawClip {
    let mut clip = generate_clip(SquatLabel::Good, &GenConfig::default(), 5).clip;
    clip.clip_id = id.to_string();
    clip
}
