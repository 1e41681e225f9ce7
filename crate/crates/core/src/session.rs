//! Live session state machine: rack detection, rep segmentation on the
//! body–thigh threshold, data-error screening and event emission.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::{duration_ms, grade_tensor, GradedSquat, ModelSet};
use crate::kinematics::{FeatureExtractor, FeatureFrame, JointFrame, KinematicsError};
use crate::preprocess::{
    assemble_tensor, detect_outliers, sanitize, ExclusionReason, OutlierFlag, OutlierThresholds, RawClip,
    SanitizeOutcome,
};

/// Latency budget from the end of a rep to its grade.
pub const LATENCY_BUDGET_MS: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// A rep is recorded while the body–thigh angle is below this.
    pub bt_record_threshold: f64,
    /// Bar travel from the rack position that starts or ends a set.
    pub rack_displacement: f64,
    pub frame_rate_hint: f64,
    pub thresholds: OutlierThresholds,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            bt_record_threshold: 140.0,
            rack_displacement: 10.0,
            frame_rate_hint: 30.0,
            thresholds: OutlierThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Armed,
    Running,
    Recording,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("cannot {action} while {phase:?}")]
    InvalidTransition { phase: Phase, action: &'static str },
    #[error("frame timestamp {got} ms does not follow {previous} ms")]
    StreamOrderError { previous: i64, got: i64 },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DataErrorReason {
    MultipleOutliers { flags: Vec<OutlierFlag> },
    TooShort,
    /// The rep was accepted but preprocessing or a model failed on it.
    Pipeline { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    SetStarted { t_ms: i64 },
    RepStarted { t_ms: i64 },
    RepCompleted { t_ms: i64, index: usize, clip: RawClip },
    DataError { t_ms: i64, clip: RawClip, error: DataErrorReason },
    SetCompleted { t_ms: i64, count: usize },
}

impl SessionEvent {
    pub fn t_ms(&self) -> i64 {
        match self {
            SessionEvent::SetStarted { t_ms }
            | SessionEvent::RepStarted { t_ms }
            | SessionEvent::RepCompleted { t_ms, .. }
            | SessionEvent::DataError { t_ms, .. }
            | SessionEvent::SetCompleted { t_ms, .. } => *t_ms,
        }
    }
}

/// Read-only view of a session for status displays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub phase: Phase,
    pub rack_x: Option<f64>,
    pub squat_count: usize,
    pub recording_frames: usize,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: SessionConfig,
    phase: Phase,
    rack_x: Option<f64>,
    squat_count: usize,
    reps_seen: usize,
    clip: Vec<FeatureFrame>,
    last_t: Option<i64>,
    extractor: FeatureExtractor,
}

impl Session {
    pub fn new(id: impl Into<String>, config: SessionConfig) -> Self {
        Self {
            id: id.into(),
            config,
            phase: Phase::Idle,
            rack_x: None,
            squat_count: 0,
            reps_seen: 0,
            clip: Vec::new(),
            last_t: None,
            extractor: FeatureExtractor::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn squat_count(&self) -> usize {
        self.squat_count
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            phase: self.phase,
            rack_x: self.rack_x,
            squat_count: self.squat_count,
            recording_frames: self.clip.len(),
        }
    }

    /// Captures the rack position from the bar in `frame`.
    pub fn arm(&mut self, frame: &JointFrame) -> Result<(), SessionError> {
        if self.phase != Phase::Idle {
            return Err(SessionError::InvalidTransition {
                phase: self.phase,
                action: "arm",
            });
        }
        self.rack_x = Some(frame.bar.x);
        self.phase = Phase::Armed;
        Ok(())
    }

    /// Extracts features from `frame` and advances the state machine.
    pub fn push_joints(&mut self, frame: &JointFrame) -> Result<(FeatureFrame, Vec<SessionEvent>), SessionError> {
        self.check_order(frame.timestamp_ms)?;
        self.check_armed("step")?;
        let features = self.extractor.clone().push(frame)?;
        let events = self.step(frame, &features)?;
        // Only commit the knee–hip memory once the frame is accepted.
        self.extractor.push(frame)?;
        Ok((features, events))
    }

    fn check_order(&self, t: i64) -> Result<(), SessionError> {
        match self.last_t {
            Some(previous) if t <= previous => Err(SessionError::StreamOrderError { previous, got: t }),
            _ => Ok(()),
        }
    }

    fn check_armed(&self, action: &'static str) -> Result<(), SessionError> {
        if self.phase == Phase::Idle {
            Err(SessionError::InvalidTransition {
                phase: Phase::Idle,
                action,
            })
        } else {
            Ok(())
        }
    }

    /// One transition for a frame whose features are already known.
    pub fn step(&mut self, frame: &JointFrame, features: &FeatureFrame) -> Result<Vec<SessionEvent>, SessionError> {
        let t = frame.timestamp_ms;
        self.check_order(t)?;
        self.check_armed("step")?;
        self.last_t = Some(t);
        let rack_x = self.rack_x.expect("armed sessions have a rack position");
        let away = (frame.bar.x - rack_x).abs() > self.config.rack_displacement;
        let below = features.bt < self.config.bt_record_threshold;
        let mut events = Vec::new();
        match self.phase {
            Phase::Idle => unreachable!("checked above"),
            Phase::Armed => {
                if away {
                    self.phase = Phase::Running;
                    events.push(SessionEvent::SetStarted { t_ms: t });
                }
            }
            Phase::Running => {
                if !away {
                    self.phase = Phase::Armed;
                    events.push(SessionEvent::SetCompleted {
                        t_ms: t,
                        count: self.squat_count,
                    });
                } else if below {
                    self.phase = Phase::Recording;
                    self.clip.push(*features);
                    events.push(SessionEvent::RepStarted { t_ms: t });
                }
            }
            Phase::Recording => {
                if below {
                    self.clip.push(*features);
                } else {
                    self.phase = Phase::Running;
                    events.push(self.finish_rep(t));
                }
            }
        }
        Ok(events)
    }

    fn finish_rep(&mut self, t: i64) -> SessionEvent {
        self.reps_seen += 1;
        let clip = RawClip {
            clip_id: format!("{}-rep{:03}", self.id, self.reps_seen),
            frames: std::mem::take(&mut self.clip),
            label: None,
        };
        if clip.frames.len() < 2 {
            return SessionEvent::DataError {
                t_ms: t,
                clip,
                error: DataErrorReason::TooShort,
            };
        }
        let flags = detect_outliers(&clip, &self.config.thresholds);
        if flags.len() >= 2 {
            return SessionEvent::DataError {
                t_ms: t,
                clip,
                error: DataErrorReason::MultipleOutliers { flags },
            };
        }
        self.squat_count += 1;
        SessionEvent::RepCompleted {
            t_ms: t,
            index: self.squat_count,
            clip,
        }
    }
}

/// Turns an accepted rep into a graded squat.
pub trait RepGrader {
    fn grade(&self, clip: &RawClip) -> Result<GradedSquat, String>;
}

/// Preprocessing plus the four diagnosis models.
pub struct DiagnosisPipeline<'a> {
    pub models: &'a ModelSet,
    pub thresholds: OutlierThresholds,
}

impl RepGrader for DiagnosisPipeline<'_> {
    fn grade(&self, clip: &RawClip) -> Result<GradedSquat, String> {
        let start = Instant::now();
        let clean = match sanitize(clip, &self.thresholds) {
            SanitizeOutcome::Clean(c) => c,
            SanitizeOutcome::Excluded { reason, .. } => {
                return Err(match reason {
                    ExclusionReason::MultipleOutliers => "clip has multiple outliers".into(),
                    ExclusionReason::TooShort => "clip is too short".into(),
                })
            }
        };
        let tensor = assemble_tensor(&clean).map_err(|e| e.to_string())?;
        let mut graded = grade_tensor(&tensor, self.models).map_err(|e| e.to_string())?;
        graded.inference_ms = duration_ms(start.elapsed());
        Ok(graded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionOutput {
    /// Features of an accepted frame, for live plots.
    Features { features: FeatureFrame, phase: Phase },
    Event { event: SessionEvent },
    Graded { graded: GradedSquat, latency_ms: f64 },
    /// A frame whose joints could not be turned into features; it is dropped.
    FrameRejected { t_ms: i64, message: String },
}

/// Drives a session over a frame source: arms on the first frame, steps on
/// every frame and grades each completed rep before handling the next frame.
pub fn run_session(
    frames: impl IntoIterator<Item = JointFrame>,
    session: &mut Session,
    grader: &dyn RepGrader,
    mut emit: impl FnMut(SessionOutput),
) -> Result<(), SessionError> {
    for frame in frames {
        if session.phase() == Phase::Idle {
            session.arm(&frame)?;
        }
        let (features, events) = match session.push_joints(&frame) {
            Ok(out) => out,
            Err(SessionError::Kinematics(e)) => {
                emit(SessionOutput::FrameRejected {
                    t_ms: frame.timestamp_ms,
                    message: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let rep_end = Instant::now();
        emit(SessionOutput::Features {
            features,
            phase: session.phase(),
        });
        for event in events {
            let accepted = match &event {
                SessionEvent::RepCompleted { clip, .. } => Some(clip.clone()),
                _ => None,
            };
            emit(SessionOutput::Event { event });
            if let Some(clip) = accepted {
                match grader.grade(&clip) {
                    Ok(graded) => emit(SessionOutput::Graded {
                        graded,
                        latency_ms: duration_ms(rep_end.elapsed()),
                    }),
                    Err(message) => emit(SessionOutput::Event {
                        event: SessionEvent::DataError {
                            t_ms: frame.timestamp_ms,
                            clip,
                            error: DataErrorReason::Pipeline { message },
                        },
                    }),
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::SquatLabel;
    use crate::synthgen::{generate_clip, joint_frame, GenConfig, Linkage};
    use proptest::prelude::*;

    /// A frame with the given body–thigh angle and bar x, otherwise upright.
    fn frame(t: i64, bt: f64, bar_x: f64) -> (JointFrame, FeatureFrame) {
        let torso = 4.0;
        let f = FeatureFrame {
            timestamp_ms: t,
            bt,
            df: 10.0,
            torso,
            khr: 0.0,
            bs: 5.0,
        };
        let mut j = joint_frame(&f, &Linkage::default(), 0).unwrap();
        let dx = bar_x - j.bar.x;
        j = j.translate(dx, 0.0);
        (j, f)
    }

    fn armed(rack_x: f64) -> Session {
        let mut s = Session::new("s", SessionConfig::default());
        let (j, _) = frame(0, 170.0, rack_x);
        s.arm(&j).unwrap();
        s
    }

    fn kinds(events: &[SessionEvent]) -> Vec<&'static str> {
        events
            .iter()
            .map(|e| match e {
                SessionEvent::SetStarted { .. } => "set_started",
                SessionEvent::RepStarted { .. } => "rep_started",
                SessionEvent::RepCompleted { .. } => "rep_completed",
                SessionEvent::DataError { .. } => "data_error",
                SessionEvent::SetCompleted { .. } => "set_completed",
            })
            .collect()
    }

    #[test]
    fn arm_captures_rack_and_rejects_rearm() {
        let mut s = Session::new("s", SessionConfig::default());
        let (j, _) = frame(0, 170.0, 500.0);
        s.arm(&j).unwrap();
        assert_eq!(s.phase(), Phase::Armed);
        assert_eq!(s.snapshot().rack_x, Some(500.0));
        assert!(matches!(s.arm(&j), Err(SessionError::InvalidTransition { .. })));
    }

    #[test]
    fn step_before_arm_is_invalid() {
        let mut s = Session::new("s", SessionConfig::default());
        let (j, f) = frame(0, 170.0, 500.0);
        assert!(matches!(s.step(&j, &f), Err(SessionError::InvalidTransition { .. })));
    }

    #[test]
    fn leaving_rack_starts_set() {
        let mut s = armed(500.0);
        let (j, f) = frame(1, 170.0, 505.0);
        assert!(s.step(&j, &f).unwrap().is_empty());
        let (j, f) = frame(2, 170.0, 515.0);
        assert_eq!(kinds(&s.step(&j, &f).unwrap()), vec!["set_started"]);
        assert_eq!(s.phase(), Phase::Running);
    }

    #[test]
    fn rep_segmentation_and_counting() {
        let mut s = armed(500.0);
        let mut t = 0;
        let mut go = |s: &mut Session, bt: f64, x: f64| {
            t += 33;
            let (j, f) = frame(t, bt, x);
            kinds(&s.step(&j, &f).unwrap())
        };
        assert_eq!(go(&mut s, 170.0, 440.0), vec!["set_started"]);
        assert!(go(&mut s, 141.0, 440.0).is_empty());
        assert_eq!(go(&mut s, 139.0, 440.0), vec!["rep_started"]);
        assert_eq!(s.phase(), Phase::Recording);
        assert!(go(&mut s, 100.0, 440.0).is_empty());
        assert_eq!(go(&mut s, 140.0, 440.0), vec!["rep_completed"]);
        assert_eq!(s.squat_count(), 1);
        // Passing the rack line mid-rep does not end the set.
        go(&mut s, 120.0, 440.0);
        go(&mut s, 110.0, 500.0);
        assert_eq!(s.phase(), Phase::Recording);
        go(&mut s, 150.0, 440.0);
        assert_eq!(s.squat_count(), 2);
        assert_eq!(go(&mut s, 170.0, 505.0), vec!["set_completed"]);
        assert_eq!(s.phase(), Phase::Armed);
    }

    #[test]
    fn outliers_give_data_error_without_count() {
        let mut s = armed(500.0);
        let rows = [(170.0, 10.0), (130.0, 10.0), (120.0, 70.0), (110.0, 75.0), (150.0, 10.0)];
        let mut all = Vec::new();
        for (i, &(bt, df)) in rows.iter().enumerate() {
            let (j, mut f) = frame(i as i64 + 1, bt, 440.0);
            f.df = df;
            all.extend(s.step(&j, &f).unwrap());
        }
        assert_eq!(kinds(&all), vec!["set_started", "rep_started", "data_error"]);
        match &all[2] {
            SessionEvent::DataError {
                error: DataErrorReason::MultipleOutliers { flags },
                clip,
                ..
            } => {
                assert_eq!(flags.len(), 2);
                assert_eq!(clip.frames.len(), 3);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(s.squat_count(), 0);
    }

    #[test]
    fn single_frame_dip_is_too_short() {
        let mut s = armed(500.0);
        let mut all = Vec::new();
        for (i, bt) in [170.0, 139.0, 141.0].into_iter().enumerate() {
            let (j, f) = frame(i as i64 + 1, bt, 440.0);
            all.extend(s.step(&j, &f).unwrap());
        }
        assert!(matches!(
            all.last(),
            Some(SessionEvent::DataError {
                error: DataErrorReason::TooShort,
                ..
            })
        ));
    }

    #[test]
    fn timestamps_must_increase() {
        let mut s = armed(500.0);
        let (j, f) = frame(10, 170.0, 500.0);
        s.step(&j, &f).unwrap();
        let (j, f) = frame(10, 170.0, 500.0);
        assert_eq!(
            s.step(&j, &f),
            Err(SessionError::StreamOrderError {
                previous: 10,
                got: 10
            })
        );
    }

    #[test]
    fn never_leaving_rack_emits_nothing() {
        let mut s = armed(500.0);
        for i in 1..100 {
            let (j, f) = frame(i, if i % 20 < 10 { 100.0 } else { 170.0 }, 500.0 + (i % 7) as f64);
            assert!(s.step(&j, &f).unwrap().is_empty());
        }
    }

    #[test]
    fn degenerate_frame_is_rejected_without_state_change() {
        let mut s = armed(500.0);
        let (mut j, _) = frame(5, 170.0, 500.0);
        j.pelvis = j.knee;
        let before = s.snapshot();
        assert!(matches!(s.push_joints(&j), Err(SessionError::Kinematics(_))));
        assert_eq!(s.snapshot(), before);
        let (j, _) = frame(5, 170.0, 500.0);
        assert!(s.push_joints(&j).is_ok());
    }

    /// Brute-force reference: walk the stream and count upward crossings that
    /// close a sub-threshold run begun while away from the rack.
    fn crossing_reference(stream: &[(f64, f64)], rack_x: f64) -> (usize, Vec<Vec<usize>>) {
        let mut count = 0;
        let mut runs = Vec::new();
        let mut in_set = false;
        let mut run: Option<Vec<usize>> = None;
        for (i, &(bt, x)) in stream.iter().enumerate() {
            let away = (x - rack_x).abs() > 10.0;
            if let Some(r) = run.as_mut() {
                if bt < 140.0 {
                    r.push(i);
                } else {
                    let r = run.take().unwrap();
                    if r.len() >= 2 {
                        count += 1;
                    }
                    runs.push(r);
                }
                continue;
            }
            if !in_set {
                in_set = away;
            } else if !away {
                in_set = false;
            } else if bt < 140.0 {
                run = Some(vec![i]);
            }
        }
        (count, runs)
    }

    proptest! {
        #[test]
        fn count_matches_crossing_reference(
            stream in proptest::collection::vec((prop_oneof![100.0..139.9f64, 140.0..175.0f64], prop_oneof![495.0..505.0f64, 420.0..460.0f64]), 1..200)
        ) {
            let mut s = armed(500.0);
            let mut clips = Vec::new();
            for (i, &(bt, x)) in stream.iter().enumerate() {
                let (j, f) = frame(i as i64 + 1, bt, x);
                for e in s.step(&j, &f).unwrap() {
                    if let SessionEvent::RepCompleted { clip, .. } | SessionEvent::DataError { clip, .. } = e {
                        clips.push(clip);
                    }
                }
            }
            let (count, runs) = crossing_reference(&stream, 500.0);
            prop_assert_eq!(s.squat_count(), count);
            // Emitted clips are exactly the recorded runs, frame for frame.
            let closed: Vec<&Vec<usize>> = runs.iter().collect();
            prop_assert_eq!(clips.len(), closed.len());
            for (clip, run) in clips.iter().zip(closed) {
                let ts: Vec<i64> = clip.frames.iter().map(|f| f.timestamp_ms).collect();
                let expected: Vec<i64> = run.iter().map(|&i| i as i64 + 1).collect();
                prop_assert_eq!(ts, expected);
            }
        }
    }

    struct FixedGrader;

    impl RepGrader for FixedGrader {
        fn grade(&self, clip: &RawClip) -> Result<GradedSquat, String> {
            Ok(GradedSquat {
                clip_id: clip.clip_id.clone(),
                diagnosis: crate::diagnosis::DiagnosisResult {
                    issues: vec![],
                    heads: vec![],
                },
                score: 100.0,
                advice: crate::diagnosis::advise_issues(&[]),
                inference_ms: 0.0,
            })
        }
    }

    fn scripted(reps: usize, bad: Option<usize>) -> Vec<JointFrame> {
        let clips: Vec<_> = (0..reps)
            .map(|i| {
                let mut c = generate_clip(SquatLabel::Good, &GenConfig::default(), i as u64);
                if Some(i) == bad {
                    let mid = c.record_start + 5;
                    c.rep[mid].df = 80.0;
                    c.rep[mid + 2].df = 85.0;
                }
                c
            })
            .collect();
        let reps: Vec<&[FeatureFrame]> = clips.iter().map(|c| c.rep.as_slice()).collect();
        crate::synthgen::session_stream(&reps, &Default::default()).unwrap()
    }

    fn run(frames: Vec<JointFrame>) -> Vec<SessionOutput> {
        let mut s = Session::new("scripted", SessionConfig::default());
        let mut out = Vec::new();
        run_session(frames, &mut s, &FixedGrader, |o| out.push(o)).unwrap();
        out
    }

    fn count_events(out: &[SessionOutput], kind: &str) -> usize {
        out.iter()
            .filter(|o| match o {
                SessionOutput::Event { event } => kinds(std::slice::from_ref(event))[0] == kind,
                SessionOutput::Graded { .. } => kind == "graded",
                _ => false,
            })
            .count()
    }

    #[test]
    fn scripted_ten_rep_set() {
        let out = run(scripted(10, None));
        assert_eq!(count_events(&out, "set_started"), 1);
        assert_eq!(count_events(&out, "rep_completed"), 10);
        assert_eq!(count_events(&out, "graded"), 10);
        assert_eq!(count_events(&out, "set_completed"), 1);
        // Every completion is followed immediately by its grade.
        for (i, o) in out.iter().enumerate() {
            if let SessionOutput::Event {
                event: SessionEvent::RepCompleted { clip, .. },
            } = o
            {
                assert!(matches!(&out[i + 1], SessionOutput::Graded { graded, .. } if graded.clip_id == clip.clip_id));
            }
        }
    }

    #[test]
    fn scripted_set_with_one_bad_rep() {
        let out = run(scripted(5, Some(2)));
        assert_eq!(count_events(&out, "graded"), 4);
        assert_eq!(count_events(&out, "data_error"), 1);
    }

    #[test]
    fn deterministic_event_stream() {
        let frames = scripted(3, None);
        let strip = |o: Vec<SessionOutput>| {
            o.into_iter()
                .filter(|x| !matches!(x, SessionOutput::Graded { .. }))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(run(frames.clone())), strip(run(frames)));
    }

    #[test]
    fn session_clips_match_generator() {
        let clip = generate_clip(SquatLabel::HipRisingTooFast, &GenConfig::default(), 11);
        let frames = crate::synthgen::session_stream(&[&clip.rep], &Default::default()).unwrap();
        let out = run(frames);
        let got = out
            .iter()
            .find_map(|o| match o {
                SessionOutput::Event {
                    event: SessionEvent::RepCompleted { clip, .. },
                } => Some(clip.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(got.frames.len(), clip.clip.frames.len());
        for (a, b) in got.frames.iter().zip(&clip.clip.frames) {
            assert!((a.bt - b.bt).abs() < 1e-6 && (a.df - b.df).abs() < 1e-6 && (a.bs - b.bs).abs() < 1e-6);
            assert!((a.khr - b.khr).abs() < 1e-6 * b.khr.abs().max(1.0));
        }
    }
}
