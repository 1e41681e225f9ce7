//! The live session loop: joint frames in, wire messages and stored reps out.

use std::sync::Arc;
use std::time::Instant;

use squat_core::diagnosis::duration_ms;
use squat_core::kinematics::JointFrame;
use squat_core::preprocess::RawClip;
use squat_core::session::{DataErrorReason, Phase, RepGrader, Session, SessionConfig, SessionError, SessionEvent};
use thiserror::Error;
use tracing::{debug, warn};

use crate::api::{ApiBody, Status};
use crate::archive::{ClipArchive, ClipMeta, RepOutcome};
use crate::hub::Hub;
use crate::record::{SessionEntry, SessionRecord};
use crate::store::{RepSummary, SessionWriter, Store};

pub const DEFAULT_UI_RATE: f64 = 15.0;

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Passes at most `rate` frames per second of stream time.
#[derive(Debug, Clone)]
pub struct Decimator {
    rate: Option<f64>,
    last_bucket: Option<i64>,
}

impl Decimator {
    /// A non-positive rate passes every frame.
    pub fn new(rate: f64) -> Self {
        Self {
            rate: (rate > 0.0).then_some(rate),
            last_bucket: None,
        }
    }

    pub fn admit(&mut self, t_ms: i64) -> bool {
        let Some(rate) = self.rate else { return true };
        let bucket = (t_ms as f64 * rate / 1000.0).floor() as i64;
        if self.last_bucket.is_some_and(|b| bucket <= b) {
            return false;
        }
        self.last_bucket = Some(bucket);
        true
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub session: SessionConfig,
    /// Feature-point and frame messages per second of stream time.
    pub ui_rate: f64,
    pub frame_rate: f64,
    /// Keep each rep's joint frames in its archive.
    pub keep_joints: bool,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            ui_rate: DEFAULT_UI_RATE,
            frame_rate: 30.0,
            keep_joints: true,
        }
    }
}

/// Drives one live session. Each set becomes its own stored session,
/// `<base>-set<NN>`; the runner re-arms at the same rack when a set ends.
pub struct LiveRunner<G> {
    base_id: String,
    config: LiveConfig,
    /// Without a grader reps are segmented and stored ungraded.
    grader: Option<G>,
    hub: Arc<Hub>,
    store: Option<Store>,
    session: Session,
    sets: usize,
    reps_seen: usize,
    /// Graded (or, without a grader, accepted) reps of the current set.
    squats: usize,
    rack_x: Option<f64>,
    writer: Option<SessionWriter>,
    record: Option<SessionRecord>,
    finished: Vec<SessionRecord>,
    rep_joints: Vec<JointFrame>,
    decimator: Decimator,
    status: Status,
}

fn set_id(base: &str, set: usize) -> String {
    format!("{base}-set{set:02}")
}

impl<G: RepGrader> LiveRunner<G> {
    pub fn new(
        base_id: impl Into<String>,
        config: LiveConfig,
        grader: Option<G>,
        hub: Arc<Hub>,
        store: Option<Store>,
    ) -> Self {
        let base_id = base_id.into();
        Self {
            session: Session::new(set_id(&base_id, 1), config.session),
            base_id,
            decimator: Decimator::new(config.ui_rate),
            config,
            grader,
            hub,
            store,
            sets: 1,
            reps_seen: 0,
            squats: 0,
            rack_x: None,
            writer: None,
            record: None,
            finished: Vec::new(),
            rep_joints: Vec::new(),
            status: Status::Idle,
        }
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    /// Id of the set in progress, or of the next one.
    pub fn session_id(&self) -> &str {
        self.session.id()
    }

    /// The record of the set in progress.
    pub fn current_record(&self) -> Option<&SessionRecord> {
        self.writer.as_ref().map(|w| w.record()).or(self.record.as_ref())
    }

    /// Records of completed sets.
    pub fn finished(&self) -> &[SessionRecord] {
        &self.finished
    }

    fn set_status(&mut self, t_ms: i64, status: Status) {
        if status == self.status {
            return;
        }
        self.status = status;
        let count = self.squats;
        self.hub.publish(t_ms, ApiBody::StatusChange { status, squat_count: count }, |l| {
            l.status = status;
            l.squat_count = count;
        });
    }

    /// Captures the rack from `frame`, or reuses the one already known: the
    /// frame that ends a set is only near the rack, not on it.
    fn arm(&mut self, frame: &JointFrame) -> Result<(), SessionError> {
        let rack_x = *self.rack_x.get_or_insert(frame.bar.x);
        let mut at_rack = *frame;
        at_rack.bar.x = rack_x;
        self.session.arm(&at_rack)?;
        self.hub.update_state(|l| {
            l.rack_x = Some(rack_x);
            l.reps.clear();
            l.squat_count = 0;
            l.recording_frames = 0;
        });
        self.set_status(frame.timestamp_ms, Status::Armed);
        Ok(())
    }

    pub fn push(&mut self, frame: JointFrame) -> Result<(), LiveError> {
        let received = Instant::now();
        let t = frame.timestamp_ms;
        if self.session.phase() == Phase::Idle {
            self.arm(&frame)?;
        }
        let (features, events) = match self.session.push_joints(&frame) {
            Ok(out) => out,
            Err(SessionError::Kinematics(e)) => {
                debug!(t_ms = t, error = %e, "frame rejected");
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        if self.session.phase() == Phase::Recording {
            self.rep_joints.push(frame);
        }
        if self.decimator.admit(t) {
            self.hub.publish(t, ApiBody::Frame { frame }, |_| {});
            let recording = self.session.snapshot().recording_frames;
            self.hub
                .publish(t, ApiBody::feature_point(&features), |l| l.recording_frames = recording);
        }
        for event in events {
            self.handle(event, &frame, received);
        }
        Ok(())
    }

    fn log(&mut self, entry: SessionEntry) {
        let result = match (self.writer.as_mut(), self.record.as_mut()) {
            (Some(w), _) => w.append(entry).map_err(|e| e.to_string()),
            (None, Some(r)) => r.append(entry).map_err(|e| e.to_string()),
            (None, None) => Ok(()),
        };
        if let Err(e) = result {
            warn!(error = %e, "session log append failed");
        }
    }

    fn take_archive(&mut self, clip: &RawClip) -> ClipArchive {
        let joints = std::mem::take(&mut self.rep_joints);
        let mut meta = ClipMeta::new(
            &clip.clip_id,
            self.session.id(),
            self.reps_seen,
            clip.frames.len(),
            self.config.frame_rate,
        );
        meta.label = clip.label;
        ClipArchive {
            meta,
            features: clip.frames.clone(),
            joints: (self.config.keep_joints && joints.len() == clip.frames.len()).then_some(joints),
        }
    }

    fn store_clip(&self, archive: &ClipArchive) {
        if let Some(store) = &self.store {
            if let Err(e) = store.persist_clip(archive) {
                warn!(clip = %archive.meta.clip_id, error = %e, "rep archive not stored");
            }
        }
    }

    fn data_error(&mut self, t: i64, clip: &RawClip, error: DataErrorReason, mut archive: ClipArchive) {
        let rep = self.reps_seen;
        self.hub.publish(
            t,
            ApiBody::DataError {
                rep,
                clip_id: clip.clip_id.clone(),
                frames: clip.frames.len(),
                error: error.clone(),
            },
            |l| {
                l.recording_frames = 0;
                l.reps.push(RepSummary {
                    clip_id: clip.clip_id.clone(),
                    rep,
                    squat_index: None,
                    frames: clip.frames.len(),
                    score: None,
                    issues: Vec::new(),
                    data_error: true,
                });
            },
        );
        archive.meta.outcome = RepOutcome::DataError { error };
        self.store_clip(&archive);
        self.set_status(t, Status::DataError);
    }

    fn handle(&mut self, event: SessionEvent, frame: &JointFrame, received: Instant) {
        let t = event.t_ms();
        match event {
            SessionEvent::SetStarted { .. } => {
                let record = SessionRecord::new(self.session.id(), self.config.session);
                match self.store.as_ref().map(|s| s.create_session(&record)) {
                    Some(Ok(w)) => self.writer = Some(w),
                    Some(Err(e)) => {
                        warn!(error = %e, "session log not created; keeping it in memory");
                        self.record = Some(record);
                    }
                    None => self.record = Some(record),
                }
                self.log(SessionEntry::Event { event });
                self.set_status(t, Status::Running);
            }
            SessionEvent::RepStarted { .. } => {
                self.log(SessionEntry::Event { event });
                let rep = self.reps_seen + 1;
                self.hub.publish(t, ApiBody::RepStarted { rep }, |_| {});
                self.set_status(t, Status::Recording);
            }
            SessionEvent::RepCompleted { clip, .. } => {
                self.reps_seen += 1;
                self.set_status(t, Status::Predicting);
                let mut archive = self.take_archive(&clip);
                let completed = |index: usize| SessionEntry::Event {
                    event: SessionEvent::RepCompleted {
                        t_ms: t,
                        index,
                        clip: clip.clone(),
                    },
                };
                let Some(grader) = self.grader.as_ref() else {
                    // rep_completed always carries a grade, so none is sent.
                    self.squats += 1;
                    let index = self.squats;
                    self.log(completed(index));
                    archive.meta.squat_index = Some(index);
                    self.hub.update_state(|l| l.squat_count = index);
                    self.store_clip(&archive);
                    self.set_status(t, Status::Running);
                    return;
                };
                match grader.grade(&clip) {
                    Ok(graded) => {
                        self.squats += 1;
                        let index = self.squats;
                        self.log(completed(index));
                        archive.meta.squat_index = Some(index);
                        let latency = duration_ms(received.elapsed());
                        let summary = RepSummary {
                            clip_id: clip.clip_id.clone(),
                            rep: self.reps_seen,
                            squat_index: Some(index),
                            frames: clip.frames.len(),
                            score: Some(graded.score),
                            issues: graded.diagnosis.issues.clone(),
                            data_error: false,
                        };
                        self.hub.publish(t, ApiBody::rep_completed(index, graded.clone(), latency), |l| {
                            l.squat_count = index;
                            l.recording_frames = 0;
                            l.reps.push(summary);
                        });
                        self.log(SessionEntry::Graded { graded: graded.clone() });
                        archive.meta = archive.meta.with_grade(graded, Some(latency));
                        self.store_clip(&archive);
                        self.set_status(t, Status::Running);
                    }
                    Err(message) => {
                        let error = DataErrorReason::Pipeline { message };
                        self.log(SessionEntry::Event {
                            event: SessionEvent::DataError {
                                t_ms: t,
                                clip: clip.clone(),
                                error: error.clone(),
                            },
                        });
                        self.data_error(t, &clip, error, archive);
                    }
                }
            }
            SessionEvent::DataError { ref clip, ref error, .. } => {
                let (clip, error) = (clip.clone(), error.clone());
                self.reps_seen += 1;
                self.log(SessionEntry::Event { event });
                let archive = self.take_archive(&clip);
                self.data_error(t, &clip, error, archive);
            }
            SessionEvent::SetCompleted { .. } => {
                let count = self.squats;
                self.log(SessionEntry::Event {
                    event: SessionEvent::SetCompleted { t_ms: t, count },
                });
                self.hub.publish(t, ApiBody::SetCompleted { count }, |_| {});
                if let Some(w) = self.writer.take() {
                    self.finished.push(w.record().clone());
                } else if let Some(r) = self.record.take() {
                    self.finished.push(r);
                }
                self.sets += 1;
                self.reps_seen = 0;
                self.squats = 0;
                self.session = Session::new(set_id(&self.base_id, self.sets), self.config.session);
                // The rack does not move between sets.
                if let Err(e) = self.arm(frame) {
                    warn!(error = %e, "could not re-arm after set");
                }
            }
        }
    }
}
