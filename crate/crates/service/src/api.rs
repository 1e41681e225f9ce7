//! Wire envelope shared by the live channel and the replay endpoints.

use serde::{Deserialize, Serialize};
use squat_core::diagnosis::{Advice, GradedSquat, ScoreCard};
use squat_core::kinematics::{FeatureFrame, JointFrame};
use squat_core::label::SquatLabel;
use squat_core::session::{DataErrorReason, Phase};

use crate::archive::ClipMeta;
use crate::store::{RepSummary, SessionSummary};

pub const API_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiMessage {
    /// Per-session, gap-free apart from the drops counted in `dropped`.
    pub seq: u64,
    pub session_id: String,
    pub t_ms: i64,
    /// Droppable messages discarded for this subscriber just before this one.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropped: u64,
    #[serde(flatten)]
    pub body: ApiBody,
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

/// Coaching status as shown to the trainee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// No set armed yet.
    Idle,
    /// Rack position captured; waiting for the bar to leave it.
    Armed,
    Running,
    Recording,
    /// A rep ended and is being graded.
    Predicting,
    DataError,
}

impl From<Phase> for Status {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Idle => Status::Idle,
            Phase::Armed => Status::Armed,
            Phase::Running => Status::Running,
            Phase::Recording => Status::Recording,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deduction {
    pub label: SquatLabel,
    pub key: String,
    pub points: f64,
}

pub fn deductions(issues: &[SquatLabel]) -> Vec<Deduction> {
    issues
        .iter()
        .map(|&label| Deduction {
            label,
            key: label.key().to_string(),
            points: ScoreCard::deduction(label),
        })
        .collect()
}

/// Feature columns of one rep, one array per feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureCurves {
    pub t_ms: Vec<i64>,
    pub bt: Vec<f64>,
    pub df: Vec<f64>,
    pub torso: Vec<f64>,
    pub khr: Vec<f64>,
    pub bs: Vec<f64>,
}

impl FeatureCurves {
    pub fn from_frames(frames: &[FeatureFrame]) -> Self {
        let mut c = Self::default();
        for f in frames {
            c.t_ms.push(f.timestamp_ms);
            c.bt.push(f.bt);
            c.df.push(f.df);
            c.torso.push(f.torso);
            c.khr.push(f.khr);
            c.bs.push(f.bs);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepDetail {
    pub meta: ClipMeta,
    pub curves: FeatureCurves,
    pub advice: Vec<Advice>,
    /// Absent when the rep was stored without joints.
    pub joints: Option<Vec<JointFrame>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApiBody {
    Frame {
        frame: JointFrame,
    },
    FeaturePoint {
        bt: f64,
        df: f64,
        torso: f64,
        khr: f64,
        bs: f64,
    },
    StatusChange {
        status: Status,
        squat_count: usize,
    },
    RepStarted {
        rep: usize,
    },
    RepCompleted {
        index: usize,
        clip_id: String,
        issues: Vec<SquatLabel>,
        score: f64,
        deductions: Vec<Deduction>,
        latency_ms: f64,
        graded: GradedSquat,
    },
    DataError {
        rep: usize,
        clip_id: String,
        frames: usize,
        error: DataErrorReason,
    },
    SetCompleted {
        count: usize,
    },
    /// First message to every subscriber: the state it joins into.
    Snapshot {
        status: Status,
        squat_count: usize,
        rack_x: Option<f64>,
        recording_frames: usize,
        reps: Vec<RepSummary>,
    },
    SessionList {
        sessions: Vec<SessionSummary>,
    },
    RepList {
        reps: Vec<RepSummary>,
    },
    RepDetail {
        detail: Box<RepDetail>,
    },
    Error {
        code: String,
        message: String,
    },
}

impl ApiBody {
    pub fn feature_point(f: &FeatureFrame) -> Self {
        ApiBody::FeaturePoint {
            bt: f.bt,
            df: f.df,
            torso: f.torso,
            khr: f.khr,
            bs: f.bs,
        }
    }

    pub fn rep_completed(index: usize, graded: GradedSquat, latency_ms: f64) -> Self {
        ApiBody::RepCompleted {
            index,
            clip_id: graded.clip_id.clone(),
            issues: graded.diagnosis.issues.clone(),
            score: graded.score,
            deductions: deductions(&graded.diagnosis.issues),
            latency_ms,
            graded,
        }
    }

    /// Frames and feature points may be dropped for slow subscribers; every
    /// other kind is always delivered.
    pub fn is_droppable(&self) -> bool {
        matches!(self, ApiBody::Frame { .. } | ApiBody::FeaturePoint { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ApiBody::Frame { .. } => "frame",
            ApiBody::FeaturePoint { .. } => "feature_point",
            ApiBody::StatusChange { .. } => "status_change",
            ApiBody::RepStarted { .. } => "rep_started",
            ApiBody::RepCompleted { .. } => "rep_completed",
            ApiBody::DataError { .. } => "data_error",
            ApiBody::SetCompleted { .. } => "set_completed",
            ApiBody::Snapshot { .. } => "snapshot",
            ApiBody::SessionList { .. } => "session_list",
            ApiBody::RepList { .. } => "rep_list",
            ApiBody::RepDetail { .. } => "rep_detail",
            ApiBody::Error { .. } => "error",
        }
    }
}

impl ApiMessage {
    /// Envelope for a one-off replay response.
    pub fn reply(session_id: impl Into<String>, body: ApiBody) -> Self {
        Self {
            seq: 0,
            session_id: session_id.into(),
            t_ms: 0,
            dropped: 0,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("api messages serialize")
    }
}
