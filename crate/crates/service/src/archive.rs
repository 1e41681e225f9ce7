//! Per-rep clip archives: a metadata record, a feature table and an optional
//! joint sub-stream, stored as three files in one directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use squat_core::diagnosis::GradedSquat;
use squat_core::kinematics::{FeatureFrame, JointFrame};
use squat_core::label::SquatLabel;
use squat_core::preprocess::RawClip;
use squat_core::session::DataErrorReason;

use crate::formats::{check_format, check_version, FormatError};
use crate::joints::{JointStreamHeader, JointStreamReader, JointStreamWriter};

pub const CLIP_FORMAT: &str = "squat-clip";
pub const CLIP_VERSION: &str = "1.0";
pub const CLIP_MAJOR: u32 = 1;

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const JOINTS_FILE: &str = "joints.jsonl";
pub const FEATURE_HEADER: [&str; 6] = ["timestamp_ms", "bt", "df", "torso", "khr", "bs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RepOutcome {
    Graded { graded: GradedSquat },
    DataError { error: DataErrorReason },
    /// Segmented but not run through the models.
    Ungraded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RepTimings {
    /// Preprocessing plus all four models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference_ms: Option<f64>,
    /// From the frame that ended the rep to the published grade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub format: String,
    pub version: String,
    pub clip_id: String,
    pub session_id: String,
    /// 1-based position among all reps of the session, data errors included.
    pub rep: usize,
    /// The squat count this rep produced; absent for data errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub squat_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SquatLabel>,
    pub frame_count: usize,
    pub frame_rate: f64,
    pub outcome: RepOutcome,
    pub model_versions: Vec<String>,
    pub timings: RepTimings,
}

impl ClipMeta {
    pub fn new(clip_id: &str, session_id: &str, rep: usize, frame_count: usize, frame_rate: f64) -> Self {
        Self {
            format: CLIP_FORMAT.to_string(),
            version: CLIP_VERSION.to_string(),
            clip_id: clip_id.to_string(),
            session_id: session_id.to_string(),
            rep,
            squat_index: None,
            label: None,
            frame_count,
            frame_rate,
            outcome: RepOutcome::Ungraded,
            model_versions: Vec::new(),
            timings: RepTimings::default(),
        }
    }

    pub fn score(&self) -> Option<f64> {
        match &self.outcome {
            RepOutcome::Graded { graded } => Some(graded.score),
            _ => None,
        }
    }

    pub fn issues(&self) -> Vec<SquatLabel> {
        match &self.outcome {
            RepOutcome::Graded { graded } => graded.diagnosis.issues.clone(),
            _ => Vec::new(),
        }
    }

    /// Attaches a grade, copying the model versions out of the diagnosis.
    pub fn with_grade(mut self, graded: GradedSquat, latency_ms: Option<f64>) -> Self {
        self.model_versions = graded.diagnosis.heads.iter().map(|h| h.version.clone()).collect();
        self.timings = RepTimings {
            inference_ms: Some(graded.inference_ms),
            latency_ms,
        };
        self.outcome = RepOutcome::Graded { graded };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipArchive {
    pub meta: ClipMeta,
    pub features: Vec<FeatureFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<JointFrame>>,
}

impl ClipArchive {
    pub fn validate(&self) -> Result<(), FormatError> {
        check_format(CLIP_FORMAT, &self.meta.format)?;
        check_version(CLIP_FORMAT, &self.meta.version, CLIP_MAJOR)?;
        if self.features.len() != self.meta.frame_count {
            return Err(FormatError::Count {
                what: "feature table rows",
                expected: self.meta.frame_count,
                found: self.features.len(),
            });
        }
        if let Some(joints) = &self.joints {
            if joints.len() != self.meta.frame_count {
                return Err(FormatError::Count {
                    what: "joint sub-stream frames",
                    expected: self.meta.frame_count,
                    found: joints.len(),
                });
            }
        }
        Ok(())
    }

    pub fn raw_clip(&self) -> RawClip {
        RawClip {
            clip_id: self.meta.clip_id.clone(),
            frames: self.features.clone(),
            label: self.meta.label,
        }
    }

    /// Writes the three files into `dir`, which must exist.
    pub fn write_to(&self, dir: &Path) -> Result<(), FormatError> {
        self.validate()?;
        let mut meta = serde_json::to_vec_pretty(&self.meta).map_err(FormatError::json(1))?;
        meta.push(b'\n');
        fs::write(dir.join(META_FILE), meta)?;
        write_features(&self.features, BufWriter::new(File::create(dir.join(FEATURES_FILE))?))?;
        if let Some(joints) = &self.joints {
            let header = JointStreamHeader::new(self.meta.frame_rate);
            let mut w = JointStreamWriter::new(BufWriter::new(File::create(dir.join(JOINTS_FILE))?), &header)?;
            for j in joints {
                w.write(j)?;
            }
            w.finish()?;
        }
        Ok(())
    }

    pub fn read_from(dir: &Path) -> Result<Self, FormatError> {
        let meta = read_meta(dir)?;
        let features = read_features(BufReader::new(File::open(dir.join(FEATURES_FILE))?))?;
        let joints_path = dir.join(JOINTS_FILE);
        let joints = if joints_path.exists() {
            let reader = JointStreamReader::new(BufReader::new(File::open(joints_path)?))?;
            Some(reader.collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };
        let archive = Self { meta, features, joints };
        archive.validate()?;
        Ok(archive)
    }
}

/// Reads only the metadata record of an archive directory.
pub fn read_meta(dir: &Path) -> Result<ClipMeta, FormatError> {
    let meta: ClipMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?).map_err(FormatError::json(1))?;
    check_format(CLIP_FORMAT, &meta.format)?;
    check_version(CLIP_FORMAT, &meta.version, CLIP_MAJOR)?;
    Ok(meta)
}

pub fn write_features(frames: &[FeatureFrame], out: impl Write) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(FEATURE_HEADER)?;
    for f in frames {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(input: impl Read) -> Result<Vec<FeatureFrame>, FormatError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?;
    if header.iter().ne(FEATURE_HEADER) {
        return Err(FormatError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    Ok(r.deserialize().collect::<Result<Vec<FeatureFrame>, _>>()?)
}
