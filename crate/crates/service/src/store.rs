//! Directory-backed storage for session records and clip archives.
//!
//! ```text
//! <root>/sessions/<session_id>/session.jsonl
//! <root>/sessions/<session_id>/reps/<clip_id>/{meta.json, features.csv, joints.jsonl}
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use squat_core::label::SquatLabel;
use thiserror::Error;

use crate::archive::{self, ClipArchive, ClipMeta, RepOutcome};
use crate::formats::FormatError;
use crate::record::{write_line, RecordClosed, SessionEntry, SessionRecord};

pub const SESSION_FILE: &str = "session.jsonl";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("storage failure on {path}: {source}{}", retry_note(*.retry_after))]
    Storage {
        path: PathBuf,
        source: io::Error,
        /// Set when the failure looks transient.
        retry_after: Option<Duration>,
    },
    #[error("{kind} {id} already exists")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("invalid record: {0}")]
    Invalid(#[from] FormatError),
    #[error(transparent)]
    Closed(#[from] RecordClosed),
}

fn retry_note(after: Option<Duration>) -> String {
    match after {
        Some(d) => format!(" (retry in {} ms)", d.as_millis()),
        None => String::new(),
    }
}

impl PersistError {
    fn storage(path: &Path, source: io::Error) -> Self {
        use io::ErrorKind::*;
        let retry_after = match source.kind() {
            Interrupted | WouldBlock | TimedOut | ResourceBusy | StorageFull | QuotaExceeded => {
                Some(Duration::from_millis(250))
            }
            _ => None,
        };
        PersistError::Storage {
            path: path.to_path_buf(),
            source,
            retry_after,
        }
    }

    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            PersistError::Storage { retry_after, .. } => *retry_after,
            _ => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, PersistError::NotFound { .. })
    }
}

/// Ids become directory names, so they are limited to a safe alphabet.
pub fn check_id(id: &str) -> Result<(), PersistError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(PersistError::InvalidId(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub complete: bool,
    pub squat_count: usize,
    pub data_errors: usize,
    pub mean_score: Option<f64>,
    /// Timestamp of the first logged event.
    pub started_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSummary {
    pub clip_id: String,
    pub rep: usize,
    pub squat_index: Option<usize>,
    pub frames: usize,
    pub score: Option<f64>,
    pub issues: Vec<SquatLabel>,
    pub data_error: bool,
}

impl From<&ClipMeta> for RepSummary {
    fn from(m: &ClipMeta) -> Self {
        Self {
            clip_id: m.clip_id.clone(),
            rep: m.rep,
            squat_index: m.squat_index,
            frames: m.frame_count,
            score: m.score(),
            issues: m.issues(),
            data_error: matches!(m.outcome, RepOutcome::DataError { .. }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let root = root.into();
        let sessions = root.join("sessions");
        fs::create_dir_all(&sessions).map_err(|e| PersistError::storage(&sessions, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn clip_dir(&self, session_id: &str, clip_id: &str) -> PathBuf {
        self.session_dir(session_id).join("reps").join(clip_id)
    }

    /// Starts an append-only log for a new session.
    pub fn create_session(&self, record: &SessionRecord) -> Result<SessionWriter, PersistError> {
        check_id(&record.session_id)?;
        let dir = self.session_dir(&record.session_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(PersistError::DuplicateId {
                    kind: "session",
                    id: record.session_id.clone(),
                })
            }
            Err(e) => return Err(PersistError::storage(&dir, e)),
        }
        let path = dir.join(SESSION_FILE);
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|e| PersistError::storage(&path, e))?;
        let mut writer = SessionWriter {
            record: SessionRecord::new(record.session_id.clone(), record.config),
            out: BufWriter::new(file),
            path,
            lines: 0,
        };
        writer.write(&record.header())?;
        for entry in record.entries() {
            writer.append(entry)?;
        }
        Ok(writer)
    }

    /// Writes a whole record at once.
    pub fn persist_session(&self, record: &SessionRecord) -> Result<String, PersistError> {
        self.create_session(record)?;
        Ok(record.session_id.clone())
    }

    pub fn persist_clip(&self, clip: &ClipArchive) -> Result<String, PersistError> {
        check_id(&clip.meta.session_id)?;
        check_id(&clip.meta.clip_id)?;
        clip.validate()?;
        let session = self.session_dir(&clip.meta.session_id);
        let reps = session.join("reps");
        fs::create_dir_all(&reps).map_err(|e| PersistError::storage(&reps, e))?;
        let dir = self.clip_dir(&clip.meta.session_id, &clip.meta.clip_id);
        if dir.exists() {
            return Err(PersistError::DuplicateId {
                kind: "clip",
                id: clip.meta.clip_id.clone(),
            });
        }
        // Written beside the target and renamed so readers never see a
        // partial archive.
        let tmp = reps.join(format!(".tmp-{}", clip.meta.clip_id));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir(&tmp).map_err(|e| PersistError::storage(&tmp, e))?;
        if let Err(e) = clip.write_to(&tmp) {
            let _ = fs::remove_dir_all(&tmp);
            return Err(match e {
                FormatError::Io(io) => PersistError::storage(&tmp, io),
                other => other.into(),
            });
        }
        fs::rename(&tmp, &dir).map_err(|e| PersistError::storage(&dir, e))?;
        Ok(clip.meta.clip_id.clone())
    }

    pub fn load_session(&self, id: &str) -> Result<SessionRecord, PersistError> {
        check_id(id)?;
        let path = self.session_dir(id).join(SESSION_FILE);
        let file = File::open(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => PersistError::NotFound {
                kind: "session",
                id: id.to_string(),
            },
            _ => PersistError::storage(&path, e),
        })?;
        Ok(SessionRecord::decode(BufReader::new(file))?)
    }

    pub fn load_clip(&self, session_id: &str, clip_id: &str) -> Result<ClipArchive, PersistError> {
        check_id(session_id)?;
        check_id(clip_id)?;
        let dir = self.clip_dir(session_id, clip_id);
        if !dir.is_dir() {
            return Err(PersistError::NotFound {
                kind: "rep",
                id: clip_id.to_string(),
            });
        }
        Ok(ClipArchive::read_from(&dir)?)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, PersistError> {
        let dir = self.root.join("sessions");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| PersistError::storage(&dir, e))? {
            let entry = entry.map_err(|e| PersistError::storage(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if check_id(&name).is_ok() && entry.path().join(SESSION_FILE).is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, PersistError> {
        self.session_ids()?
            .into_iter()
            .map(|id| {
                let record = self.load_session(&id)?;
                let scores: Vec<f64> = record.graded().iter().map(|g| g.score).collect();
                Ok(SessionSummary {
                    session_id: id,
                    complete: record.is_complete(),
                    squat_count: record.squat_count(),
                    data_errors: record.data_errors(),
                    mean_score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
                    started_ms: record.events().first().map(|e| e.t_ms()),
                })
            })
            .collect()
    }

    /// Reps of a session in rep order.
    pub fn list_reps(&self, session_id: &str) -> Result<Vec<RepSummary>, PersistError> {
        Ok(self.rep_metas(session_id)?.iter().map(RepSummary::from).collect())
    }

    pub fn rep_metas(&self, session_id: &str) -> Result<Vec<ClipMeta>, PersistError> {
        check_id(session_id)?;
        let session = self.session_dir(session_id);
        if !session.is_dir() {
            return Err(PersistError::NotFound {
                kind: "session",
                id: session_id.to_string(),
            });
        }
        let reps = session.join("reps");
        let mut metas = Vec::new();
        if reps.is_dir() {
            for entry in fs::read_dir(&reps).map_err(|e| PersistError::storage(&reps, e))? {
                let entry = entry.map_err(|e| PersistError::storage(&reps, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if check_id(&name).is_ok() && entry.path().is_dir() {
                    metas.push(archive::read_meta(&entry.path())?);
                }
            }
        }
        metas.sort_by_key(|m| m.rep);
        Ok(metas)
    }
}

/// Open session log; every append is flushed and synced before returning.
pub struct SessionWriter {
    record: SessionRecord,
    out: BufWriter<File>,
    path: PathBuf,
    lines: usize,
}

impl SessionWriter {
    fn write(&mut self, value: &impl Serialize) -> Result<(), PersistError> {
        self.lines += 1;
        let path = self.path.clone();
        write_line(&mut self.out, value, self.lines).map_err(|e| match e {
            FormatError::Io(io) => PersistError::storage(&path, io),
            other => other.into(),
        })?;
        self.out.flush().map_err(|e| PersistError::storage(&path, e))?;
        self.out.get_ref().sync_data().map_err(|e| PersistError::storage(&path, e))
    }

    pub fn append(&mut self, entry: SessionEntry) -> Result<(), PersistError> {
        self.record.append(entry.clone())?;
        self.write(&entry)
    }

    pub fn record(&self) -> &SessionRecord {
        &self.record
    }

    pub fn is_complete(&self) -> bool {
        self.record.is_complete()
    }
}
