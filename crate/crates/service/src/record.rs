//! Session records: the event log and grades of one set, appended while the
//! set runs and frozen once it completes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use squat_core::diagnosis::GradedSquat;
use squat_core::session::{SessionConfig, SessionEvent};
use thiserror::Error;

use crate::formats::{check_format, check_version, FormatError};

pub const SESSION_FORMAT: &str = "squat-session";
pub const SESSION_VERSION: &str = "1.0";
pub const SESSION_MAJOR: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("session {0} is complete and can no longer change")]
pub struct RecordClosed(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: String,
    pub session_id: String,
    pub config: SessionConfig,
}

/// One appended line after the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum SessionEntry {
    Event { event: SessionEvent },
    Graded { graded: GradedSquat },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub config: SessionConfig,
    events: Vec<SessionEvent>,
    graded: Vec<GradedSquat>,
}

impl SessionRecord {
    pub fn new(session_id: impl Into<String>, config: SessionConfig) -> Self {
        Self {
            session_id: session_id.into(),
            config,
            events: Vec::new(),
            graded: Vec::new(),
        }
    }

    pub fn header(&self) -> SessionHeader {
        SessionHeader {
            format: SESSION_FORMAT.to_string(),
            version: SESSION_VERSION.to_string(),
            session_id: self.session_id.clone(),
            config: self.config,
        }
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn graded(&self) -> &[GradedSquat] {
        &self.graded
    }

    pub fn is_complete(&self) -> bool {
        matches!(self.events.last(), Some(SessionEvent::SetCompleted { .. }))
    }

    pub fn squat_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, SessionEvent::RepCompleted { .. }))
            .count()
    }

    pub fn data_errors(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, SessionEvent::DataError { .. }))
            .count()
    }

    pub fn append(&mut self, entry: SessionEntry) -> Result<(), RecordClosed> {
        if self.is_complete() {
            return Err(RecordClosed(self.session_id.clone()));
        }
        match entry {
            SessionEntry::Event { event } => self.events.push(event),
            SessionEntry::Graded { graded } => self.graded.push(graded),
        }
        Ok(())
    }

    /// The log as entries, events and grades interleaved in rep order.
    pub fn entries(&self) -> Vec<SessionEntry> {
        let mut grades = self.graded.iter().peekable();
        let mut out = Vec::with_capacity(self.events.len() + self.graded.len());
        for event in &self.events {
            out.push(SessionEntry::Event { event: event.clone() });
            if let SessionEvent::RepCompleted { clip, .. } = event {
                if let Some(g) = grades.next_if(|g| g.clip_id == clip.clip_id) {
                    out.push(SessionEntry::Graded { graded: g.clone() });
                }
            }
        }
        out.extend(grades.map(|g| SessionEntry::Graded { graded: g.clone() }));
        out
    }

    pub fn encode(&self, mut out: impl Write) -> Result<(), FormatError> {
        write_line(&mut out, &self.header(), 1)?;
        for (i, entry) in self.entries().iter().enumerate() {
            write_line(&mut out, entry, i + 2)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn decode(reader: impl BufRead) -> Result<Self, FormatError> {
        let mut lines = reader.lines().enumerate();
        let header: SessionHeader = loop {
            match lines.next() {
                None => return Err(FormatError::MissingHeader),
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((i, l)) => break serde_json::from_str(&l?).map_err(FormatError::json(i + 1))?,
            }
        };
        check_format(SESSION_FORMAT, &header.format)?;
        check_version(SESSION_FORMAT, &header.version, SESSION_MAJOR)?;
        let mut record = SessionRecord::new(header.session_id, header.config);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SessionEntry = serde_json::from_str(&line).map_err(FormatError::json(i + 1))?;
            match entry {
                SessionEntry::Event { event } => record.events.push(event),
                SessionEntry::Graded { graded } => record.graded.push(graded),
            }
        }
        Ok(record)
    }
}

pub(crate) fn write_line(out: &mut impl Write, value: &impl Serialize, line: usize) -> Result<(), FormatError> {
    serde_json::to_writer(&mut *out, value).map_err(FormatError::json(line))?;
    out.write_all(b"\n")?;
    Ok(())
}
