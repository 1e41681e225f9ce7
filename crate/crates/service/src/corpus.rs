//! Corpus files: a header line, then one labeled feature clip per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use squat_core::preprocess::RawClip;

use crate::formats::{check_format, check_version, FormatError};

pub const CORPUS_FORMAT: &str = "squat-corpus";
pub const CORPUS_VERSION: &str = "1.0";
pub const CORPUS_MAJOR: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: String,
    pub clips: usize,
    /// Generator seed, when the corpus is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CorpusHeader {
    pub fn new(clips: usize, seed: Option<u64>) -> Self {
        Self {
            format: CORPUS_FORMAT.to_string(),
            version: CORPUS_VERSION.to_string(),
            clips,
            seed,
        }
    }
}

pub fn encode_corpus(clips: &[RawClip], seed: Option<u64>, mut out: impl Write) -> Result<(), FormatError> {
    serde_json::to_writer(&mut out, &CorpusHeader::new(clips.len(), seed)).map_err(FormatError::json(1))?;
    out.write_all(b"\n")?;
    for (i, clip) in clips.iter().enumerate() {
        serde_json::to_writer(&mut out, clip).map_err(FormatError::json(i + 2))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn decode_corpus(reader: impl BufRead) -> Result<(CorpusHeader, Vec<RawClip>), FormatError> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (i, first) = lines.next().ok_or(FormatError::MissingHeader)?;
    let header: CorpusHeader = serde_json::from_str(&first?).map_err(FormatError::json(i + 1))?;
    check_format(CORPUS_FORMAT, &header.format)?;
    check_version(CORPUS_FORMAT, &header.version, CORPUS_MAJOR)?;
    let mut clips = Vec::with_capacity(header.clips);
    for (i, line) in lines {
        clips.push(serde_json::from_str(&line?).map_err(FormatError::json(i + 1))?);
    }
    if clips.len() != header.clips {
        return Err(FormatError::Count {
            what: "corpus clip count",
            expected: header.clips,
            found: clips.len(),
        });
    }
    Ok((header, clips))
}

pub fn write_corpus(path: &Path, clips: &[RawClip], seed: Option<u64>) -> Result<(), FormatError> {
    encode_corpus(clips, seed, BufWriter::new(File::create(path)?))
}

pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, Vec<RawClip>), FormatError> {
    decode_corpus(BufReader::new(File::open(path)?))
}
