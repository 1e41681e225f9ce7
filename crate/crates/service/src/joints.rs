//! Line-delimited joint streams: one header line, then one record per frame.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use squat_core::kinematics::{JointFrame, Point2};

use crate::formats::{check_format, check_version, FormatError};

pub const JOINT_FORMAT: &str = "squat-joints";
pub const JOINT_VERSION: &str = "1.0";
pub const JOINT_MAJOR: u32 = 1;
pub const DEFAULT_COORDS: &str = "image pixels, origin top-left, x right, y down";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointStreamHeader {
    pub format: String,
    pub version: String,
    pub frame_rate: f64,
    pub coords: String,
}

impl JointStreamHeader {
    pub fn new(frame_rate: f64) -> Self {
        Self {
            format: JOINT_FORMAT.to_string(),
            version: JOINT_VERSION.to_string(),
            frame_rate,
            coords: DEFAULT_COORDS.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct JointRecord {
    t: i64,
    pelvis: [f64; 2],
    spine_navel: [f64; 2],
    knee: [f64; 2],
    ankle: [f64; 2],
    forefoot: [f64; 2],
    bar: [f64; 2],
}

fn pair(p: Point2) -> [f64; 2] {
    [p.x, p.y]
}

fn point(p: [f64; 2]) -> Point2 {
    Point2::new(p[0], p[1])
}

impl From<&JointFrame> for JointRecord {
    fn from(f: &JointFrame) -> Self {
        Self {
            t: f.timestamp_ms,
            pelvis: pair(f.pelvis),
            spine_navel: pair(f.spine_navel),
            knee: pair(f.knee),
            ankle: pair(f.ankle),
            forefoot: pair(f.forefoot),
            bar: pair(f.bar),
        }
    }
}

impl From<JointRecord> for JointFrame {
    fn from(r: JointRecord) -> Self {
        Self {
            timestamp_ms: r.t,
            pelvis: point(r.pelvis),
            spine_navel: point(r.spine_navel),
            knee: point(r.knee),
            ankle: point(r.ankle),
            forefoot: point(r.forefoot),
            bar: point(r.bar),
        }
    }
}

/// Frame-by-frame reader; checks the header up front and timestamp order as
/// it goes. Blank lines are skipped and unknown fields ignored.
pub struct JointStreamReader<R> {
    lines: std::io::Lines<R>,
    header: JointStreamHeader,
    line: usize,
    last_t: Option<i64>,
}

impl<R: BufRead> JointStreamReader<R> {
    pub fn new(reader: R) -> Result<Self, FormatError> {
        let mut lines = reader.lines();
        let mut line = 0;
        let text = loop {
            line += 1;
            match lines.next() {
                None => return Err(FormatError::MissingHeader),
                Some(l) => {
                    let l = l?;
                    if !l.trim().is_empty() {
                        break l;
                    }
                }
            }
        };
        let header: JointStreamHeader = serde_json::from_str(&text).map_err(FormatError::json(line))?;
        check_format(JOINT_FORMAT, &header.format)?;
        check_version(JOINT_FORMAT, &header.version, JOINT_MAJOR)?;
        Ok(Self {
            lines,
            header,
            line,
            last_t: None,
        })
    }

    pub fn header(&self) -> &JointStreamHeader {
        &self.header
    }
}

impl<R: BufRead> Iterator for JointStreamReader<R> {
    type Item = Result<JointFrame, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            let record: JointRecord = match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => return Some(Err(FormatError::Json { line, source: e })),
            };
            if let Some(previous) = self.last_t {
                if record.t <= previous {
                    return Some(Err(FormatError::NonIncreasing {
                        line,
                        previous,
                        got: record.t,
                    }));
                }
            }
            self.last_t = Some(record.t);
            return Some(Ok(record.into()));
        }
    }
}

pub struct JointStreamWriter<W: Write> {
    out: W,
    last_t: Option<i64>,
    line: usize,
}

impl<W: Write> JointStreamWriter<W> {
    pub fn new(mut out: W, header: &JointStreamHeader) -> Result<Self, FormatError> {
        serde_json::to_writer(&mut out, header).map_err(FormatError::json(1))?;
        out.write_all(b"\n")?;
        Ok(Self {
            out,
            last_t: None,
            line: 1,
        })
    }

    pub fn write(&mut self, frame: &JointFrame) -> Result<(), FormatError> {
        self.line += 1;
        if !frame.is_finite() {
            return Err(FormatError::NonFinite { line: self.line });
        }
        if let Some(previous) = self.last_t {
            if frame.timestamp_ms <= previous {
                return Err(FormatError::NonIncreasing {
                    line: self.line,
                    previous,
                    got: frame.timestamp_ms,
                });
            }
        }
        self.last_t = Some(frame.timestamp_ms);
        serde_json::to_writer(&mut self.out, &JointRecord::from(frame)).map_err(FormatError::json(self.line))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, FormatError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_joint_stream(path: &Path, header: &JointStreamHeader, frames: &[JointFrame]) -> Result<(), FormatError> {
    let mut w = JointStreamWriter::new(BufWriter::new(File::create(path)?), header)?;
    for f in frames {
        w.write(f)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_joint_stream(path: &Path) -> Result<(JointStreamHeader, Vec<JointFrame>), FormatError> {
    let reader = JointStreamReader::new(BufReader::new(File::open(path)?))?;
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, frames))
}

pub fn encode_joint_stream(header: &JointStreamHeader, frames: &[JointFrame]) -> Result<Vec<u8>, FormatError> {
    let mut w = JointStreamWriter::new(Vec::new(), header)?;
    for f in frames {
        w.write(f)?;
    }
    w.finish()
}

pub fn decode_joint_stream(bytes: &[u8]) -> Result<(JointStreamHeader, Vec<JointFrame>), FormatError> {
    let reader = JointStreamReader::new(bytes)?;
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, frames))
}
