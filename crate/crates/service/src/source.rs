//! Live frame sources: joint-stream file playback and a TCP socket feed that
//! speaks the same line grammar.

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use squat_core::diagnosis::{GradedSquat, ModelSet};
use squat_core::preprocess::{OutlierThresholds, RawClip};
use squat_core::session::{DiagnosisPipeline, RepGrader};
use tracing::{info, warn};

use crate::formats::FormatError;
use crate::joints::JointStreamReader;
use crate::live::LiveRunner;

/// Diagnosis pipeline that owns its models, for use on a worker thread.
#[derive(Clone)]
pub struct SharedPipeline {
    pub models: Arc<ModelSet>,
    pub thresholds: OutlierThresholds,
}

impl RepGrader for SharedPipeline {
    fn grade(&self, clip: &RawClip) -> Result<GradedSquat, String> {
        DiagnosisPipeline {
            models: &self.models,
            thresholds: self.thresholds,
        }
        .grade(clip)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    /// Replays a joint-stream file, paced at `frame_rate` (the file's own
    /// rate when absent). A rate of zero replays as fast as possible.
    File { path: PathBuf, frame_rate: Option<f64> },
    /// Listens for feed connections; each sends a joint-stream header and
    /// then records. `max_connections` bounds how many are served.
    Tcp { addr: SocketAddr, max_connections: Option<usize> },
}

impl FromStr for FrameSource {
    type Err = String;

    /// `file:<path>` or `tcp:<host:port>`; a bare path means a file.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            let addr = addr.parse().map_err(|e| format!("bad socket address {addr:?}: {e}"))?;
            return Ok(FrameSource::Tcp {
                addr,
                max_connections: None,
            });
        }
        let path = s.strip_prefix("file:").unwrap_or(s);
        if path.is_empty() {
            return Err("empty source path".into());
        }
        Ok(FrameSource::File {
            path: path.into(),
            frame_rate: None,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeedStats {
    pub frames: usize,
    pub rejected: usize,
}

/// Pushes every frame of `reader` into the runner, sleeping to hold
/// `frame_rate` when it is positive.
pub fn feed<R: BufRead, G: RepGrader>(
    reader: JointStreamReader<R>,
    runner: &mut LiveRunner<G>,
    frame_rate: f64,
) -> Result<FeedStats, FormatError> {
    let start = Instant::now();
    let mut stats = FeedStats::default();
    for (i, frame) in reader.enumerate() {
        let frame = frame?;
        if frame_rate > 0.0 {
            let due = start + Duration::from_secs_f64(i as f64 / frame_rate);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        stats.frames += 1;
        if let Err(e) = runner.push(frame) {
            stats.rejected += 1;
            warn!(error = %e, "frame not accepted");
        }
    }
    Ok(stats)
}

/// Runs `source` to completion on the calling thread, then closes the hub.
pub fn run_source<G: RepGrader>(source: &FrameSource, runner: &mut LiveRunner<G>) -> Result<FeedStats, FormatError> {
    let result = match source {
        FrameSource::File { path, frame_rate } => {
            let reader = JointStreamReader::new(BufReader::new(std::fs::File::open(path)?))?;
            let rate = frame_rate.unwrap_or(reader.header().frame_rate);
            info!(path = %path.display(), rate, "replaying joint stream");
            feed(reader, runner, rate)
        }
        FrameSource::Tcp { addr, max_connections } => {
            let listener = TcpListener::bind(addr)?;
            info!(addr = %listener.local_addr()?, "waiting for joint feed");
            serve_feed(listener, runner, *max_connections)
        }
    };
    runner.hub().close();
    result
}

/// Accepts feed connections one at a time; frames arrive at the sender's pace.
pub fn serve_feed<G: RepGrader>(
    listener: TcpListener,
    runner: &mut LiveRunner<G>,
    max_connections: Option<usize>,
) -> Result<FeedStats, FormatError> {
    let mut total = FeedStats::default();
    for (served, conn) in listener.incoming().enumerate() {
        let stream = conn?;
        let peer = stream.peer_addr().ok();
        let outcome = JointStreamReader::new(BufReader::new(stream)).and_then(|r| feed(r, runner, 0.0));
        match outcome {
            Ok(s) => {
                total.frames += s.frames;
                total.rejected += s.rejected;
                info!(?peer, frames = s.frames, "feed closed");
            }
            Err(e) => warn!(?peer, error = %e, "feed ended with an error"),
        }
        if max_connections.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(total)
}
