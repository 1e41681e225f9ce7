//! The `squat` command line. Every subcommand prints one JSON document on
//! success; failures print a JSON error record on stderr and exit nonzero.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use squat_core::attribution::{channel_scores, select_channels, SelectionStrategy};
use squat_core::container::{load_model, save_attribution, save_model, AttributionReport};
use squat_core::diagnosis::{duration_ms, grade_tensor, ModelSet};
use squat_core::kinematics::FeatureFrame;
use squat_core::label::SquatLabel;
use squat_core::models::{evaluate, ArchName, ModelId, TrainedModel};
use squat_core::pipeline::{
    explain, model_view, prepare_dataset, run_pipeline, ModelChoice, PipelineConfig, FINAL_CHOICES,
};
use squat_core::preprocess::{OutlierThresholds, RawClip};
use squat_core::session::{DiagnosisPipeline, RepGrader};
use squat_core::synthgen::{
    clip_seed, generate_clip, generate_corpus, per_label_counts, session_stream, GenConfig, StreamOptions,
};

use crate::archive::{read_features, ClipArchive};
use crate::corpus::{read_corpus, write_corpus};
use crate::hub::{Hub, DEFAULT_QUEUE_CAPACITY};
use crate::joints::{read_joint_stream, write_joint_stream, JointStreamHeader};
use crate::live::{LiveConfig, LiveRunner, DEFAULT_UI_RATE};
use crate::server::{router, AppState};
use crate::source::{run_source, FrameSource, SharedPipeline};
use crate::store::Store;

pub const CORPUS_FILE: &str = "corpus.jsonl";

#[derive(Debug, Parser)]
#[command(name = "squat", version, about = "Barbell-squat diagnosis: simulate, train, evaluate, grade and serve")]
pub struct Cli {
    /// Directory for corpora, sessions and rep archives.
    #[arg(long, env = "SQUAT_DATA_DIR", default_value = "data", global = true)]
    pub data_dir: PathBuf,
    /// Directory holding the four model files and their attribution reports.
    #[arg(long, env = "SQUAT_MODEL_DIR", default_value = "models", global = true)]
    pub model_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic corpus (and optionally a session joint stream).
    Simulate(SimulateArgs),
    /// Segment a joint-stream file into stored, ungraded rep archives.
    Extract(ExtractArgs),
    /// Train the four models, explain them and retrain on the selected channels.
    Train(TrainArgs),
    /// Per-class F1 on the held-out split and per-rep diagnosis latency.
    Evaluate(EvaluateArgs),
    /// Attribution reports and channel selections for the stored models.
    Shap(ShapArgs),
    /// Diagnose and score one rep.
    Grade(GradeArgs),
    /// Live websocket feed plus replay endpoints.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub per_label: usize,
    #[arg(long, env = "SQUAT_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Corpus file; defaults to `<data-dir>/corpus.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a joint stream of one scripted set to this file.
    #[arg(long)]
    pub session_stream: Option<PathBuf>,
    /// Reps in the scripted set, cycling through the seven labels.
    #[arg(long, default_value_t = 10)]
    pub stream_reps: usize,
    #[arg(long, env = "SQUAT_FRAME_RATE", default_value_t = 30.0)]
    pub frame_rate: f64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Joint-stream file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "extract")]
    pub session_id: String,
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    /// Corpus file; defaults to `<data-dir>/corpus.jsonl`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = PipelineConfig::default().split_seed)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    /// Architecture for all four models (cnn, lstm, forest); defaults to the
    /// deployed per-model choice.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<ArchName>,
    /// Channel selection for all four models (all, intersected, positive).
    #[arg(long, value_parser = parse_strategy)]
    pub select: Option<SelectionStrategy>,
    #[arg(long, default_value_t = PipelineConfig::default().train_seed)]
    pub seed: u64,
    #[arg(long, default_value_t = PipelineConfig::default().shap_samples)]
    pub shap_samples: usize,
    #[arg(long, default_value_t = PipelineConfig::default().shap_permutations)]
    pub shap_permutations: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
}

#[derive(Debug, Args)]
pub struct ShapArgs {
    #[command(flatten)]
    pub corpus: CorpusArg,
    #[arg(long, default_value_t = PipelineConfig::default().shap_samples)]
    pub samples: usize,
    #[arg(long, default_value_t = PipelineConfig::default().shap_permutations)]
    pub permutations: usize,
    #[arg(long, default_value_t = PipelineConfig::default().shap_seed)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    /// A rep archive directory or a feature table (`features.csv` layout).
    #[arg(long)]
    pub clip: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SQUAT_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "SQUAT_PORT", default_value_t = 8080)]
    pub port: u16,
    /// `file:<joint stream>` or `tcp:<host:port>`; without it only replay is served.
    #[arg(long, env = "SQUAT_SOURCE")]
    pub source: Option<String>,
    /// Playback rate for file sources; defaults to the file's header rate.
    #[arg(long, env = "SQUAT_FRAME_RATE")]
    pub frame_rate: Option<f64>,
    /// Frame and feature-point messages per second sent to subscribers.
    #[arg(long, env = "SQUAT_UI_RATE", default_value_t = DEFAULT_UI_RATE)]
    pub ui_rate: f64,
    #[arg(long, default_value = "live")]
    pub session_id: String,
}

fn parse_arch(s: &str) -> Result<ArchName, String> {
    ArchName::parse(s).ok_or_else(|| format!("unknown architecture {s:?} (cnn, lstm, forest)"))
}

fn parse_strategy(s: &str) -> Result<SelectionStrategy, String> {
    SelectionStrategy::parse(s).ok_or_else(|| format!("unknown selection {s:?} (all, intersected, positive)"))
}

pub fn model_path(dir: &Path, id: ModelId) -> PathBuf {
    dir.join(format!("model-{}.json", id.letter()))
}

pub fn attribution_path(dir: &Path, id: ModelId) -> PathBuf {
    dir.join(format!("attribution-{}.json", id.letter()))
}

pub fn load_models(dir: &Path) -> Result<ModelSet> {
    let models = ModelId::ALL
        .iter()
        .map(|&id| {
            let path = model_path(dir, id);
            load_model(&path).with_context(|| format!("loading {}", path.display()))
        })
        .collect::<Result<Vec<TrainedModel>>>()?;
    Ok(ModelSet::new(models)?)
}

impl Cli {
    fn corpus_path(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().unwrap_or_else(|| self.data_dir.join(CORPUS_FILE))
    }

    fn pipeline_config(split_seed: u64) -> PipelineConfig {
        PipelineConfig {
            split_seed,
            ..PipelineConfig::default()
        }
    }

    pub fn command_name(&self) -> &'static str {
        match self.command {
            Command::Simulate(_) => "simulate",
            Command::Extract(_) => "extract",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Shap(_) => "shap",
            Command::Grade(_) => "grade",
            Command::Serve(_) => "serve",
        }
    }

    pub fn run(&self) -> Result<Value> {
        match &self.command {
            Command::Simulate(a) => self.simulate(a),
            Command::Extract(a) => self.extract(a),
            Command::Train(a) => self.train(a),
            Command::Evaluate(a) => self.evaluate(a),
            Command::Shap(a) => self.shap(a),
            Command::Grade(a) => self.grade(a),
            Command::Serve(a) => self.serve(a),
        }
    }

    fn simulate(&self, a: &SimulateArgs) -> Result<Value> {
        let config = GenConfig {
            frame_rate: a.frame_rate,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&per_label_counts(a.per_label), &config, a.seed);
        let clips: Vec<RawClip> = corpus.into_iter().map(|c| c.clip).collect();
        let out = self.corpus_path(&a.out);
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        write_corpus(&out, &clips, Some(a.seed)).with_context(|| format!("writing {}", out.display()))?;
        let mut report = json!({
            "corpus": out,
            "clips": clips.len(),
            "per_label": a.per_label,
            "seed": a.seed,
        });
        if let Some(path) = &a.session_stream {
            let reps: Vec<Vec<FeatureFrame>> = (0..a.stream_reps)
                .map(|i| {
                    let label = SquatLabel::ALL[i % SquatLabel::ALL.len()];
                    generate_clip(label, &config, clip_seed(a.seed ^ 0x5e55, i as u64)).rep
                })
                .collect();
            let refs: Vec<&[FeatureFrame]> = reps.iter().map(Vec::as_slice).collect();
            let options = StreamOptions {
                frame_rate: a.frame_rate,
                ..StreamOptions::default()
            };
            let frames = session_stream(&refs, &options)?;
            write_joint_stream(path, &JointStreamHeader::new(a.frame_rate), &frames)?;
            report["session_stream"] = json!({"path": path, "frames": frames.len(), "reps": a.stream_reps});
        }
        Ok(report)
    }

    fn extract(&self, a: &ExtractArgs) -> Result<Value> {
        let (header, frames) = read_joint_stream(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        let store = Store::open(&self.data_dir)?;
        let hub = Hub::new(&a.session_id, DEFAULT_QUEUE_CAPACITY);
        let config = LiveConfig {
            frame_rate: header.frame_rate,
            ..LiveConfig::default()
        };
        let mut runner = LiveRunner::<SharedPipeline>::new(&a.session_id, config, None, hub, Some(store.clone()));
        let mut rejected = 0;
        for frame in frames {
            if runner.push(frame).is_err() {
                rejected += 1;
            }
        }
        let mut sessions = Vec::new();
        for record in runner.finished().iter().chain(runner.current_record()) {
            sessions.push(json!({
                "session_id": record.session_id,
                "complete": record.is_complete(),
                "reps": store.list_reps(&record.session_id)?,
            }));
        }
        Ok(json!({"sessions": sessions, "rejected_frames": rejected}))
    }

    fn train(&self, a: &TrainArgs) -> Result<Value> {
        let path = self.corpus_path(&a.corpus.corpus);
        let (_, clips) = read_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
        let config = PipelineConfig {
            train_seed: a.seed,
            shap_samples: a.shap_samples,
            shap_permutations: a.shap_permutations,
            ..Self::pipeline_config(a.corpus.split_seed)
        };
        let choices: Vec<ModelChoice> = FINAL_CHOICES
            .iter()
            .map(|c| ModelChoice {
                model: c.model,
                arch: a.arch.unwrap_or(c.arch),
                strategy: a.select.unwrap_or(c.strategy),
            })
            .collect();
        let dataset = prepare_dataset(&clips, &config)?;
        let runs = run_pipeline(&dataset, &choices, &config)?;
        fs::create_dir_all(&self.model_dir)?;
        let mut models = Vec::new();
        for run in &runs {
            let id = run.choice.model;
            save_model(&run.selected, &model_path(&self.model_dir, id))?;
            let report = AttributionReport {
                model: id,
                arch: run.choice.arch,
                model_version: run.full.version_tag(),
                map: run.attribution.clone(),
                scores: run.scores.clone(),
                selections: vec![run.selection.clone()],
            };
            save_attribution(&report, &attribution_path(&self.model_dir, id))?;
            models.push(json!({
                "model": id,
                "arch": run.choice.arch,
                "strategy": run.choice.strategy.as_str(),
                "channels": run.selected.selected_channels.iter().map(|c| c.name()).collect::<Vec<_>>(),
                "fallback": run.selection.fallback,
                "version": run.selected.version_tag(),
                "all_channels_macro_f1": run.full_eval.macro_f1,
                "selected_macro_f1": run.selected_eval.macro_f1,
                "selected_f1": run.selected_eval.f1,
                "epochs": run.selected.summary.epochs_run,
                "seconds": {
                    "train_all": run.timings.train_full.as_secs_f64(),
                    "attribution": run.timings.attribution.as_secs_f64(),
                    "train_selected": run.timings.train_selected.as_secs_f64(),
                },
            }));
        }
        Ok(json!({
            "corpus": path,
            "model_dir": self.model_dir,
            "excluded_clips": dataset.excluded.len(),
            "models": models,
        }))
    }

    fn evaluate(&self, a: &EvaluateArgs) -> Result<Value> {
        let path = self.corpus_path(&a.corpus.corpus);
        let (_, clips) = read_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
        let models = load_models(&self.model_dir)?;
        let config = Self::pipeline_config(a.corpus.split_seed);
        let dataset = prepare_dataset(&clips, &config)?;
        let mut per_model = Vec::new();
        for model in models.iter() {
            let view = model_view(&dataset, model.model_id())?;
            let eval = evaluate(model, &view.test)?;
            per_model.push(json!({
                "model": model.model_id(),
                "version": model.version_tag(),
                "f1": eval.f1,
                "macro_f1": eval.macro_f1,
                "examples": eval.examples,
                "mean_model_latency_ms": eval.mean_latency_ms,
            }));
        }
        let mut latencies: Vec<f64> = dataset
            .split
            .test
            .iter()
            .map(|t| {
                let start = Instant::now();
                grade_tensor(&t.tensor, &models).map(|_| duration_ms(start.elapsed()))
            })
            .collect::<Result<_, _>>()?;
        latencies.sort_by(f64::total_cmp);
        Ok(json!({
            "corpus": path,
            "models": per_model,
            "per_rep_latency_ms": latency_summary(&latencies),
        }))
    }

    fn shap(&self, a: &ShapArgs) -> Result<Value> {
        let path = self.corpus_path(&a.corpus.corpus);
        let (_, clips) = read_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
        let models = load_models(&self.model_dir)?;
        let config = PipelineConfig {
            shap_samples: a.samples,
            shap_permutations: a.permutations,
            shap_seed: a.seed,
            ..Self::pipeline_config(a.corpus.split_seed)
        };
        let dataset = prepare_dataset(&clips, &config)?;
        let mut out = Vec::new();
        for model in models.iter() {
            let id = model.model_id();
            let view = model_view(&dataset, id)?;
            let map = explain(model, &view, &config)?;
            let scores = channel_scores(&map);
            let selections: Vec<_> = [SelectionStrategy::Intersected, SelectionStrategy::Positive]
                .into_iter()
                .map(|s| select_channels(&scores, s))
                .collect();
            let report = AttributionReport {
                model: id,
                arch: model.arch.name(),
                model_version: model.version_tag(),
                map,
                scores,
                selections,
            };
            let path = attribution_path(&self.model_dir, id);
            save_attribution(&report, &path)?;
            out.push(json!({
                "model": id,
                "report": path,
                "scores": report.scores,
                "selections": report.selections,
            }));
        }
        Ok(json!({"models": out}))
    }

    fn grade(&self, a: &GradeArgs) -> Result<Value> {
        let clip = if a.clip.is_dir() {
            ClipArchive::read_from(&a.clip)
                .with_context(|| format!("reading {}", a.clip.display()))?
                .raw_clip()
        } else {
            let file = fs::File::open(&a.clip).with_context(|| format!("opening {}", a.clip.display()))?;
            let frames = read_features(file).with_context(|| format!("reading {}", a.clip.display()))?;
            RawClip {
                clip_id: a.clip.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                frames,
                label: None,
            }
        };
        let models = load_models(&self.model_dir)?;
        let pipeline = DiagnosisPipeline {
            models: &models,
            thresholds: OutlierThresholds::default(),
        };
        let graded = pipeline.grade(&clip).map_err(|e| anyhow!("{}: {e}", clip.clip_id))?;
        Ok(serde_json::to_value(graded)?)
    }

    fn serve(&self, a: &ServeArgs) -> Result<Value> {
        let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("bad listen address")?;
        let store = Store::open(&self.data_dir)?;
        let source = match &a.source {
            Some(s) => {
                let mut source: FrameSource = s.parse().map_err(|e: String| anyhow!(e))?;
                if let FrameSource::File { frame_rate, .. } = &mut source {
                    *frame_rate = a.frame_rate;
                }
                Some(source)
            }
            None => None,
        };
        let hub = match &source {
            Some(source) => {
                let models = Arc::new(load_models(&self.model_dir)?);
                let hub = Hub::new(&a.session_id, DEFAULT_QUEUE_CAPACITY);
                let config = LiveConfig {
                    ui_rate: a.ui_rate,
                    frame_rate: a.frame_rate.unwrap_or(30.0),
                    ..LiveConfig::default()
                };
                let grader = SharedPipeline {
                    models,
                    thresholds: config.session.thresholds,
                };
                let mut runner = LiveRunner::new(&a.session_id, config, Some(grader), hub.clone(), Some(store.clone()));
                let source = source.clone();
                std::thread::spawn(move || match run_source(&source, &mut runner) {
                    Ok(stats) => tracing::info!(frames = stats.frames, "source finished"),
                    Err(e) => tracing::error!(error = %e, "source failed"),
                });
                Some(hub)
            }
            None => None,
        };
        let app = router(AppState { hub, store });
        let runtime = tokio::runtime::Runtime::new()?;
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            tracing::info!(addr = %listener.local_addr()?, "serving");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
            Ok::<_, anyhow::Error>(())
        })?;
        Ok(json!({"stopped": true}))
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn latency_summary(sorted: &[f64]) -> LatencySummary {
    LatencySummary {
        count: sorted.len(),
        mean: sorted.iter().sum::<f64>() / sorted.len().max(1) as f64,
        p50: percentile(sorted, 50.0),
        p95: percentile(sorted, 95.0),
        max: sorted.last().copied().unwrap_or(f64::NAN),
    }
}

/// Machine-readable failure record printed on stderr.
pub fn error_record(command: &str, error: &anyhow::Error) -> Value {
    json!({
        "error": {
            "command": command,
            "message": error.to_string(),
            "chain": error.chain().skip(1).map(|e| e.to_string()).collect::<Vec<_>>(),
        }
    })
}
