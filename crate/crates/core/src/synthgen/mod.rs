//! Labeled synthetic squats standing in for recorded data: per-label feature
//! curves for the recorded part of a rep, plus a planar linkage that turns
//! feature curves back into joint coordinates for end-to-end streams.

mod joints;
pub mod profiles;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use joints::{joint_frame, joint_synthesis, session_stream, Linkage, StreamOptions};

use crate::kinematics::{FeatureFrame, KhrTracker};
use crate::label::SquatLabel;
use crate::preprocess::RawClip;
use profiles::{half_cosine, template, LabelTemplate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("infeasible pose at frame {frame}: {reason}")]
    InfeasiblePose { frame: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub bt: f64,
    pub df: f64,
    pub bs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub duration_mean: f64,
    pub duration_sd: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Per-frame Gaussian measurement noise (sd).
    pub noise: NoiseLevels,
    /// Scale of the per-clip timing and amplitude perturbations; 0 disables.
    pub jitter: f64,
    /// Scales every label's deviation from the good-squat template.
    pub margin: f64,
    pub frame_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            duration_mean: 45.3,
            duration_sd: 5.3,
            min_frames: 30,
            max_frames: 70,
            noise: NoiseLevels {
                bt: 0.8,
                df: 0.5,
                bs: 0.8,
            },
            jitter: 1.0,
            margin: 1.0,
            frame_rate: 30.0,
        }
    }
}

impl GenConfig {
    /// Exact templates: no noise, no perturbation, 45 recorded frames.
    pub fn noiseless() -> Self {
        Self {
            duration_sd: 0.0,
            noise: NoiseLevels {
                bt: 0.0,
                df: 0.0,
                bs: 0.0,
            },
            jitter: 0.0,
            ..Self::default()
        }
    }
}

/// Perturbations drawn for one clip. Draw order does not depend on the label,
/// so clips of different labels generated from one seed are paired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub n_frames: usize,
    pub time_shift: f64,
    pub bt_scale: f64,
    pub df_scale: f64,
    pub df_offset: f64,
    pub bs_scale: f64,
    pub torso_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClip {
    pub label: SquatLabel,
    /// The recorded part of the rep (body–thigh angle under 140°).
    pub clip: RawClip,
    /// Whole rep: lead-in from standing, the recorded part, lead-out.
    pub rep: Vec<FeatureFrame>,
    /// Index of the first recorded frame inside `rep`.
    pub record_start: usize,
    pub params: GenParams,
    pub seed: u64,
}

fn draw_params(config: &GenConfig, rng: &mut ChaCha8Rng) -> GenParams {
    let mut unit = |half_width: f64| config.jitter * half_width * (2.0 * rng.random::<f64>() - 1.0);
    let (time_shift, bt_scale, df_scale, df_offset, bs_scale, torso_scale) =
        (unit(0.03), 1.0 + unit(0.07), 1.0 + unit(0.07), unit(2.0), 1.0 + unit(0.15), 1.0 + unit(0.1));
    let n_frames = if config.duration_sd > 0.0 {
        let normal = Normal::new(config.duration_mean, config.duration_sd).expect("positive sd");
        loop {
            let n = normal.sample(rng).round();
            if n >= config.min_frames as f64 && n <= config.max_frames as f64 {
                break n as usize;
            }
        }
    } else {
        (config.duration_mean.round() as usize).clamp(config.min_frames, config.max_frames)
    };
    GenParams {
        n_frames,
        time_shift,
        bt_scale,
        df_scale,
        df_offset,
        bs_scale,
        torso_scale,
    }
}

/// Monotone map of [0, 1] with the midpoint moved by `shift`.
fn warp(u: f64, shift: f64) -> f64 {
    let mid = 0.5 + shift;
    if u <= 0.5 {
        u / 0.5 * mid
    } else {
        mid + (u - 0.5) / 0.5 * (1.0 - mid)
    }
}

fn blend(good: f64, other: f64, margin: f64) -> f64 {
    good + margin * (other - good)
}

/// Torso map g(w) = (1 − c)·w + c·w², strictly increasing on the used range.
fn torso_shape(w: f64, curvature: f64) -> f64 {
    (1.0 - curvature) * w + curvature * w * w
}

struct Blended<'a> {
    good: &'a LabelTemplate,
    label: &'a LabelTemplate,
    margin: f64,
}

impl Blended<'_> {
    fn curve(&self, pick: impl Fn(&LabelTemplate) -> profiles::Anchors, u: f64) -> f64 {
        blend(half_cosine(pick(self.good), u), half_cosine(pick(self.label), u), self.margin)
    }

    fn scalar(&self, pick: impl Fn(&LabelTemplate) -> f64) -> f64 {
        blend(pick(self.good), pick(self.label), self.margin)
    }
}

/// Torso angles from the dorsiflexion series: one monotone map up to the
/// dorsiflexion peak and another after it, meeting at the peak. Also returns
/// the slope d(torso)/d(df) of the descent map at the first frame.
fn torso_from_df(df: &[f64], start: f64, peak: f64, end: f64, c_down: f64, c_up: f64) -> (Vec<f64>, f64) {
    let n = df.len();
    let k = crate::models::argmax(df);
    let norm = |v: f64, base: f64| {
        let span = df[k] - base;
        if span.abs() < 1e-9 {
            1.0
        } else {
            (v - base) / span
        }
    };
    let torso = (0..n)
        .map(|t| {
            if t <= k {
                start + (peak - start) * torso_shape(norm(df[t], df[0]), c_down)
            } else {
                end + (peak - end) * torso_shape(norm(df[t], df[n - 1]), c_up)
            }
        })
        .collect();
    let span = df[k] - df[0];
    let slope = if span.abs() < 1e-9 { 0.0 } else { (peak - start) * (1.0 - c_down) / span };
    (torso, slope)
}

fn lead_phase(j: usize, frames: usize) -> f64 {
    (1.0 - (std::f64::consts::PI * j as f64 / frames as f64).cos()) / 2.0
}

/// One labeled clip; pure in (label, config, seed).
pub fn generate_clip(label: SquatLabel, config: &GenConfig, seed: u64) -> SyntheticClip {
    generate_clip_with_id(label, config, seed, format!("syn-{}-{seed:016x}", label.number()))
}

fn generate_clip_with_id(label: SquatLabel, config: &GenConfig, seed: u64, clip_id: String) -> SyntheticClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = draw_params(config, &mut rng);
    let b = Blended {
        good: template(SquatLabel::Good),
        label: template(label),
        margin: config.margin,
    };
    let n = params.n_frames;
    let noise = |sd: f64, rng: &mut ChaCha8Rng| {
        if sd > 0.0 {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            sd * z
        } else {
            0.0
        }
    };

    let mut bt = Vec::with_capacity(n);
    let mut df = Vec::with_capacity(n);
    let mut bs = Vec::with_capacity(n);
    let df_base = b.label.df[0].1;
    for t in 0..n {
        let u = warp(t as f64 / (n - 1) as f64, params.time_shift);
        let bt_t = profiles::BT_EDGE - params.bt_scale * (profiles::BT_EDGE - b.curve(|p| p.bt, u));
        let df_t = df_base + params.df_offset + params.df_scale * (b.curve(|p| p.df, u) - df_base);
        let bs_t = params.bs_scale * b.curve(|p| p.bs, u);
        bt.push(bt_t + noise(config.noise.bt, &mut rng));
        df.push(df_t + noise(config.noise.df, &mut rng));
        bs.push((bs_t + noise(config.noise.bs, &mut rng)).abs());
    }
    let torso_start = b.scalar(|p| p.torso_start);
    let (torso, lead_slope) = torso_from_df(
        &df,
        torso_start,
        torso_start + params.torso_scale * (b.scalar(|p| p.torso_peak) - torso_start),
        torso_start + params.torso_scale * (b.scalar(|p| p.torso_end) - torso_start),
        b.scalar(|p| p.descent_curvature),
        b.scalar(|p| p.ascent_curvature),
    );

    // During the lead-in the torso angle is a quadratic in dorsiflexion that
    // leaves the standing pose and joins the descent map with matching
    // slope, so the knee–hip ratio entering the recording continues the
    // descent. Body–thigh angles are capped so body–thigh plus torso stays
    // under 180°.
    let lead = profiles::LEAD_FRAMES;
    let standing = (profiles::STANDING_DF, profiles::STANDING_TORSO, profiles::STANDING_BS);
    let span = df[0] - standing.0;
    let rise = torso[0] - standing.1;
    let quad = (lead_slope * span - rise) / (span * span);
    let lin = 2.0 * rise / span - lead_slope;
    let lead_torso = |x: f64| standing.1 + lin * x + quad * x * x;
    let cap = |bt: f64, torso: f64| bt.min(179.0 - torso);
    let mut rows: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(n + 2 * lead);
    for j in 0..lead {
        let s = lead_phase(j + 1, lead + 1);
        let s_bt = lead_phase(j, lead - 1);
        let torso_j = lead_torso(span * s);
        rows.push((
            cap(profiles::STANDING_BT + (profiles::BT_LEAD_EDGE - profiles::STANDING_BT) * s_bt, torso_j),
            standing.0 + span * s,
            torso_j,
            standing.2 + (bs[0] - standing.2) * s,
        ));
    }
    for t in 0..n {
        rows.push((bt[t], df[t], torso[t], bs[t]));
    }
    for j in 0..lead {
        let s = lead_phase(j + 1, lead + 1);
        let s_bt = lead_phase(j, lead - 1);
        let torso_j = torso[n - 1] + (standing.1 - torso[n - 1]) * s;
        rows.push((
            cap(profiles::BT_LEAD_EDGE + (profiles::STANDING_BT - profiles::BT_LEAD_EDGE) * s_bt, torso_j),
            df[n - 1] + (standing.0 - df[n - 1]) * s,
            torso_j,
            bs[n - 1] + (standing.2 - bs[n - 1]) * s,
        ));
    }

    let frame_ms = 1000.0 / config.frame_rate;
    let mut khr = KhrTracker::new();
    // Start from the standing pose so the first lead-in frame has a ratio.
    khr.push(standing.0, standing.1);
    let rep: Vec<FeatureFrame> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (bt, df, torso, bs))| FeatureFrame {
            timestamp_ms: (i as f64 * frame_ms).round() as i64,
            bt,
            df,
            torso,
            khr: khr.push(df, torso),
            bs,
        })
        .collect();
    let clip = RawClip {
        clip_id,
        frames: rep[lead..lead + n].to_vec(),
        label: Some(label),
    };
    SyntheticClip {
        label,
        clip,
        rep,
        record_start: lead,
        params,
        seed,
    }
}

/// Seed of the `index`-th clip of a corpus.
pub fn clip_seed(corpus_seed: u64, index: u64) -> u64 {
    corpus_seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Clips in label order, `counts[label]` of each.
pub fn generate_corpus(counts: &[(SquatLabel, usize)], config: &GenConfig, seed: u64) -> Vec<SyntheticClip> {
    let mut jobs = Vec::new();
    for &(label, count) in counts {
        for k in 0..count {
            jobs.push((label, k));
        }
    }
    jobs.par_iter()
        .enumerate()
        .map(|(i, &(label, k))| {
            generate_clip_with_id(
                label,
                config,
                clip_seed(seed, i as u64),
                format!("syn-L{}-{:04}", label.number(), k),
            )
        })
        .collect()
}

pub fn per_label_counts(per_label: usize) -> Vec<(SquatLabel, usize)> {
    SquatLabel::ALL.iter().map(|&l| (l, per_label)).collect()
}
