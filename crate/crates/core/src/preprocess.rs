//! Clip cleaning and tensor assembly: outlier repair or exclusion, length
//! normalization to 50 samples, and the V / VRC / Z transforms that turn four
//! base features into the 12-channel model input.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::FeatureFrame;
use crate::label::SquatLabel;

/// Every channel is resampled to this many timesteps.
pub const SERIES_LEN: usize = 50;
pub const N_CHANNELS: usize = 12;
pub const VRC_EPSILON: f64 = 1e-9;
pub const Z_EPSILON: f64 = 1e-9;
/// Smallest class size `split_dataset` accepts.
pub const MIN_CLASS_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("series too short: need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("class {class} has {count} examples, need at least {MIN_CLASS_SIZE}")]
    StratificationError { class: usize, count: usize },
    #[error("unknown channel name {0:?}")]
    UnknownChannel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaseChannel {
    Bt,
    Df,
    Khr,
    Bs,
}

impl BaseChannel {
    pub const ALL: [BaseChannel; 4] = [BaseChannel::Bt, BaseChannel::Df, BaseChannel::Khr, BaseChannel::Bs];

    pub fn name(self) -> &'static str {
        match self {
            BaseChannel::Bt => "BT",
            BaseChannel::Df => "DF",
            BaseChannel::Khr => "KHR",
            BaseChannel::Bs => "BS",
        }
    }

    pub fn value(self, frame: &FeatureFrame) -> f64 {
        match self {
            BaseChannel::Bt => frame.bt,
            BaseChannel::Df => frame.df,
            BaseChannel::Khr => frame.khr,
            BaseChannel::Bs => frame.bs,
        }
    }

    fn value_mut(self, frame: &mut FeatureFrame) -> &mut f64 {
        match self {
            BaseChannel::Bt => &mut frame.bt,
            BaseChannel::Df => &mut frame.df,
            BaseChannel::Khr => &mut frame.khr,
            BaseChannel::Bs => &mut frame.bs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Transform {
    V,
    Vrc,
    Z,
}

impl Transform {
    pub const ALL: [Transform; 3] = [Transform::V, Transform::Vrc, Transform::Z];

    pub fn name(self) -> &'static str {
        match self {
            Transform::V => "V",
            Transform::Vrc => "VRC",
            Transform::Z => "Z",
        }
    }
}

/// One of the 12 model input channels. The index order is fixed:
/// BT-V, DF-V, KHR-V, BS-V, BT-VRC, ..., BS-Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorChannel(u8);

impl TensorChannel {
    pub fn new(transform: Transform, base: BaseChannel) -> Self {
        Self((transform as u8) * 4 + base as u8)
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < N_CHANNELS).then_some(Self(index as u8))
    }

    pub fn all() -> impl Iterator<Item = TensorChannel> {
        (0..N_CHANNELS as u8).map(TensorChannel)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn base(self) -> BaseChannel {
        BaseChannel::ALL[usize::from(self.0 % 4)]
    }

    pub fn transform(self) -> Transform {
        Transform::ALL[usize::from(self.0 / 4)]
    }

    pub fn name(self) -> String {
        format!("{}-{}", self.base().name(), self.transform().name())
    }

    pub fn parse(name: &str) -> Result<Self, PreprocessError> {
        Self::all()
            .find(|c| c.name().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| PreprocessError::UnknownChannel(name.to_string()))
    }
}

impl fmt::Display for TensorChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for TensorChannel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for TensorChannel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Self::parse(&name).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierThresholds {
    pub bt_max: f64,
    pub df_max: f64,
    pub khr_max: f64,
    pub bs_max: f64,
}

impl Default for OutlierThresholds {
    fn default() -> Self {
        Self {
            bt_max: 180.0,
            df_max: 60.0,
            khr_max: 30.0,
            bs_max: 150.0,
        }
    }
}

impl OutlierThresholds {
    /// Strict exceedance; the knee–hip ratio is bounded in magnitude.
    pub fn exceeds(&self, channel: BaseChannel, value: f64) -> bool {
        match channel {
            BaseChannel::Bt => value > self.bt_max,
            BaseChannel::Df => value > self.df_max,
            BaseChannel::Khr => value.abs() > self.khr_max,
            BaseChannel::Bs => value > self.bs_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawClip {
    pub clip_id: String,
    pub frames: Vec<FeatureFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SquatLabel>,
}

impl RawClip {
    pub fn series(&self, channel: BaseChannel) -> Vec<f64> {
        self.frames.iter().map(|f| channel.value(f)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub frame: usize,
    pub channel: BaseChannel,
}

/// Readings that strictly exceed their threshold, in frame then channel order.
/// Non-finite readings are flagged too.
pub fn detect_outliers(clip: &RawClip, thresholds: &OutlierThresholds) -> Vec<OutlierFlag> {
    clip.frames
        .iter()
        .enumerate()
        .flat_map(|(frame, f)| {
            BaseChannel::ALL.into_iter().filter_map(move |channel| {
                let v = channel.value(f);
                (!v.is_finite() || thresholds.exceeds(channel, v)).then_some(OutlierFlag { frame, channel })
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub flag: OutlierFlag,
    pub original: f64,
    pub replacement: f64,
}

/// A clip that passed outlier screening. Only [`sanitize`] builds one.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanClip {
    clip: RawClip,
    repairs: Vec<Repair>,
}

impl CleanClip {
    pub fn clip(&self) -> &RawClip {
        &self.clip
    }

    pub fn repairs(&self) -> &[Repair] {
        &self.repairs
    }

    pub fn into_clip(self) -> RawClip {
        self.clip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    MultipleOutliers,
    TooShort,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SanitizeOutcome {
    Clean(CleanClip),
    Excluded {
        reason: ExclusionReason,
        flags: Vec<OutlierFlag>,
    },
}

impl SanitizeOutcome {
    pub fn is_excluded(&self) -> bool {
        matches!(self, SanitizeOutcome::Excluded { .. })
    }

    pub fn clean(self) -> Option<CleanClip> {
        match self {
            SanitizeOutcome::Clean(c) => Some(c),
            SanitizeOutcome::Excluded { .. } => None,
        }
    }
}

/// Repairs a single outlier from its neighbours on the same channel or
/// excludes the clip when it holds two or more.
pub fn sanitize(clip: &RawClip, thresholds: &OutlierThresholds) -> SanitizeOutcome {
    let flags = detect_outliers(clip, thresholds);
    if clip.frames.len() < 2 {
        return SanitizeOutcome::Excluded {
            reason: ExclusionReason::TooShort,
            flags,
        };
    }
    if flags.len() >= 2 {
        return SanitizeOutcome::Excluded {
            reason: ExclusionReason::MultipleOutliers,
            flags,
        };
    }
    let mut repaired = clip.clone();
    let repairs = flags
        .into_iter()
        .map(|flag| {
            let series = clip.series(flag.channel);
            let i = flag.frame;
            let replacement = match (i.checked_sub(1).map(|j| series[j]), series.get(i + 1)) {
                (Some(prev), Some(&next)) => (prev + next) / 2.0,
                (Some(prev), None) => prev,
                (None, Some(&next)) => next,
                (None, None) => unreachable!("clip has at least two frames"),
            };
            *flag.channel.value_mut(&mut repaired.frames[i]) = replacement;
            Repair {
                flag,
                original: series[i],
                replacement,
            }
        })
        .collect();
    SanitizeOutcome::Clean(CleanClip {
        clip: repaired,
        repairs,
    })
}

/// Linear interpolation onto `target_len` evenly spaced points; sample `t`
/// reads source position `t * (len - 1) / (target_len - 1)`, so both
/// endpoints are kept exactly.
pub fn resample(series: &[f64], target_len: usize) -> Result<Vec<f64>, PreprocessError> {
    let n = series.len();
    if n < 2 {
        return Err(PreprocessError::TooShort(n));
    }
    if n == target_len {
        return Ok(series.to_vec());
    }
    if target_len == 1 {
        return Ok(vec![series[0]]);
    }
    let scale = (n - 1) as f64 / (target_len - 1) as f64;
    Ok((0..target_len)
        .map(|t| {
            if t == target_len - 1 {
                return series[n - 1];
            }
            let pos = t as f64 * scale;
            let lo = (pos.floor() as usize).min(n - 2);
            let frac = pos - lo as f64;
            if frac == 0.0 {
                series[lo]
            } else {
                series[lo] + frac * (series[lo + 1] - series[lo])
            }
        })
        .collect())
}

pub fn transform(series: &[f64], kind: Transform) -> Vec<f64> {
    match kind {
        Transform::V => variation(series),
        Transform::Vrc => variation_relative_change(series),
        Transform::Z => z_score(series),
    }
}

fn variation(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    if !x.is_empty() {
        out.push(0.0);
    }
    out.extend(x.windows(2).map(|w| w[1] - w[0]));
    out
}

fn variation_relative_change(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    if !x.is_empty() {
        out.push(0.0);
    }
    out.extend(x.windows(2).map(|w| {
        if w[0].abs() < VRC_EPSILON {
            0.0
        } else {
            (w[1] - w[0]) / w[0]
        }
    }));
    out
}

fn z_score(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std.is_nan() || std < Z_EPSILON {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// One rep as 12 channels × 50 timesteps, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub clip_id: String,
    values: Vec<f64>,
}

impl FeatureTensor {
    pub fn from_channels(clip_id: impl Into<String>, channels: &[Vec<f64>]) -> Option<Self> {
        if channels.len() != N_CHANNELS || channels.iter().any(|c| c.len() != SERIES_LEN) {
            return None;
        }
        Some(Self {
            clip_id: clip_id.into(),
            values: channels.concat(),
        })
    }

    /// Flat channel-major values; panics unless `values.len() == 12 * 50`.
    pub fn from_flat(clip_id: impl Into<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), N_CHANNELS * SERIES_LEN, "tensor must hold 12 x 50 values");
        Self {
            clip_id: clip_id.into(),
            values,
        }
    }

    pub fn channel(&self, channel: TensorChannel) -> &[f64] {
        let start = channel.index() * SERIES_LEN;
        &self.values[start..start + SERIES_LEN]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Selected channels concatenated in the given order.
    pub fn gather(&self, channels: &[TensorChannel]) -> Vec<f64> {
        let mut out = Vec::with_capacity(channels.len() * SERIES_LEN);
        for &c in channels {
            out.extend_from_slice(self.channel(c));
        }
        out
    }
}

pub fn assemble_tensor(clip: &CleanClip) -> Result<FeatureTensor, PreprocessError> {
    let raw = clip.clip();
    let mut resampled = Vec::with_capacity(4);
    for base in BaseChannel::ALL {
        resampled.push(resample(&raw.series(base), SERIES_LEN)?);
    }
    let channels: Vec<Vec<f64>> = TensorChannel::all()
        .map(|c| transform(&resampled[c.base() as usize], c.transform()))
        .collect();
    Ok(FeatureTensor::from_channels(raw.clip_id.clone(), &channels).expect("fixed tensor shape"))
}

/// Sanitize then assemble; `None` for excluded clips.
pub fn preprocess_clip(clip: &RawClip, thresholds: &OutlierThresholds) -> Result<Option<FeatureTensor>, PreprocessError> {
    match sanitize(clip, thresholds) {
        SanitizeOutcome::Clean(c) => assemble_tensor(&c).map(Some),
        SanitizeOutcome::Excluded { .. } => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> DatasetSplit<T> {
    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> DatasetSplit<U> {
        DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect(),
            val: self.val.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(&mut f).collect(),
        }
    }
}

/// Stratified 8:1:1 split. Each class is shuffled with the seed, then cut
/// into round(n/10) validation, round(n/10) test and the rest training.
/// Items keep their corpus order inside each part.
pub fn split_dataset<T: Clone>(
    items: &[T],
    class_of: impl Fn(&T) -> usize,
    seed: u64,
) -> Result<DatasetSplit<T>, PreprocessError> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_class.entry(class_of(item)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = vec![0u8; items.len()];
    for (&class, indices) in &mut by_class {
        let n = indices.len();
        if n < MIN_CLASS_SIZE {
            return Err(PreprocessError::StratificationError { class, count: n });
        }
        indices.shuffle(&mut rng);
        let held = (n as f64 / 10.0).round() as usize;
        for (k, &i) in indices.iter().enumerate() {
            part[i] = if k < held {
                1
            } else if k < 2 * held {
                2
            } else {
                0
            };
        }
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (item, p) in items.iter().zip(part) {
        match p {
            0 => split.train.push(item.clone()),
            1 => split.val.push(item.clone()),
            _ => split.test.push(item.clone()),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn frame(bt: f64, df: f64, khr: f64, bs: f64) -> FeatureFrame {
        FeatureFrame {
            timestamp_ms: 0,
            bt,
            df,
            torso: 10.0,
            khr,
            bs,
        }
    }

    fn clip(frames: Vec<FeatureFrame>) -> RawClip {
        RawClip {
            clip_id: "c".into(),
            frames,
            label: None,
        }
    }

    fn ordinary(n: usize) -> Vec<FeatureFrame> {
        (0..n).map(|i| frame(120.0 - i as f64, 20.0 + i as f64, 1.5, 5.0)).collect()
    }

    #[test]
    fn channel_order_matches_table() {
        let names: Vec<String> = TensorChannel::all().map(|c| c.name()).collect();
        assert_eq!(
            names,
            [
                "BT-V", "DF-V", "KHR-V", "BS-V", "BT-VRC", "DF-VRC", "KHR-VRC", "BS-VRC", "BT-Z", "DF-Z", "KHR-Z",
                "BS-Z"
            ]
        );
        assert_eq!(TensorChannel::parse("khr-vrc").unwrap().index(), 6);
        assert!(TensorChannel::parse("XX-V").is_err());
    }

    #[test]
    fn single_df_outlier_flagged() {
        let mut frames = ordinary(10);
        frames[4].df = 65.0;
        let flags = detect_outliers(&clip(frames), &OutlierThresholds::default());
        assert_eq!(
            flags,
            vec![OutlierFlag {
                frame: 4,
                channel: BaseChannel::Df
            }]
        );
    }

    #[test]
    fn thresholds_are_strict() {
        let c = clip(vec![frame(180.0, 60.0, 30.0, 150.0), frame(180.0, 60.0, -30.0, 150.0)]);
        assert!(detect_outliers(&c, &OutlierThresholds::default()).is_empty());
    }

    #[test]
    fn two_separate_flags() {
        let mut frames = ordinary(12);
        frames[3].bt = 181.0;
        frames[9].bs = 200.0;
        let c = clip(frames);
        assert_eq!(detect_outliers(&c, &OutlierThresholds::default()).len(), 2);
        assert!(sanitize(&c, &OutlierThresholds::default()).is_excluded());
    }

    #[test]
    fn interior_repair_uses_neighbour_mean() {
        let c = clip(vec![frame(120.0, 30.0, 1.0, 5.0), frame(118.0, 65.0, 1.0, 5.0), frame(116.0, 34.0, 1.0, 5.0)]);
        let clean = sanitize(&c, &OutlierThresholds::default()).clean().unwrap();
        assert_eq!(clean.clip().series(BaseChannel::Df), vec![30.0, 32.0, 34.0]);
        assert_eq!(clean.repairs().len(), 1);
        assert_eq!(clean.repairs()[0].original, 65.0);
    }

    #[test]
    fn boundary_repair_copies_neighbour() {
        let mut frames = ordinary(5);
        frames[4].bs = 151.0;
        let clean = sanitize(&clip(frames.clone()), &OutlierThresholds::default()).clean().unwrap();
        assert_eq!(clean.clip().frames[4].bs, frames[3].bs);
        frames[4].bs = 5.0;
        frames[0].khr = -31.0;
        let clean = sanitize(&clip(frames.clone()), &OutlierThresholds::default()).clean().unwrap();
        assert_eq!(clean.clip().frames[0].khr, frames[1].khr);
    }

    #[test]
    fn clean_clip_passes_unchanged() {
        let c = clip(ordinary(8));
        let clean = sanitize(&c, &OutlierThresholds::default()).clean().unwrap();
        assert_eq!(clean.clip(), &c);
        assert!(clean.repairs().is_empty());
    }

    #[test]
    fn single_frame_is_too_short() {
        let outcome = sanitize(&clip(ordinary(1)), &OutlierThresholds::default());
        assert!(matches!(
            outcome,
            SanitizeOutcome::Excluded {
                reason: ExclusionReason::TooShort,
                ..
            }
        ));
    }

    #[test]
    fn resample_examples() {
        let out = resample(&[0.0, 1.0, 2.0, 3.0], 50).unwrap();
        assert_eq!(out.len(), 50);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[49], 3.0);
        for (k, v) in out.iter().enumerate() {
            assert_abs_diff_eq!(*v, 3.0 * k as f64 / 49.0, epsilon = 1e-12);
        }
        assert_eq!(resample(&[5.0; 45], 50).unwrap(), vec![5.0; 50]);
        let fifty: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        assert_eq!(resample(&fifty, 50).unwrap(), fifty);
        assert_eq!(resample(&[1.0], 50), Err(PreprocessError::TooShort(1)));
    }

    #[test]
    fn transform_examples() {
        let mut x = vec![4.0; 50];
        x[0] = 3.0;
        x[1] = 5.0;
        let v = transform(&x, Transform::V);
        assert_eq!(&v[..4], &[0.0, 2.0, -1.0, 0.0]);

        let ramp: Vec<f64> = (1..=50).map(|i| 2.0 * i as f64).collect();
        let vrc = transform(&ramp, Transform::Vrc);
        assert_eq!(&vrc[..3], &[0.0, 1.0, 0.5]);

        assert_eq!(transform(&[7.0; 50], Transform::Z), vec![0.0; 50]);

        // [1,2,3] stretched to 50 samples is a linear ramp; compute its
        // moments directly and compare.
        let stretched = resample(&[1.0, 2.0, 3.0], 50).unwrap();
        let z = transform(&stretched, Transform::Z);
        let mean = z.iter().sum::<f64>() / 50.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vrc_guard_zeroes_small_denominator() {
        let mut x = vec![1.0; 50];
        x[3] = 0.0;
        let vrc = transform(&x, Transform::Vrc);
        assert_eq!(vrc[3], -1.0);
        assert_eq!(vrc[4], 0.0);
    }

    #[test]
    fn constant_clip_tensor_is_zero() {
        let frames = vec![frame(120.0, 30.0, 2.0, 4.0); 40];
        let clean = sanitize(&clip(frames), &OutlierThresholds::default()).clean().unwrap();
        let t = assemble_tensor(&clean).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_matches_hand_composition() {
        let frames: Vec<FeatureFrame> = (0..43)
            .map(|i| {
                let u = i as f64 / 42.0;
                frame(
                    138.0 - 60.0 * (std::f64::consts::PI * u).sin(),
                    10.0 + 30.0 * (std::f64::consts::PI * u).sin(),
                    1.0 + u,
                    3.0 + u * u,
                )
            })
            .collect();
        let c = clip(frames);
        let t = assemble_tensor(&sanitize(&c, &OutlierThresholds::default()).clean().unwrap()).unwrap();
        for ch in TensorChannel::all() {
            let expected = transform(&resample(&c.series(ch.base()), 50).unwrap(), ch.transform());
            assert_eq!(t.channel(ch), expected.as_slice());
        }
        let v = t.channel(TensorChannel::new(Transform::V, BaseChannel::Df));
        let vrc = t.channel(TensorChannel::new(Transform::Vrc, BaseChannel::Bt));
        assert_eq!((v[0], vrc[0]), (0.0, 0.0));
    }

    #[test]
    fn split_single_class_is_80_10_10() {
        let items: Vec<usize> = (0..100).collect();
        let s = split_dataset(&items, |_| 0, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        assert_eq!(s, split_dataset(&items, |_| 0, 3).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, items);
    }

    #[test]
    fn split_rejects_small_class() {
        let items: Vec<usize> = (0..105).collect();
        let err = split_dataset(&items, |&i| usize::from(i >= 100), 1).unwrap_err();
        assert_eq!(err, PreprocessError::StratificationError { class: 1, count: 5 });
    }

    #[test]
    fn split_per_label_counts() {
        let items: Vec<usize> = (0..700).collect();
        let s = split_dataset(&items, |&i| i % 7, 11).unwrap();
        for class in 0..7 {
            let count = |v: &Vec<usize>| v.iter().filter(|&&i| i % 7 == class).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (80, 10, 10));
        }
    }

    fn arb_series() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0..100.0f64, 2..80)
    }

    proptest! {
        #[test]
        fn v_telescopes(x in proptest::collection::vec(-100.0..100.0f64, 50)) {
            let v = transform(&x, Transform::V);
            prop_assert!((v.iter().sum::<f64>() - (x[49] - x[0])).abs() < 1e-9);
        }

        #[test]
        fn resample_stays_in_range(x in arb_series()) {
            let out = resample(&x, SERIES_LEN).unwrap();
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(out[0], x[0]);
            prop_assert_eq!(out[49], *x.last().unwrap());
            prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn sanitize_only_touches_flagged(mut frames in proptest::collection::vec(
            (0.0..200.0f64, 0.0..70.0f64, -40.0..40.0f64, 0.0..170.0f64), 2..30)
        ) {
            let c = clip(frames.drain(..).map(|(a, b, k, s)| frame(a, b, k, s)).collect());
            let thresholds = OutlierThresholds::default();
            let flags = detect_outliers(&c, &thresholds);
            match sanitize(&c, &thresholds) {
                SanitizeOutcome::Excluded { .. } => prop_assert!(flags.len() >= 2),
                SanitizeOutcome::Clean(clean) => {
                    prop_assert!(flags.len() <= 1);
                    for (i, (a, b)) in c.frames.iter().zip(&clean.clip().frames).enumerate() {
                        for ch in BaseChannel::ALL {
                            if !flags.contains(&OutlierFlag { frame: i, channel: ch }) {
                                prop_assert_eq!(ch.value(a), ch.value(b));
                            }
                        }
                    }
                }
            }
        }
    }
}
