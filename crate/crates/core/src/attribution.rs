//! Shapley-value attribution over (channel, timestep) inputs and the channel
//! selection strategies built on it.
//!
//! Masking replaces a player's value with the baseline value. The explained
//! scalar for a sample is the model's probability of that sample's class, so
//! the map for class `c` shows which inputs push class-`c` examples towards
//! their own class.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{ModelError, TrainedModel};
use crate::preprocess::{FeatureTensor, TensorChannel, N_CHANNELS, SERIES_LEN};

/// Largest player count accepted by [`exact_shapley`].
pub const MAX_EXACT_PLAYERS: usize = 20;
/// Channels kept per class by the intersected strategy.
pub const TOP_K: usize = 6;
/// Channels kept when a strategy selects nothing.
pub const FALLBACK_K: usize = 3;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("{0} players is too many for exact enumeration (max {MAX_EXACT_PLAYERS})")]
    TooManyPlayers(usize),
    #[error("input has {got} values, baseline has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("no samples to explain")]
    NoSamples,
    #[error("at least one permutation is required")]
    NoPermutations,
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn masked(x: &[f64], baseline: &[f64], mask: u32) -> Vec<f64> {
    x.iter()
        .zip(baseline)
        .enumerate()
        .map(|(i, (&xi, &bi))| if mask >> i & 1 == 1 { xi } else { bi })
        .collect()
}

/// Shapley values by full subset enumeration.
pub fn exact_shapley(
    value: impl Fn(&[f64]) -> f64,
    x: &[f64],
    baseline: &[f64],
) -> Result<Vec<f64>, AttributionError> {
    let n = x.len();
    if n > MAX_EXACT_PLAYERS {
        return Err(AttributionError::TooManyPlayers(n));
    }
    if baseline.len() != n {
        return Err(AttributionError::ShapeMismatch {
            expected: baseline.len(),
            got: n,
        });
    }
    let values: Vec<f64> = (0..1u32 << n).map(|m| value(&masked(x, baseline, m))).collect();
    // weight[s] = s!(n−s−1)!/n!
    let mut weight = vec![0.0; n.max(1)];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0 / n as f64;
        for k in 1..=s {
            v *= k as f64 / (n - s - 1 + k) as f64;
        }
        *w = v;
    }
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for m in 0..1u32 << n {
            if m & bit == 0 {
                *p += weight[m.count_ones() as usize] * (values[(m | bit) as usize] - values[m as usize]);
            }
        }
    }
    Ok(phi)
}

/// Running per-player sums for mean and standard error.
#[derive(Debug, Clone)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: usize,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, draw: &[f64]) {
        for ((s, q), &d) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(draw) {
            *s += d;
            *q += d * d;
        }
        self.count += 1;
    }

    fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.count.max(1) as f64).collect()
    }

    fn std_error(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![0.0; self.sum.len()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                let var = ((q - s * s / n) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect()
    }
}

/// Marginal contributions along one random player ordering. `value_batch`
/// evaluates all n+1 points of the walk from baseline to `x` at once.
fn permutation_draw(
    value_batch: &mut impl FnMut(&[Vec<f64>]) -> Result<Vec<f64>, AttributionError>,
    x: &[f64],
    baseline: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, AttributionError> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut point = baseline.to_vec();
    let mut walk = Vec::with_capacity(n + 1);
    walk.push(point.clone());
    for &i in &order {
        point[i] = x[i];
        walk.push(point.clone());
    }
    let values = value_batch(&walk)?;
    let mut phi = vec![0.0; n];
    for (step, &i) in order.iter().enumerate() {
        phi[i] = values[step + 1] - values[step];
    }
    Ok(phi)
}

/// Monte Carlo permutation estimate for a single point, with per-player
/// standard errors.
pub fn sampled_shapley(
    mut value_batch: impl FnMut(&[Vec<f64>]) -> Result<Vec<f64>, AttributionError>,
    x: &[f64],
    baseline: &[f64],
    n_permutations: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), AttributionError> {
    if n_permutations == 0 {
        return Err(AttributionError::NoPermutations);
    }
    if baseline.len() != x.len() {
        return Err(AttributionError::ShapeMismatch {
            expected: baseline.len(),
            got: x.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moments = Moments::new(x.len());
    for _ in 0..n_permutations {
        moments.push(&permutation_draw(&mut value_batch, x, baseline, &mut rng)?);
    }
    Ok((moments.mean(), moments.std_error()))
}

/// Reference input: per-(channel, timestep) mean over a tensor set, for all
/// twelve channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    values: Vec<f64>,
}

impl Baseline {
    pub fn mean_of<'a>(tensors: impl IntoIterator<Item = &'a FeatureTensor>) -> Self {
        let mut values = vec![0.0; N_CHANNELS * SERIES_LEN];
        let mut count = 0usize;
        for t in tensors {
            for (v, x) in values.iter_mut().zip(t.values()) {
                *v += x;
            }
            count += 1;
        }
        for v in &mut values {
            *v /= count.max(1) as f64;
        }
        Self { values }
    }

    pub fn as_tensor(&self) -> FeatureTensor {
        FeatureTensor::from_flat("baseline", self.values.clone())
    }

    /// Baseline values laid out like a model input over `channels`.
    pub fn gather(&self, channels: &[TensorChannel]) -> Vec<f64> {
        self.as_tensor().gather(channels)
    }
}

/// Mean φ per (channel, timestep) over the explained samples of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAttribution {
    pub class: usize,
    pub n_samples: usize,
    /// Channel-major, `channels.len() × series_len`.
    pub phi: Vec<f64>,
    pub std_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub channels: Vec<TensorChannel>,
    pub series_len: usize,
    pub n_permutations: usize,
    pub seed: u64,
    pub classes: Vec<ClassAttribution>,
}

impl AttributionMap {
    pub fn row(&self, class: usize, channel: usize) -> &[f64] {
        let c = &self.classes[class];
        &c.phi[channel * self.series_len..(channel + 1) * self.series_len]
    }
}

/// Explains `samples` (tensor, class) against `model`. Classes with no
/// sample get an all-zero map.
pub fn shapley_attribute(
    model: &TrainedModel,
    samples: &[(FeatureTensor, usize)],
    baseline: &Baseline,
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionMap, AttributionError> {
    if samples.is_empty() {
        return Err(AttributionError::NoSamples);
    }
    if n_permutations == 0 {
        return Err(AttributionError::NoPermutations);
    }
    let channels = model.selected_channels.clone();
    let base = baseline.gather(&channels);
    let n_players = base.len();
    let n_classes = model.n_classes();
    let mut moments: Vec<Moments> = (0..n_classes).map(|_| Moments::new(n_players)).collect();
    let mut counts = vec![0usize; n_classes];
    for (s, (tensor, class)) in samples.iter().enumerate() {
        let x = tensor.gather(&channels);
        let class = *class;
        let mut value = |points: &[Vec<f64>]| -> Result<Vec<f64>, AttributionError> {
            let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
            Ok(model.predict_inputs(&refs)?.into_iter().map(|p| p[class]).collect())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D));
        for _ in 0..n_permutations {
            moments[class].push(&permutation_draw(&mut value, &x, &base, &mut rng)?);
        }
        counts[class] += 1;
    }
    let classes = moments
        .iter()
        .enumerate()
        .map(|(class, m)| ClassAttribution {
            class,
            n_samples: counts[class],
            phi: m.mean(),
            std_error: m.std_error(),
        })
        .collect();
    Ok(AttributionMap {
        channels,
        series_len: SERIES_LEN,
        n_permutations,
        seed,
        classes,
    })
}

/// Up to `total` items drawn without replacement, taking classes in turn so
/// small classes are not crowded out.
pub fn stratified_sample<T: Clone>(items: &[(T, usize)], n_classes: usize, total: usize, seed: u64) -> Vec<(T, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<&(T, usize)>> = vec![Vec::new(); n_classes];
    for item in items {
        by_class[item.1].push(item);
    }
    for group in &mut by_class {
        group.shuffle(&mut rng);
    }
    // Round-robin over classes until `total` are taken or all are exhausted.
    let mut out = Vec::with_capacity(total);
    let mut depth = 0;
    while out.len() < total && by_class.iter().any(|g| g.len() > depth) {
        for group in &by_class {
            if out.len() < total {
                if let Some(item) = group.get(depth) {
                    out.push((*item).clone());
                }
            }
        }
        depth += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    pub channels: Vec<TensorChannel>,
    /// `per_class[class][channel]`.
    pub per_class: Vec<Vec<f64>>,
}

impl ChannelScores {
    /// Mean over classes of each channel's score.
    pub fn class_mean(&self) -> Vec<f64> {
        let k = self.per_class.len().max(1) as f64;
        (0..self.channels.len())
            .map(|c| self.per_class.iter().map(|s| s[c]).sum::<f64>() / k)
            .collect()
    }

    /// Indices of the `k` highest-scoring channels for `class`; ties keep
    /// channel order.
    pub fn top(&self, class: usize, k: usize) -> Vec<usize> {
        let s = &self.per_class[class];
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        idx.truncate(k);
        idx
    }
}

pub fn channel_scores(map: &AttributionMap) -> ChannelScores {
    let per_class = map
        .classes
        .iter()
        .map(|c| {
            c.phi
                .chunks(map.series_len)
                .map(|row| row.iter().sum::<f64>() / row.len() as f64)
                .collect()
        })
        .collect();
    ChannelScores {
        channels: map.channels.clone(),
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    All,
    Intersected,
    Positive,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::All => "all",
            SelectionStrategy::Intersected => "intersected",
            SelectionStrategy::Positive => "positive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(SelectionStrategy::All),
            "intersected" => Some(SelectionStrategy::Intersected),
            "positive" => Some(SelectionStrategy::Positive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub strategy: SelectionStrategy,
    /// Ordered by class-mean score, highest first.
    pub channels: Vec<TensorChannel>,
    /// The strategy selected nothing and the top-[`FALLBACK_K`] channels by
    /// class-mean score were used instead.
    pub fallback: bool,
}

pub fn select_channels(scores: &ChannelScores, strategy: SelectionStrategy) -> Selection {
    let n = scores.channels.len();
    let picked: Vec<usize> = match strategy {
        SelectionStrategy::All => (0..n).collect(),
        SelectionStrategy::Intersected => {
            let tops: Vec<Vec<usize>> = (0..scores.per_class.len()).map(|c| scores.top(c, TOP_K)).collect();
            (0..n).filter(|i| tops.iter().all(|t| t.contains(i))).collect()
        }
        SelectionStrategy::Positive => (0..n)
            .filter(|&i| scores.per_class.iter().all(|s| s[i] >= 0.0))
            .collect(),
    };
    let mean = scores.class_mean();
    let by_mean = |mut idx: Vec<usize>| {
        idx.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
        idx
    };
    let fallback = picked.is_empty();
    let chosen = if fallback {
        let mut all = by_mean((0..n).collect());
        all.truncate(FALLBACK_K.min(n));
        all
    } else {
        by_mean(picked)
    };
    Selection {
        strategy,
        channels: chosen.into_iter().map(|i| scores.channels[i]).collect(),
        fallback,
    }
}
