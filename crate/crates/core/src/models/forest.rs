//! Random forest over flattened channel series. Each tree sees a random
//! subset of whole channels (between 1 and ⌊√channels⌋ of them) and a
//! bootstrap sample; nodes split on Gini impurity with no depth limit.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { class: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Positions within the model's selected channel list.
    pub channels: Vec<usize>,
    pub nodes: Vec<Node>,
}

impl Tree {
    /// `input` is the model input (selected channels × `len`, channel-major).
    pub fn predict(&self, input: &[f64], len: usize) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let (slot, t) = (feature / len, feature % len);
                    let v = input[self.channels[slot] * len + t];
                    at = if v <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub hyper: ForestHyper,
    pub n_classes: usize,
    pub series_len: usize,
    pub trees: Vec<Tree>,
}

/// Largest per-tree channel count: ⌊√n⌋, at least 1.
pub fn max_channels_per_tree(n_channels: usize) -> usize {
    ((n_channels as f64).sqrt().floor() as usize).max(1)
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Grower<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [usize],
    n_classes: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &r in rows {
            counts[self.targets[r]] += 1;
        }
        counts
    }

    /// Best (feature, threshold, weighted child impurity) over all features.
    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let n = rows.len();
        let n_features = self.features[rows[0]].len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        let total = self.counts(rows);
        for feature in 0..n_features {
            order.sort_by(|&a, &b| self.features[a][feature].total_cmp(&self.features[b][feature]));
            let mut left = vec![0usize; self.n_classes];
            for k in 0..n - 1 {
                left[self.targets[order[k]]] += 1;
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.features[order[k]][feature], self.features[order[k + 1]][feature]);
                if lo == hi {
                    continue;
                }
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let impurity =
                    (n_left as f64 * gini(&left, n_left) + n_right as f64 * gini(&right, n_right)) / n as f64;
                if best.is_none_or(|(_, _, b)| impurity < b) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((feature, threshold, impurity));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>) -> usize {
        let id = self.nodes.len();
        let counts = self.counts(&rows);
        self.nodes.push(Node::Leaf {
            class: majority(&counts),
        });
        let impurity = gini(&counts, rows.len());
        if impurity == 0.0 || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold, child)) = self.best_split(&rows) else {
            return id;
        };
        if child >= impurity {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.features[i][feature] <= threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn grow_tree(
    inputs: &[Vec<f64>],
    targets: &[usize],
    n_classes: usize,
    n_channels: usize,
    len: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let k = rng.random_range(1..=max_channels_per_tree(n_channels));
    let mut channels = sample(rng, n_channels, k).into_vec();
    channels.sort_unstable();

    let n = inputs.len();
    let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let features: Vec<Vec<f64>> = boot
        .iter()
        .map(|&i| channels.iter().flat_map(|&c| inputs[i][c * len..(c + 1) * len].iter().copied()).collect())
        .collect();
    let boot_targets: Vec<usize> = boot.iter().map(|&i| targets[i]).collect();
    let mut grower = Grower {
        features: &features,
        targets: &boot_targets,
        n_classes,
        min_leaf,
        nodes: Vec::new(),
    };
    grower.grow((0..n).collect());
    Tree {
        channels,
        nodes: grower.nodes,
    }
}

impl Forest {
    /// Trees are grown independently, each from its own seed stream, so the
    /// result does not depend on thread scheduling.
    pub fn fit(
        hyper: ForestHyper,
        inputs: &[Vec<f64>],
        targets: &[usize],
        n_classes: usize,
        n_channels: usize,
        len: usize,
        seed: u64,
    ) -> Self {
        let trees = (0..hyper.n_trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                grow_tree(inputs, targets, n_classes, n_channels, len, hyper.min_samples_leaf, &mut rng)
            })
            .collect();
        Self {
            hyper,
            n_classes,
            series_len: len,
            trees,
        }
    }

    /// Vote fractions per class.
    pub fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict(input, self.series_len)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_bound() {
        assert_eq!(max_channels_per_tree(12), 3);
        assert_eq!(max_channels_per_tree(9), 3);
        assert_eq!(max_channels_per_tree(3), 1);
        assert_eq!(max_channels_per_tree(1), 1);
    }

    #[test]
    fn one_split_stub_votes_are_binary() {
        let forest = Forest {
            hyper: ForestHyper { n_trees: 1, min_samples_leaf: 2 },
            n_classes: 2,
            series_len: 2,
            trees: vec![Tree {
                channels: vec![0],
                nodes: vec![
                    Node::Split { feature: 1, threshold: 0.5, left: 1, right: 2 },
                    Node::Leaf { class: 0 },
                    Node::Leaf { class: 1 },
                ],
            }],
        };
        assert_eq!(forest.predict_proba(&[9.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(forest.predict_proba(&[9.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn channel_subsets_and_leaf_sizes() {
        let len = 5;
        let inputs: Vec<Vec<f64>> = (0..80)
            .map(|i| (0..12 * len).map(|j| ((i * 7 + j * 3) % 11) as f64 + if i % 2 == 0 { 0.0 } else { 0.5 }).collect())
            .collect();
        let targets: Vec<usize> = (0..80).map(|i| i % 2).collect();
        let forest = Forest::fit(ForestHyper::default(), &inputs, &targets, 2, 12, len, 9);
        assert_eq!(forest.trees.len(), 100);
        for tree in &forest.trees {
            assert!((1..=3).contains(&tree.channels.len()));
        }
        assert_eq!(forest, Forest::fit(ForestHyper::default(), &inputs, &targets, 2, 12, len, 9));
    }
}
