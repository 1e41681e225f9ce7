//! Shared pieces for the two neural architectures: flat parameter layout,
//! initialization, output heads and the weighted cross-entropy loss.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One named block inside a flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn matrix<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &params[self.offset..self.offset + self.len()])
            .expect("block shape")
    }

    pub fn vector<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.offset..self.offset + self.len()])
    }

    pub fn write_matrix(&self, grad: &mut [f64], m: &Array2<f64>) {
        debug_assert_eq!(m.dim(), (self.rows, self.cols));
        let dst = &mut grad[self.offset..self.offset + self.len()];
        for (d, s) in dst.iter_mut().zip(m.iter()) {
            *d += s;
        }
    }

    pub fn write_vector(&self, grad: &mut [f64], v: &Array1<f64>) {
        let dst = &mut grad[self.offset..self.offset + self.len()];
        for (d, s) in dst.iter_mut().zip(v.iter()) {
            *d += s;
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    next: usize,
}

impl LayoutBuilder {
    pub fn matrix(&mut self, rows: usize, cols: usize) -> Block {
        let b = Block {
            offset: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        b
    }

    pub fn vector(&mut self, len: usize) -> Block {
        self.matrix(1, len)
    }

    pub fn total(&self) -> usize {
        self.next
    }
}

pub(crate) fn glorot_fill(params: &mut [f64], block: Block, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for p in &mut params[block.offset..block.offset + block.len()] {
        *p = rng.random_range(-limit..limit);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output-head size: one sigmoid unit for two classes, otherwise a softmax
/// over all classes.
pub(crate) fn head_width(n_classes: usize) -> usize {
    if n_classes == 2 {
        1
    } else {
        n_classes
    }
}

/// Converts head logits to a class-probability vector of length `n_classes`.
pub(crate) fn probabilities(logits: ArrayView1<f64>, n_classes: usize) -> Vec<f64> {
    if n_classes == 2 {
        let p = sigmoid(logits[0]);
        vec![1.0 - p, p]
    } else {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

/// Class-weighted cross-entropy averaged over the batch, with the gradient
/// with respect to the logits.
pub(crate) fn weighted_cross_entropy(
    logits: &Array2<f64>,
    targets: &[usize],
    weights: &[f64],
    n_classes: usize,
) -> (f64, Array2<f64>) {
    let batch = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (r, row) in logits.axis_iter(Axis(0)).enumerate() {
        let y = targets[r];
        let w = weights[y];
        let probs = probabilities(row, n_classes);
        loss -= w * probs[y].max(1e-300).ln();
        if n_classes == 2 {
            grad[[r, 0]] = w * (probs[1] - y as f64) / batch;
        } else {
            for c in 0..n_classes {
                let onehot = if c == y { 1.0 } else { 0.0 };
                grad[[r, c]] = w * (probs[c] - onehot) / batch;
            }
        }
    }
    (loss / batch, grad)
}

/// Balanced weights: n / (k · n_c) for each class c.
pub(crate) fn balanced_class_weights(targets: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &t in targets {
        counts[t] += 1;
    }
    let n = targets.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (n_classes as f64 * c as f64) })
        .collect()
}

pub(crate) fn add_row_bias(m: &mut Array2<f64>, bias: ArrayView1<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        row += &bias;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_sums_to_one() {
        let p = probabilities(array![1000.0, -3.0, 2.0].view(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let b = probabilities(array![-800.0].view(), 2);
        assert!((b[0] + b[1] - 1.0).abs() < 1e-12 && b[1] >= 0.0);
    }

    #[test]
    fn balanced_weights() {
        let w = balanced_class_weights(&[0, 0, 0, 1], 2);
        assert_eq!(w, vec![4.0 / 6.0, 2.0]);
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        for n_classes in [2usize, 3] {
            let width = head_width(n_classes);
            let logits = Array2::from_shape_fn((3, width), |(r, c)| 0.3 * r as f64 - 0.7 * c as f64 + 0.1);
            let targets = [0, 1, n_classes - 1];
            let weights: Vec<f64> = (0..n_classes).map(|c| 1.0 + c as f64).collect();
            let (_, grad) = weighted_cross_entropy(&logits, &targets, &weights, n_classes);
            for idx in 0..logits.len() {
                let (r, c) = (idx / width, idx % width);
                let h = 1e-6;
                let mut up = logits.clone();
                up[[r, c]] += h;
                let mut down = logits.clone();
                down[[r, c]] -= h;
                let fd = (weighted_cross_entropy(&up, &targets, &weights, n_classes).0
                    - weighted_cross_entropy(&down, &targets, &weights, n_classes).0)
                    / (2.0 * h);
                assert!((fd - grad[[r, c]]).abs() < 1e-8);
            }
        }
    }
}
