//! 1-D convolutional classifier: conv(64, ReLU) → max-pool → conv(128, ReLU)
//! → global average pool → dense(512, sigmoid) → sigmoid/softmax head.
//!
//! Activations are (batch·time) × features matrices, row `b * len + t`.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{self, add_row_bias, glorot_fill, head_width, sigmoid, Block, LayoutBuilder};
use super::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnHyper {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub dense_units: usize,
}

impl Default for CnnHyper {
    fn default() -> Self {
        Self {
            conv1_filters: 64,
            conv2_filters: 128,
            kernel: 3,
            pool: 2,
            dense_units: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Cnn {
    hyper: CnnHyper,
    in_channels: usize,
    len: usize,
    n_classes: usize,
    w1: Block,
    b1: Block,
    w2: Block,
    b2: Block,
    w3: Block,
    b3: Block,
    w4: Block,
    b4: Block,
    n_params: usize,
}

struct Cache {
    col1: Array2<f64>,
    a1: Array2<f64>,
    pooled: Array2<f64>,
    pool_arg: Vec<usize>,
    col2: Array2<f64>,
    a2: Array2<f64>,
    gap: Array2<f64>,
    a3: Array2<f64>,
    logits: Array2<f64>,
}

/// Same-padded im2col: column `k * channels + c` holds `x[t + k - pad][c]`.
fn im2col(x: &Array2<f64>, batch: usize, len: usize, kernel: usize) -> Array2<f64> {
    let channels = x.ncols();
    let pad = kernel / 2;
    let mut col = Array2::zeros((batch * len, kernel * channels));
    for b in 0..batch {
        for t in 0..len {
            let mut dst = col.row_mut(b * len + t);
            for k in 0..kernel {
                let src_t = t as isize + k as isize - pad as isize;
                if src_t < 0 || src_t >= len as isize {
                    continue;
                }
                let src = x.row(b * len + src_t as usize);
                for c in 0..channels {
                    dst[k * channels + c] = src[c];
                }
            }
        }
    }
    col
}

fn col2im(dcol: &Array2<f64>, batch: usize, len: usize, kernel: usize, channels: usize) -> Array2<f64> {
    let pad = kernel / 2;
    let mut dx = Array2::zeros((batch * len, channels));
    for b in 0..batch {
        for t in 0..len {
            let src = dcol.row(b * len + t);
            for k in 0..kernel {
                let dst_t = t as isize + k as isize - pad as isize;
                if dst_t < 0 || dst_t >= len as isize {
                    continue;
                }
                let mut dst = dx.row_mut(b * len + dst_t as usize);
                for c in 0..channels {
                    dst[c] += src[k * channels + c];
                }
            }
        }
    }
    dx
}

impl Cnn {
    pub fn new(hyper: CnnHyper, in_channels: usize, len: usize, n_classes: usize) -> Self {
        let mut lb = LayoutBuilder::default();
        let k = hyper.kernel;
        let w1 = lb.matrix(k * in_channels, hyper.conv1_filters);
        let b1 = lb.vector(hyper.conv1_filters);
        let w2 = lb.matrix(k * hyper.conv1_filters, hyper.conv2_filters);
        let b2 = lb.vector(hyper.conv2_filters);
        let w3 = lb.matrix(hyper.conv2_filters, hyper.dense_units);
        let b3 = lb.vector(hyper.dense_units);
        let w4 = lb.matrix(hyper.dense_units, head_width(n_classes));
        let b4 = lb.vector(head_width(n_classes));
        Self {
            hyper,
            in_channels,
            len,
            n_classes,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            w4,
            b4,
            n_params: lb.total(),
        }
    }

    fn pooled_len(&self) -> usize {
        self.len / self.hyper.pool
    }

    /// (batch·time) × channels from channel-major flattened inputs.
    fn stack(&self, inputs: &[&[f64]]) -> Array2<f64> {
        let (c, l) = (self.in_channels, self.len);
        let mut x = Array2::zeros((inputs.len() * l, c));
        for (b, input) in inputs.iter().enumerate() {
            for ch in 0..c {
                for t in 0..l {
                    x[[b * l + t, ch]] = input[ch * l + t];
                }
            }
        }
        x
    }

    fn forward(&self, params: &[f64], inputs: &[&[f64]]) -> Cache {
        let batch = inputs.len();
        let k = self.hyper.kernel;
        let x = self.stack(inputs);

        let col1 = im2col(&x, batch, self.len, k);
        let mut a1 = col1.dot(&self.w1.matrix(params));
        add_row_bias(&mut a1, self.b1.vector(params));
        a1.mapv_inplace(|v| v.max(0.0));

        let (pool, plen, f1) = (self.hyper.pool, self.pooled_len(), self.hyper.conv1_filters);
        let mut pooled = Array2::zeros((batch * plen, f1));
        let mut pool_arg = vec![0usize; batch * plen * f1];
        for b in 0..batch {
            for p in 0..plen {
                for f in 0..f1 {
                    let mut best = b * self.len + p * pool;
                    for j in 1..pool {
                        let r = b * self.len + p * pool + j;
                        if a1[[r, f]] > a1[[best, f]] {
                            best = r;
                        }
                    }
                    pooled[[b * plen + p, f]] = a1[[best, f]];
                    pool_arg[(b * plen + p) * f1 + f] = best;
                }
            }
        }

        let col2 = im2col(&pooled, batch, plen, k);
        let mut a2 = col2.dot(&self.w2.matrix(params));
        add_row_bias(&mut a2, self.b2.vector(params));
        a2.mapv_inplace(|v| v.max(0.0));

        let f2 = self.hyper.conv2_filters;
        let mut gap = Array2::zeros((batch, f2));
        for b in 0..batch {
            let block = a2.slice(ndarray::s![b * plen..(b + 1) * plen, ..]);
            gap.row_mut(b).assign(&block.mean_axis(Axis(0)).expect("nonempty pool"));
        }

        let mut a3 = gap.dot(&self.w3.matrix(params));
        add_row_bias(&mut a3, self.b3.vector(params));
        a3.mapv_inplace(sigmoid);

        let mut logits = a3.dot(&self.w4.matrix(params));
        add_row_bias(&mut logits, self.b4.vector(params));

        Cache {
            col1,
            a1,
            pooled,
            pool_arg,
            col2,
            a2,
            gap,
            a3,
            logits,
        }
    }
}

impl Network for Cnn {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let k = self.hyper.kernel;
        glorot_fill(&mut p, self.w1, k * self.in_channels, k * self.hyper.conv1_filters, rng);
        glorot_fill(&mut p, self.w2, k * self.hyper.conv1_filters, k * self.hyper.conv2_filters, rng);
        glorot_fill(&mut p, self.w3, self.hyper.conv2_filters, self.hyper.dense_units, rng);
        glorot_fill(&mut p, self.w4, self.hyper.dense_units, head_width(self.n_classes), rng);
        p
    }

    fn logits(&self, params: &[f64], inputs: &[&[f64]]) -> Array2<f64> {
        self.forward(params, inputs).logits
    }

    fn loss_and_grad(
        &self,
        params: &[f64],
        inputs: &[&[f64]],
        targets: &[usize],
        class_weights: &[f64],
        _dropout: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        let batch = inputs.len();
        let cache = self.forward(params, inputs);
        let (loss, dlogits) = nn::weighted_cross_entropy(&cache.logits, targets, class_weights, self.n_classes);
        let mut grad = vec![0.0; self.n_params];

        self.w4.write_matrix(&mut grad, &cache.a3.t().dot(&dlogits));
        self.b4.write_vector(&mut grad, &dlogits.sum_axis(Axis(0)));
        let mut dz3 = dlogits.dot(&self.w4.matrix(params).t());
        dz3.zip_mut_with(&cache.a3, |d, &a| *d *= a * (1.0 - a));

        self.w3.write_matrix(&mut grad, &cache.gap.t().dot(&dz3));
        self.b3.write_vector(&mut grad, &dz3.sum_axis(Axis(0)));
        let dgap = dz3.dot(&self.w3.matrix(params).t());

        let plen = self.pooled_len();
        let mut dz2 = Array2::zeros(cache.a2.dim());
        for b in 0..batch {
            for t in 0..plen {
                for f in 0..self.hyper.conv2_filters {
                    if cache.a2[[b * plen + t, f]] > 0.0 {
                        dz2[[b * plen + t, f]] = dgap[[b, f]] / plen as f64;
                    }
                }
            }
        }
        self.w2.write_matrix(&mut grad, &cache.col2.t().dot(&dz2));
        self.b2.write_vector(&mut grad, &dz2.sum_axis(Axis(0)));
        let dcol2 = dz2.dot(&self.w2.matrix(params).t());
        let dpooled = col2im(&dcol2, batch, plen, self.hyper.kernel, self.hyper.conv1_filters);
        debug_assert_eq!(dpooled.dim(), cache.pooled.dim());

        let f1 = self.hyper.conv1_filters;
        let mut dz1: Array2<f64> = Array2::zeros(cache.a1.dim());
        for (i, &src) in cache.pool_arg.iter().enumerate() {
            let (row, f) = (i / f1, i % f1);
            if cache.a1[[src, f]] > 0.0 {
                dz1[[src, f]] += dpooled[[row, f]];
            }
        }
        self.w1.write_matrix(&mut grad, &cache.col1.t().dot(&dz1));
        let db1: Array1<f64> = dz1.sum_axis(Axis(0));
        self.b1.write_vector(&mut grad, &db1);

        (loss, grad)
    }
}
