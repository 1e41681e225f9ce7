//! Stacked LSTM classifier: recurrent layers over the 50 timesteps, dropout
//! on the final hidden state, then a sigmoid/softmax head.
//!
//! Sequences are time-major: row `t * batch + b` holds sample `b` at step `t`.
//! Gate blocks are ordered input, forget, cell, output.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{self, add_row_bias, glorot_fill, head_width, sigmoid, Block, LayoutBuilder};
use super::Network;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmHyper {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl LstmHyper {
    pub fn with_dropout(dropout: f64) -> Self {
        Self {
            hidden: 100,
            layers: 2,
            dropout,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerBlocks {
    w: Block,
    u: Block,
    b: Block,
    input: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    hyper: LstmHyper,
    in_channels: usize,
    len: usize,
    n_classes: usize,
    layers: Vec<LayerBlocks>,
    wo: Block,
    bo: Block,
    n_params: usize,
}

/// Per-layer activations kept for backpropagation through time.
struct LayerCache {
    input: Array2<f64>,
    /// Post-activation gates, (time·batch) × 4H.
    gates: Array2<f64>,
    cells: Array2<f64>,
    hidden: Array2<f64>,
}

impl Lstm {
    pub fn new(hyper: LstmHyper, in_channels: usize, len: usize, n_classes: usize) -> Self {
        let mut lb = LayoutBuilder::default();
        let h = hyper.hidden;
        let layers = (0..hyper.layers)
            .map(|l| {
                let input = if l == 0 { in_channels } else { h };
                LayerBlocks {
                    w: lb.matrix(input, 4 * h),
                    u: lb.matrix(h, 4 * h),
                    b: lb.vector(4 * h),
                    input,
                }
            })
            .collect();
        let wo = lb.matrix(h, head_width(n_classes));
        let bo = lb.vector(head_width(n_classes));
        Self {
            hyper,
            in_channels,
            len,
            n_classes,
            layers,
            wo,
            bo,
            n_params: lb.total(),
        }
    }

    fn stack(&self, inputs: &[&[f64]]) -> Array2<f64> {
        let batch = inputs.len();
        let mut x = Array2::zeros((self.len * batch, self.in_channels));
        for (b, input) in inputs.iter().enumerate() {
            for c in 0..self.in_channels {
                for t in 0..self.len {
                    x[[t * batch + b, c]] = input[c * self.len + t];
                }
            }
        }
        x
    }

    /// Applies the gate nonlinearities in place and advances the cell state.
    fn step(pre: &mut Array2<f64>, c_prev: ArrayView2<f64>, h: usize) -> (Array2<f64>, Array2<f64>) {
        let batch = pre.nrows();
        let mut c = Array2::zeros((batch, h));
        let mut hid = Array2::zeros((batch, h));
        for b in 0..batch {
            let mut row = pre.row_mut(b);
            for j in 0..h {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[h + j]);
                let g = row[2 * h + j].tanh();
                let o = sigmoid(row[3 * h + j]);
                row[j] = i;
                row[h + j] = f;
                row[2 * h + j] = g;
                row[3 * h + j] = o;
                let cell = f * c_prev[[b, j]] + i * g;
                c[[b, j]] = cell;
                hid[[b, j]] = o * cell.tanh();
            }
        }
        (c, hid)
    }

    fn run_layer(&self, params: &[f64], layer: &LayerBlocks, input: Array2<f64>, batch: usize) -> LayerCache {
        let h = self.hyper.hidden;
        let mut gates = input.dot(&layer.w.matrix(params));
        add_row_bias(&mut gates, layer.b.vector(params));
        let u = layer.u.matrix(params);
        let mut cells = Array2::zeros((self.len * batch, h));
        let mut hidden = Array2::zeros((self.len * batch, h));
        let zeros = Array2::zeros((batch, h));
        for t in 0..self.len {
            let rows = t * batch..(t + 1) * batch;
            let mut pre = gates.slice(s![rows.clone(), ..]).to_owned();
            if t > 0 {
                let h_prev = hidden.slice(s![(t - 1) * batch..t * batch, ..]);
                pre += &h_prev.dot(&u);
            }
            let c_prev = if t > 0 {
                cells.slice(s![(t - 1) * batch..t * batch, ..])
            } else {
                zeros.view()
            };
            let (c, hid) = Self::step(&mut pre, c_prev, h);
            gates.slice_mut(s![rows.clone(), ..]).assign(&pre);
            cells.slice_mut(s![rows.clone(), ..]).assign(&c);
            hidden.slice_mut(s![rows, ..]).assign(&hid);
        }
        LayerCache {
            input,
            gates,
            cells,
            hidden,
        }
    }

    /// Inference without caches: per-step state only.
    fn final_hidden(&self, params: &[f64], inputs: &[&[f64]]) -> Array2<f64> {
        let batch = inputs.len();
        let h = self.hyper.hidden;
        let x = self.stack(inputs);
        let mut h_states: Vec<Array2<f64>> = vec![Array2::zeros((batch, h)); self.layers.len()];
        let mut c_states: Vec<Array2<f64>> = vec![Array2::zeros((batch, h)); self.layers.len()];
        for t in 0..self.len {
            let mut below = x.slice(s![t * batch..(t + 1) * batch, ..]).to_owned();
            for (l, layer) in self.layers.iter().enumerate() {
                let mut pre = below.dot(&layer.w.matrix(params));
                add_row_bias(&mut pre, layer.b.vector(params));
                if t > 0 {
                    pre += &h_states[l].dot(&layer.u.matrix(params));
                }
                let (c, hid) = Self::step(&mut pre, c_states[l].view(), h);
                c_states[l] = c;
                h_states[l] = hid.clone();
                below = hid;
            }
        }
        h_states.pop().expect("at least one layer")
    }
}

impl Network for Lstm {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        let h = self.hyper.hidden;
        for layer in &self.layers {
            glorot_fill(&mut p, layer.w, layer.input, 4 * h, rng);
            glorot_fill(&mut p, layer.u, h, 4 * h, rng);
            for j in h..2 * h {
                p[layer.b.offset + j] = 1.0;
            }
        }
        glorot_fill(&mut p, self.wo, h, head_width(self.n_classes), rng);
        p
    }

    fn logits(&self, params: &[f64], inputs: &[&[f64]]) -> Array2<f64> {
        let last = self.final_hidden(params, inputs);
        let mut logits = last.dot(&self.wo.matrix(params));
        add_row_bias(&mut logits, self.bo.vector(params));
        logits
    }

    fn loss_and_grad(
        &self,
        params: &[f64],
        inputs: &[&[f64]],
        targets: &[usize],
        class_weights: &[f64],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        let batch = inputs.len();
        let h = self.hyper.hidden;
        let mut caches: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        let mut input = self.stack(inputs);
        for layer in &self.layers {
            let cache = self.run_layer(params, layer, input, batch);
            input = cache.hidden.clone();
            caches.push(cache);
        }
        let top = caches.last().expect("at least one layer");
        let last = top.hidden.slice(s![(self.len - 1) * batch.., ..]).to_owned();

        // Inverted dropout on the final hidden state.
        let mask = match dropout {
            Some(rng) if self.hyper.dropout > 0.0 => {
                let keep = 1.0 - self.hyper.dropout;
                Array2::from_shape_fn((batch, h), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            }
            _ => Array2::ones((batch, h)),
        };
        let dropped = &last * &mask;
        let mut logits = dropped.dot(&self.wo.matrix(params));
        add_row_bias(&mut logits, self.bo.vector(params));
        let (loss, dlogits) = nn::weighted_cross_entropy(&logits, targets, class_weights, self.n_classes);

        let mut grad = vec![0.0; self.n_params];
        self.wo.write_matrix(&mut grad, &dropped.t().dot(&dlogits));
        self.bo.write_vector(&mut grad, &dlogits.sum_axis(Axis(0)));

        // Gradient w.r.t. the top layer's hidden sequence.
        let mut dhidden = Array2::zeros((self.len * batch, h));
        dhidden
            .slice_mut(s![(self.len - 1) * batch.., ..])
            .assign(&(dlogits.dot(&self.wo.matrix(params).t()) * &mask));

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[l];
            let u = layer.u.matrix(params);
            let mut dpre = Array2::zeros((self.len * batch, 4 * h));
            let mut dh_next: Array2<f64> = Array2::zeros((batch, h));
            let mut dc_next: Array2<f64> = Array2::zeros((batch, h));
            for t in (0..self.len).rev() {
                let base = t * batch;
                for b in 0..batch {
                    let r = base + b;
                    for j in 0..h {
                        let i = cache.gates[[r, j]];
                        let f = cache.gates[[r, h + j]];
                        let g = cache.gates[[r, 2 * h + j]];
                        let o = cache.gates[[r, 3 * h + j]];
                        let c = cache.cells[[r, j]];
                        let c_prev = if t > 0 { cache.cells[[r - batch, j]] } else { 0.0 };
                        let dh = dhidden[[r, j]] + dh_next[[b, j]];
                        let tc = c.tanh();
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[[b, j]];
                        dpre[[r, j]] = dc * g * i * (1.0 - i);
                        dpre[[r, h + j]] = dc * c_prev * f * (1.0 - f);
                        dpre[[r, 2 * h + j]] = dc * i * (1.0 - g * g);
                        dpre[[r, 3 * h + j]] = dh * tc * o * (1.0 - o);
                        dc_next[[b, j]] = dc * f;
                    }
                }
                let dp = dpre.slice(s![base..base + batch, ..]);
                dh_next = dp.dot(&u.t());
            }
            // dU pairs step t's gate gradient with h_{t-1}.
            if self.len > 1 {
                let h_prev = cache.hidden.slice(s![..(self.len - 1) * batch, ..]);
                let dp_next = dpre.slice(s![batch.., ..]);
                layer.u.write_matrix(&mut grad, &h_prev.t().dot(&dp_next));
            }
            layer.w.write_matrix(&mut grad, &cache.input.t().dot(&dpre));
            layer.b.write_vector(&mut grad, &dpre.sum_axis(Axis(0)));
            if l > 0 {
                dhidden = dpre.dot(&layer.w.matrix(params).t());
            }
        }
        (loss, grad)
    }
}
