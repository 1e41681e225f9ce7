//! Analytic-vs-central-difference gradient comparison for the neural
//! architectures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{build_network, ArchitectureKind};

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub n_params: usize,
    /// max over parameters of |analytic − numeric| / max(|analytic|, |numeric|, 1e-6)
    pub max_relative_error: f64,
}

/// Checks the loss gradient of a freshly initialized network on a small
/// random batch. Dropout is disabled so the loss is deterministic.
pub fn gradient_check(
    arch: &ArchitectureKind,
    n_channels: usize,
    len: usize,
    n_classes: usize,
    seed: u64,
) -> GradientCheck {
    let net = build_network(arch, n_channels, len, n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = net.init(&mut rng);
    let batch = 3;
    let inputs: Vec<Vec<f64>> = (0..batch)
        .map(|_| (0..n_channels * len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<usize> = (0..batch).map(|i| i % n_classes).collect();
    let weights: Vec<f64> = (0..n_classes).map(|c| 1.0 + 0.5 * c as f64).collect();

    let (_, analytic) = net.loss_and_grad(&params, &refs, &targets, &weights, None);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = net.loss_and_grad(&probe, &refs, &targets, &weights, None).0;
        probe[i] = params[i] - h;
        let down = net.loss_and_grad(&probe, &refs, &targets, &weights, None).0;
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    GradientCheck {
        n_params: net.n_params(),
        max_relative_error: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CnnHyper, LstmHyper};

    fn tiny_cnn() -> ArchitectureKind {
        ArchitectureKind::Cnn1d(CnnHyper {
            conv1_filters: 2,
            conv2_filters: 3,
            kernel: 3,
            pool: 2,
            dense_units: 4,
        })
    }

    fn tiny_lstm() -> ArchitectureKind {
        ArchitectureKind::Lstm(LstmHyper {
            hidden: 3,
            layers: 2,
            dropout: 0.5,
        })
    }

    #[test]
    fn cnn_gradients() {
        for n_classes in [2, 3] {
            let check = gradient_check(&tiny_cnn(), 2, 8, n_classes, 7);
            assert!(check.n_params <= 200, "{check:?}");
            assert!(check.max_relative_error <= 1e-4, "{check:?}");
        }
    }

    #[test]
    fn lstm_gradients() {
        for n_classes in [2, 3] {
            let check = gradient_check(&tiny_lstm(), 2, 6, n_classes, 7);
            assert!(check.n_params <= 200, "{check:?}");
            assert!(check.max_relative_error <= 1e-4, "{check:?}");
        }
    }
}
