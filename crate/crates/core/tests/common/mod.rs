#![allow(dead_code)]

use amalr::model::{LossKind, ModelKind, ModelSpec};
use amalr::stream::{
    DriftingQuadraticSpec, PiecewiseTaskSpec, RotatingGaussianSpec, StreamKind, StreamSpec,
};

pub fn rotating(d_in: usize, n_classes: usize, batch: usize, horizon: u64, seed: u64) -> StreamSpec {
    StreamSpec {
        kind: StreamKind::RotatingGaussian(RotatingGaussianSpec {
            d_in,
            n_classes,
            radius: 2.0,
            angular_velocity: 0.01,
            noise_std: 1.0,
        }),
        batch_size: batch,
        horizon,
        seed,
    }
}

pub fn piecewise(batch: usize, horizon: u64, seed: u64) -> StreamSpec {
    StreamSpec {
        kind: StreamKind::PiecewiseTask(PiecewiseTaskSpec {
            d_in: 4,
            n_classes: 6,
            classes_per_task: 2,
            task_length: 20,
            separation: 3.0,
            noise_std: 1.0,
        }),
        batch_size: batch,
        horizon,
        seed,
    }
}

pub fn quadratic(center0: Vec<f64>, velocity: Vec<f64>, noise: f64, batch: usize, horizon: u64, seed: u64) -> StreamSpec {
    StreamSpec {
        kind: StreamKind::DriftingQuadratic(DriftingQuadraticSpec {
            center0,
            velocity,
            mu: 0.5,
            l_q: 2.0,
            noise,
            domain_radius: None,
        }),
        batch_size: batch,
        horizon,
        seed,
    }
}

pub fn linear(d_in: usize, n_classes: usize, weight_decay: f64) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::LinearSoftmax { d_in, n_classes },
        loss: LossKind::CrossEntropy,
        weight_decay,
    }
}

pub fn mlp(d_in: usize, hidden: usize, n_classes: usize, weight_decay: f64) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Mlp1Hidden {
            d_in,
            hidden,
            n_classes,
            init_scale: 1.0,
        },
        loss: LossKind::CrossEntropy,
        weight_decay,
    }
}

pub fn probe(curvature: Vec<f64>) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::QuadraticProbe { curvature, init: None },
        loss: LossKind::Quadratic,
        weight_decay: 0.0,
    }
}
