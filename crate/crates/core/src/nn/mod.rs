//! Dense feed-forward networks: ReLU hidden layers, softmax output,
//! cross-entropy loss and mini-batch SGD.

mod matrix;
mod metrics;
mod mlp;
mod train;

pub use matrix::Matrix;
pub use metrics::{evaluate, Evaluation};
pub use mlp::{softmax, DenseLayer, ForwardTrace, Mlp};
pub use train::{gradient, mean_loss, train_sgd, Gradient, TrainConfig};

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: usize,
}

impl<T> Sample<T> {
    pub fn new(features: Vec<T>, label: usize) -> Self {
        Self { features, label }
    }
}
