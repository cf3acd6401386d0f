//! Fully connected layer, ReLU, and inverted dropout.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::xavier_uniform;

/// `y = W x + b`, with `W: (out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, out_dim: usize, in_dim: usize) -> Dense {
        Dense {
            w: xavier_uniform(rng, out_dim, in_dim),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Dense {
        Dense {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros_like(&self) -> Dense {
        Dense::zeros(self.w.nrows(), self.w.ncols())
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    /// Accumulates parameter gradients into `grads` and returns `d loss / d x`.
    pub fn backward(&self, x: &Array1<f64>, dy: &Array1<f64>, grads: &mut Dense) -> Array1<f64> {
        for (mut row, &dyi) in grads.w.rows_mut().into_iter().zip(dy.iter()) {
            row.scaled_add(dyi, x);
        }
        grads.b += dy;
        self.w.t().dot(dy)
    }
}

pub fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `d loss / d x` for `y = relu(x)` given the pre-activation `x`.
pub fn relu_backward(x: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut dx = dy.clone();
    for (d, &v) in dx.iter_mut().zip(x.iter()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Inverted-dropout mask: entries are `0` with probability `rate`, else
/// `1/(1-rate)`, so the expected value of `x * mask` equals `x`.
pub fn dropout_mask<R: Rng>(rng: &mut R, len: usize, rate: f64) -> Array1<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    if rate == 0.0 {
        return Array1::ones(len);
    }
    let keep = 1.0 - rate;
    Array1::from_shape_fn(len, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}
