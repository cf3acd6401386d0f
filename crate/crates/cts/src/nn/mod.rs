//! Minimal neural toolkit with manually derived gradients.
//!
//! Only the fixed architectures used by the topic-suggestion models are
//! provided: embedding lookup, a stacked 1-D convolution encoder, LSTM /
//! BiLSTM, additive attention, dense layers with inverted dropout, softmax
//! cross-entropy, Adam, and an L-BFGS minimizer with an orthant-wise mode
//! for L1 penalties. Everything is `f64`; every backward pass is checked
//! against central finite differences in the test suites.

mod adam;
mod attention;
mod conv;
mod dense;
mod embedding;
mod lbfgs;
mod lstm;
mod mlp;
mod softmax;

pub mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{Attention, AttentionCache};
pub use conv::{CnnEncoder, CnnEncoderCache, ConvLayer};
pub use dense::{dropout_mask, relu, relu_backward, Dense};
pub use embedding::{EmbeddingTable, Vocab, PAD_ID, UNK_ID};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsOutcome};
pub use lstm::{BiLstm, BiLstmCache, LstmCache, LstmParams};
pub use mlp::{Mlp, MlpCache};
pub use softmax::{log_sum_exp, softmax, softmax_ce};

use ndarray::{Array1, Array2};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("parameter buffer length {got}, layout expects {expected}")]
    BadParamBuffer { got: usize, expected: usize },
}

/// Location of one named tensor inside a flattened parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat layout of all parameters of a network, in a fixed documented order.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) {
        let spec = TensorSpec {
            name: name.into(),
            offset: self.total,
            shape: shape.to_vec(),
        };
        self.total += spec.len();
        self.tensors.push(spec);
    }

    /// Name of the tensor covering a flat index.
    pub fn tensor_at(&self, index: usize) -> Option<&TensorSpec> {
        self.tensors
            .iter()
            .find(|t| index >= t.offset && index < t.offset + t.len())
    }
}

/// Networks and heads expose their parameters as one flat `f64` buffer so
/// the optimizers, checkpoints, and finite-difference checks can treat them
/// uniformly.
pub trait FlatParams {
    fn param_layout(&self) -> ParamLayout;
    fn flatten(&self) -> Vec<f64>;
    fn unflatten(&mut self, data: &[f64]) -> Result<(), NnError>;
}

pub(crate) fn copy_array2(out: &mut Vec<f64>, a: &Array2<f64>) {
    out.extend(a.iter().copied());
}

pub(crate) fn copy_array1(out: &mut Vec<f64>, a: &Array1<f64>) {
    out.extend(a.iter().copied());
}

pub(crate) fn read_array2(data: &[f64], pos: &mut usize, a: &mut Array2<f64>) {
    let n = a.len();
    let slice = &data[*pos..*pos + n];
    for (dst, src) in a.iter_mut().zip(slice) {
        *dst = *src;
    }
    *pos += n;
}

pub(crate) fn read_array1(data: &[f64], pos: &mut usize, a: &mut Array1<f64>) {
    let n = a.len();
    let slice = &data[*pos..*pos + n];
    for (dst, src) in a.iter_mut().zip(slice) {
        *dst = *src;
    }
    *pos += n;
}

/// Xavier/Glorot uniform initialization for a `rows x cols` matrix.
pub fn xavier_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Small-scale normal initialization (mean 0, given std).
pub fn normal_init<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}
