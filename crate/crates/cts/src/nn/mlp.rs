//! Small feed-forward stack: dense layers with ReLU between them and a
//! linear output. Used by the classification heads.

use ndarray::Array1;
use rand::Rng;

use super::{Dense, FlatParams, NnError, ParamLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer (post-ReLU of the previous one).
    inputs: Vec<Array1<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array1<f64>>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng>(rng: &mut R, dims: &[usize]) -> Mlp {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| Dense::new(rng, w[1], w[0]))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Mlp {
        let layers = dims.windows(2).map(|w| Dense::zeros(w[1], w[0])).collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn forward(&self, x: &Array1<f64>) -> (Array1<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(current.clone());
            let pre = layer.forward(&current);
            cache.pre.push(pre.clone());
            current = if i + 1 < self.layers.len() {
                super::relu(&pre)
            } else {
                pre
            };
        }
        (current, cache)
    }

    /// Inference without keeping the cache.
    pub fn predict(&self, x: &Array1<f64>) -> Array1<f64> {
        self.forward(x).0
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        dy: &Array1<f64>,
        grads: &mut Mlp,
    ) -> Array1<f64> {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                d = super::relu_backward(&cache.pre[i], &d);
            }
            d = self.layers[i].backward(&cache.inputs[i], &d, &mut grads.layers[i]);
        }
        d
    }
}

impl FlatParams for Mlp {
    fn param_layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::default();
        for (i, layer) in self.layers.iter().enumerate() {
            layout.push(format!("layer{i}.w"), &[layer.out_dim(), layer.in_dim()]);
            layout.push(format!("layer{i}.b"), &[layer.out_dim()]);
        }
        layout
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            super::copy_array2(&mut out, &layer.w);
            super::copy_array1(&mut out, &layer.b);
        }
        out
    }

    fn unflatten(&mut self, data: &[f64]) -> Result<(), NnError> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum();
        if data.len() != expected {
            return Err(NnError::BadParamBuffer {
                got: data.len(),
                expected,
            });
        }
        let mut pos = 0;
        for layer in &mut self.layers {
            super::read_array2(data, &mut pos, &mut layer.w);
            super::read_array1(data, &mut pos, &mut layer.b);
        }
        Ok(())
    }
}
