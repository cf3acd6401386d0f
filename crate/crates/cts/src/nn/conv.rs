//! Stacked 1-D convolution encoder for utterances.
//!
//! Each layer runs parallel convolutions of the configured kernel widths
//! (default 1, 2, 3), concatenates their channels, and applies ReLU while
//! preserving sequence length. After the last layer the channels are
//! max-pooled over time to a fixed-length vector.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::xavier_uniform;

/// One convolution of a single kernel width. Weight layout `(w*Din, F)`:
/// the flattened window (positions stacked, oldest first) against each
/// filter. Sequence length is preserved with zero padding:
/// `left = w/2`, `right = w - 1 - left`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub width: usize,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl ConvLayer {
    pub fn new<R: Rng>(rng: &mut R, width: usize, in_dim: usize, filters: usize) -> ConvLayer {
        ConvLayer {
            width,
            w: xavier_uniform(rng, width * in_dim, filters),
            b: Array1::zeros(filters),
        }
    }

    pub fn zeros_like(&self) -> ConvLayer {
        ConvLayer {
            width: self.width,
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn filters(&self) -> usize {
        self.w.ncols()
    }

    fn in_dim(&self) -> usize {
        self.w.nrows() / self.width
    }

    fn left_pad(&self) -> i64 {
        (self.width / 2) as i64
    }

    /// `(n, Din) -> (n, F)`.
    pub fn forward(&self, xs: &Array2<f64>) -> Array2<f64> {
        let n = xs.nrows() as i64;
        let d = self.in_dim();
        let mut out = Array2::zeros((xs.nrows(), self.filters()));
        let mut window = Array1::zeros(self.width * d);
        for t in 0..n {
            window.fill(0.0);
            for k in 0..self.width as i64 {
                let src = t - self.left_pad() + k;
                if src < 0 || src >= n {
                    continue;
                }
                let dst = (k as usize) * d;
                window
                    .slice_mut(ndarray::s![dst..dst + d])
                    .assign(&xs.row(src as usize));
            }
            out.row_mut(t as usize)
                .assign(&(self.w.t().dot(&window) + &self.b));
        }
        out
    }

    /// Accumulates parameter gradients and returns `d loss / d xs`.
    pub fn backward(
        &self,
        xs: &Array2<f64>,
        dy: &Array2<f64>,
        grads: &mut ConvLayer,
    ) -> Array2<f64> {
        let n = xs.nrows() as i64;
        let d = self.in_dim();
        let mut dxs = Array2::zeros(xs.dim());
        let mut window = Array1::zeros(self.width * d);
        for t in 0..n {
            let dy_t = dy.row(t as usize);
            window.fill(0.0);
            for k in 0..self.width as i64 {
                let src = t - self.left_pad() + k;
                if src < 0 || src >= n {
                    continue;
                }
                let dst = (k as usize) * d;
                window
                    .slice_mut(ndarray::s![dst..dst + d])
                    .assign(&xs.row(src as usize));
            }
            // dW[e, f] += window[e] * dy[f]
            for (mut col, &dyf) in grads.w.columns_mut().into_iter().zip(dy_t.iter()) {
                col.scaled_add(dyf, &window);
            }
            grads.b += &dy_t;
            let dwindow = self.w.dot(&dy_t);
            for k in 0..self.width as i64 {
                let src = t - self.left_pad() + k;
                if src < 0 || src >= n {
                    continue;
                }
                let from = (k as usize) * d;
                dxs.row_mut(src as usize)
                    .scaled_add(1.0, &dwindow.slice(ndarray::s![from..from + d]));
            }
        }
        dxs
    }
}

/// The full encoder: `depth` layers of parallel-width convolutions with
/// ReLU, then max-over-time after the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnEncoder {
    /// `layers[l]` holds one ConvLayer per kernel width.
    pub layers: Vec<Vec<ConvLayer>>,
}

#[derive(Debug, Clone)]
pub struct CnnEncoderCache {
    /// Input of each layer (`inputs[0]` is the embedding matrix).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation (post-concat) of each layer.
    pre_activations: Vec<Array2<f64>>,
    /// Argmax position per output channel for the final pooling.
    argmax: Vec<usize>,
}

impl CnnEncoder {
    pub fn new<R: Rng>(
        rng: &mut R,
        emb_dim: usize,
        filters: usize,
        widths: &[usize],
        depth: usize,
    ) -> CnnEncoder {
        assert!(!widths.is_empty() && depth >= 1);
        let mut layers = Vec::with_capacity(depth);
        let mut in_dim = emb_dim;
        for _ in 0..depth {
            let layer: Vec<ConvLayer> = widths
                .iter()
                .map(|&w| ConvLayer::new(rng, w, in_dim, filters))
                .collect();
            in_dim = filters * widths.len();
            layers.push(layer);
        }
        CnnEncoder { layers }
    }

    pub fn zeros_like(&self) -> CnnEncoder {
        CnnEncoder {
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().map(|c| c.zeros_like()).collect())
                .collect(),
        }
    }

    /// Output length: filters x widths of the last layer.
    pub fn output_dim(&self) -> usize {
        let last = self.layers.last().expect("at least one layer");
        last.iter().map(|c| c.filters()).sum()
    }

    /// `(n, emb) -> (output_dim)`.
    pub fn forward(&self, xs: &Array2<f64>) -> (Array1<f64>, CnnEncoderCache) {
        let mut cache = CnnEncoderCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
            argmax: Vec::new(),
        };
        let mut current = xs.clone();
        for layer in &self.layers {
            cache.inputs.push(current.clone());
            let parts: Vec<Array2<f64>> = layer.iter().map(|c| c.forward(&current)).collect();
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            let pre = ndarray::concatenate(ndarray::Axis(1), &views).expect("same row count");
            cache.pre_activations.push(pre.clone());
            current = pre.mapv(|v| v.max(0.0));
        }
        // Max over time.
        let n = current.nrows();
        let dim = current.ncols();
        let mut pooled = Array1::zeros(dim);
        let mut argmax = vec![0usize; dim];
        for f in 0..dim {
            let mut best = f64::NEG_INFINITY;
            for t in 0..n {
                if current[(t, f)] > best {
                    best = current[(t, f)];
                    argmax[f] = t;
                }
            }
            pooled[f] = best;
        }
        cache.argmax = argmax;
        (pooled, cache)
    }

    /// Accumulates parameter gradients and returns `d loss / d embedding`.
    pub fn backward(
        &self,
        cache: &CnnEncoderCache,
        dy: &Array1<f64>,
        grads: &mut CnnEncoder,
    ) -> Array2<f64> {
        let last_pre = cache.pre_activations.last().expect("forward ran");
        // Un-pool: route each channel's gradient to its argmax position.
        let mut d_current = Array2::zeros(last_pre.dim());
        for (f, &t) in cache.argmax.iter().enumerate() {
            d_current[(t, f)] = dy[f];
        }

        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[l];
            // ReLU mask on the concatenated pre-activation.
            for (d, &p) in d_current.iter_mut().zip(pre.iter()) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = &cache.inputs[l];
            let mut dx = Array2::zeros(input.dim());
            let mut col = 0;
            for (conv, gconv) in layer.iter().zip(&mut grads.layers[l]) {
                let f = conv.filters();
                let dy_part = d_current.slice(ndarray::s![.., col..col + f]).to_owned();
                dx += &conv.backward(input, &dy_part, gconv);
                col += f;
            }
            d_current = dx;
        }
        d_current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, gradients_agree};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(enc: &CnnEncoder) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &enc.layers {
            for conv in layer {
                out.extend(conv.w.iter());
                out.extend(conv.b.iter());
            }
        }
        out
    }

    fn set_flat(enc: &mut CnnEncoder, data: &[f64]) {
        let mut pos = 0;
        for layer in &mut enc.layers {
            for conv in layer {
                for v in conv.w.iter_mut().chain(conv.b.iter_mut()) {
                    *v = data[pos];
                    pos += 1;
                }
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = CnnEncoder::new(&mut rng, 5, 4, &[1, 2, 3], 3);
        let xs = Array2::zeros((6, 5));
        let (y, _) = enc.forward(&xs);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn width_one_single_layer_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let enc = CnnEncoder::new(&mut rng, 4, 6, &[1], 1);
        let xs = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));
        let (y, _) = enc.forward(&xs);
        // Reverse the token order.
        let mut rev = Array2::zeros(xs.dim());
        for t in 0..5 {
            rev.row_mut(t).assign(&xs.row(4 - t));
        }
        let (y_rev, _) = enc.forward(&rev);
        for (a, b) in y.iter().zip(y_rev.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_dim_is_filters_times_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = CnnEncoder::new(&mut rng, 8, 16, &[1, 2, 3], 3);
        assert_eq!(enc.output_dim(), 48);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..5 {
            let n = rng.gen_range(2..5usize);
            let enc = CnnEncoder::new(&mut rng, 3, 2, &[1, 2, 3], 2);
            let xs = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
            let upstream = Array1::from_shape_fn(enc.output_dim(), |_| rng.gen_range(-1.0..1.0));

            let (_, cache) = enc.forward(&xs);
            let mut grads = enc.zeros_like();
            let dx = enc.backward(&cache, &upstream, &mut grads);

            let loss = |e: &CnnEncoder, x: &Array2<f64>| e.forward(x).0.dot(&upstream);

            // Max-pooling makes the loss piecewise; the random inputs keep
            // us away from the ties.
            let numeric_p = central_difference(
                |v| {
                    let mut e = enc.clone();
                    set_flat(&mut e, v);
                    loss(&e, &xs)
                },
                &flat(&enc),
                1e-5,
            );
            assert!(
                gradients_agree(&flat(&grads), &numeric_p, 1e-4, 1e-7),
                "trial {trial}: parameter gradients disagree"
            );

            let numeric_x = central_difference(
                |v| {
                    let x = Array2::from_shape_vec((n, 3), v.to_vec()).unwrap();
                    loss(&enc, &x)
                },
                xs.as_slice().unwrap(),
                1e-5,
            );
            assert!(
                gradients_agree(dx.as_slice().unwrap(), &numeric_x, 1e-4, 1e-7),
                "trial {trial}: input gradients disagree"
            );
        }
    }
}
