//! Additive attention over per-token hidden states.
//!
//! For hidden states `h_j` the score path is `s_j = tanh(M h_j + b)`,
//! `e_j = s_j . c`, `alpha = softmax(e)`, output `y = sum_j alpha_j h_j`.
//! `M`, `b`, and `c` are learned jointly with the rest of the network.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{softmax, xavier_uniform};

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// `(A, Dh)`
    pub m: Array2<f64>,
    /// `(A)`
    pub b: Array1<f64>,
    /// `(A)` context vector.
    pub c: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    hs: Array2<f64>,
    scores: Array2<f64>,
    pub alpha: Array1<f64>,
}

impl Attention {
    pub fn new<R: Rng>(rng: &mut R, attn_dim: usize, hidden_dim: usize) -> Attention {
        Attention {
            m: xavier_uniform(rng, attn_dim, hidden_dim),
            b: Array1::zeros(attn_dim),
            c: Array1::from_shape_fn(attn_dim, |_| rng.gen_range(-0.1..0.1)),
        }
    }

    pub fn zeros_like(&self) -> Attention {
        Attention {
            m: Array2::zeros(self.m.dim()),
            b: Array1::zeros(self.b.len()),
            c: Array1::zeros(self.c.len()),
        }
    }

    pub fn forward(&self, hs: &Array2<f64>) -> (Array1<f64>, AttentionCache) {
        let n = hs.nrows();
        let mut scores = Array2::zeros((n, self.b.len()));
        let mut energies = Array1::zeros(n);
        for j in 0..n {
            let s = (self.m.dot(&hs.row(j)) + &self.b).mapv(f64::tanh);
            energies[j] = s.dot(&self.c);
            scores.row_mut(j).assign(&s);
        }
        let alpha = softmax(&energies);
        let mut y = Array1::zeros(hs.ncols());
        for j in 0..n {
            y.scaled_add(alpha[j], &hs.row(j));
        }
        (
            y,
            AttentionCache {
                hs: hs.clone(),
                scores,
                alpha,
            },
        )
    }

    /// Accumulates parameter gradients and returns `d loss / d hs`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &Array1<f64>,
        grads: &mut Attention,
    ) -> Array2<f64> {
        let n = cache.hs.nrows();
        let alpha = &cache.alpha;
        let mut dhs = Array2::zeros(cache.hs.dim());

        // y = sum_j alpha_j h_j
        let mut dalpha = Array1::zeros(n);
        for j in 0..n {
            dalpha[j] = cache.hs.row(j).dot(dy);
            dhs.row_mut(j).scaled_add(alpha[j], dy);
        }

        // softmax jacobian
        let weighted: f64 = (0..n).map(|k| alpha[k] * dalpha[k]).sum();
        let de = Array1::from_shape_fn(n, |j| alpha[j] * (dalpha[j] - weighted));

        for j in 0..n {
            let s_j = cache.scores.row(j);
            // e_j = s_j . c
            let ds = de[j] * &self.c;
            grads.c.scaled_add(de[j], &s_j);
            // s = tanh(a)
            let da = Array1::from_shape_fn(ds.len(), |k| ds[k] * (1.0 - s_j[k] * s_j[k]));
            for (mut row, &dak) in grads.m.rows_mut().into_iter().zip(da.iter()) {
                row.scaled_add(dak, &cache.hs.row(j));
            }
            grads.b += &da;
            dhs.row_mut(j).scaled_add(1.0, &self.m.t().dot(&da));
        }
        dhs
    }
}
