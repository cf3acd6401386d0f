//! LSTM and BiLSTM with hand-derived backpropagation through time.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use super::xavier_uniform;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate weights in row blocks `[input; forget; cell; output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `(4H, D)`
    pub wx: Array2<f64>,
    /// `(4H, H)`
    pub wh: Array2<f64>,
    /// `(4H)`
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, input: usize) -> LstmParams {
        let mut b = Array1::zeros(4 * hidden);
        // Forget-gate bias starts at 1 so early training does not wipe the
        // cell state.
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmParams {
            wx: xavier_uniform(rng, 4 * hidden, input),
            wh: xavier_uniform(rng, 4 * hidden, hidden),
            b,
        }
    }

    pub fn zeros(hidden: usize, input: usize) -> LstmParams {
        LstmParams {
            wx: Array2::zeros((4 * hidden, input)),
            wh: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn zeros_like(&self) -> LstmParams {
        LstmParams {
            wx: Array2::zeros(self.wx.dim()),
            wh: Array2::zeros(self.wh.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.wx.ncols()
    }

    /// Run over a `(n, D)` sequence; returns all hidden states `(n, H)` and
    /// the cache needed for the backward pass.
    pub fn forward(&self, xs: &Array2<f64>) -> (Array2<f64>, LstmCache) {
        let n = xs.nrows();
        let h_dim = self.hidden();
        let mut hs = Array2::zeros((n, h_dim));
        let mut cache = LstmCache {
            xs: xs.clone(),
            gates: Array2::zeros((n, 4 * h_dim)),
            cells: Array2::zeros((n, h_dim)),
            tanh_cells: Array2::zeros((n, h_dim)),
        };
        let mut h_prev = Array1::zeros(h_dim);
        let mut c_prev: Array1<f64> = Array1::zeros(h_dim);
        for t in 0..n {
            let x_t = xs.row(t);
            let z = self.wx.dot(&x_t) + self.wh.dot(&h_prev) + &self.b;
            let mut gates = Array1::zeros(4 * h_dim);
            for k in 0..h_dim {
                gates[k] = sigmoid(z[k]); // input
                gates[h_dim + k] = sigmoid(z[h_dim + k]); // forget
                gates[2 * h_dim + k] = z[2 * h_dim + k].tanh(); // cell candidate
                gates[3 * h_dim + k] = sigmoid(z[3 * h_dim + k]); // output
            }
            let mut c = Array1::zeros(h_dim);
            let mut tc = Array1::zeros(h_dim);
            let mut h = Array1::zeros(h_dim);
            for k in 0..h_dim {
                c[k] = gates[h_dim + k] * c_prev[k] + gates[k] * gates[2 * h_dim + k];
                tc[k] = c[k].tanh();
                h[k] = gates[3 * h_dim + k] * tc[k];
            }
            cache.gates.row_mut(t).assign(&gates);
            cache.cells.row_mut(t).assign(&c);
            cache.tanh_cells.row_mut(t).assign(&tc);
            hs.row_mut(t).assign(&h);
            h_prev = h;
            c_prev = c;
        }
        (hs, cache)
    }

    /// Backpropagate `d loss / d h_t` for every step; accumulates parameter
    /// gradients into `grads` and returns `d loss / d xs`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        hs: &Array2<f64>,
        dh_upstream: &Array2<f64>,
        grads: &mut LstmParams,
    ) -> Array2<f64> {
        let n = cache.xs.nrows();
        let h_dim = self.hidden();
        let mut dxs = Array2::zeros(cache.xs.dim());
        let mut dh_next: Array1<f64> = Array1::zeros(h_dim);
        let mut dc_next: Array1<f64> = Array1::zeros(h_dim);
        for t in (0..n).rev() {
            let gates = cache.gates.row(t);
            let tc = cache.tanh_cells.row(t);
            let c_prev = if t == 0 {
                Array1::zeros(h_dim)
            } else {
                cache.cells.row(t - 1).to_owned()
            };
            let h_prev = if t == 0 {
                Array1::zeros(h_dim)
            } else {
                hs.row(t - 1).to_owned()
            };

            let dh = &dh_upstream.row(t) + &dh_next;
            let mut dz = Array1::zeros(4 * h_dim);
            let mut dc_prev = Array1::zeros(h_dim);
            for k in 0..h_dim {
                let i_g = gates[k];
                let f_g = gates[h_dim + k];
                let g_g = gates[2 * h_dim + k];
                let o_g = gates[3 * h_dim + k];
                let d_o = dh[k] * tc[k];
                let d_c = dh[k] * o_g * (1.0 - tc[k] * tc[k]) + dc_next[k];
                let d_i = d_c * g_g;
                let d_f = d_c * c_prev[k];
                let d_g = d_c * i_g;
                dc_prev[k] = d_c * f_g;
                dz[k] = d_i * i_g * (1.0 - i_g);
                dz[h_dim + k] = d_f * f_g * (1.0 - f_g);
                dz[2 * h_dim + k] = d_g * (1.0 - g_g * g_g);
                dz[3 * h_dim + k] = d_o * o_g * (1.0 - o_g);
            }

            let x_t = cache.xs.row(t);
            for (mut row, &dzk) in grads.wx.rows_mut().into_iter().zip(dz.iter()) {
                row.scaled_add(dzk, &x_t);
            }
            for (mut row, &dzk) in grads.wh.rows_mut().into_iter().zip(dz.iter()) {
                row.scaled_add(dzk, &h_prev);
            }
            grads.b += &dz;

            dxs.row_mut(t).assign(&self.wx.t().dot(&dz));
            dh_next = self.wh.t().dot(&dz);
            dc_next = dc_prev;
        }
        dxs
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Array2<f64>,
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
}

/// Forward and backward LSTMs over the same sequence; hidden states are
/// concatenated per position to `(n, 2H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
    hs_fwd: Array2<f64>,
    hs_bwd: Array2<f64>,
}

impl BiLstm {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, input: usize) -> BiLstm {
        BiLstm {
            fwd: LstmParams::new(rng, hidden, input),
            bwd: LstmParams::new(rng, hidden, input),
        }
    }

    pub fn zeros_like(&self) -> BiLstm {
        BiLstm {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    fn reverse_rows(m: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(m.dim());
        let n = m.nrows();
        for t in 0..n {
            out.row_mut(t).assign(&m.row(n - 1 - t));
        }
        out
    }

    pub fn forward(&self, xs: &Array2<f64>) -> (Array2<f64>, BiLstmCache) {
        let (hs_fwd, fwd) = self.fwd.forward(xs);
        let rev = Self::reverse_rows(xs);
        let (hs_bwd_rev, bwd) = self.bwd.forward(&rev);
        let hs_bwd = Self::reverse_rows(&hs_bwd_rev);

        let n = xs.nrows();
        let h = self.hidden();
        let mut out = Array2::zeros((n, 2 * h));
        out.slice_mut(s![.., ..h]).assign(&hs_fwd);
        out.slice_mut(s![.., h..]).assign(&hs_bwd);
        (
            out,
            BiLstmCache {
                fwd,
                bwd,
                hs_fwd,
                hs_bwd: hs_bwd_rev,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &BiLstmCache,
        dh: &Array2<f64>,
        grads: &mut BiLstm,
    ) -> Array2<f64> {
        let h = self.hidden();
        let dh_fwd = dh.slice(s![.., ..h]).to_owned();
        let dh_bwd_rev = Self::reverse_rows(&dh.slice(s![.., h..]).to_owned());
        let dx_fwd = self
            .fwd
            .backward(&cache.fwd, &cache.hs_fwd, &dh_fwd, &mut grads.fwd);
        let dx_bwd_rev = self
            .bwd
            .backward(&cache.bwd, &cache.hs_bwd, &dh_bwd_rev, &mut grads.bwd);
        dx_fwd + Self::reverse_rows(&dx_bwd_rev)
    }
}
