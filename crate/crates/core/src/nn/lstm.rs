//! LSTM cells and bidirectional LSTM layers.
//!
//! Gate order in every `[4h x ..]` block is input, forget, cell candidate, output.
//! Each direction carries two bias vectors (input-side and hidden-side).

use super::activation::sigmoid;
use super::affine::uniform_init;
use super::gemm::{add_column_sums, gemm};
use super::norm::add_into;
use super::packed::PackedLayout;
use super::rng::RngStream;
use super::tensor::{Matrix, NamedTensor, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Initial value of the forget-gate slice of both bias vectors.
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Explicit weights of one LSTM direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `[4h x in]`
    pub w_ih: Matrix,
    /// `[4h x h]`
    pub w_hh: Matrix,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl LstmWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Matrix::zeros(4 * hidden, input),
            w_hh: Matrix::zeros(4 * hidden, hidden),
            b_ih: vec![0.0; 4 * hidden],
            b_hh: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols
    }

    fn validate(&self) -> Result<()> {
        let h = self.w_hh.cols;
        if self.w_hh.rows != 4 * h || self.w_ih.rows != 4 * h {
            return Err(Error::dims("lstm weights", &self.w_ih.shape(), &self.w_hh.shape()));
        }
        if self.b_ih.len() != 4 * h || self.b_hh.len() != 4 * h {
            return Err(Error::dims("lstm biases", &[4 * h], &[self.b_ih.len(), self.b_hh.len()]));
        }
        Ok(())
    }
}

/// One step of the LSTM recurrence.
pub fn lstm_cell_step(x: &[f64], prev: &LstmState, weights: &LstmWeights) -> Result<LstmState> {
    weights.validate()?;
    let h = weights.hidden();
    if x.len() != weights.input() {
        return Err(Error::dims("lstm_cell_step input", &[x.len()], &weights.w_ih.shape()));
    }
    if prev.h.len() != h || prev.c.len() != h {
        return Err(Error::dims("lstm_cell_step state", &[prev.h.len(), prev.c.len()], &[h]));
    }
    let pre: Vec<f64> = (0..4 * h)
        .map(|k| {
            let wx: f64 = weights.w_ih.row(k).iter().zip(x).map(|(w, v)| w * v).sum();
            let wh: f64 = weights.w_hh.row(k).iter().zip(&prev.h).map(|(w, v)| w * v).sum();
            wx + wh + weights.b_ih[k] + weights.b_hh[k]
        })
        .collect();
    let mut next = LstmState::zeros(h);
    for j in 0..h {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[h + j]);
        let g = pre[2 * h + j].tanh();
        let o = sigmoid(pre[3 * h + j]);
        next.c[j] = f * prev.c[j] + i * g;
        next.h[j] = o * next.c[j].tanh();
    }
    Ok(next)
}

/// Weights of one bidirectional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmWeights {
    pub forward: LstmWeights,
    pub backward: LstmWeights,
}

/// Stacked bidirectional LSTM over one sequence `[S x in]`, zero initial states.
///
/// Row `t` of the result is the top layer's forward-direction state at `t`
/// followed by its backward-direction state at `t`.
pub fn bilstm_forward(seq: &Matrix, layers: &[BiLstmWeights]) -> Result<Matrix> {
    if seq.rows == 0 {
        return Err(Error::validation("bilstm_forward: empty sequence"));
    }
    if layers.is_empty() {
        return Err(Error::validation("bilstm_forward: no layers"));
    }
    let mut input = seq.clone();
    for layer in layers {
        let h = layer.forward.hidden();
        if layer.backward.hidden() != h {
            return Err(Error::dims("bilstm hidden sizes", &[h], &[layer.backward.hidden()]));
        }
        let s = input.rows;
        let mut out = Matrix::zeros(s, 2 * h);
        let mut state = LstmState::zeros(h);
        for t in 0..s {
            state = lstm_cell_step(input.row(t), &state, &layer.forward)?;
            out.data[t * 2 * h..t * 2 * h + h].copy_from_slice(&state.h);
        }
        let mut state = LstmState::zeros(h);
        for t in (0..s).rev() {
            state = lstm_cell_step(input.row(t), &state, &layer.backward)?;
            out.data[t * 2 * h + h..(t + 1) * 2 * h].copy_from_slice(&state.h);
        }
        input = out;
    }
    Ok(input)
}

/// One LSTM direction whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Activations saved by [`LstmDirection::forward`].
#[derive(Debug, Clone, Default)]
pub(crate) struct DirectionCache {
    x: Vec<f64>,
    /// Activated gates `[T x 4h]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmDirection {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        let g = 4 * hidden;
        let w_ih = uniform_init(g * input, input, rng);
        let w_hh = uniform_init(g * hidden, hidden, rng);
        let mut b_ih = uniform_init(g, hidden, rng);
        let mut b_hh = uniform_init(g, hidden, rng);
        for b in [&mut b_ih, &mut b_hh] {
            b[hidden..2 * hidden].iter_mut().for_each(|v| *v = FORGET_BIAS_INIT);
        }
        Ok(Self {
            w_ih: store.add(NamedTensor::new(format!("{prefix}.w_ih"), vec![g, input], w_ih)?)?,
            w_hh: store.add(NamedTensor::new(format!("{prefix}.w_hh"), vec![g, hidden], w_hh)?)?,
            b_ih: store.add(NamedTensor::new(format!("{prefix}.b_ih"), vec![g], b_ih)?)?,
            b_hh: store.add(NamedTensor::new(format!("{prefix}.b_hh"), vec![g], b_hh)?)?,
            input,
            hidden,
        })
    }

    /// `4h(in + h) + 8h`.
    pub fn num_params(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden) + 8 * self.hidden
    }

    pub fn weights(&self, store: &ParamStore) -> LstmWeights {
        let g = 4 * self.hidden;
        LstmWeights {
            w_ih: Matrix::new(g, self.input, store.data(self.w_ih).to_vec()).unwrap(),
            w_hh: Matrix::new(g, self.hidden, store.data(self.w_hh).to_vec()).unwrap(),
            b_ih: store.data(self.b_ih).to_vec(),
            b_hh: store.data(self.b_hh).to_vec(),
        }
    }

    /// Runs the recurrence over packed input `[T x in]` in increasing time order.
    pub(crate) fn forward(&self, store: &ParamStore, layout: &PackedLayout, x: Vec<f64>) -> DirectionCache {
        let (h, g) = (self.hidden, 4 * self.hidden);
        let total = layout.total();
        let w_hh = store.data(self.w_hh);
        let bias: Vec<f64> = store
            .data(self.b_ih)
            .iter()
            .zip(store.data(self.b_hh))
            .map(|(a, b)| a + b)
            .collect();
        let mut gates = Vec::with_capacity(total * g);
        for _ in 0..total {
            gates.extend_from_slice(&bias);
        }
        gemm(total, self.input, g, &x, false, store.data(self.w_ih), true, 1.0, &mut gates);

        let mut c = vec![0.0; total * h];
        let mut tanh_c = vec![0.0; total * h];
        let mut hs = vec![0.0; total * h];
        for t in 0..layout.max_len() {
            let n = layout.batch_size(t);
            let off = layout.offset(t);
            let prev_off = if t > 0 { Some(layout.offset(t - 1)) } else { None };
            if let Some(p) = prev_off {
                gemm(
                    n,
                    h,
                    g,
                    &hs[p * h..(p + n) * h],
                    false,
                    w_hh,
                    true,
                    1.0,
                    &mut gates[off * g..(off + n) * g],
                );
            }
            for r in 0..n {
                let row = off + r;
                let a = &mut gates[row * g..(row + 1) * g];
                for j in 0..h {
                    a[j] = sigmoid(a[j]);
                    a[h + j] = sigmoid(a[h + j]);
                    a[2 * h + j] = a[2 * h + j].tanh();
                    a[3 * h + j] = sigmoid(a[3 * h + j]);
                    let c_prev = prev_off.map_or(0.0, |p| c[(p + r) * h + j]);
                    let cv = a[h + j] * c_prev + a[j] * a[2 * h + j];
                    let tc = cv.tanh();
                    c[row * h + j] = cv;
                    tanh_c[row * h + j] = tc;
                    hs[row * h + j] = a[3 * h + j] * tc;
                }
            }
        }
        DirectionCache {
            x,
            gates,
            c,
            tanh_c,
            h: hs,
        }
    }

    /// Backpropagation through time. `dh` is the upstream gradient on every output
    /// state `[T x h]`; parameter gradients are accumulated and `dx` is returned.
    pub(crate) fn backward(
        &self,
        store: &mut ParamStore,
        layout: &PackedLayout,
        cache: &DirectionCache,
        dh: &[f64],
    ) -> Vec<f64> {
        let (h, g) = (self.hidden, 4 * self.hidden);
        let total = layout.total();
        let steps = layout.max_len();
        let mut da = vec![0.0; total * g];
        let mut dh_rec: Vec<f64> = Vec::new();
        let mut dc_next: Vec<f64> = Vec::new();
        for t in (0..steps).rev() {
            let n = layout.batch_size(t);
            let off = layout.offset(t);
            let n_next = if t + 1 < steps { layout.batch_size(t + 1) } else { 0 };
            let prev_off = if t > 0 { Some(layout.offset(t - 1)) } else { None };
            let mut dc_cur = vec![0.0; n * h];
            for r in 0..n {
                let row = off + r;
                let a = &cache.gates[row * g..(row + 1) * g];
                let d = &mut da[row * g..(row + 1) * g];
                for j in 0..h {
                    let carried = r < n_next;
                    let dhv = dh[row * h + j] + if carried { dh_rec[r * h + j] } else { 0.0 };
                    let tc = cache.tanh_c[row * h + j];
                    let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                    let dc = dhv * o * (1.0 - tc * tc) + if carried { dc_next[r * h + j] } else { 0.0 };
                    let c_prev = prev_off.map_or(0.0, |p| cache.c[(p + r) * h + j]);
                    d[j] = dc * gg * i * (1.0 - i);
                    d[h + j] = dc * c_prev * f * (1.0 - f);
                    d[2 * h + j] = dc * i * (1.0 - gg * gg);
                    d[3 * h + j] = dhv * tc * o * (1.0 - o);
                    dc_cur[r * h + j] = dc * f;
                }
            }
            dc_next = dc_cur;
            if t > 0 {
                dh_rec = vec![0.0; n * h];
                gemm(n, g, h, &da[off * g..(off + n) * g], false, store.data(self.w_hh), false, 0.0, &mut dh_rec);
            }
        }

        // Hidden state feeding each row's recurrence; zero at t = 0.
        let mut h_prev = vec![0.0; total * h];
        for t in 1..steps {
            let (n, off, p) = (layout.batch_size(t), layout.offset(t), layout.offset(t - 1));
            h_prev[off * h..(off + n) * h].copy_from_slice(&cache.h[p * h..(p + n) * h]);
        }
        gemm(g, total, h, &da, true, &h_prev, false, 1.0, store.grad_mut(self.w_hh));
        gemm(g, total, self.input, &da, true, &cache.x, false, 1.0, store.grad_mut(self.w_ih));
        let mut db = vec![0.0; g];
        add_column_sums(&da, total, g, &mut db);
        add_into(store.grad_mut(self.b_ih), &db);
        add_into(store.grad_mut(self.b_hh), &db);
        let mut dx = vec![0.0; total * self.input];
        gemm(total, g, self.input, &da, false, store.data(self.w_ih), false, 0.0, &mut dx);
        dx
    }
}

/// Forward and backward directions of one stacked layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct BiLayerCache {
    fwd: DirectionCache,
    bwd: DirectionCache,
}

impl BiLstmLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            forward: LstmDirection::new(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
            backward: LstmDirection::new(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.forward.num_params() + self.backward.num_params()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// Packed `[T x in]` to packed `[T x 2h]`. The backward direction runs over each
    /// sequence reversed within its own length.
    pub(crate) fn forward(&self, store: &ParamStore, layout: &PackedLayout, x: &[f64]) -> (Vec<f64>, BiLayerCache) {
        let h = self.forward.hidden;
        let input = self.forward.input;
        let fwd = self.forward.forward(store, layout, x.to_vec());
        let bwd = self.backward.forward(store, layout, layout.reverse_rows(x, input));
        let total = layout.total();
        let mut out = vec![0.0; total * 2 * h];
        for i in 0..total {
            let src = layout.reversed_row(i);
            out[i * 2 * h..i * 2 * h + h].copy_from_slice(&fwd.h[i * h..(i + 1) * h]);
            out[i * 2 * h + h..(i + 1) * 2 * h].copy_from_slice(&bwd.h[src * h..(src + 1) * h]);
        }
        (out, BiLayerCache { fwd, bwd })
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParamStore,
        layout: &PackedLayout,
        cache: &BiLayerCache,
        dout: &[f64],
    ) -> Vec<f64> {
        let h = self.forward.hidden;
        let input = self.forward.input;
        let total = layout.total();
        let mut dh_fwd = vec![0.0; total * h];
        let mut dh_bwd = vec![0.0; total * h];
        for i in 0..total {
            dh_fwd[i * h..(i + 1) * h].copy_from_slice(&dout[i * 2 * h..i * 2 * h + h]);
            let src = layout.reversed_row(i);
            dh_bwd[src * h..(src + 1) * h].copy_from_slice(&dout[i * 2 * h + h..(i + 1) * 2 * h]);
        }
        let mut dx = self.forward.backward(store, layout, &cache.fwd, &dh_fwd);
        let dx_rev = self.backward.backward(store, layout, &cache.bwd, &dh_bwd);
        for i in 0..total {
            let dst = layout.reversed_row(i);
            for k in 0..input {
                dx[dst * input + k] += dx_rev[i * input + k];
            }
        }
        dx
    }
}
