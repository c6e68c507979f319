//! Layer normalization and batch normalization.

use super::tensor::{Matrix, NamedTensor, ParamId, ParamStore};
use super::Mode;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Normalizes one vector to zero mean and unit variance (1/d), then applies gain and bias.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() || gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::dims("layer_norm", &[x.len()], &[gain.len(), bias.len()]));
    }
    if !(eps > 0.0) {
        return Err(Error::validation("layer_norm eps must be positive"));
    }
    let (y, _) = layer_norm_rows(x, 1, x.len(), gain, bias, eps);
    Ok(y)
}

/// Saved per-row statistics for the layer-norm backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_rows(
    x: &[f64],
    rows: usize,
    dim: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * dim];
    let mut cache = NormCache {
        xhat: vec![0.0; rows * dim],
        inv_std: vec![0.0; rows],
    };
    let d = dim as f64;
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / d;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / (var + eps).sqrt();
        cache.inv_std[r] = inv_std;
        let xh = &mut cache.xhat[r * dim..(r + 1) * dim];
        let yr = &mut y[r * dim..(r + 1) * dim];
        for j in 0..dim {
            xh[j] = (xr[j] - mean) * inv_std;
            yr[j] = gain[j] * xh[j] + bias[j];
        }
    }
    (y, cache)
}

/// Returns dx and accumulates gain/bias gradients.
pub(crate) fn layer_norm_rows_backward(
    cache: &NormCache,
    rows: usize,
    dim: usize,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * dim];
    let d = dim as f64;
    let mut dxhat = vec![0.0; dim];
    for r in 0..rows {
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let dyr = &dy[r * dim..(r + 1) * dim];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..dim {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xh[j];
        }
        let scale = cache.inv_std[r] / d;
        for j in 0..dim {
            dx[r * dim + j] = scale * (d * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    dx
}

/// Layer norm with gain and bias stored in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        let gain = store.add(NamedTensor::new(format!("{prefix}.gain"), vec![dim], vec![1.0; dim])?)?;
        let bias = store.add(NamedTensor::new(format!("{prefix}.bias"), vec![dim], vec![0.0; dim])?)?;
        Ok(Self {
            gain,
            bias,
            dim,
            eps: DEFAULT_EPS,
        })
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }

    pub(crate) fn forward(&self, store: &ParamStore, x: &[f64], rows: usize) -> (Vec<f64>, NormCache) {
        layer_norm_rows(x, rows, self.dim, store.data(self.gain), store.data(self.bias), self.eps)
    }

    pub(crate) fn backward(&self, store: &mut ParamStore, cache: &NormCache, rows: usize, dy: &[f64]) -> Vec<f64> {
        let gain = store.data(self.gain).to_vec();
        let mut dgain = vec![0.0; self.dim];
        let mut dbias = vec![0.0; self.dim];
        let dx = layer_norm_rows_backward(cache, rows, self.dim, &gain, dy, &mut dgain, &mut dbias);
        add_into(store.grad_mut(self.gain), &dgain);
        add_into(store.grad_mut(self.bias), &dbias);
        dx
    }
}

pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// Per-feature batch statistics needed by the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Train mode: normalize each column by batch mean and population variance and
/// update the running stats. Eval mode: normalize by the running stats.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_rows(
    x: &[f64],
    rows: usize,
    dim: usize,
    gain: &[f64],
    bias: &[f64],
    state: &mut BatchNormState,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<(Vec<f64>, Option<BatchNormCache>)> {
    let mut y = vec![0.0; rows * dim];
    match mode {
        Mode::Eval => {
            for r in 0..rows {
                for j in 0..dim {
                    let inv_std = 1.0 / (state.running_var[j] + eps).sqrt();
                    y[r * dim + j] = gain[j] * (x[r * dim + j] - state.running_mean[j]) * inv_std + bias[j];
                }
            }
            Ok((y, None))
        }
        Mode::Train => {
            if rows < 2 {
                return Err(Error::validation(
                    "batch norm in train mode needs at least 2 rows",
                ));
            }
            let n = rows as f64;
            let mut mean = vec![0.0; dim];
            let mut var = vec![0.0; dim];
            for row in x.chunks_exact(dim).take(rows) {
                add_into(&mut mean, row);
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for row in x.chunks_exact(dim).take(rows) {
                for j in 0..dim {
                    let d = row[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; rows * dim];
            for r in 0..rows {
                for j in 0..dim {
                    let k = r * dim + j;
                    xhat[k] = (x[k] - mean[j]) * inv_std[j];
                    y[k] = gain[j] * xhat[k] + bias[j];
                }
            }
            let unbias = n / (n - 1.0);
            for j in 0..dim {
                state.running_mean[j] = (1.0 - momentum) * state.running_mean[j] + momentum * mean[j];
                state.running_var[j] = (1.0 - momentum) * state.running_var[j] + momentum * var[j] * unbias;
            }
            Ok((y, Some(BatchNormCache { xhat, inv_std })))
        }
    }
}

pub(crate) fn batch_norm_rows_backward(
    cache: &BatchNormCache,
    rows: usize,
    dim: usize,
    gain: &[f64],
    dy: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let n = rows as f64;
    let mut sum_dxhat = vec![0.0; dim];
    let mut sum_dxhat_xhat = vec![0.0; dim];
    for r in 0..rows {
        for j in 0..dim {
            let k = r * dim + j;
            dgain[j] += dy[k] * cache.xhat[k];
            dbias[j] += dy[k];
            let dxh = dy[k] * gain[j];
            sum_dxhat[j] += dxh;
            sum_dxhat_xhat[j] += dxh * cache.xhat[k];
        }
    }
    let mut dx = vec![0.0; rows * dim];
    for r in 0..rows {
        for j in 0..dim {
            let k = r * dim + j;
            let dxh = dy[k] * gain[j];
            dx[k] = cache.inv_std[j] / n * (n * dxh - sum_dxhat[j] - cache.xhat[k] * sum_dxhat_xhat[j]);
        }
    }
    dx
}

/// Standalone batch norm over a matrix with explicit gain, bias and running stats.
pub fn batch_norm(
    x: &Matrix,
    gain: &[f64],
    bias: &[f64],
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<Matrix> {
    if gain.len() != x.cols
        || bias.len() != x.cols
        || state.running_mean.len() != x.cols
        || state.running_var.len() != x.cols
    {
        return Err(Error::dims("batch_norm", &x.shape(), &[gain.len()]));
    }
    let (y, _) = batch_norm_rows(
        &x.data,
        x.rows,
        x.cols,
        gain,
        bias,
        state,
        mode,
        DEFAULT_EPS,
        BATCH_NORM_MOMENTUM,
    )?;
    Matrix::new(x.rows, x.cols, y)
}

/// Batch norm whose gain and bias are learned parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        let gain = store.add(NamedTensor::new(format!("{prefix}.gain"), vec![dim], vec![1.0; dim])?)?;
        let bias = store.add(NamedTensor::new(format!("{prefix}.bias"), vec![dim], vec![0.0; dim])?)?;
        Ok(Self { gain, bias, dim })
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim
    }

    pub(crate) fn forward(
        &self,
        store: &ParamStore,
        state: &mut BatchNormState,
        x: &[f64],
        rows: usize,
        mode: Mode,
    ) -> Result<(Vec<f64>, Option<BatchNormCache>)> {
        batch_norm_rows(
            x,
            rows,
            self.dim,
            store.data(self.gain),
            store.data(self.bias),
            state,
            mode,
            DEFAULT_EPS,
            BATCH_NORM_MOMENTUM,
        )
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParamStore,
        cache: &BatchNormCache,
        rows: usize,
        dy: &[f64],
    ) -> Vec<f64> {
        let gain = store.data(self.gain).to_vec();
        let mut dgain = vec![0.0; self.dim];
        let mut dbias = vec![0.0; self.dim];
        let dx = batch_norm_rows_backward(cache, rows, self.dim, &gain, dy, &mut dgain, &mut dbias);
        add_into(store.grad_mut(self.gain), &dgain);
        add_into(store.grad_mut(self.bias), &dbias);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::rng::RngStream;

    #[test]
    fn constant_input_maps_to_bias() {
        let y = layer_norm(&[3.0; 4], &[1.0; 4], &[0.0; 4], DEFAULT_EPS).unwrap();
        assert_eq!(y, vec![0.0; 4]);
        let y = layer_norm(&[3.0; 4], &[1.0; 4], &[0.5; 4], DEFAULT_EPS).unwrap();
        assert_eq!(y, vec![0.5; 4]);
    }

    #[test]
    fn already_normalized_input() {
        let y = layer_norm(&[-1.0, 1.0], &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4);
        assert!(layer_norm(&[1.0], &[1.0], &[0.0], 0.0).is_err());
        assert!(layer_norm(&[1.0, 2.0], &[1.0], &[0.0], 1e-5).is_err());
    }

    fn random(n: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_range(-1.5, 1.5)).collect()
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = RngStream::new(5);
        let (rows, dim) = (3, 5);
        let x = random(rows * dim, &mut rng);
        let gain = random(dim, &mut rng);
        let bias = random(dim, &mut rng);
        let w = random(rows * dim, &mut rng);
        let loss = |x: &[f64], g: &[f64], b: &[f64]| {
            let (y, _) = layer_norm_rows(x, rows, dim, g, b, DEFAULT_EPS);
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = layer_norm_rows(&x, rows, dim, &gain, &bias, DEFAULT_EPS);
        let mut dg = vec![0.0; dim];
        let mut db = vec![0.0; dim];
        let dx = layer_norm_rows_backward(&cache, rows, dim, &gain, &w, &mut dg, &mut db);
        let r = grad_check(|t| loss(t, &gain, &bias), &x, &dx, None, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        let r = grad_check(|t| loss(&x, t, &bias), &gain, &dg, None, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6);
        let r = grad_check(|t| loss(&x, &gain, t), &bias, &db, None, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6);
    }

    #[test]
    fn batch_norm_eval_identity_and_train_unit_variance() {
        let x = Matrix::from_rows(&[vec![0.3, -2.0], vec![1.5, 4.0]]).unwrap();
        let mut state = BatchNormState::new(2);
        let y = batch_norm(&x, &[1.0; 2], &[0.0; 2], &mut state, Mode::Eval).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-5 * b.abs().max(1.0));
        }

        let x = Matrix::from_rows(&[vec![-1.0, -1.0], vec![1.0, 1.0]]).unwrap();
        let y = batch_norm(&x, &[1.0; 2], &[0.0; 2], &mut state, Mode::Train).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-5);
        }
        // Running stats moved 10% toward the batch (mean 0, unbiased var 2).
        assert!((state.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
        assert_eq!(state.running_mean[0], 0.0);
    }

    #[test]
    fn batch_norm_single_row_train_rejected() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut state = BatchNormState::new(2);
        assert!(batch_norm(&x, &[1.0; 2], &[0.0; 2], &mut state, Mode::Train).is_err());
        assert!(batch_norm(&x, &[1.0; 2], &[0.0; 2], &mut state, Mode::Eval).is_ok());
    }

    #[test]
    fn batch_norm_train_gradients() {
        let mut rng = RngStream::new(9);
        let (rows, dim) = (8, 3);
        let x = random(rows * dim, &mut rng);
        let gain = random(dim, &mut rng);
        let bias = random(dim, &mut rng);
        let w = random(rows * dim, &mut rng);
        let loss = |x: &[f64], g: &[f64], b: &[f64]| {
            let mut st = BatchNormState::new(dim);
            let (y, _) = batch_norm_rows(x, rows, dim, g, b, &mut st, Mode::Train, DEFAULT_EPS, 0.1).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut st = BatchNormState::new(dim);
        let (_, cache) = batch_norm_rows(&x, rows, dim, &gain, &bias, &mut st, Mode::Train, DEFAULT_EPS, 0.1).unwrap();
        let mut dg = vec![0.0; dim];
        let mut db = vec![0.0; dim];
        let dx = batch_norm_rows_backward(cache.as_ref().unwrap(), rows, dim, &gain, &w, &mut dg, &mut db);
        for (point, grad, which) in [(&x, &dx, 0), (&gain, &dg, 1), (&bias, &db, 2)] {
            let r = grad_check(
                |t| match which {
                    0 => loss(t, &gain, &bias),
                    1 => loss(&x, t, &bias),
                    _ => loss(&x, &gain, t),
                },
                point,
                grad,
                None,
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-5, "param {which}: {}", r.max_rel_error);
        }
    }
}
