use super::gemm::{add_column_sums, gemm};
use super::rng::RngStream;
use super::tensor::{Matrix, NamedTensor, ParamId, ParamStore};
use crate::error::{Error, Result};

/// `x * w + b`, broadcasting `b` over rows.
pub fn affine_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if x.cols != w.rows {
        return Err(Error::dims("affine_forward", &x.shape(), &w.shape()));
    }
    if b.len() != w.cols {
        return Err(Error::dims("affine_forward bias", &w.shape(), &[b.len()]));
    }
    let data = affine_rows(&x.data, x.rows, x.cols, &w.data, w.cols, b);
    Matrix::new(x.rows, w.cols, data)
}

/// Gradients of an affine map given the upstream gradient `dout`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Matrix,
    pub dw: Matrix,
    pub db: Vec<f64>,
}

pub fn affine_backward(x: &Matrix, w: &Matrix, dout: &Matrix) -> Result<AffineGrads> {
    if x.cols != w.rows || dout.rows != x.rows || dout.cols != w.cols {
        return Err(Error::dims("affine_backward", &x.shape(), &dout.shape()));
    }
    let mut dw = Matrix::zeros(w.rows, w.cols);
    let mut db = vec![0.0; w.cols];
    accumulate_param_grads(&x.data, x.rows, x.cols, &dout.data, w.cols, &mut dw.data, &mut db);
    let dx = input_grad(&dout.data, x.rows, w.cols, &w.data, x.cols);
    Ok(AffineGrads {
        dx: Matrix::new(x.rows, x.cols, dx)?,
        dw,
        db,
    })
}

pub(crate) fn affine_rows(
    x: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f64],
    out_dim: usize,
    b: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    gemm(rows, in_dim, out_dim, x, false, w, false, 1.0, &mut out);
    out
}

fn accumulate_param_grads(
    x: &[f64],
    rows: usize,
    in_dim: usize,
    dout: &[f64],
    out_dim: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    gemm(in_dim, rows, out_dim, x, true, dout, false, 1.0, dw);
    add_column_sums(dout, rows, out_dim, db);
}

fn input_grad(dout: &[f64], rows: usize, out_dim: usize, w: &[f64], in_dim: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * in_dim];
    gemm(rows, out_dim, in_dim, dout, false, w, true, 0.0, &mut dx);
    dx
}

/// Uniform initialization in `+-sqrt(1 / fan_in)`.
pub(crate) fn uniform_init(n: usize, fan_in: usize, rng: &mut RngStream) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
}

/// Affine layer whose weight `[in x out]` and bias `[out]` live in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let w = uniform_init(in_dim * out_dim, in_dim, rng);
        let b = uniform_init(out_dim, in_dim, rng);
        let weight = store.add(NamedTensor::new(format!("{prefix}.weight"), vec![in_dim, out_dim], w)?)?;
        let bias = store.add(NamedTensor::new(format!("{prefix}.bias"), vec![out_dim], b)?)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], rows: usize) -> Vec<f64> {
        affine_rows(
            x,
            rows,
            self.in_dim,
            store.data(self.weight),
            self.out_dim,
            store.data(self.bias),
        )
    }

    /// Accumulates parameter gradients and returns the input gradient when requested.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        x: &[f64],
        rows: usize,
        dout: &[f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        gemm(
            self.in_dim,
            rows,
            self.out_dim,
            x,
            true,
            dout,
            false,
            1.0,
            store.grad_mut(self.weight),
        );
        add_column_sums(dout, rows, self.out_dim, store.grad_mut(self.bias));
        want_dx.then(|| input_grad(dout, rows, self.out_dim, store.data(self.weight), self.in_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;

    #[test]
    fn identity_and_hand_sum() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(affine_forward(&x, &w, &[0.0, 0.0]).unwrap().data, vec![1.0, 2.0]);

        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(affine_forward(&x, &w, &[-5.0]).unwrap().data, vec![0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let x = Matrix::zeros(1, 3);
        let w = Matrix::zeros(2, 2);
        let err = affine_forward(&x, &w, &[0.0, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(11);
        let x = Matrix::new(3, 4, (0..12).map(|_| rng.uniform_range(-0.1, 0.1)).collect()).unwrap();
        let w = Matrix::new(4, 2, (0..8).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let b = vec![0.3, -0.2];
        let ones = Matrix::new(3, 2, vec![1.0; 6]).unwrap();
        let grads = affine_backward(&x, &w, &ones).unwrap();

        let f = |theta: &[f64]| {
            let w = Matrix::new(4, 2, theta.to_vec()).unwrap();
            affine_forward(&x, &w, &b).unwrap().data.iter().sum::<f64>()
        };
        let report = grad_check(f, &w.data, &grads.dw.data, None, 1e-5).unwrap();
        // Relative error with the |a| + |n| denominator, as stated for this layer.
        for (i, (&a, &n)) in grads.dw.data.iter().zip(&report.numeric).enumerate() {
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-300);
            assert!(rel < 1e-6, "coordinate {i}: analytic {a} numeric {n}");
        }

        let fx = |theta: &[f64]| {
            let x = Matrix::new(3, 4, theta.to_vec()).unwrap();
            affine_forward(&x, &w, &b).unwrap().data.iter().map(|v| v * v).sum::<f64>()
        };
        let out = affine_forward(&x, &w, &b).unwrap();
        let dout = Matrix::new(3, 2, out.data.iter().map(|v| 2.0 * v).collect()).unwrap();
        let g = affine_backward(&x, &w, &dout).unwrap();
        let report = grad_check(fx, &x.data, &g.dx.data, None, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-8);
        let db_expect: Vec<f64> = (0..2).map(|j| (0..3).map(|r| dout.data[r * 2 + j]).sum()).collect();
        assert_eq!(g.db, db_expect);
    }
}
