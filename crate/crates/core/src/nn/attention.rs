//! Attention pooling: a learned softmax-weighted row sum over sequence positions.
//!
//! Scores come from `tanh(b * w1 + b1) * w2 + b2`; the context vector is
//! `sum_t a[t] * b[t]` with `a` the masked softmax of the scores.

use super::activation::masked_softmax;
use super::affine::{affine_forward, Affine};
use super::packed::PackedLayout;
use super::rng::RngStream;
use super::tensor::{Matrix, ParamStore};
use crate::error::{Error, Result};

/// Explicit scoring-network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[d x a]`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `[a x 1]`
    pub w2: Matrix,
    pub b2: f64,
}

impl AttentionParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(input, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, 1),
            b2: 0.0,
        }
    }
}

/// Pools `b` (`[S x d]`) into a context vector. Masked-out positions get zero weight.
pub fn attention_pool(b: &Matrix, mask: &[bool], params: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if mask.len() != b.rows {
        return Err(Error::dims("attention_pool mask", &b.shape(), &[mask.len()]));
    }
    let mut u = affine_forward(b, &params.w1, &params.b1)?;
    u.data.iter_mut().for_each(|v| *v = v.tanh());
    let scores = affine_forward(&u, &params.w2, &[params.b2])?;
    let weights = masked_softmax(&scores.data, mask)
        .ok_or_else(|| Error::validation("attention_pool: every position is masked"))?;
    let mut context = vec![0.0; b.cols];
    for (t, &a) in weights.iter().enumerate() {
        if a != 0.0 {
            for (c, v) in context.iter_mut().zip(b.row(t)) {
                *c += a * v;
            }
        }
    }
    Ok((context, weights))
}

/// Attention pooling layer with parameters in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionPool {
    pub proj: Affine,
    pub score: Affine,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct AttentionCache {
    u: Vec<f64>,
    /// Packed attention weights `[T]`.
    pub weights: Vec<f64>,
}

impl AttentionPool {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            proj: Affine::new(store, &format!("{prefix}.proj"), input, hidden, rng)?,
            score: Affine::new(store, &format!("{prefix}.score"), hidden, 1, rng)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.proj.num_params() + self.score.num_params()
    }

    pub fn explicit_params(&self, store: &ParamStore) -> AttentionParams {
        AttentionParams {
            w1: Matrix::new(self.proj.in_dim, self.proj.out_dim, store.data(self.proj.weight).to_vec()).unwrap(),
            b1: store.data(self.proj.bias).to_vec(),
            w2: Matrix::new(self.score.in_dim, 1, store.data(self.score.weight).to_vec()).unwrap(),
            b2: store.data(self.score.bias)[0],
        }
    }

    /// Pools packed `[T x d]` rows into one context row per sequence (rank order).
    pub(crate) fn forward(&self, store: &ParamStore, layout: &PackedLayout, b: &[f64]) -> (Vec<f64>, AttentionCache) {
        let total = layout.total();
        let d = self.proj.in_dim;
        let mut u = self.proj.forward(store, b, total);
        u.iter_mut().for_each(|v| *v = v.tanh());
        let scores = self.score.forward(store, &u, total);
        let mut weights = vec![0.0; total];
        let n = layout.num_seqs();
        let mut context = vec![0.0; n * d];
        for r in 0..n {
            let rows: Vec<usize> = (0..layout.len_of(r)).map(|t| layout.row(t, r)).collect();
            let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
            let a = masked_softmax(&s, &vec![true; s.len()]).expect("sequences are non-empty");
            let ctx = &mut context[r * d..(r + 1) * d];
            for (&i, &w) in rows.iter().zip(&a) {
                weights[i] = w;
                for (c, v) in ctx.iter_mut().zip(&b[i * d..(i + 1) * d]) {
                    *c += w * v;
                }
            }
        }
        (context, AttentionCache { u, weights })
    }

    /// Returns the gradient on the packed input rows given `dcontext` (`[n x d]`, rank order).
    pub(crate) fn backward(
        &self,
        store: &mut ParamStore,
        layout: &PackedLayout,
        cache: &AttentionCache,
        b: &[f64],
        dcontext: &[f64],
    ) -> Vec<f64> {
        let total = layout.total();
        let d = self.proj.in_dim;
        let mut db = vec![0.0; total * d];
        let mut dscores = vec![0.0; total];
        for r in 0..layout.num_seqs() {
            let dctx = &dcontext[r * d..(r + 1) * d];
            let rows: Vec<usize> = (0..layout.len_of(r)).map(|t| layout.row(t, r)).collect();
            let da: Vec<f64> = rows
                .iter()
                .map(|&i| b[i * d..(i + 1) * d].iter().zip(dctx).map(|(x, y)| x * y).sum())
                .collect();
            let mean: f64 = rows.iter().zip(&da).map(|(&i, g)| cache.weights[i] * g).sum();
            for (&i, g) in rows.iter().zip(&da) {
                let a = cache.weights[i];
                dscores[i] = a * (g - mean);
                for (o, c) in db[i * d..(i + 1) * d].iter_mut().zip(dctx) {
                    *o = a * c;
                }
            }
        }
        let mut du = self
            .score
            .backward(store, &cache.u, total, &dscores, true)
            .expect("input gradient requested");
        du.iter_mut().zip(&cache.u).for_each(|(g, u)| *g *= 1.0 - u * u);
        let dproj = self
            .proj
            .backward(store, b, total, &du, true)
            .expect("input gradient requested");
        db.iter_mut().zip(&dproj).for_each(|(a, b)| *a += b);
        db
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;

    #[test]
    fn identical_rows_pool_to_that_row() {
        let mut rng = RngStream::new(3);
        let v = vec![0.5, -1.0, 2.0];
        let b = Matrix::from_rows(&[v.clone(), v.clone(), v.clone()]).unwrap();
        let mut p = AttentionParams::zeros(3, 2);
        p.w1.data.iter_mut().for_each(|x| *x = rng.uniform_range(-1.0, 1.0));
        p.w2.data.iter_mut().for_each(|x| *x = rng.uniform_range(-1.0, 1.0));
        let (ctx, _) = attention_pool(&b, &[true; 3], &p).unwrap();
        for (c, x) in ctx.iter().zip(&v) {
            assert!((c - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scoring_is_uniform_and_respects_mask() {
        let b = Matrix::new(4, 3, (0..12).map(f64::from).collect()).unwrap();
        let p = AttentionParams::zeros(3, 2);
        let (_, a) = attention_pool(&b, &[true; 4], &p).unwrap();
        assert_eq!(a, vec![0.25; 4]);
        let (ctx, a) = attention_pool(&b, &[true, true, false, false], &p).unwrap();
        assert_eq!(a, vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(ctx, vec![1.5, 2.5, 3.5]);
        assert!(attention_pool(&b, &[false; 4], &p).is_err());
    }

    #[test]
    fn packed_layer_matches_standalone_and_gradients_check() {
        let mut rng = RngStream::new(12);
        let (d, a) = (4, 3);
        let mut store = ParamStore::new();
        let layer = AttentionPool::new(&mut store, "attn", d, a, &mut rng).unwrap();
        let lens = [3usize, 5];
        let layout = PackedLayout::new(&lens).unwrap();
        let b: Vec<f64> = (0..layout.total() * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let (ctx, cache) = layer.forward(&store, &layout, &b);

        let params = layer.explicit_params(&store);
        for r in 0..layout.num_seqs() {
            let rows: Vec<Vec<f64>> = (0..layout.len_of(r))
                .map(|t| {
                    let i = layout.row(t, r);
                    b[i * d..(i + 1) * d].to_vec()
                })
                .collect();
            let (c, w) = attention_pool(&Matrix::from_rows(&rows).unwrap(), &vec![true; rows.len()], &params).unwrap();
            for k in 0..d {
                assert!((ctx[r * d + k] - c[k]).abs() < 1e-14);
            }
            let total: f64 = w.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }

        let wts: Vec<f64> = (0..ctx.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let loss = |s: &ParamStore, b: &[f64]| {
            let (c, _) = layer.forward(s, &layout, b);
            c.iter().zip(&wts).map(|(x, y)| x * y).sum::<f64>()
        };
        let dbin = layer.backward(&mut store, &layout, &cache, &b, &wts);
        let r = grad_check(|t| loss(&store, t), &b, &dbin, None, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
        let probe = store.clone();
        let r = grad_check(
            |t| {
                let mut s = probe.clone();
                s.set_flat_values(t).unwrap();
                loss(&s, &b)
            },
            &store.flat_values(),
            &store.flat_grads(),
            None,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }
}
