use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update with decoupled weight decay. `step` counts from 1.
///
/// The decay `θ ← θ(1 − lr·wd)` is applied before the bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    step: u64,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::dims("adamw_step", &[params.len()], &[grads.len(), moments.m.len()]));
    }
    if step == 0 {
        return Err(Error::validation("adamw_step: step index starts at 1"));
    }
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    let decay = 1.0 - lr * weight_decay;
    for i in 0..params.len() {
        let g = grads[i];
        let m = ADAM_BETA1 * moments.m[i] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * moments.v[i] + (1.0 - ADAM_BETA2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        params[i] = params[i] * decay - lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// AdamW state for every tensor of a parameter store.
#[derive(Debug, Clone)]
pub struct AdamW {
    moments: Vec<Moments>,
    step: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            moments: store.iter().map(|t| Moments::zeros(t.len())).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every tensor from its accumulated gradient. Nothing is modified when
    /// any gradient is non-finite; the error names the offending tensor.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
        if let Some(t) = store.iter().find(|t| t.grad.iter().any(|g| !g.is_finite())) {
            return Err(Error::NonFinite {
                tensor: t.name().to_string(),
                what: "gradient",
            });
        }
        self.step += 1;
        for (t, m) in store.iter_mut().zip(&mut self.moments) {
            let grad = std::mem::take(&mut t.grad);
            let res = adamw_step(&mut t.data, &grad, m, self.step, lr, weight_decay);
            t.grad = grad;
            res?;
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `clip_norm`.
/// Returns the norm before scaling.
pub fn clip_gradients(grads: &mut [&mut [f64]], clip_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|g| *g *= scale);
    }
    norm
}

/// [`clip_gradients`] over every gradient in a parameter store.
pub fn clip_store_gradients(store: &mut ParamStore, clip_norm: f64) -> f64 {
    let mut grads: Vec<&mut [f64]> = store.iter_mut().map(|t| t.grad.as_mut_slice()).collect();
    clip_gradients(&mut grads, clip_norm)
}
