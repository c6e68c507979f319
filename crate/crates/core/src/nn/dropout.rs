use super::rng::RngStream;
use super::Mode;
use crate::error::{Error, Result};

/// Inverted dropout.
///
/// In train mode each element is zeroed with probability `rate` and survivors are
/// scaled by `1 / (1 - rate)`. Returns the output and, when elements were dropped,
/// the per-element scale mask for the backward pass.
pub fn dropout(x: &[f64], rate: f64, mode: Mode, rng: &mut RngStream) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.to_vec(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep_scale })
        .collect();
    let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((y, Some(mask)))
}

/// Applies a saved dropout mask to an upstream gradient in place.
pub(crate) fn apply_mask(grad: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(mask) = mask {
        grad.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
}
