use super::activation::softmax;
use super::tensor::Matrix;
use crate::error::{Error, Result};

/// Class-weighted softmax cross-entropy averaged over rows.
///
/// `loss = (1/rows) * sum_i w[y_i] * -ln softmax(logits_i)[y_i]`. Returns the loss and
/// its gradient with respect to the logits.
pub fn weighted_cross_entropy(logits: &Matrix, labels: &[usize], class_weights: &[f64]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows {
        return Err(Error::dims("weighted_cross_entropy", &logits.shape(), &[labels.len()]));
    }
    if class_weights.len() != logits.cols {
        return Err(Error::dims("weighted_cross_entropy weights", &logits.shape(), &[class_weights.len()]));
    }
    if let Some(w) = class_weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::validation(format!("class weight {w} must be finite and non-negative")));
    }
    let rows = logits.rows as f64;
    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows, logits.cols);
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols {
            return Err(Error::validation(format!(
                "label {y} at row {i} outside the class domain 0..{}",
                logits.cols
            )));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = class_weights[y];
        loss += w * (lse - row[y]);
        let p = softmax(row);
        let drow = &mut dlogits.data[i * logits.cols..(i + 1) * logits.cols];
        for (c, (d, pc)) in drow.iter_mut().zip(&p).enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *d = w * (pc - target) / rows;
        }
    }
    Ok((loss / rows, dlogits))
}
