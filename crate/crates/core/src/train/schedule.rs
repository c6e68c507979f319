use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

/// Per-epoch learning rate: linear warmup `lr·(e+1)/w` for `e < w`, then cosine
/// decay reaching exactly zero at the last epoch.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.max_epochs {
        return Err(Error::validation(format!(
            "epoch {epoch} outside [0, {})",
            config.max_epochs
        )));
    }
    let w = config.warmup_epochs;
    if epoch < w {
        return Ok(config.lr * (epoch + 1) as f64 / w as f64);
    }
    let span = config.max_epochs - 1 - w;
    if span == 0 {
        return Ok(config.lr);
    }
    let progress = (epoch - w) as f64 / span as f64;
    Ok(config.lr * 0.5 * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let c = TrainConfig::default();
        assert!((lr_at_epoch(0, &c).unwrap() - 4.0e-5).abs() < 1e-18);
        assert!((lr_at_epoch(4, &c).unwrap() - 2.0e-4).abs() < 1e-18);
        assert_eq!(lr_at_epoch(5, &c).unwrap(), 2.0e-4);
        assert_eq!(lr_at_epoch(99, &c).unwrap(), 0.0);
        assert!(lr_at_epoch(100, &c).is_err());
    }

    #[test]
    fn cosine_midpoint_and_monotone() {
        let c = TrainConfig::default();
        // Halfway through the 94-epoch decay span.
        assert!((lr_at_epoch(52, &c).unwrap() - 1.0e-4).abs() < 1e-15);
        let lrs: Vec<f64> = (5..100).map(|e| lr_at_epoch(e, &c).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
