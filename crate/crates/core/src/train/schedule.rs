//! Cosine learning-rate decay with exact endpoints.

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// `lr(t) = lr_final + (lr_init - lr_final) * (1 + cos(pi t / T)) / 2`,
/// monotone non-increasing, with `lr(0) = lr_init` and `lr(T) = lr_final`
/// returned exactly.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument(
            "lr_schedule: total_steps must be positive".into(),
        ));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "lr_schedule: step {step} out of range 0..={total_steps}"
        )));
    }
    if step == 0 {
        return Ok(cfg.lr_init);
    }
    if step == total_steps {
        return Ok(cfg.lr_final);
    }
    let t = step as f64 / total_steps as f64;
    Ok(cfg.lr_final
        + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, 1000, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_schedule(1000, 1000, &cfg).unwrap(), 1e-6);
    }

    #[test]
    fn midpoint_value() {
        // lr_final + (lr_init - lr_final) / 2 = 5.05e-5
        let cfg = TrainConfig::default();
        let mid = lr_schedule(500, 1000, &cfg).unwrap();
        assert!((mid - 5.05e-5).abs() < 1e-18, "{mid}");
    }

    #[test]
    fn monotone_non_increasing() {
        let cfg = TrainConfig::default();
        let mut prev = f64::INFINITY;
        for step in 0..=2357 {
            let lr = lr_schedule(step, 2357, &cfg).unwrap();
            assert!(lr <= prev, "step {step}: {lr} > {prev}");
            prev = lr;
        }
    }

    #[test]
    fn zero_total_steps_is_an_error() {
        let cfg = TrainConfig::default();
        assert!(lr_schedule(0, 0, &cfg).is_err());
        assert!(lr_schedule(7, 5, &cfg).is_err());
    }
}
