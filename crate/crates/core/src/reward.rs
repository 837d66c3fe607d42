//! Per-request rewards: accuracy, efficiency and frequency terms.

use crate::config::{PerformanceMode, RewardConfig};
use crate::error::{Error, Result};

/// Action index: answer from the inference memory.
pub const LOOKUP: usize = 0;
/// Action index: run the predictor again.
pub const REPREDICT: usize = 1;

/// Accuracy term. `y_rp` and `y_dl` are the re-predicted and looked-up
/// remaining times; `truth` is required in error mode.
pub fn performance_reward(
    y_rp: f64,
    y_dl: f64,
    action: usize,
    truth: Option<f64>,
    mode: PerformanceMode,
) -> Result<f64> {
    let gain = match mode {
        PerformanceMode::ErrorDiff => {
            let y = truth
                .ok_or_else(|| Error::State("error_diff performance reward needs the true remaining time".into()))?;
            (y_dl - y).abs() - (y_rp - y).abs()
        }
        PerformanceMode::RawDiff => y_dl - y_rp,
    };
    Ok(if action == REPREDICT { gain } else { -gain })
}

pub fn efficiency_reward(action: usize, omega_p: f64) -> f64 {
    if action == REPREDICT {
        omega_p
    } else {
        0.0
    }
}

/// `alpha * sigma + beta` for a re-prediction, zero otherwise.
pub fn frequency_reward(sigma: f64, action: usize, alpha: f64, beta: f64) -> f64 {
    if action == REPREDICT {
        alpha * sigma + beta
    } else {
        0.0
    }
}

pub fn total_reward(r_p: f64, r_e: f64, r_f: f64) -> f64 {
    r_p + r_e + r_f
}

/// Components of one reward evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParts {
    pub performance: f64,
    pub efficiency: f64,
    pub frequency: f64,
    pub total: f64,
}

/// Reward for `action` with the accuracy term divided by
/// `performance_scale_s`.
pub fn reward(cfg: &RewardConfig, y_rp: f64, y_dl: f64, truth: f64, action: usize, sigma: f64) -> Result<RewardParts> {
    let performance =
        performance_reward(y_rp, y_dl, action, Some(truth), cfg.performance_mode)? / cfg.performance_scale_s;
    let efficiency = efficiency_reward(action, cfg.omega_p);
    let frequency = frequency_reward(sigma, action, cfg.alpha, cfg.beta);
    Ok(RewardParts {
        performance,
        efficiency,
        frequency,
        total: total_reward(performance, efficiency, frequency),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let m = PerformanceMode::ErrorDiff;
        // e_dl = 10, e_rp = 4
        assert_eq!(
            performance_reward(104.0, 110.0, REPREDICT, Some(100.0), m).unwrap(),
            6.0
        );
        assert_eq!(performance_reward(104.0, 110.0, LOOKUP, Some(100.0), m).unwrap(), -6.0);
        assert_eq!(performance_reward(96.0, 104.0, LOOKUP, Some(100.0), m).unwrap(), 0.0);
        assert_eq!(
            performance_reward(90.0, 100.0, LOOKUP, None, PerformanceMode::RawDiff).unwrap(),
            -10.0
        );
        assert!(matches!(performance_reward(1.0, 2.0, 0, None, m), Err(Error::State(_))));
        assert_eq!(efficiency_reward(LOOKUP, -0.5), 0.0);
        assert_eq!(efficiency_reward(REPREDICT, -0.5), -0.5);
        assert_eq!(frequency_reward(50.0, REPREDICT, 0.02, -1.0), 0.0);
        assert_eq!(frequency_reward(80.0, LOOKUP, 0.02, -1.0), 0.0);
        assert!((total_reward(6.0, -0.5, -0.2) - 5.3).abs() < 1e-12);
    }
}
