//! Episode-length curriculum: an episode ends at the first step whose reward
//! exceeds a threshold that rises over training.

use super::config::TrainConfig;

/// 1-based index of the first reward above `thresh`, or `cap` if there is none
/// within the first `cap` steps.
pub fn curriculum_horizon(rewards: &[f64], thresh: f64, cap: usize) -> usize {
    let cap = cap.max(1);
    rewards.iter().take(cap).position(|&r| r > thresh).map_or(cap, |i| i + 1)
}

/// Reward threshold for `iteration`: linear from `thresh_start` to
/// `thresh_max` over the first `thresh_ramp * iterations` iterations, flat
/// afterwards. With the curriculum disabled episodes always run to the cap.
pub fn schedule_thresh(iteration: usize, cfg: &TrainConfig) -> f64 {
    if !cfg.curriculum {
        return f64::INFINITY;
    }
    let ramp_end = cfg.thresh_ramp * cfg.iterations as f64;
    if ramp_end <= 0.0 || iteration as f64 >= ramp_end {
        return cfg.thresh_max;
    }
    let t = iteration as f64 / ramp_end;
    cfg.thresh_start + (cfg.thresh_max - cfg.thresh_start) * t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn horizon_examples() {
        assert_eq!(curriculum_horizon(&[0.1, 0.5, 0.9], 0.4, 10), 2);
        assert_eq!(curriculum_horizon(&[0.1, 0.2, 0.3], 0.4, 3), 3);
        assert_eq!(curriculum_horizon(&[0.1, 0.2], 0.4, 5), 5);
        assert_eq!(curriculum_horizon(&[0.0, 0.0], -1.0, 5), 1);
        // equality does not exceed
        assert_eq!(curriculum_horizon(&[0.4, 0.4], 0.4, 2), 2);
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig {
            iterations: 100,
            thresh_start: 0.1,
            thresh_max: 0.5,
            thresh_ramp: 0.5,
            ..TrainConfig::default()
        };
        assert_eq!(schedule_thresh(0, &cfg), 0.1);
        assert!((schedule_thresh(25, &cfg) - 0.3).abs() < 1e-12);
        assert_eq!(schedule_thresh(50, &cfg), 0.5);
        assert_eq!(schedule_thresh(99, &cfg), 0.5);
        let off = TrainConfig { curriculum: false, ..cfg };
        assert_eq!(schedule_thresh(0, &off), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn schedule_monotone(n in 1usize..500, ramp in 0.0f64..=1.0, start in -1.0f64..1.0,
                             span in 0.0f64..2.0, e1 in 0usize..600, de in 0usize..600) {
            let cfg = TrainConfig {
                iterations: n, thresh_ramp: ramp, thresh_start: start,
                thresh_max: start + span, ..TrainConfig::default()
            };
            prop_assert!(schedule_thresh(e1, &cfg) <= schedule_thresh(e1 + de, &cfg));
        }

        #[test]
        fn horizon_within_cap(rewards in proptest::collection::vec(-1.0f64..1.0, 0..20),
                              thresh in -1.0f64..1.0, cap in 1usize..30) {
            let h = curriculum_horizon(&rewards, thresh, cap);
            prop_assert!(h >= 1 && h <= cap);
        }
    }
}
