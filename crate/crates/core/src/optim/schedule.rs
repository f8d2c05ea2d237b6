use serde::{Deserialize, Serialize};

/// Scalar schedule over update steps `0..=horizon`; later steps are clamped
/// to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { value: f64 },
    /// One cosine half-cycle from `start` (t = 0) to `end` (t = horizon).
    Cosine { start: f64, end: f64, horizon: usize },
    /// `start · ratio^⌊t / period⌋`.
    Step { start: f64, ratio: f64, period: usize, horizon: usize },
}

impl Schedule {
    pub fn value(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant { value } => value,
            Schedule::Cosine { start, end, horizon } => {
                if horizon == 0 {
                    return end;
                }
                let frac = t.min(horizon) as f64 / horizon as f64;
                start + (end - start) * (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0
            }
            Schedule::Step { start, ratio, period, horizon } => {
                let t = t.min(horizon);
                start * ratio.powi((t / period.max(1)) as i32)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_ramp_endpoints() {
        let s = Schedule::Cosine { start: 1e-4, end: 1e-3, horizon: 1000 };
        assert_eq!(s.value(0), 1e-4);
        assert!((s.value(1000) - 1e-3).abs() < 1e-18);
        assert!((s.value(500) - 5.5e-4).abs() < 1e-15);
        assert_eq!(s.value(5000), s.value(1000));
    }

    #[test]
    fn step_decay() {
        let s = Schedule::Step { start: 0.01, ratio: 0.9, period: 40, horizon: 400 };
        assert_eq!(s.value(39), 0.01);
        assert!((s.value(40) - 0.009).abs() < 1e-15);
        assert!((s.value(10_000) - 0.01 * 0.9f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn values_stay_positive_and_finite() {
        let schedules = [
            Schedule::Constant { value: 0.3 },
            Schedule::Cosine { start: 1e-4, end: 1e-3, horizon: 77 },
            Schedule::Step { start: 0.01, ratio: 0.9, period: 7, horizon: 77 },
        ];
        for s in schedules {
            for t in 0..=77 {
                let v = s.value(t);
                assert!(v > 0.0 && v.is_finite(), "{s:?} at {t}");
            }
        }
    }
}
