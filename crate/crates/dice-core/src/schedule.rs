//! Piecewise schedules for coefficients that change over training: the
//! bottleneck log-beta anneal, the redundancy-coefficient ramp-up and the
//! sampling-covariance ramp.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interp {
    /// Hold the last anchor value until the next anchor (jump at anchors).
    StepHold,
    /// Interpolate linearly between surrounding anchors.
    LinearRamp,
}

/// Which counter the anchor positions refer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Steps,
    Epochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// (position, value) anchors, strictly increasing in position.
    pub anchors: Vec<(f64, f64)>,
    pub interp: Interp,
    pub axis: Axis,
}

impl Schedule {
    pub fn new(anchors: Vec<(f64, f64)>, interp: Interp, axis: Axis) -> Self {
        let s = Schedule { anchors, interp, axis };
        s.validate().expect("invalid schedule");
        s
    }

    pub fn constant(value: f64) -> Self {
        Schedule { anchors: vec![(0.0, value)], interp: Interp::StepHold, axis: Axis::Steps }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.anchors.is_empty() {
            return Err("schedule needs at least one anchor".into());
        }
        for w in self.anchors.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(format!(
                    "anchors must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                ));
            }
        }
        Ok(())
    }

    /// Value at position `t` (a step or epoch count depending on `axis`).
    /// Before the first anchor the first value holds; beyond the last anchor
    /// the last value holds.
    pub fn value_at(&self, t: f64) -> f64 {
        let anchors = &self.anchors;
        if t <= anchors[0].0 {
            return anchors[0].1;
        }
        for w in anchors.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t < t1 {
                return match self.interp {
                    Interp::StepHold => v0,
                    Interp::LinearRamp => v0 + (v1 - v0) * (t - t0) / (t1 - t0),
                };
            }
        }
        anchors[anchors.len() - 1].1
    }

    /// Resolves the position for a given optimizer step under this schedule's axis.
    pub fn position(&self, step: usize, steps_per_epoch: usize) -> f64 {
        match self.axis {
            Axis::Steps => step as f64,
            Axis::Epochs => step as f64 / steps_per_epoch.max(1) as f64,
        }
    }

    /// Convenience: value at an optimizer step.
    pub fn at_step(&self, step: usize, steps_per_epoch: usize) -> f64 {
        self.value_at(self.position(step, steps_per_epoch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_query_returns_anchor_value() {
        let s = Schedule::new(
            vec![(0.0, 1.0), (10.0, 5.0)],
            Interp::StepHold,
            Axis::Steps,
        );
        assert_eq!(s.value_at(0.0), 1.0);
        assert_eq!(s.value_at(10.0), 5.0);
    }

    #[test]
    fn step_hold_between_anchors() {
        let s = Schedule::new(
            vec![(0.0, 2.0), (10.0, 7.0)],
            Interp::StepHold,
            Axis::Steps,
        );
        assert_eq!(s.value_at(5.0), 2.0);
        assert_eq!(s.value_at(9.999), 2.0);
        assert_eq!(s.value_at(25.0), 7.0);
    }

    #[test]
    fn linear_ramp_interpolates() {
        let s = Schedule::new(
            vec![(0.0, 0.0), (80.0, 0.2)],
            Interp::LinearRamp,
            Axis::Steps,
        );
        assert!((s.value_at(40.0) - 0.1).abs() < 1e-15);
        assert_eq!(s.value_at(200.0), 0.2);
    }

    #[test]
    fn epoch_axis_divides_by_steps_per_epoch() {
        let s = Schedule::new(
            vec![(0.0, 0.0), (2.0, 1.0)],
            Interp::LinearRamp,
            Axis::Epochs,
        );
        assert!((s.at_step(50, 50) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_anchor_list_is_rejected() {
        let s = Schedule { anchors: vec![], interp: Interp::StepHold, axis: Axis::Steps };
        assert!(s.validate().is_err());
    }

    #[test]
    fn non_increasing_anchors_rejected() {
        let s = Schedule {
            anchors: vec![(5.0, 1.0), (5.0, 2.0)],
            interp: Interp::StepHold,
            axis: Axis::Steps,
        };
        assert!(s.validate().is_err());
    }
}
