//! Joint-space PD torque law with actuator saturation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::JointState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

/// Per-joint proportional and derivative gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
}

impl Gains {
    pub fn new(kp: Vec<f64>, kd: Vec<f64>) -> Result<Self, ControlError> {
        let g = Self { kp, kd };
        g.validate()?;
        Ok(g)
    }

    pub fn zeros(n: usize) -> Self {
        Self { kp: vec![0.0; n], kd: vec![0.0; n] }
    }

    pub fn n_joints(&self) -> usize {
        self.kp.len()
    }

    /// Tuned gains must have `kp > 0` and `kd >= 0`. [`Gains::zeros`] is
    /// allowed to exist for open-loop runs but does not validate.
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.kp.len() != self.kd.len() {
            return Err(ControlError::InvalidGains(format!(
                "kp has {} entries, kd has {}",
                self.kp.len(),
                self.kd.len()
            )));
        }
        if !self.kp.iter().all(|k| k.is_finite() && *k > 0.0) {
            return Err(ControlError::InvalidGains("kp must be finite and > 0".into()));
        }
        if !self.kd.iter().all(|k| k.is_finite() && *k >= 0.0) {
            return Err(ControlError::InvalidGains("kd must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `clamp(kp∘(q_des − q) + kd∘(qd_des − qd), −limits, limits)`.
///
/// Angles are compared as given; the trajectory module supplies unwrapped
/// setpoints so no wrapping happens here.
pub fn pd_torque(
    gains: &Gains,
    q_des: &[f64],
    qd_des: &[f64],
    state: &JointState,
    limits: &[f64],
) -> Vec<f64> {
    debug_assert_eq!(q_des.len(), state.q.len());
    debug_assert_eq!(limits.len(), state.q.len());
    (0..state.q.len())
        .map(|j| {
            let raw = gains.kp[j] * (q_des[j] - state.q[j]) + gains.kd[j] * (qd_des[j] - state.qd[j]);
            raw.clamp(-limits[j], limits[j])
        })
        .collect()
}
