//! Closed-loop execution of one trajectory and the two tuning objectives:
//! mean Cartesian tracking error and mean squared torque increment.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{pd_torque, Gains};
use crate::plant::{ArmModel, CartesianPoint, JointState, Workspace};
use crate::trajectory::{JointTrajectory, TrajectoryKind};

/// Objective value assigned to rollouts that blow up.
pub const PENALTY: f64 = 1e6;

/// Joint-angle magnitude treated as divergence.
pub const DIVERGENCE_ANGLE: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RolloutError {
    #[error("rollout diverged at tick {tick}")]
    Diverged { tick: usize, partial: Box<RolloutLog> },
    #[error("invalid rollout input: {0}")]
    InvalidInput(String),
    #[error("rollout log is empty")]
    EmptyLog,
}

/// Pair of minimized objectives: tracking error (m) and torque cost ((N·m)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub f_acc: f64,
    pub f_t: f64,
}

impl ObjectiveVector {
    pub const PENALTY: ObjectiveVector = ObjectiveVector { f_acc: PENALTY, f_t: PENALTY };

    pub const fn new(f_acc: f64, f_t: f64) -> Self {
        Self { f_acc, f_t }
    }

    pub fn is_penalty(&self) -> bool {
        self.f_acc >= PENALTY || self.f_t >= PENALTY
    }

    /// Component-wise mean; empty input gives the penalty vector.
    pub fn mean(values: &[ObjectiveVector]) -> ObjectiveVector {
        if values.is_empty() {
            return ObjectiveVector::PENALTY;
        }
        let n = values.len() as f64;
        ObjectiveVector {
            f_acc: values.iter().map(|v| v.f_acc).sum::<f64>() / n,
            f_t: values.iter().map(|v| v.f_t).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMeta {
    pub gains: Gains,
    pub kind: TrajectoryKind,
    pub duration: f64,
    pub model_hash: String,
    pub seed: Option<u64>,
}

/// Per-tick record of a rollout. Tick 0 is the initial state with zero torque.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    pub dt: f64,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub ee: Vec<CartesianPoint>,
    pub des: Vec<CartesianPoint>,
    pub meta: RolloutMeta,
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn n_joints(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    fn push(&mut self, t: f64, state: &JointState, u: Vec<f64>, ee: CartesianPoint, des: CartesianPoint) {
        self.t.push(t);
        self.q.push(state.q.clone());
        self.qd.push(state.qd.clone());
        self.u.push(u);
        self.ee.push(ee);
        self.des.push(des);
    }
}

/// Short content hash identifying an arm model.
pub fn model_hash(model: &ArmModel) -> String {
    let text = toml::to_string(model).expect("arm model serializes");
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// Runs the trajectory at one PD update per tick, starting at rest on the
/// first setpoint.
pub fn simulate(model: &ArmModel, jtraj: &JointTrajectory, gains: &Gains) -> Result<RolloutLog, RolloutError> {
    let n = model.n_links();
    if jtraj.is_empty() {
        return Err(RolloutError::InvalidInput("trajectory has no ticks".into()));
    }
    if gains.kp.len() != n || gains.kd.len() != n {
        return Err(RolloutError::InvalidInput(format!(
            "gains have {} joints, model has {n}",
            gains.kp.len()
        )));
    }
    if jtraj.q_des.iter().chain(&jtraj.qd_des).any(|v| v.len() != n)
        || jtraj.qd_des.len() != jtraj.len()
        || jtraj.source.points.len() != jtraj.len()
    {
        return Err(RolloutError::InvalidInput("setpoint dimensions do not match the model".into()));
    }

    let ticks = jtraj.len();
    let dt = jtraj.dt;
    let mut log = RolloutLog {
        dt,
        t: Vec::with_capacity(ticks),
        q: Vec::with_capacity(ticks),
        qd: Vec::with_capacity(ticks),
        u: Vec::with_capacity(ticks),
        ee: Vec::with_capacity(ticks),
        des: Vec::with_capacity(ticks),
        meta: RolloutMeta {
            gains: gains.clone(),
            kind: jtraj.source.kind,
            duration: jtraj.source.duration,
            model_hash: model_hash(model),
            seed: None,
        },
    };

    let mut state = JointState::at_rest(jtraj.q_des[0].clone());
    log.push(0.0, &state, vec![0.0; n], model.fk_unchecked(&state.q), jtraj.source.points[0]);

    let mut ws = Workspace::new(n);
    for i in 1..ticks {
        let u = pd_torque(gains, &jtraj.q_des[i], &jtraj.qd_des[i], &state, &model.torque_limits);
        let next = model.step_with(&state, &u, dt, &mut ws);
        match next {
            Ok(s) if s.q.iter().all(|q| q.abs() <= DIVERGENCE_ANGLE) => state = s,
            _ => {
                return Err(RolloutError::Diverged { tick: i, partial: Box::new(log) });
            }
        }
        log.push(i as f64 * dt, &state, u, model.fk_unchecked(&state.q), jtraj.source.points[i]);
    }
    Ok(log)
}

/// Mean end-effector distance to the desired point over ticks 1..T.
pub fn accuracy_objective(log: &RolloutLog) -> Result<f64, RolloutError> {
    if log.len() < 2 {
        return Err(RolloutError::EmptyLog);
    }
    let sum: f64 = log.ee[1..].iter().zip(&log.des[1..]).map(|(e, d)| e.distance(d)).sum();
    Ok(sum / (log.len() - 1) as f64)
}

/// Unnormalized torque-increment sum `Σ_{i=1..T} ‖u_i − u_{i−1}‖²` with `u_0 = 0`.
pub fn torque_increment_sum(log: &RolloutLog) -> f64 {
    let mut prev: Vec<f64> = vec![0.0; log.n_joints()];
    let mut sum = 0.0;
    for u in log.u.iter().skip(1) {
        sum += u.iter().zip(&prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prev.clone_from(u);
    }
    sum
}

/// `f_t = (1/T) Σ_{i=1..T} ‖u_i − u_{i−1}‖²`, the unpowered arm giving `u_0 = 0`.
pub fn torque_objective(log: &RolloutLog) -> Result<f64, RolloutError> {
    if log.len() < 2 {
        return Err(RolloutError::EmptyLog);
    }
    Ok(torque_increment_sum(log) / (log.len() - 1) as f64)
}

/// Objective pair of one rollout; divergence maps to [`ObjectiveVector::PENALTY`].
pub fn evaluate(model: &ArmModel, jtraj: &JointTrajectory, gains: &Gains) -> ObjectiveVector {
    let Ok(log) = simulate(model, jtraj, gains) else {
        return ObjectiveVector::PENALTY;
    };
    match (accuracy_objective(&log), torque_objective(&log)) {
        (Ok(f_acc), Ok(f_t)) if f_acc.is_finite() && f_t.is_finite() => ObjectiveVector { f_acc, f_t },
        _ => ObjectiveVector::PENALTY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ElbowBranch;
    use crate::trajectory::{to_joint_setpoints, CartesianTrajectory, TrajectorySpec};

    fn empty_log(n: usize) -> RolloutLog {
        RolloutLog {
            dt: 0.002,
            t: vec![],
            q: vec![],
            qd: vec![],
            u: vec![],
            ee: vec![],
            des: vec![],
            meta: RolloutMeta {
                gains: Gains::zeros(n),
                kind: TrajectoryKind::Spiral,
                duration: 0.0,
                model_hash: String::new(),
                seed: None,
            },
        }
    }

    /// Log whose tick 0 carries zero torque followed by `torques` at ticks 1..T.
    fn log_with(torques: &[Vec<f64>], ee: &[CartesianPoint], des: &[CartesianPoint]) -> RolloutLog {
        let n = torques[0].len();
        let mut log = empty_log(n);
        let origin = CartesianPoint::new(0.0, 0.0);
        let state = JointState::at_rest(vec![0.0; n]);
        log.push(0.0, &state, vec![0.0; n], origin, origin);
        for (i, u) in torques.iter().enumerate() {
            log.push((i + 1) as f64 * 0.002, &state, u.clone(), ee[i], des[i]);
        }
        log
    }

    fn spiral(model: &ArmModel, duration: f64) -> JointTrajectory {
        let c = TrajectorySpec::Spiral {
            center: CartesianPoint::new(0.9, 0.4),
            r0: 0.05,
            r1: 0.35,
            turns: 2.0,
            duration,
        }
        .generate(model, 0.002)
        .unwrap();
        to_joint_setpoints(model, &c, ElbowBranch::ElbowDown).unwrap()
    }

    #[test]
    fn torque_objective_hand_values() {
        let o = CartesianPoint::new(0.0, 0.0);
        let zeros = log_with(&[vec![0.0], vec![0.0]], &[o; 2], &[o; 2]);
        assert_eq!(torque_objective(&zeros).unwrap(), 0.0);
        let flat = log_with(&[vec![2.0], vec![2.0], vec![2.0]], &[o; 3], &[o; 3]);
        assert_eq!(torque_objective(&flat).unwrap(), 4.0 / 3.0);
        let two = log_with(&[vec![3.0, 4.0]], &[o], &[o]);
        assert_eq!(torque_objective(&two).unwrap(), 25.0);
        assert_eq!(torque_objective(&empty_log(1)), Err(RolloutError::EmptyLog));
    }

    #[test]
    fn accuracy_objective_hand_values() {
        let d = [CartesianPoint::new(1.0, 0.0), CartesianPoint::new(0.5, 0.5), CartesianPoint::new(-1.0, 2.0)];
        let perfect = log_with(&vec![vec![0.0]; 3], &d, &d);
        assert_eq!(accuracy_objective(&perfect).unwrap(), 0.0);
        let shifted: Vec<_> = d.iter().map(|p| CartesianPoint::new(p.x + 0.03, p.y - 0.04)).collect();
        let offset = log_with(&vec![vec![0.0]; 3], &shifted, &d);
        assert!((accuracy_objective(&offset).unwrap() - 0.05).abs() < 1e-15);
        let doubled: Vec<_> = d.iter().map(|p| CartesianPoint::new(p.x + 0.06, p.y - 0.08)).collect();
        let offset2 = log_with(&vec![vec![0.0]; 3], &doubled, &d);
        assert_eq!(accuracy_objective(&offset2).unwrap(), 2.0 * accuracy_objective(&offset).unwrap());

        // Hand-summed three-tick case: distances 1, 5 and sqrt(2).
        let ee = [CartesianPoint::new(1.0, 1.0), CartesianPoint::new(3.5, 4.5), CartesianPoint::new(0.0, 1.0)];
        let log = log_with(&vec![vec![0.0]; 3], &ee, &d);
        let expected = (1.0 + 5.0 + 2f64.sqrt()) / 3.0;
        assert!((accuracy_objective(&log).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn repeating_the_last_torque_adds_nothing_to_the_sum() {
        let o = CartesianPoint::new(0.0, 0.0);
        let base = log_with(&[vec![1.0, -2.0], vec![0.5, 3.0]], &[o; 2], &[o; 2]);
        let longer = log_with(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![0.5, 3.0]], &[o; 3], &[o; 3]);
        assert_eq!(torque_increment_sum(&base), torque_increment_sum(&longer));
    }

    #[test]
    fn zero_gains_leave_the_arm_unforced() {
        let model = ArmModel::default();
        let jt = spiral(&model, 0.5);
        let log = simulate(&model, &jt, &Gains::zeros(2)).unwrap();
        assert!(log.u.iter().flatten().all(|u| *u == 0.0));
        assert_eq!(log.len(), jt.len());
        // Unforced arm falls under gravity.
        assert!(log.q.last().unwrap()[0] < log.q[0][0]);
    }

    #[test]
    fn static_trajectory_without_gravity_stays_put() {
        let model = ArmModel { gravity: 0.0, ..ArmModel::default() };
        let p = CartesianPoint::new(1.1, 0.3);
        let traj = CartesianTrajectory {
            dt: 0.002,
            points: vec![p; 101],
            kind: TrajectoryKind::Pyramid,
            duration: 0.2,
        };
        let jt = to_joint_setpoints(&model, &traj, ElbowBranch::ElbowDown).unwrap();
        let gains = Gains::new(vec![300.0, 200.0], vec![10.0, 5.0]).unwrap();
        let log = simulate(&model, &jt, &gains).unwrap();
        for (q, u) in log.q.iter().zip(&log.u) {
            assert!(u.iter().all(|v| v.abs() < 1e-12));
            assert!((q[0] - jt.q_des[0][0]).abs() < 1e-12 && (q[1] - jt.q_des[0][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_composes_the_objectives_deterministically() {
        let model = ArmModel::default();
        let jt = spiral(&model, 1.0);
        let gains = Gains::new(vec![200.0, 100.0], vec![5.0, 2.0]).unwrap();
        let log = simulate(&model, &jt, &gains).unwrap();
        let obj = evaluate(&model, &jt, &gains);
        assert_eq!(obj.f_acc, accuracy_objective(&log).unwrap());
        assert_eq!(obj.f_t, torque_objective(&log).unwrap());
        assert_eq!(obj, evaluate(&model, &jt, &gains));
        assert_eq!(log, simulate(&model, &jt, &gains).unwrap());
        assert!(log.u.iter().flatten().all(|u| u.abs() <= 50.0));
    }

    #[test]
    fn absurd_gains_map_to_penalty() {
        let model = ArmModel { torque_limits: vec![1e12, 1e12], ..ArmModel::default() };
        let jt = spiral(&model, 0.5);
        let gains = Gains::new(vec![1e9, 1e9], vec![0.0, 0.0]).unwrap();
        match simulate(&model, &jt, &gains) {
            Err(RolloutError::Diverged { tick, partial }) => {
                assert!(tick >= 1);
                assert_eq!(partial.len(), tick);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(evaluate(&model, &jt, &gains), ObjectiveVector::PENALTY);
    }

    #[test]
    fn rejects_mismatched_gains() {
        let model = ArmModel::default();
        let jt = spiral(&model, 0.2);
        assert!(matches!(
            simulate(&model, &jt, &Gains::zeros(3)),
            Err(RolloutError::InvalidInput(_))
        ));
    }
}
