//! Planar n-link rigid arm made of uniform rods.
//!
//! Joint angles are relative (each joint measured from the previous link),
//! zero points along +x, and gravity acts along -y. Dynamics follow the
//! Lagrangian form `M(q)·qdd + C(q,qd)·qd + g(q) + D·qd = u`, with `C`
//! built from Christoffel symbols so that `dM/dt - 2C` is skew-symmetric.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the arm model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point at distance {distance} from base is unreachable (reach is [{min}, {max}])")]
    Unreachable { distance: f64, min: f64, max: f64 },
    #[error("analytic inverse kinematics needs exactly 2 links, model has {0}")]
    UnsupportedLinkCount(usize),
    #[error("numerical blowup at step {step}")]
    NumericalBlowup { step: usize },
}

impl PlantError {
    /// Re-tags a blowup error with the index of the step that produced it.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            PlantError::NumericalBlowup { .. } => PlantError::NumericalBlowup { step },
            other => other,
        }
    }
}

/// Cartesian point in the vertical plane of the arm, in meters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
}

impl CartesianPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &CartesianPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Elbow configuration selected by the analytic inverse kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElbowBranch {
    /// Elbow above the base-to-tip line (negative elbow angle).
    ElbowUp,
    /// Elbow below the base-to-tip line (positive elbow angle).
    #[default]
    ElbowDown,
}

/// Joint positions (rad) and velocities (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl JointState {
    pub fn new(q: Vec<f64>, qd: Vec<f64>) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, qd: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|v| v.is_finite())
    }
}

/// Geometric, inertial and actuation description of the planar arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    pub link_lengths: Vec<f64>,
    pub link_masses: Vec<f64>,
    pub viscous_damping: Vec<f64>,
    pub torque_limits: Vec<f64>,
    pub gravity: f64,
    #[serde(default)]
    pub base_position: CartesianPoint,
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            link_lengths: vec![1.0, 0.8],
            link_masses: vec![2.0, 1.5],
            viscous_damping: vec![0.1, 0.1],
            torque_limits: vec![50.0, 50.0],
            gravity: 9.81,
            base_position: CartesianPoint::new(0.0, 0.0),
        }
    }
}

impl ArmModel {
    pub fn new(
        link_lengths: Vec<f64>,
        link_masses: Vec<f64>,
        viscous_damping: Vec<f64>,
        torque_limits: Vec<f64>,
        gravity: f64,
        base_position: CartesianPoint,
    ) -> Result<Self, PlantError> {
        let model = Self {
            link_lengths,
            link_masses,
            viscous_damping,
            torque_limits,
            gravity,
            base_position,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_links(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let n = self.n_links();
        if n == 0 {
            return Err(PlantError::InvalidModel("at least one link is required".into()));
        }
        for (name, len) in [
            ("link_masses", self.link_masses.len()),
            ("viscous_damping", self.viscous_damping.len()),
            ("torque_limits", self.torque_limits.len()),
        ] {
            if len != n {
                return Err(PlantError::InvalidModel(format!(
                    "{name} has {len} entries but the arm has {n} links"
                )));
            }
        }
        let positive = |name: &str, values: &[f64]| {
            if values.iter().all(|v| v.is_finite() && *v > 0.0) {
                Ok(())
            } else {
                Err(PlantError::InvalidModel(format!("{name} must be finite and > 0")))
            }
        };
        positive("link_lengths", &self.link_lengths)?;
        positive("link_masses", &self.link_masses)?;
        positive("torque_limits", &self.torque_limits)?;
        if !self.viscous_damping.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(PlantError::InvalidModel("viscous_damping must be finite and >= 0".into()));
        }
        if !self.gravity.is_finite() || !self.base_position.is_finite() {
            return Err(PlantError::InvalidModel("gravity and base_position must be finite".into()));
        }
        Ok(())
    }

    /// Minimum and maximum distance from the base the tip can reach.
    pub fn reach(&self) -> (f64, f64) {
        let total: f64 = self.link_lengths.iter().sum();
        let longest = self.link_lengths.iter().cloned().fold(0.0, f64::max);
        ((2.0 * longest - total).max(0.0), total)
    }

    fn check_len(&self, v: &[f64]) -> Result<(), PlantError> {
        if v.len() != self.n_links() {
            return Err(PlantError::DimensionMismatch {
                expected: self.n_links(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<CartesianPoint, PlantError> {
        self.check_len(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &[f64]) -> CartesianPoint {
        let mut theta = 0.0;
        let mut p = self.base_position;
        for (qi, li) in q.iter().zip(&self.link_lengths) {
            theta += qi;
            p.x += li * theta.cos();
            p.y += li * theta.sin();
        }
        p
    }

    /// Analytic 2R inverse kinematics. Returned angles are wrapped to (-pi, pi].
    pub fn inverse_kinematics(
        &self,
        p: CartesianPoint,
        branch: ElbowBranch,
    ) -> Result<Vec<f64>, PlantError> {
        if self.n_links() != 2 {
            return Err(PlantError::UnsupportedLinkCount(self.n_links()));
        }
        let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
        let dx = p.x - self.base_position.x;
        let dy = p.y - self.base_position.y;
        let r2 = dx * dx + dy * dy;
        let r = r2.sqrt();
        let (min, max) = ((l1 - l2).abs(), l1 + l2);
        let slack = 1e-12 * max;
        if !r.is_finite() || r > max + slack || r < min - slack {
            return Err(PlantError::Unreachable { distance: r, min, max });
        }
        let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let s2_abs = (1.0 - c2 * c2).max(0.0).sqrt();
        let s2 = match branch {
            ElbowBranch::ElbowDown => s2_abs,
            ElbowBranch::ElbowUp => -s2_abs,
        };
        let q2 = s2.atan2(c2);
        let q1 = dy.atan2(dx) - (l2 * s2).atan2(l1 + l2 * c2);
        Ok(vec![wrap_angle(q1), wrap_angle(q2)])
    }

    fn link_angles(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ws = Workspace::new(self.n_links());
        ws.set_angles(q);
        (ws.cos, ws.sin)
    }

    /// Lever of link `k` as seen from the center of mass of link `i` (k <= i).
    #[inline]
    fn lever(&self, i: usize, k: usize) -> f64 {
        if k < i {
            self.link_lengths[k]
        } else {
            0.5 * self.link_lengths[i]
        }
    }

    #[inline]
    fn rod_inertia(&self, i: usize) -> f64 {
        self.link_masses[i] * self.link_lengths[i].powi(2) / 12.0
    }

    /// Fills `ws.m` (row-major) from the angles already in `ws`.
    fn fill_mass_matrix(&self, ws: &mut Workspace) {
        let n = self.n_links();
        for j in 0..n {
            for k in j..n {
                let mut acc = 0.0;
                for i in k..n {
                    let mut s = 0.0;
                    for a in j..=i {
                        for b in k..=i {
                            let c_ab = ws.cos[a] * ws.cos[b] + ws.sin[a] * ws.sin[b];
                            s += self.lever(i, a) * self.lever(i, b) * c_ab;
                        }
                    }
                    acc += self.link_masses[i] * s + self.rod_inertia(i);
                }
                ws.m[j * n + k] = acc;
                ws.m[k * n + j] = acc;
            }
        }
    }

    /// Fills `ws.dm[l*n*n + j*n + k] = dM_jk / dq_l`.
    fn fill_mass_matrix_gradient(&self, ws: &mut Workspace) {
        let n = self.n_links();
        let nn = n * n;
        ws.dm.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            for k in j..n {
                for i in k..n {
                    let mi = self.link_masses[i];
                    for a in j..=i {
                        for b in k..=i {
                            if a == b {
                                continue;
                            }
                            // sin(theta_a - theta_b)
                            let s_ab = ws.sin[a] * ws.cos[b] - ws.cos[a] * ws.sin[b];
                            let w = -mi * self.lever(i, a) * self.lever(i, b) * s_ab;
                            // d(theta_a - theta_b)/dq_l = [l <= a] - [l <= b]
                            let (lo, hi, sign) = if a < b { (a, b, -1.0) } else { (b, a, 1.0) };
                            for l in (lo + 1)..=hi {
                                ws.dm[l * nn + j * n + k] += sign * w;
                            }
                        }
                    }
                }
                for l in 0..n {
                    ws.dm[l * nn + k * n + j] = ws.dm[l * nn + j * n + k];
                }
            }
        }
    }

    fn gravity_entry(&self, ws: &Workspace, j: usize) -> f64 {
        let n = self.n_links();
        let mut acc = 0.0;
        for i in j..n {
            let mut s = 0.0;
            for k in j..=i {
                s += self.lever(i, k) * ws.cos[k];
            }
            acc += self.link_masses[i] * s;
        }
        self.gravity * acc
    }

    /// Christoffel-symbol Coriolis entry `C_kj`.
    fn coriolis_entry(&self, ws: &Workspace, qd: &[f64], k: usize, j: usize) -> f64 {
        let n = self.n_links();
        let nn = n * n;
        let mut acc = 0.0;
        for (l, v) in qd.iter().enumerate().take(n) {
            acc += 0.5 * (ws.dm[l * nn + k * n + j] + ws.dm[j * nn + k * n + l] - ws.dm[k * nn + l * n + j]) * v;
        }
        acc
    }

    /// Computes `M(q)` and `C(q,qd)·qd + g(q) + D·qd` into the workspace.
    fn fill_terms(&self, q: &[f64], qd: &[f64], ws: &mut Workspace) {
        let n = self.n_links();
        ws.set_angles(q);
        self.fill_mass_matrix(ws);
        self.fill_mass_matrix_gradient(ws);
        for k in 0..n {
            let mut b = self.gravity_entry(ws, k) + self.viscous_damping[k] * qd[k];
            for j in 0..n {
                b += self.coriolis_entry(ws, qd, k, j) * qd[j];
            }
            ws.bias[k] = b;
        }
    }

    pub fn mass_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>, PlantError> {
        self.check_len(q)?;
        let n = self.n_links();
        if n == 2 {
            let [m11, m12, m22] = self.two_link_mass(q[1].cos());
            return Ok(DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22]));
        }
        let mut ws = Workspace::new(n);
        ws.set_angles(q);
        self.fill_mass_matrix(&mut ws);
        Ok(DMatrix::from_row_slice(n, n, &ws.m))
    }

    pub fn coriolis_matrix(&self, q: &[f64], qd: &[f64]) -> Result<DMatrix<f64>, PlantError> {
        self.check_len(q)?;
        self.check_len(qd)?;
        let n = self.n_links();
        let mut ws = Workspace::new(n);
        ws.set_angles(q);
        self.fill_mass_matrix_gradient(&mut ws);
        Ok(DMatrix::from_fn(n, n, |k, j| self.coriolis_entry(&ws, qd, k, j)))
    }

    pub fn gravity_torque(&self, q: &[f64]) -> Result<DVector<f64>, PlantError> {
        self.check_len(q)?;
        let mut ws = Workspace::new(self.n_links());
        ws.set_angles(q);
        Ok(DVector::from_fn(self.n_links(), |j, _| self.gravity_entry(&ws, j)))
    }

    pub fn inverse_dynamics(&self, q: &[f64], qd: &[f64], qdd: &[f64]) -> Result<Vec<f64>, PlantError> {
        self.check_len(q)?;
        self.check_len(qd)?;
        self.check_len(qdd)?;
        let n = self.n_links();
        let mut ws = Workspace::new(n);
        self.fill_terms(q, qd, &mut ws);
        Ok((0..n)
            .map(|k| ws.bias[k] + (0..n).map(|j| ws.m[k * n + j] * qdd[j]).sum::<f64>())
            .collect())
    }

    pub fn forward_dynamics(&self, state: &JointState, u: &[f64]) -> Result<Vec<f64>, PlantError> {
        self.check_len(&state.q)?;
        self.check_len(&state.qd)?;
        self.check_len(u)?;
        let mut ws = Workspace::new(self.n_links());
        let mut qdd = vec![0.0; self.n_links()];
        self.fd_into(&state.q, &state.qd, u, &mut ws, &mut qdd)?;
        Ok(qdd)
    }

    /// Solves `M·qdd = u − bias` by an in-place Cholesky factorization.
    fn fd_into(&self, q: &[f64], qd: &[f64], u: &[f64], ws: &mut Workspace, qdd: &mut [f64]) -> Result<(), PlantError> {
        let n = self.n_links();
        if n == 2 {
            return self.fd_two_link(q, qd, u, qdd);
        }
        self.fd_generic(q, qd, u, ws, qdd)
    }

    /// Two-link mass matrix entries `[M11, M12, M22]` as a constant plus a
    /// multiple of `cos(q2)`, which keeps rounding below the generic sum's.
    fn two_link_mass(&self, c2: f64) -> [f64; 3] {
        let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
        let (m1, m2) = (self.link_masses[0], self.link_masses[1]);
        let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
        let m22 = m2 * lc2 * lc2 + m2 * l2 * l2 / 12.0;
        let m11_const = m1 * lc1 * lc1 + m1 * l1 * l1 / 12.0 + m2 * l1 * l1 + m22;
        let b = m2 * l1 * lc2;
        [m11_const + 2.0 * b * c2, m22 + b * c2, m22]
    }

    /// Closed-form two-link forward dynamics.
    fn fd_two_link(&self, q: &[f64], qd: &[f64], u: &[f64], qdd: &mut [f64]) -> Result<(), PlantError> {
        let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
        let (m1, m2) = (self.link_masses[0], self.link_masses[1]);
        let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
        let (s2, c2) = q[1].sin_cos();
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let [m11, m12, m22] = self.two_link_mass(c2);
        let h = m2 * l1 * lc2 * s2;
        let g = self.gravity;
        let b1 = -h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1])
            + (m1 * lc1 + m2 * l1) * g * c1
            + m2 * lc2 * g * c12
            + self.viscous_damping[0] * qd[0];
        let b2 = h * qd[0] * qd[0] + m2 * lc2 * g * c12 + self.viscous_damping[1] * qd[1];
        let det = m11 * m22 - m12 * m12;
        if det.is_nan() || det <= 0.0 {
            return Err(PlantError::NumericalBlowup { step: 0 });
        }
        let (r1, r2) = (u[0] - b1, u[1] - b2);
        qdd[0] = (m22 * r1 - m12 * r2) / det;
        qdd[1] = (m11 * r2 - m12 * r1) / det;
        Ok(())
    }

    fn fd_generic(&self, q: &[f64], qd: &[f64], u: &[f64], ws: &mut Workspace, qdd: &mut [f64]) -> Result<(), PlantError> {
        let n = self.n_links();
        self.fill_terms(q, qd, ws);
        let l = &mut ws.m;
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d.is_nan() || d <= 0.0 {
                return Err(PlantError::NumericalBlowup { step: 0 });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        for i in 0..n {
            let mut s = u[i] - ws.bias[i];
            for k in 0..i {
                s -= l[i * n + k] * qdd[k];
            }
            qdd[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = qdd[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * qdd[k];
            }
            qdd[i] = s / l[i * n + i];
        }
        Ok(())
    }

    /// One classical RK4 step with the torque held constant over `dt`.
    pub fn step(&self, state: &JointState, u: &[f64], dt: f64) -> Result<JointState, PlantError> {
        let mut ws = Workspace::new(self.n_links());
        self.step_with(state, u, dt, &mut ws)
    }

    /// [`ArmModel::step`] reusing caller-owned scratch buffers.
    pub fn step_with(&self, state: &JointState, u: &[f64], dt: f64, ws: &mut Workspace) -> Result<JointState, PlantError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlantError::InvalidModel(format!("step size must be > 0, got {dt}")));
        }
        self.check_len(&state.q)?;
        self.check_len(&state.qd)?;
        self.check_len(u)?;
        let n = self.n_links();
        if ws.n != n {
            *ws = Workspace::new(n);
        }
        let mut k = std::mem::take(&mut ws.stages);
        // k layout: [k1_v, k2_v, k3_v, k4_v, q_stage, v2, v3, v4], each n long.
        let (acc, rest) = k.split_at_mut(4 * n);
        let (q_stage, vel) = rest.split_at_mut(n);
        let (k1, acc) = acc.split_at_mut(n);
        let (k2, acc) = acc.split_at_mut(n);
        let (k3, k4) = acc.split_at_mut(n);
        let (v2, vel) = vel.split_at_mut(n);
        let (v3, v4) = vel.split_at_mut(n);

        let result = (|| {
            self.fd_into(&state.q, &state.qd, u, ws, k1)?;
            for i in 0..n {
                q_stage[i] = state.q[i] + 0.5 * dt * state.qd[i];
                v2[i] = state.qd[i] + 0.5 * dt * k1[i];
            }
            self.fd_into(q_stage, v2, u, ws, k2)?;
            for i in 0..n {
                q_stage[i] = state.q[i] + 0.5 * dt * v2[i];
                v3[i] = state.qd[i] + 0.5 * dt * k2[i];
            }
            self.fd_into(q_stage, v3, u, ws, k3)?;
            for i in 0..n {
                q_stage[i] = state.q[i] + dt * v3[i];
                v4[i] = state.qd[i] + dt * k3[i];
            }
            self.fd_into(q_stage, v4, u, ws, k4)?;
            let h6 = dt / 6.0;
            let next = JointState::new(
                (0..n).map(|i| state.q[i] + h6 * (state.qd[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])).collect(),
                (0..n).map(|i| state.qd[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect(),
            );
            if next.is_finite() {
                Ok(next)
            } else {
                Err(PlantError::NumericalBlowup { step: 0 })
            }
        })();
        ws.stages = k;
        result
    }

    pub fn kinetic_energy(&self, state: &JointState) -> Result<f64, PlantError> {
        let m = self.mass_matrix(&state.q)?;
        self.check_len(&state.qd)?;
        let v = DVector::from_column_slice(&state.qd);
        Ok(0.5 * v.dot(&(m * &v)))
    }

    /// Gravitational potential energy relative to the base height.
    pub fn potential_energy(&self, q: &[f64]) -> Result<f64, PlantError> {
        self.check_len(q)?;
        let (_, sin) = self.link_angles(q);
        let n = self.n_links();
        let mut energy = 0.0;
        for i in 0..n {
            let y: f64 = (0..=i).map(|k| self.lever(i, k) * sin[k]).sum();
            energy += self.link_masses[i] * self.gravity * y;
        }
        Ok(energy)
    }
}

/// Scratch buffers for the dynamics, reusable across integration steps.
#[derive(Debug, Clone)]
pub struct Workspace {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    m: Vec<f64>,
    dm: Vec<f64>,
    bias: Vec<f64>,
    stages: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cos: vec![0.0; n],
            sin: vec![0.0; n],
            m: vec![0.0; n * n],
            dm: vec![0.0; n * n * n],
            bias: vec![0.0; n],
            stages: vec![0.0; 8 * n],
        }
    }

    /// Stores cos and sin of the absolute link angles.
    fn set_angles(&mut self, q: &[f64]) {
        let mut theta = 0.0;
        for (i, qi) in q.iter().enumerate() {
            theta += qi;
            let (s, c) = theta.sin_cos();
            self.cos[i] = c;
            self.sin[i] = s;
        }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
