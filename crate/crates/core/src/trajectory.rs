//! Cartesian trajectory families (spiral, pyramid zig-zag, random spline)
//! and their conversion to per-tick joint setpoints.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::{ArmModel, CartesianPoint, ElbowBranch, PlantError};

/// Fraction of the reach kept free at both the inner and outer workspace boundary.
pub const WORKSPACE_MARGIN: f64 = 0.05;

/// Waypoint redraws allowed when a random spline leaves the workspace.
pub const RANDOM_RETRIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("invalid trajectory parameters: {0}")]
    InvalidParameters(String),
    #[error("sample at tick {tick} ({x}, {y}) leaves the workspace")]
    WorkspaceViolation { tick: usize, x: f64, y: f64 },
    #[error("random trajectory left the workspace after {attempts} attempts")]
    RetriesExhausted { attempts: usize },
    #[error("inverse kinematics failed at tick {tick}: {source}")]
    Kinematics {
        tick: usize,
        #[source]
        source: PlantError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    Spiral,
    Pyramid,
    Random,
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrajectoryKind::Spiral => "spiral",
            TrajectoryKind::Pyramid => "pyramid",
            TrajectoryKind::Random => "random",
        })
    }
}

/// Ring of admissible tip positions around a center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annulus {
    pub center: CartesianPoint,
    pub r_min: f64,
    pub r_max: f64,
}

impl Annulus {
    /// The arm's reachable ring shrunk by [`WORKSPACE_MARGIN`] on both sides.
    pub fn from_model(model: &ArmModel) -> Self {
        let (lo, hi) = model.reach();
        Self {
            center: model.base_position,
            r_min: lo * (1.0 + WORKSPACE_MARGIN),
            r_max: hi * (1.0 - WORKSPACE_MARGIN),
        }
    }

    pub fn contains(&self, p: &CartesianPoint) -> bool {
        let r = p.distance(&self.center);
        r >= self.r_min && r <= self.r_max
    }

    /// Intersection of two rings sharing a center (the tighter bounds win).
    fn within(&self, other: &Annulus) -> Annulus {
        Annulus {
            center: self.center,
            r_min: self.r_min.max(other.r_min),
            r_max: self.r_max.min(other.r_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianTrajectory {
    pub dt: f64,
    pub points: Vec<CartesianPoint>,
    pub kind: TrajectoryKind,
    pub duration: f64,
}

impl CartesianTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.points.reverse();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub dt: f64,
    pub q_des: Vec<Vec<f64>>,
    pub qd_des: Vec<Vec<f64>>,
    pub source: CartesianTrajectory,
}

impl JointTrajectory {
    pub fn len(&self) -> usize {
        self.q_des.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_des.is_empty()
    }
}

/// Number of control intervals for a duration; points are this plus one.
pub fn tick_count(duration: f64, dt: f64) -> Result<usize, TrajectoryError> {
    if !(duration > 0.0 && duration.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(TrajectoryError::InvalidParameters(format!(
            "duration ({duration}) and dt ({dt}) must be finite and > 0"
        )));
    }
    let n = (duration / dt).round();
    if n < 1.0 {
        return Err(TrajectoryError::InvalidParameters("duration shorter than one tick".into()));
    }
    Ok(n as usize)
}

fn check_workspace(points: &[CartesianPoint], ws: &Annulus) -> Result<(), TrajectoryError> {
    match points.iter().position(|p| !p.is_finite() || !ws.contains(p)) {
        Some(tick) => Err(TrajectoryError::WorkspaceViolation {
            tick,
            x: points[tick].x,
            y: points[tick].y,
        }),
        None => Ok(()),
    }
}

/// Archimedean spiral: the radius grows linearly from `r0` to `r1` while the
/// angle sweeps `turns` full revolutions, both uniform in tick index.
pub fn gen_spiral(
    workspace: &Annulus,
    center: CartesianPoint,
    r0: f64,
    r1: f64,
    turns: f64,
    duration: f64,
    dt: f64,
) -> Result<CartesianTrajectory, TrajectoryError> {
    if !(r0 >= 0.0 && r1 > r0 && r1.is_finite() && turns.is_finite()) {
        return Err(TrajectoryError::InvalidParameters(format!(
            "spiral radii must satisfy r1 > r0 >= 0 (got r0={r0}, r1={r1})"
        )));
    }
    let n = tick_count(duration, dt)?;
    let points: Vec<_> = (0..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            let r = r0 + (r1 - r0) * s;
            let phi = TAU * turns * s;
            CartesianPoint::new(center.x + r * phi.cos(), center.y + r * phi.sin())
        })
        .collect();
    check_workspace(&points, workspace)?;
    Ok(CartesianTrajectory {
        dt,
        points,
        kind: TrajectoryKind::Spiral,
        duration,
    })
}

/// Vertices of the zig-zag: a triangle wave of `n_teeth` teeth spanning
/// `center.x ± half_width`, with its base on `center.y`.
pub fn pyramid_vertices(
    center: CartesianPoint,
    half_width: f64,
    height: f64,
    n_teeth: usize,
) -> Vec<CartesianPoint> {
    let segments = 2 * n_teeth;
    let step = 2.0 * half_width / segments as f64;
    (0..=segments)
        .map(|k| {
            let y = if k % 2 == 1 { center.y + height } else { center.y };
            CartesianPoint::new(center.x - half_width + k as f64 * step, y)
        })
        .collect()
}

/// Splits `total` ticks across segments in proportion to `lengths` using
/// largest-remainder apportionment. Ties go to the earlier segment.
pub fn apportion_ticks(lengths: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = lengths.iter().sum();
    let quotas: Vec<f64> = lengths.iter().map(|l| total as f64 * l / sum).collect();
    let mut ticks: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = ticks.iter().sum();
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        ticks[i] += 1;
    }
    ticks
}

/// Piecewise-linear zig-zag traversed at (near) constant speed, with every
/// vertex landing exactly on a tick.
pub fn gen_pyramid(
    workspace: &Annulus,
    center: CartesianPoint,
    half_width: f64,
    height: f64,
    n_teeth: usize,
    duration: f64,
    dt: f64,
) -> Result<CartesianTrajectory, TrajectoryError> {
    if n_teeth == 0 {
        return Err(TrajectoryError::InvalidParameters("pyramid needs at least one tooth".into()));
    }
    if !(half_width > 0.0 && height.is_finite() && height != 0.0) {
        return Err(TrajectoryError::InvalidParameters(
            "pyramid half_width must be > 0 and height non-zero".into(),
        ));
    }
    let n = tick_count(duration, dt)?;
    let vertices = pyramid_vertices(center, half_width, height, n_teeth);
    if n < vertices.len() - 1 {
        return Err(TrajectoryError::InvalidParameters(
            "fewer ticks than pyramid segments".into(),
        ));
    }
    let lengths: Vec<f64> = vertices.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let ticks = apportion_ticks(&lengths, n);

    let mut points = Vec::with_capacity(n + 1);
    points.push(vertices[0]);
    for (seg, &count) in ticks.iter().enumerate() {
        let (a, b) = (vertices[seg], vertices[seg + 1]);
        for j in 1..count {
            let s = j as f64 / count as f64;
            points.push(CartesianPoint::new(a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s));
        }
        points.push(b);
    }
    check_workspace(&points, workspace)?;
    Ok(CartesianTrajectory {
        dt,
        points,
        kind: TrajectoryKind::Pyramid,
        duration,
    })
}

/// Natural cubic spline through `(t_k, y_k)` with uniform knot spacing `h`.
struct NaturalSpline {
    y: Vec<f64>,
    m: Vec<f64>,
    h: f64,
}

impl NaturalSpline {
    fn new(y: Vec<f64>, h: f64) -> Self {
        let n = y.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Interior second derivatives: m_{k-1} + 4 m_k + m_{k+1} = 6 (y_{k-1} - 2y_k + y_{k+1}) / h^2.
            let size = n - 2;
            let rhs: Vec<f64> = (1..n - 1)
                .map(|k| 6.0 * (y[k - 1] - 2.0 * y[k] + y[k + 1]) / (h * h))
                .collect();
            let mut c = vec![0.0; size];
            let mut d = vec![0.0; size];
            for i in 0..size {
                let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
                c[i] = 1.0 / denom;
                d[i] = (rhs[i] - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
            }
            for i in (0..size).rev() {
                let next = if i + 1 < size { m[i + 2] } else { 0.0 };
                m[i + 1] = d[i] - c[i] * next;
            }
        }
        Self { y, m, h }
    }

    fn eval(&self, t: f64) -> f64 {
        let last = self.y.len() - 2;
        let k = ((t / self.h).floor() as usize).min(last);
        let a = (k + 1) as f64 * self.h - t;
        let b = t - k as f64 * self.h;
        let h = self.h;
        self.m[k] * a.powi(3) / (6.0 * h)
            + self.m[k + 1] * b.powi(3) / (6.0 * h)
            + (self.y[k] / h - self.m[k] * h / 6.0) * a
            + (self.y[k + 1] / h - self.m[k + 1] * h / 6.0) * b
    }
}

/// Area-uniform sample from a ring.
fn sample_annulus(rng: &mut ChaCha8Rng, ws: &Annulus) -> CartesianPoint {
    let r2 = rng.random_range(ws.r_min.powi(2)..=ws.r_max.powi(2));
    let r = r2.sqrt();
    let phi = rng.random_range(-PI..PI);
    CartesianPoint::new(ws.center.x + r * phi.cos(), ws.center.y + r * phi.sin())
}

/// Random waypoints joined by a natural cubic spline sampled once per tick.
///
/// Waypoints come from a ChaCha8 stream seeded with `seed`; if the spline
/// leaves `workspace`, fresh waypoints are drawn from the same stream.
pub fn gen_random(
    seed: u64,
    workspace: &Annulus,
    n_waypoints: usize,
    duration: f64,
    dt: f64,
) -> Result<CartesianTrajectory, TrajectoryError> {
    if n_waypoints < 2 {
        return Err(TrajectoryError::InvalidParameters("need at least 2 waypoints".into()));
    }
    if !(workspace.r_max > workspace.r_min && workspace.r_min >= 0.0) {
        return Err(TrajectoryError::InvalidParameters("empty workspace annulus".into()));
    }
    let n = tick_count(duration, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knot = duration / (n_waypoints - 1) as f64;
    for _ in 0..=RANDOM_RETRIES {
        let waypoints: Vec<_> = (0..n_waypoints).map(|_| sample_annulus(&mut rng, workspace)).collect();
        let sx = NaturalSpline::new(waypoints.iter().map(|p| p.x).collect(), knot);
        let sy = NaturalSpline::new(waypoints.iter().map(|p| p.y).collect(), knot);
        let points: Vec<_> = (0..=n)
            .map(|k| {
                let t = duration * k as f64 / n as f64;
                CartesianPoint::new(sx.eval(t), sy.eval(t))
            })
            .collect();
        if check_workspace(&points, workspace).is_ok() {
            return Ok(CartesianTrajectory {
                dt,
                points,
                kind: TrajectoryKind::Random,
                duration,
            });
        }
    }
    Err(TrajectoryError::RetriesExhausted {
        attempts: RANDOM_RETRIES + 1,
    })
}

/// Serializable trajectory description, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectorySpec {
    Spiral {
        center: CartesianPoint,
        r0: f64,
        r1: f64,
        turns: f64,
        duration: f64,
    },
    Pyramid {
        center: CartesianPoint,
        half_width: f64,
        height: f64,
        n_teeth: usize,
        duration: f64,
    },
    Random {
        seed: u64,
        n_waypoints: usize,
        duration: f64,
        /// Ring to draw waypoints from; defaults to the arm's margin-shrunk reach.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_max: Option<f64>,
    },
}

impl TrajectorySpec {
    pub fn kind(&self) -> TrajectoryKind {
        match self {
            TrajectorySpec::Spiral { .. } => TrajectoryKind::Spiral,
            TrajectorySpec::Pyramid { .. } => TrajectoryKind::Pyramid,
            TrajectorySpec::Random { .. } => TrajectoryKind::Random,
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            TrajectorySpec::Spiral { duration, .. }
            | TrajectorySpec::Pyramid { duration, .. }
            | TrajectorySpec::Random { duration, .. } => *duration,
        }
    }

    /// Same shape, different duration.
    pub fn with_duration(&self, new_duration: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            TrajectorySpec::Spiral { duration, .. }
            | TrajectorySpec::Pyramid { duration, .. }
            | TrajectorySpec::Random { duration, .. } => *duration = new_duration,
        }
        out
    }

    pub fn generate(&self, model: &ArmModel, dt: f64) -> Result<CartesianTrajectory, TrajectoryError> {
        let ws = Annulus::from_model(model);
        match *self {
            TrajectorySpec::Spiral { center, r0, r1, turns, duration } => {
                gen_spiral(&ws, center, r0, r1, turns, duration, dt)
            }
            TrajectorySpec::Pyramid { center, half_width, height, n_teeth, duration } => {
                gen_pyramid(&ws, center, half_width, height, n_teeth, duration, dt)
            }
            TrajectorySpec::Random { seed, n_waypoints, duration, r_min, r_max } => {
                let ring = Annulus {
                    center: ws.center,
                    r_min: r_min.unwrap_or(ws.r_min),
                    r_max: r_max.unwrap_or(ws.r_max),
                };
                gen_random(seed, &ring.within(&ws), n_waypoints, duration, dt)
            }
        }
    }
}

/// Converts a Cartesian path into unwrapped joint setpoints with
/// central-difference desired velocities (one-sided at the ends).
pub fn to_joint_setpoints(
    model: &ArmModel,
    traj: &CartesianTrajectory,
    branch: ElbowBranch,
) -> Result<JointTrajectory, TrajectoryError> {
    let mut q_des: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
    for (tick, p) in traj.points.iter().enumerate() {
        let mut q = model
            .inverse_kinematics(*p, branch)
            .map_err(|source| TrajectoryError::Kinematics { tick, source })?;
        if let Some(prev) = q_des.last() {
            for (qj, pj) in q.iter_mut().zip(prev) {
                *qj += TAU * ((*pj - *qj) / TAU).round();
            }
        }
        q_des.push(q);
    }
    let n = q_des.len();
    let dt = traj.dt;
    let qd_des = (0..n)
        .map(|i| {
            let (lo, hi, span) = match (i, n) {
                (_, 1) => (0, 0, 1.0),
                (0, _) => (0, 1, dt),
                (i, n) if i == n - 1 => (n - 2, n - 1, dt),
                (i, _) => (i - 1, i + 1, 2.0 * dt),
            };
            q_des[hi]
                .iter()
                .zip(&q_des[lo])
                .map(|(a, b)| (a - b) / span)
                .collect()
        })
        .collect();
    Ok(JointTrajectory {
        dt,
        q_des,
        qd_des,
        source: traj.clone(),
    })
}
