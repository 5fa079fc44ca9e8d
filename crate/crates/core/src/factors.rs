//! Measurement models for trajectory planning: pose anchors, constant
//! velocity dynamics, static obstacles and inter-robot separation.
//!
//! States are stacked as `[x, y, ẋ, ẏ]`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbp::{FactorKind, MeasurementModel};
use crate::sdf::SdfGrid;

pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
}

impl RobotState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self {
            pos: Vector2::new(x, y),
            vel: Vector2::new(vx, vy),
        }
    }

    pub fn at_rest(pos: Vector2<f64>) -> Self {
        Self {
            pos,
            vel: Vector2::zeros(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.pos.x, self.pos.y, self.vel.x, self.vel.y])
    }

    /// Reads the first four entries of `v`.
    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite())
    }

    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        Self {
            pos: self.pos + (other.pos - self.pos) * t,
            vel: self.vel + (other.vel - self.vel) * t,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{name} must be strictly positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    /// Pose anchor standard deviation, meters.
    pub sigma_p: f64,
    /// Dynamics noise, meters.
    pub sigma_d: f64,
    pub sigma_o: f64,
    pub sigma_r: f64,
    pub robot_radius: f64,
    /// Safety margin added to twice the robot radius, meters.
    pub epsilon: f64,
    pub comm_radius: f64,
}

impl FactorParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, value) in [
            ("sigma_p", self.sigma_p),
            ("sigma_d", self.sigma_d),
            ("sigma_o", self.sigma_o),
            ("sigma_r", self.sigma_r),
            ("robot_radius", self.robot_radius),
            ("comm_radius", self.comm_radius),
        ] {
            if value.is_nan() || value <= 0.0 {
                return Err(ParamError::NotPositive { name, value });
            }
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(ParamError::Negative {
                name: "epsilon",
                value: self.epsilon,
            });
        }
        Ok(())
    }

    /// `r* = 2 r_R + ε`
    pub fn critical_distance(&self) -> f64 {
        2.0 * self.robot_radius + self.epsilon
    }
}

/// A factor ready to be inserted into a graph.
#[derive(Debug, Clone)]
pub struct FactorDef {
    pub kind: FactorKind,
    pub model: Arc<dyn MeasurementModel>,
    pub z: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl FactorDef {
    /// Likelihood at `x0`, for inspection outside a graph.
    pub fn likelihood_at(&self, x0: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let h0 = self.model.measure(x0);
        let jac = self.model.jacobian(x0);
        let jt_lam = jac.transpose() * &self.precision;
        let eta = &jt_lam * (&jac * x0 + &self.z - h0);
        (eta, jt_lam * jac)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoseModel;

impl MeasurementModel for PoseModel {
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
    fn is_linear(&self) -> bool {
        true
    }
}

pub fn pose_factor(anchor: &RobotState, sigma_p: f64) -> FactorDef {
    FactorDef {
        kind: FactorKind::Pose,
        model: Arc::new(PoseModel),
        z: anchor.to_vector(),
        precision: DMatrix::identity(STATE_DIM, STATE_DIM) * sigma_p.powi(-2),
    }
}

/// State transition `Φ(dt) = [[I, dt·I], [0, I]]`.
pub fn transition(dt: f64) -> DMatrix<f64> {
    let mut phi = DMatrix::identity(STATE_DIM, STATE_DIM);
    phi[(0, 2)] = dt;
    phi[(1, 3)] = dt;
    phi
}

/// `h(x_k, x_{k+1}) = Φ(dt) x_k − x_{k+1}`
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    jacobian: DMatrix<f64>,
}

impl DynamicsModel {
    pub fn new(dt: f64) -> Self {
        let mut jacobian = DMatrix::zeros(STATE_DIM, 2 * STATE_DIM);
        jacobian
            .view_mut((0, 0), (STATE_DIM, STATE_DIM))
            .copy_from(&transition(dt));
        jacobian
            .view_mut((0, STATE_DIM), (STATE_DIM, STATE_DIM))
            .copy_from(&(-DMatrix::<f64>::identity(STATE_DIM, STATE_DIM)));
        Self { jacobian }
    }
}

impl MeasurementModel for DynamicsModel {
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.jacobian * x
    }
    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.jacobian.clone()
    }
    fn is_linear(&self) -> bool {
        true
    }
}

/// Process covariance of the noise-on-acceleration model over `dt`:
/// `[[⅓dt³Q, ½dt²Q], [½dt²Q, dt·Q]]` with `Q = σ_d² I`.
pub fn dynamics_covariance(dt: f64, sigma_d: f64) -> DMatrix<f64> {
    let q = sigma_d * sigma_d;
    let mut cov = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for axis in 0..2 {
        let (p, v) = (axis, axis + 2);
        cov[(p, p)] = dt.powi(3) / 3.0 * q;
        cov[(p, v)] = dt.powi(2) / 2.0 * q;
        cov[(v, p)] = dt.powi(2) / 2.0 * q;
        cov[(v, v)] = dt * q;
    }
    cov
}

/// Closed-form inverse of [`dynamics_covariance`].
pub fn dynamics_precision(dt: f64, sigma_d: f64) -> DMatrix<f64> {
    let qi = sigma_d.powi(-2);
    let mut lam = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for axis in 0..2 {
        let (p, v) = (axis, axis + 2);
        lam[(p, p)] = 12.0 / dt.powi(3) * qi;
        lam[(p, v)] = -6.0 / dt.powi(2) * qi;
        lam[(v, p)] = -6.0 / dt.powi(2) * qi;
        lam[(v, v)] = 4.0 / dt * qi;
    }
    lam
}

pub fn dynamics_factor(dt: f64, sigma_d: f64) -> FactorDef {
    assert!(dt > 0.0, "dynamics factor needs a positive time gap");
    FactorDef {
        kind: FactorKind::Dynamics,
        model: Arc::new(DynamicsModel::new(dt)),
        z: DVector::zeros(STATE_DIM),
        precision: dynamics_precision(dt, sigma_d),
    }
}

/// `h = 1 − d_o(x)/r_R` inside the robot radius, zero outside.
#[derive(Debug)]
pub struct ObstacleModel {
    sdf: Arc<SdfGrid>,
    radius: f64,
    clamped_queries: AtomicU64,
}

impl ObstacleModel {
    pub fn new(sdf: Arc<SdfGrid>, radius: f64) -> Self {
        Self {
            sdf,
            radius,
            clamped_queries: AtomicU64::new(0),
        }
    }

    /// Number of evaluations that fell outside the SDF and were clamped.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped_queries.load(Ordering::Relaxed)
    }

    fn sample(&self, x: &DVector<f64>) -> crate::sdf::SdfSample {
        let s = self.sdf.sample(Vector2::new(x[0], x[1]));
        if s.clamped {
            self.clamped_queries.fetch_add(1, Ordering::Relaxed);
        }
        s
    }
}

impl MeasurementModel for ObstacleModel {
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.sample(x).distance;
        DVector::from_element(1, obstacle_cost(d, self.radius))
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = self.sample(x);
        let mut j = DMatrix::zeros(1, STATE_DIM);
        if s.distance <= self.radius {
            j[(0, 0)] = -s.gradient.x / self.radius;
            j[(0, 1)] = -s.gradient.y / self.radius;
        }
        j
    }
}

pub fn obstacle_cost(distance: f64, radius: f64) -> f64 {
    if distance <= radius {
        1.0 - distance / radius
    } else {
        0.0
    }
}

pub fn obstacle_factor(sdf: Arc<SdfGrid>, radius: f64, sigma_o: f64) -> FactorDef {
    FactorDef {
        kind: FactorKind::Obstacle,
        model: Arc::new(ObstacleModel::new(sdf, radius)),
        z: DVector::zeros(1),
        precision: DMatrix::from_element(1, 1, sigma_o.powi(-2)),
    }
}

/// Separation cost over `[x_A, x_B]`: `h = 1 − ‖p_A − p_B‖/r*` within `r*`.
#[derive(Debug, Clone, Copy)]
pub struct InterRobotModel {
    pub critical: f64,
}

impl InterRobotModel {
    /// Unit vector from B to A, with a fixed fallback for coincident robots.
    fn direction(x: &DVector<f64>) -> (f64, Vector2<f64>) {
        let diff = Vector2::new(x[0] - x[4], x[1] - x[5]);
        let d = diff.norm();
        if d == 0.0 {
            (0.0, Vector2::new(1.0, 0.0))
        } else {
            (d, diff / d)
        }
    }
}

impl MeasurementModel for InterRobotModel {
    fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        let (d, _) = Self::direction(x);
        DVector::from_element(1, obstacle_cost(d, self.critical))
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (d, u) = Self::direction(x);
        let mut j = DMatrix::zeros(1, 2 * STATE_DIM);
        if d <= self.critical {
            j[(0, 0)] = -u.x / self.critical;
            j[(0, 1)] = -u.y / self.critical;
            j[(0, 4)] = u.x / self.critical;
            j[(0, 5)] = u.y / self.critical;
        }
        j
    }
}

/// Inter-robot factor for planned states at relative time `t_k`; the
/// precision `(t_k σ_r)⁻²` weakens further into the future.
pub fn interrobot_factor(t_k: f64, params: &FactorParams) -> FactorDef {
    assert!(t_k > 0.0, "inter-robot factors attach to future states only");
    FactorDef {
        kind: FactorKind::InterRobot,
        model: Arc::new(InterRobotModel {
            critical: params.critical_distance(),
        }),
        z: DVector::zeros(1),
        precision: DMatrix::from_element(1, 1, (t_k * params.sigma_r).powi(-2)),
    }
}
