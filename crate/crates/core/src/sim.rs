//! Seedable 2D unicycle simulator with pluggable failure models.
//!
//! A failure model turns the nominal dynamics into degraded dynamics by
//! rewriting the commanded input and optionally adding a position drift.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::FailureId;

pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        ControlInput { v, omega }
    }

    pub fn norm(&self) -> f64 {
        self.v.hypot(self.omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FailureKind {
    /// omega' = (1 - loss) * omega
    SteeringScale { loss: f64 },
    /// omega' = omega * max(0, 1 - k_v |v|), k_v in s/m
    VelocityCoupledSteering { k_v: f64 },
    /// omega' = omega + bias, bias in rad/s
    AngularBias { bias: f64 },
    /// Position drift in m/s added to the kinematics; inputs unchanged.
    PositionDrift { drift: [f64; 2] },
    None,
}

impl FailureKind {
    /// Effective angular rate and its partials with respect to (v, omega).
    pub fn effective_omega(&self, v: f64, omega: f64) -> (f64, f64, f64) {
        match *self {
            FailureKind::SteeringScale { loss } => ((1.0 - loss) * omega, 0.0, 1.0 - loss),
            FailureKind::VelocityCoupledSteering { k_v } => {
                let gain = 1.0 - k_v * v.abs();
                if gain > 0.0 {
                    (omega * gain, -k_v * v.signum() * omega, gain)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            FailureKind::AngularBias { bias } => (omega + bias, 0.0, 1.0),
            FailureKind::PositionDrift { .. } | FailureKind::None => (omega, 0.0, 1.0),
        }
    }

    pub fn drift(&self) -> [f64; 2] {
        match *self {
            FailureKind::PositionDrift { drift } => drift,
            _ => [0.0, 0.0],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FailureKind::SteeringScale { .. } => "steering-scale",
            FailureKind::VelocityCoupledSteering { .. } => "velocity-coupled-steering",
            FailureKind::AngularBias { .. } => "angular-bias",
            FailureKind::PositionDrift { .. } => "position-drift",
            FailureKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureModel {
    pub id: FailureId,
    #[serde(flatten)]
    pub kind: FailureKind,
}

impl FailureModel {
    pub fn none() -> Self {
        FailureModel { id: FailureId::NONE, kind: FailureKind::None }
    }

    pub fn new(id: FailureId, kind: FailureKind) -> Result<Self> {
        let model = FailureModel { id, kind };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            FailureKind::SteeringScale { loss } => (0.0..=1.0).contains(&loss),
            FailureKind::VelocityCoupledSteering { k_v } => k_v.is_finite() && k_v >= 0.0,
            FailureKind::AngularBias { bias } => bias.is_finite(),
            FailureKind::PositionDrift { drift } => drift.iter().all(|d| d.is_finite()),
            FailureKind::None => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid parameters for failure {}: {:?}", self.id, self.kind)))
        }
    }

    /// Parses a failure model from JSON; unknown kinds are configuration errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: FailureModel =
            serde_json::from_str(text).map_err(|e| Error::config(format!("failure model: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

/// Degraded input and drift seen by the plant under `failure`.
pub fn apply_failure(u: ControlInput, failure: &FailureModel, _pose: &Pose) -> (ControlInput, [f64; 2]) {
    let (omega, _, _) = failure.kind.effective_omega(u.v, u.omega);
    (ControlInput { v: u.v, omega }, failure.kind.drift())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
}

impl InputBounds {
    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput {
            v: u.v.clamp(self.v_min, self.v_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }

    pub fn contains(&self, u: ControlInput) -> bool {
        u.v >= self.v_min && u.v <= self.v_max && u.omega.abs() <= self.omega_max
    }
}

impl Default for InputBounds {
    fn default() -> Self {
        InputBounds { v_min: 0.0, v_max: 1.5, omega_max: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    /// Per-step process noise standard deviations on (x, y, theta).
    pub noise_std: [f64; 3],
    pub robot_radius: f64,
    pub bounds: InputBounds,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            noise_std: [0.01, 0.01, 0.005],
            robot_radius: 0.2,
            bounds: InputBounds::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("noise std must be non-negative"));
        }
        if !(self.robot_radius > 0.0) {
            return Err(Error::config("robot radius must be positive"));
        }
        Ok(())
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_std = [0.0; 3];
        self
    }
}

/// One explicit Euler step of the degraded unicycle with process noise.
pub fn step(pose: &Pose, u: ControlInput, failure: &FailureModel, cfg: &SimConfig, rng: &mut impl Rng) -> Result<Pose> {
    let u = cfg.bounds.clamp(u);
    let (ud, drift) = apply_failure(u, failure, pose);
    let mut noise = [0.0; 3];
    for (n, &std) in noise.iter_mut().zip(cfg.noise_std.iter()) {
        if std > 0.0 {
            // std > 0 was checked, so the constructor cannot fail
            *n = Normal::new(0.0, std).expect("positive std").sample(rng);
        }
    }
    let (sin, cos) = pose.theta.sin_cos();
    let next = Pose {
        x: pose.x + cfg.dt * (ud.v * cos + drift[0]) + noise[0],
        y: pose.y + cfg.dt * (ud.v * sin + drift[1]) + noise[1],
        theta: wrap_angle(pose.theta + cfg.dt * ud.omega + noise[2]),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::SimulationFault(format!("non-finite pose after step from {pose:?} with {u:?}")))
    }
}

/// Deterministic kinematics under an assumed failure model, used for
/// prediction and residual computation.
pub fn predict_step(pose: &Pose, u: ControlInput, model: &FailureKind, dt: f64) -> Pose {
    let (omega, _, _) = model.effective_omega(u.v, u.omega);
    let drift = model.drift();
    let (sin, cos) = pose.theta.sin_cos();
    Pose {
        x: pose.x + dt * (u.v * cos + drift[0]),
        y: pose.y + dt * (u.v * sin + drift[1]),
        theta: wrap_angle(pose.theta + dt * omega),
    }
}
