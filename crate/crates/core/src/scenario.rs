//! Scenario files and the model-residual window shared by training and the
//! online loop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::FailureId;
use crate::reference::ReferenceTrajectory;
use crate::sim::{predict_step, wrap_angle, ControlInput, FailureKind, FailureModel, Pose, SimConfig};
use crate::space::{FreeSpace, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    /// Activation time, seconds.
    pub at: f64,
    pub failure: FailureModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub free_space: FreeSpace,
    pub reference: ReferenceTrajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureEvent>,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
}

const SHIPPED: &[(&str, &str)] = &[
    ("corridor", include_str!("../assets/scenarios/corridor.json")),
    ("adversarial", include_str!("../assets/scenarios/adversarial.json")),
    ("unknown-failure", include_str!("../assets/scenarios/unknown-failure.json")),
    ("ellipse-patrol", include_str!("../assets/scenarios/ellipse-patrol.json")),
    ("training-circle-slow", include_str!("../assets/scenarios/training-circle-slow.json")),
    ("training-circle-fast", include_str!("../assets/scenarios/training-circle-fast.json")),
];

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// One of the scenarios shipped with the crate.
    pub fn shipped(name: &str) -> Result<Self> {
        let (_, text) = SHIPPED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::config(format!("no shipped scenario named {name:?}")))?;
        Self::from_json(text)
    }

    pub fn shipped_names() -> impl Iterator<Item = &'static str> {
        SHIPPED.iter().map(|(n, _)| *n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::config(format!("{}: duration must be positive", self.name)));
        }
        self.free_space.validate()?;
        self.reference.validate()?;
        self.sim.validate()?;
        if let Some(ev) = &self.failure {
            ev.failure.validate()?;
        }
        if !self.free_space.disc_is_free(self.start_pose().position(), self.sim.robot_radius) {
            return Err(Error::config(format!("{}: start pose is not in free space", self.name)));
        }
        Ok(())
    }

    pub fn start_pose(&self) -> Pose {
        self.start.unwrap_or_else(|| self.reference.sample(0.0))
    }

    pub fn goal(&self) -> Point {
        self.goal.unwrap_or_else(|| self.reference.end_pose().position())
    }

    /// Failure acting on the plant at time t.
    pub fn failure_at(&self, t: f64) -> FailureModel {
        match &self.failure {
            Some(ev) if t + 1e-9 >= ev.at => ev.failure,
            _ => FailureModel::none(),
        }
    }

    pub fn true_failure_at(&self, t: f64) -> FailureId {
        self.failure_at(t).id
    }

    /// Copy with the scheduled failure removed.
    pub fn without_failure(&self) -> Self {
        Scenario { failure: None, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s.sim.seed = seed;
        s
    }
}

/// Last `len` (pose, applied input) pairs. The residual re-simulates the
/// window from its oldest pose under an assumed model and compares with the
/// observed pose; with `len = 1` this is the one-step-ahead prediction error.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualWindow {
    len: usize,
    poses: VecDeque<Pose>,
    inputs: VecDeque<ControlInput>,
}

impl ResidualWindow {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1);
        ResidualWindow { len, poses: VecDeque::with_capacity(len + 1), inputs: VecDeque::with_capacity(len + 1) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_full(&self) -> bool {
        self.inputs.len() == self.len
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn clear(&mut self) {
        self.poses.clear();
        self.inputs.clear();
    }

    /// Records that `applied` was commanded from `pose`.
    pub fn push(&mut self, pose: Pose, applied: ControlInput) {
        self.poses.push_back(pose);
        self.inputs.push_back(applied);
        while self.inputs.len() > self.len {
            self.poses.pop_front();
            self.inputs.pop_front();
        }
    }

    /// Observed minus re-simulated pose (dx, dy, wrapped dθ); None until the
    /// window is full.
    pub fn residual(&self, observed: &Pose, model: &FailureKind, dt: f64) -> Option<[f64; 3]> {
        if !self.is_full() {
            return None;
        }
        let predicted = self.inputs.iter().fold(self.poses[0], |p, u| predict_step(&p, *u, model, dt));
        Some([observed.x - predicted.x, observed.y - predicted.y, wrap_angle(observed.theta - predicted.theta)])
    }
}

/// Deterministic per-run seed from a base seed and run coordinates.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = base;
    for p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(*p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
