//! Trajectory-tracking model predictive controllers.
//!
//! Each controller optimises an input sequence over its horizon under its own
//! assumed failure model. The decision variables are per-step input
//! increments, so actuator rate limits are a box constraint and projection is
//! exact. Inputs outside the magnitude bounds are saturated in the rollout and
//! penalised quadratically. Obstacle clearance is a soft penalty during the
//! descent; the returned plan is then checked against the hard clearance
//! margin and, if needed, blended toward a maximum-braking plan until it is
//! feasible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ControllerId;
use crate::reference::ReferenceTrajectory;
use crate::sim::{predict_step, wrap_angle, ControlInput, FailureModel, InputBounds, Pose};
use crate::space::FreeSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub id: ControllerId,
    /// Failure dynamics this controller assumes.
    pub model: FailureModel,
    pub horizon_steps: usize,
    pub dt: f64,
    /// Tracking weights on (x, y, theta).
    pub state_weights: [f64; 3],
    /// Weights on the deviation of (v, omega) from the reference feed-forward.
    pub input_weights: [f64; 2],
    pub bounds: InputBounds,
    /// Maximum change of (v, omega) per second.
    pub rate_limits: [f64; 2],
    /// Hard clearance from obstacle surfaces, metres.
    pub margin: f64,
    /// Extra distance beyond the margin over which the soft penalty acts.
    #[serde(default = "default_buffer")]
    pub clearance_buffer: f64,
    #[serde(default = "default_obstacle_weight")]
    pub obstacle_weight: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_buffer() -> f64 {
    0.3
}

fn default_obstacle_weight() -> f64 {
    400.0
}

fn default_iterations() -> usize {
    50
}

const BOUND_PENALTY: f64 = 1e3;

impl ControllerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::config(format!("{}: horizon must be at least one step", self.id)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config(format!("{}: dt must be positive", self.id)));
        }
        let weights = self.state_weights.iter().chain(self.input_weights.iter());
        if weights.clone().any(|w| !(*w >= 0.0)) {
            return Err(Error::config(format!("{}: weights must be non-negative", self.id)));
        }
        if self.rate_limits.iter().any(|r| !(*r > 0.0)) || !(self.margin >= 0.0) {
            return Err(Error::config(format!("{}: invalid rate limits or margin", self.id)));
        }
        self.model.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ControllerSpec = serde_json::from_str(text).map_err(|e| Error::config(format!("controller: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub controller: ControllerId,
    /// `horizon_steps + 1` states; `states[0]` is the pose the plan starts from.
    pub states: Vec<Pose>,
    pub first_input: ControlInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceWindow {
    pub poses: Vec<Pose>,
}

/// Samples `trajectory` at the controller period over its horizon, starting at `t`.
pub fn reference_window(trajectory: &ReferenceTrajectory, t: f64, spec: &ControllerSpec) -> ReferenceWindow {
    let poses = (0..=spec.horizon_steps).map(|k| trajectory.sample(t + k as f64 * spec.dt)).collect();
    ReferenceWindow { poses }
}

/// Previous solution carried between control cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub inputs: Vec<ControlInput>,
    pub last_applied: ControlInput,
}

impl WarmStart {
    pub fn cold(last_applied: ControlInput) -> Self {
        WarmStart { inputs: Vec::new(), last_applied }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub prediction: Prediction,
    pub inputs: Vec<ControlInput>,
    /// Objective of the returned plan.
    pub cost: f64,
    /// Objective of the projected warm start.
    pub warm_cost: f64,
    pub iterations: usize,
    /// Set when the optimised plan violated the hard margin and was blended
    /// toward braking.
    pub braked: bool,
}

impl Solution {
    /// Shifted plan for the next cycle, given the input that was actually applied.
    pub fn next_warm_start(&self, applied: ControlInput) -> WarmStart {
        let mut inputs: Vec<ControlInput> = self.inputs.iter().skip(1).copied().collect();
        if let Some(last) = self.inputs.last() {
            inputs.push(*last);
        }
        WarmStart { inputs, last_applied: applied }
    }
}

/// Failure returned when no plan keeps the hard margin.
#[derive(Debug, Clone)]
pub struct Infeasible {
    /// Maximum-braking plan, for callers that must still command something.
    pub fallback: Solution,
}

impl From<Infeasible> for Error {
    fn from(e: Infeasible) -> Self {
        Error::Infeasible { controller: e.fallback.prediction.controller }
    }
}

struct Problem<'a> {
    spec: &'a ControllerSpec,
    start: Pose,
    refs: &'a [Pose],
    ff: Vec<ControlInput>,
    free: &'a FreeSpace,
    prev: ControlInput,
}

struct Rollout {
    states: Vec<Pose>,
    inputs: Vec<ControlInput>,
    raw: Vec<[f64; 2]>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ControllerSpec, start: Pose, window: &'a ReferenceWindow, free: &'a FreeSpace, prev: ControlInput) -> Self {
        let h = spec.horizon_steps;
        let refs = &window.poses[..=h];
        let ff = (0..h)
            .map(|k| {
                let (a, b) = (refs[k], refs[k + 1]);
                let (s, c) = a.theta.sin_cos();
                ControlInput {
                    v: ((b.x - a.x) * c + (b.y - a.y) * s) / spec.dt,
                    omega: wrap_angle(b.theta - a.theta) / spec.dt,
                }
            })
            .collect();
        Problem { spec, start, refs, ff, free, prev }
    }

    fn step_limits(&self) -> [f64; 2] {
        [self.spec.rate_limits[0] * self.spec.dt, self.spec.rate_limits[1] * self.spec.dt]
    }

    fn project(&self, d: &mut [[f64; 2]]) {
        let lim = self.step_limits();
        for dk in d.iter_mut() {
            dk[0] = dk[0].clamp(-lim[0], lim[0]);
            dk[1] = dk[1].clamp(-lim[1], lim[1]);
        }
    }

    fn rollout(&self, d: &[[f64; 2]]) -> Rollout {
        let b = &self.spec.bounds;
        let mut raw = [self.prev.v, self.prev.omega];
        let mut states = Vec::with_capacity(d.len() + 1);
        let mut inputs = Vec::with_capacity(d.len());
        let mut raws = Vec::with_capacity(d.len());
        states.push(self.start);
        for dk in d {
            raw = [raw[0] + dk[0], raw[1] + dk[1]];
            // saturate the running value so later increments act on what was applied
            let u = b.clamp(ControlInput::new(raw[0], raw[1]));
            raws.push(raw);
            raw = [u.v, u.omega];
            let next = predict_step(states.last().unwrap(), u, &self.spec.model.kind, self.spec.dt);
            states.push(next);
            inputs.push(u);
        }
        Rollout { states, inputs, raw: raws }
    }

    fn soft_margin(&self) -> f64 {
        self.spec.margin + self.spec.clearance_buffer
    }

    fn cost(&self, r: &Rollout) -> f64 {
        let s = self.spec;
        let mut j = 0.0;
        for (k, u) in r.inputs.iter().enumerate() {
            let ff = self.ff[k];
            j += s.input_weights[0] * (u.v - ff.v).powi(2) + s.input_weights[1] * (u.omega - ff.omega).powi(2);
            j += BOUND_PENALTY * bound_excess(&s.bounds, r.raw[k]);
        }
        for (k, x) in r.states.iter().enumerate().skip(1) {
            let rf = self.refs[k];
            j += s.state_weights[0] * (x.x - rf.x).powi(2)
                + s.state_weights[1] * (x.y - rf.y).powi(2)
                + s.state_weights[2] * wrap_angle(x.theta - rf.theta).powi(2);
            if self.free.obstacle_count() > 0 || self.free.workspace.is_some() {
                let (c, _) = self.free.clearance([x.x, x.y]);
                let v = self.soft_margin() - c;
                if v > 0.0 {
                    j += s.obstacle_weight * v * v;
                }
            }
        }
        j
    }

    /// Gradient with respect to the increments, by the adjoint recursion.
    fn gradient(&self, r: &Rollout) -> Vec<[f64; 2]> {
        let s = self.spec;
        let h = r.inputs.len();
        let dt = s.dt;
        let mut g_raw = vec![[0.0; 2]; h];
        let mut lam = [0.0f64; 3];
        for k in (1..=h).rev() {
            let x = r.states[k];
            let rf = self.refs[k];
            lam[0] += 2.0 * s.state_weights[0] * (x.x - rf.x);
            lam[1] += 2.0 * s.state_weights[1] * (x.y - rf.y);
            lam[2] += 2.0 * s.state_weights[2] * wrap_angle(x.theta - rf.theta);
            if self.free.obstacle_count() > 0 || self.free.workspace.is_some() {
                let (c, dir) = self.free.clearance([x.x, x.y]);
                let v = self.soft_margin() - c;
                if v > 0.0 {
                    lam[0] -= 2.0 * s.obstacle_weight * v * dir[0];
                    lam[1] -= 2.0 * s.obstacle_weight * v * dir[1];
                }
            }
            // step k-1 -> k
            let xp = r.states[k - 1];
            let u = r.inputs[k - 1];
            let (sin, cos) = xp.theta.sin_cos();
            let (_, dw_dv, dw_dw) = s.model.kind.effective_omega(u.v, u.omega);
            let ff = self.ff[k - 1];
            let mut gv = dt * (lam[0] * cos + lam[1] * sin + lam[2] * dw_dv) + 2.0 * s.input_weights[0] * (u.v - ff.v);
            let mut gw = dt * lam[2] * dw_dw + 2.0 * s.input_weights[1] * (u.omega - ff.omega);
            let raw = r.raw[k - 1];
            if raw[0] < s.bounds.v_min || raw[0] > s.bounds.v_max {
                gv = 0.0;
            }
            if raw[1].abs() > s.bounds.omega_max {
                gw = 0.0;
            }
            let pen = bound_excess_grad(&s.bounds, raw);
            g_raw[k - 1] = [gv + BOUND_PENALTY * pen[0], gw + BOUND_PENALTY * pen[1]];
            lam[2] += lam[0] * (-dt * u.v * sin) + lam[1] * (dt * u.v * cos);
        }
        // raw_k depends on d_j for j <= k through the saturated running value
        let mut acc = [0.0; 2];
        let mut g = vec![[0.0; 2]; h];
        for k in (0..h).rev() {
            let raw = r.raw[k];
            let pass_v = if raw[0] < s.bounds.v_min || raw[0] > s.bounds.v_max { 0.0 } else { 1.0 };
            let pass_w = if raw[1].abs() > s.bounds.omega_max { 0.0 } else { 1.0 };
            acc = [g_raw[k][0] + pass_v * acc[0], g_raw[k][1] + pass_w * acc[1]];
            g[k] = acc;
        }
        g
    }

    fn min_clearance(&self, states: &[Pose]) -> f64 {
        states.iter().skip(1).map(|x| self.free.clearance([x.x, x.y]).0).fold(f64::INFINITY, f64::min)
    }

    fn increments_of(&self, inputs: &[ControlInput]) -> Vec<[f64; 2]> {
        let mut prev = self.prev;
        inputs
            .iter()
            .map(|u| {
                let d = [u.v - prev.v, u.omega - prev.omega];
                prev = *u;
                d
            })
            .collect()
    }
}

fn bound_excess(b: &InputBounds, raw: [f64; 2]) -> f64 {
    let ev = (raw[0] - b.v_max).max(0.0) + (b.v_min - raw[0]).max(0.0);
    let ew = (raw[1].abs() - b.omega_max).max(0.0);
    ev * ev + ew * ew
}

fn bound_excess_grad(b: &InputBounds, raw: [f64; 2]) -> [f64; 2] {
    let gv = 2.0 * ((raw[0] - b.v_max).max(0.0) - (b.v_min - raw[0]).max(0.0));
    let gw = 2.0 * (raw[1].abs() - b.omega_max).max(0.0) * raw[1].signum();
    [gv, gw]
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).sum()
}

/// Solves one receding-horizon problem from `pose`.
///
/// Returns the optimised plan, or `Infeasible` carrying a maximum-braking
/// fallback when no blend toward braking keeps the hard margin.
pub fn solve(
    spec: &ControllerSpec,
    pose: &Pose,
    window: &ReferenceWindow,
    free: &FreeSpace,
    warm: &WarmStart,
) -> std::result::Result<Solution, Infeasible> {
    assert!(window.poses.len() > spec.horizon_steps, "reference window shorter than horizon");
    let h = spec.horizon_steps;
    let problem = Problem::new(spec, *pose, window, free, warm.last_applied);

    let mut init: Vec<ControlInput> = warm.inputs.iter().take(h).copied().collect();
    while init.len() < h {
        init.push(init.last().copied().unwrap_or(warm.last_applied));
    }
    let mut d = problem.increments_of(&init);
    problem.project(&mut d);

    let mut roll = problem.rollout(&d);
    let mut f = problem.cost(&roll);
    let warm_cost = f;
    let mut g = problem.gradient(&roll);
    let mut step = {
        let gmax = g.iter().flat_map(|x| x.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax > 0.0 {
            problem.step_limits()[0] / gmax
        } else {
            1.0
        }
    };
    let mut iterations = 0;
    while iterations < spec.max_iterations {
        iterations += 1;
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..30 {
            let mut cand: Vec<[f64; 2]> =
                d.iter().zip(&g).map(|(x, gx)| [x[0] - trial_step * gx[0], x[1] - trial_step * gx[1]]).collect();
            problem.project(&mut cand);
            let diff: Vec<[f64; 2]> = cand.iter().zip(&d).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
            let decrease = dot(&g, &diff);
            if decrease >= 0.0 {
                break;
            }
            let r = problem.rollout(&cand);
            let fc = problem.cost(&r);
            if fc <= f + 1e-4 * decrease {
                accepted = Some((cand, r, fc, diff));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((cand, r, fc, s)) = accepted else { break };
        let g_new = problem.gradient(&r);
        let y: Vec<[f64; 2]> = g_new.iter().zip(&g).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        step = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e3) } else { trial_step * 2.0 };
        let rel = (f - fc) / f.abs().max(1e-12);
        d = cand;
        roll = r;
        f = fc;
        g = g_new;
        if rel < 1e-9 || ss < 1e-18 {
            break;
        }
    }

    let make = |roll: Rollout, cost: f64, braked: bool| {
        let first = roll.inputs.first().copied().unwrap_or(ControlInput::ZERO);
        Solution {
            prediction: Prediction { controller: spec.id, states: roll.states, first_input: first },
            inputs: roll.inputs,
            cost,
            warm_cost,
            iterations,
            braked,
        }
    };

    if problem.min_clearance(&roll.states) >= spec.margin {
        return Ok(make(roll, f, false));
    }

    // Blend toward the maximum-braking plan until the hard margin holds.
    let dv = spec.rate_limits[0] * spec.dt;
    let mut brake_v = warm.last_applied.v;
    let brake: Vec<f64> = (0..h)
        .map(|_| {
            brake_v = (brake_v - dv).max(spec.bounds.v_min);
            brake_v
        })
        .collect();
    let blend = |lambda: f64| -> Vec<ControlInput> {
        roll.inputs
            .iter()
            .zip(&brake)
            .map(|(u, b)| ControlInput::new(b + lambda * (u.v - b), u.omega))
            .collect()
    };
    for lambda in [0.8, 0.6, 0.4, 0.2, 0.0] {
        let inputs = blend(lambda);
        let dd = problem.increments_of(&inputs);
        let r = problem.rollout(&dd);
        if problem.min_clearance(&r.states) >= spec.margin {
            let c = problem.cost(&r);
            return Ok(make(r, c, true));
        }
    }
    let dd = problem.increments_of(&blend(0.0));
    let r = problem.rollout(&dd);
    let c = problem.cost(&r);
    Err(Infeasible { fallback: make(r, c, true) })
}
