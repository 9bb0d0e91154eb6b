//! Online decision cycle, run logs, metrics and plot data.
//!
//! One cycle: observe → residual attributes → detect + explain → plausible
//! set (perturbation, operator) → candidate MPC solves → reachability gate →
//! conservative pick → arbitration → actuate under the scheduled failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arbitration::{deviation, reinforce, select, ArbitrationConfig, ConfidencePmf, Decision, PerformanceRecord, Rule};
use crate::controller::{reference_window, solve, Prediction, Solution, WarmStart};
use crate::error::{Error, Result};
use crate::ids::{ControllerId, FailureId};
use crate::monitor::AttributeVector;
use crate::reachability::{conservative_select, safe_controllers, SafetyReport, TubeCheck};
use crate::scenario::{ResidualWindow, Scenario};
use crate::sim::{seeded_rng, step, ControlInput, Pose, SimRng};
use crate::space::{FreeSpace, Point};
use crate::training::{attributes_of, Runtime, ScenarioRef};
use crate::uncertainty::{InterventionMode, OperatorIntervention, OperatorOverride, PlausibleSet, PlausibleSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Full,
    DtOnly,
    NoRecovery,
    Nominal,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RunMode::Full),
            "dt-only" => Ok(RunMode::DtOnly),
            "no-recovery" => Ok(RunMode::NoRecovery),
            "nominal" => Ok(RunMode::Nominal),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    GoalReached,
    Collision,
    FailSafe,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub arbitration: ArbitrationConfig,
    /// Consecutive cycles with a non-nominal plausible failure before the
    /// recovery loop engages.
    pub latch_cycles: usize,
    /// Consecutive nominal-only cycles before it disengages again.
    pub release_cycles: usize,
    pub goal_tolerance: f64,
    /// Window over which η must stay below η* to count as recovered, seconds.
    pub recovery_hold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { arbitration: ArbitrationConfig::default(), latch_cycles: 3, release_cycles: 3, goal_tolerance: 0.5, recovery_hold: 2.0 }
    }
}

/// Everything decided in one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub t: f64,
    pub pose: Pose,
    pub reference: Pose,
    pub alpha: Option<AttributeVector>,
    pub detection: FailureId,
    pub explanation: String,
    pub plausible: PlausibleSet,
    pub candidates: BTreeSet<ControllerId>,
    pub safe: BTreeSet<ControllerId>,
    pub deployed: Option<ControllerId>,
    pub rule: Option<Rule>,
    /// Deviation of the previously deployed controller's model.
    pub eta: Option<f64>,
    /// Outcome of this cycle's reinforcement, if one happened.
    pub reinforced: Option<bool>,
    pub pmf: ConfidencePmf,
    pub input: ControlInput,
    pub true_failure: FailureId,
    pub recovering: bool,
    /// Intervention applied at this cycle.
    pub intervention: Option<InterventionMode>,
}

fn default_hold() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: String,
    pub mode: RunMode,
    pub seed: u64,
    pub dt: f64,
    pub goal: Point,
    pub failure_at: Option<f64>,
    pub eta_star: f64,
    /// Seconds η must stay below η* to count as recovered.
    #[serde(default = "default_hold")]
    pub recovery_hold: f64,
    pub records: Vec<CycleRecord>,
    pub final_pose: Pose,
    pub status: Option<Status>,
}

/// Live view of a run, consistent with a single cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    #[serde(flatten)]
    pub record: CycleRecord,
    pub tubes: Vec<TubeCheck>,
    pub recent_eta: BTreeMap<ControllerId, f64>,
    pub status: Option<Status>,
    pub free_space: FreeSpace,
}

pub struct RunLoop {
    runtime: Arc<Runtime>,
    scenario: Scenario,
    mode: RunMode,
    cfg: RunConfig,
    rng: SimRng,
    cycle: usize,
    pose: Pose,
    window: ResidualWindow,
    warm: BTreeMap<ControllerId, WarmStart>,
    last_applied: ControlInput,
    model_of_last: ControllerId,
    pmf: ConfidencePmf,
    record: PerformanceRecord,
    operator: OperatorOverride,
    pending: Option<OperatorIntervention>,
    recovering: bool,
    /// Cycle at which the current recovery episode engaged.
    engaged_at: usize,
    streak: usize,
    last_set: Option<PlausibleSet>,
    log: RunLog,
    snapshot: Option<StateSnapshot>,
}

fn nominal_set() -> PlausibleSet {
    PlausibleSet::single(FailureId::NONE, PlausibleSource::Monitor)
}

impl RunLoop {
    pub fn new(runtime: Arc<Runtime>, scenario: Scenario, mode: RunMode, cfg: RunConfig) -> Result<Self> {
        scenario.validate()?;
        cfg.arbitration.validate()?;
        let scenario = if mode == RunMode::Nominal { scenario.without_failure() } else { scenario };
        let pmf = ConfidencePmf::uniform(&runtime.catalog.corrective_ids());
        let log = RunLog {
            scenario: scenario.name.clone(),
            mode,
            seed: scenario.sim.seed,
            dt: scenario.sim.dt,
            goal: scenario.goal(),
            failure_at: scenario.failure.as_ref().map(|f| f.at),
            eta_star: cfg.arbitration.eta_star,
            recovery_hold: cfg.recovery_hold,
            records: Vec::new(),
            final_pose: scenario.start_pose(),
            status: None,
        };
        Ok(RunLoop {
            rng: seeded_rng(scenario.sim.seed),
            pose: scenario.start_pose(),
            window: ResidualWindow::new(runtime.residual_window),
            runtime,
            mode,
            cfg,
            cycle: 0,
            warm: BTreeMap::new(),
            last_applied: ControlInput::ZERO,
            model_of_last: ControllerId::NOMINAL,
            pmf,
            record: PerformanceRecord::default(),
            operator: OperatorOverride::None,
            pending: None,
            recovering: false,
            engaged_at: 0,
            streak: 0,
            last_set: None,
            log,
            snapshot: None,
            scenario,
        })
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle
    }

    pub fn status(&self) -> Option<Status> {
        self.log.status
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    pub fn snapshot(&self) -> Option<&StateSnapshot> {
        self.snapshot.as_ref()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn pmf(&self) -> &ConfidencePmf {
        &self.pmf
    }

    /// Queues an intervention for the next cycle; a newer one replaces it.
    pub fn submit_intervention(&mut self, iv: OperatorIntervention) -> Result<()> {
        iv.validate(&self.runtime.catalog.failure_ids())?;
        self.pending = Some(iv);
        Ok(())
    }

    pub fn has_pending_intervention(&self) -> bool {
        self.pending.is_some()
    }

    fn solve_for(&mut self, c: ControllerId, t: f64) -> Result<std::result::Result<Solution, Solution>> {
        let spec = self.runtime.catalog.controller(c)?;
        let refs = reference_window(&self.scenario.reference, t, spec);
        let warm = self.warm.get(&c).cloned().unwrap_or_else(|| WarmStart::cold(self.last_applied));
        let warm = WarmStart { last_applied: self.last_applied, ..warm };
        Ok(solve(spec, &self.pose, &refs, &self.scenario.free_space, &warm).map_err(|e| e.fallback))
    }

    /// Effective plausible set once recovery is engaged: the nominal class is
    /// dropped, and an empty remainder keeps the previous set. An operator
    /// restriction is taken as given.
    fn recovery_set(&mut self, pset: &PlausibleSet) -> PlausibleSet {
        if self.operator == OperatorOverride::Restrict {
            return pset.clone();
        }
        let mut failures = pset.failures.clone();
        failures.remove(&FailureId::NONE);
        let set = if failures.is_empty() {
            self.last_set.clone().unwrap_or_else(nominal_set)
        } else {
            PlausibleSet { failures, source: pset.source }
        };
        self.last_set = Some(set.clone());
        set
    }

    /// Runs one decision cycle; returns the terminal status once reached.
    pub fn step(&mut self) -> Result<Option<Status>> {
        if let Some(s) = self.log.status {
            return Ok(Some(s));
        }
        let dt = self.scenario.sim.dt;
        let t = self.cycle as f64 * dt;
        let catalog = &self.runtime.catalog;

        // attributes from the model of the controller that last acted
        let model = catalog.controller(self.model_of_last)?.model.kind;
        let alpha = self.window.residual(&self.pose, &model, dt).map(|r| attributes_of(r, self.model_of_last));
        let (detection, explanation, computed) = match &alpha {
            Some(a) => self.runtime.assess(a)?,
            None => (FailureId::NONE, String::new(), nominal_set()),
        };
        let eta = alpha.map(|a| deviation(a.dx, a.dy, a.dtheta, self.cfg.arbitration.w_theta));

        let mut intervention = None;
        if let Some(iv) = self.pending.take() {
            self.operator.update(&iv, &catalog.failure_ids())?;
            intervention = Some(iv.mode);
        }

        let pset = match self.mode {
            RunMode::Full => self.operator.apply(&computed, detection),
            RunMode::DtOnly => PlausibleSet::single(detection, PlausibleSource::Monitor),
            RunMode::NoRecovery | RunMode::Nominal => computed.clone(),
        };

        // debounce switching between nominal operation and recovery in
        // both directions
        let adaptive = matches!(self.mode, RunMode::Full | RunMode::DtOnly);
        if adaptive {
            let abnormal = pset.failures.iter().any(|f| !f.is_nominal());
            let operator_set = self.operator != OperatorOverride::None && abnormal;
            // a confidently reinforced corrective controller keeps recovery
            // engaged: under its own model the residuals look nominal
            let held = self.mode == RunMode::Full && self.pmf.confident(self.cfg.arbitration.gamma).is_some();
            self.streak = if abnormal != self.recovering && !(self.recovering && held) { self.streak + 1 } else { 0 };
            let was = self.recovering;
            if operator_set {
                self.recovering = true;
                self.streak = 0;
            } else if self.streak >= if self.recovering { self.cfg.release_cycles } else { self.cfg.latch_cycles } {
                self.recovering = !self.recovering;
                self.streak = 0;
                if !self.recovering {
                    self.last_set = None;
                }
            }
            if self.recovering && !was {
                self.engaged_at = self.cycle;
            }
        }

        // η only scores a controller once the residual window lies wholly
        // inside the recovery episode; a window straddling the failure onset
        // mixes pre- and post-failure dynamics and can flatter a wrong model
        let settled = self.cycle >= self.engaged_at + self.window.len();
        let mut reinforced = None;
        if self.mode == RunMode::Full && self.recovering && settled {
            if let Some(e) = eta {
                if self.pmf.ids().contains(&self.model_of_last) {
                    reinforced =
                        Some(reinforce(&mut self.pmf, &mut self.record, self.model_of_last, e, &self.cfg.arbitration)?);
                }
            }
        }

        let active = if adaptive && self.recovering { self.recovery_set(&pset) } else { nominal_set() };
        let shown = if adaptive { active.clone() } else { pset.clone() };

        let mut solutions: BTreeMap<ControllerId, Solution> = BTreeMap::new();
        let mut predictions: BTreeMap<ControllerId, Prediction> = BTreeMap::new();
        let mut report = SafetyReport::default();
        let (decision, rule) = match self.mode {
            RunMode::NoRecovery | RunMode::Nominal => {
                let c = ControllerId::NOMINAL;
                let sol = match self.solve_for(c, t)? {
                    Ok(s) => s,
                    Err(fallback) => fallback,
                };
                solutions.insert(c, sol);
                report.candidates.insert(c);
                report.safe.insert(c);
                (Decision::Deploy { controller: c, rule: Rule::Conservative }, None)
            }
            RunMode::DtOnly => {
                let c = active.failures.iter().next().copied().unwrap_or(FailureId::NONE).paired_controller();
                let sol = match self.solve_for(c, t)? {
                    Ok(s) => s,
                    Err(fallback) => fallback,
                };
                solutions.insert(c, sol);
                report.candidates.insert(c);
                report.safe.insert(c);
                (Decision::Deploy { controller: c, rule: Rule::Conservative }, None)
            }
            RunMode::Full => {
                let mut candidates: BTreeSet<ControllerId> =
                    active.failures.iter().map(|f| f.paired_controller()).collect();
                // a controller with established confidence stays in contention
                // while the monitor flickers, subject to the same safety check
                if self.recovering && self.operator == OperatorOverride::None {
                    candidates.extend(self.pmf.confident(self.cfg.arbitration.gamma));
                }
                for &c in &candidates {
                    if let Ok(sol) = self.solve_for(c, t)? {
                        predictions.insert(c, sol.prediction.clone());
                        solutions.insert(c, sol);
                    }
                }
                report = safe_controllers(
                    &active,
                    &predictions,
                    &self.runtime.sigma,
                    &self.scenario.free_space,
                    self.scenario.sim.robot_radius,
                );
                report.candidates = candidates;
                if !self.recovering {
                    let c = ControllerId::NOMINAL;
                    if report.safe.contains(&c) {
                        (Decision::Deploy { controller: c, rule: Rule::Conservative }, None)
                    } else {
                        (Decision::FailSafe, None)
                    }
                } else {
                    // explore: skip controllers whose last reinforcement failed
                    let fresh: BTreeSet<ControllerId> =
                        report.safe.iter().copied().filter(|c| !self.record.failed_last(*c)).collect();
                    let pool = if fresh.is_empty() { &report.safe } else { &fresh };
                    let conservative = conservative_select(pool, &active, &self.runtime.sigma).ok();
                    let d = select(&mut self.pmf, &report.safe, &self.record, conservative, &self.cfg.arbitration);
                    let rule = match d {
                        Decision::Deploy { rule, .. } => Some(rule),
                        Decision::FailSafe => None,
                    };
                    (d, rule)
                }
            }
        };

        let (deployed, input) = match decision {
            Decision::Deploy { controller, .. } => {
                let sol = &solutions[&controller];
                (Some(controller), self.scenario.sim.bounds.clamp(sol.prediction.first_input))
            }
            Decision::FailSafe => (None, ControlInput::ZERO),
        };

        let failure = self.scenario.failure_at(t);
        let record = CycleRecord {
            cycle: self.cycle,
            t,
            pose: self.pose,
            reference: self.scenario.reference.sample(t),
            alpha,
            detection,
            explanation,
            plausible: shown,
            candidates: report.candidates.clone(),
            safe: report.safe.clone(),
            deployed,
            rule,
            eta,
            reinforced,
            pmf: self.pmf.clone(),
            input,
            true_failure: failure.id,
            recovering: self.recovering,
            intervention,
        };

        let status = if let Some(deployed) = deployed {
            let next = step(&self.pose, input, &failure, &self.scenario.sim, &mut self.rng)?;
            let collided =
                !self.scenario.free_space.capsule_is_free(self.pose.position(), next.position(), self.scenario.sim.robot_radius);
            self.window.push(self.pose, input);
            for (c, sol) in &solutions {
                self.warm.insert(*c, sol.next_warm_start(input));
            }
            self.last_applied = input;
            self.model_of_last = deployed;
            self.pose = next;
            let t_next = t + dt;
            let goal = self.scenario.goal();
            let near_goal = ((next.x - goal[0]).powi(2) + (next.y - goal[1]).powi(2)).sqrt() <= self.cfg.goal_tolerance;
            let reference_done = t_next + self.cfg.goal_tolerance / self.scenario.reference.speed()
                >= self.scenario.reference.duration();
            if collided {
                Some(Status::Collision)
            } else if near_goal && reference_done {
                Some(Status::GoalReached)
            } else if t_next >= self.scenario.duration - 1e-9 {
                Some(Status::Timeout)
            } else {
                None
            }
        } else {
            Some(Status::FailSafe)
        };

        self.snapshot = Some(StateSnapshot {
            record: record.clone(),
            tubes: report.tubes,
            recent_eta: self.record.recent(),
            status,
            free_space: self.scenario.free_space.clone(),
        });
        self.log.records.push(record);
        self.log.final_pose = self.pose;
        self.log.status = status;
        self.cycle += 1;
        Ok(status)
    }

    /// Steps until a terminal status.
    pub fn run(mut self) -> Result<RunLog> {
        while self.step()?.is_none() {}
        Ok(self.log)
    }
}

pub fn run_scenario(runtime: Arc<Runtime>, scenario: &Scenario, mode: RunMode, cfg: RunConfig) -> Result<RunLog> {
    RunLoop::new(runtime, scenario.clone(), mode, cfg)?.run()
}

/// Scenario × mode grid, each run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    /// Fitted artifacts, relative to the plan file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifacts: Option<std::path::PathBuf>,
    pub runs: Vec<BatchEntry>,
    #[serde(default)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub scenario: ScenarioRef,
    pub mode: RunMode,
}

impl BatchPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: BatchPlan = serde_json::from_str(text).map_err(|e| Error::config(format!("batch plan: {e}")))?;
        if plan.runs.is_empty() {
            return Err(Error::config("batch plan has no runs"));
        }
        plan.config.arbitration.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub scenario: String,
    pub mode: RunMode,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Runs every entry on every seed in parallel; results come back in plan
/// order, seeds innermost.
pub fn run_batch(runtime: Arc<Runtime>, plan: &BatchPlan, seeds: &[u64]) -> Result<Vec<RunLog>> {
    let jobs: Vec<(Scenario, RunMode)> = plan
        .runs
        .iter()
        .map(|e| Ok((e.scenario.resolve()?, e.mode)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flat_map(|(s, m)| seeds.iter().map(move |&seed| (s.with_seed(seed), m)))
        .collect();
    jobs.par_iter().map(|(s, m)| run_scenario(runtime.clone(), s, *m, plan.config)).collect()
}

pub fn batch_rows(logs: &[RunLog]) -> Vec<BatchRow> {
    logs.iter()
        .map(|l| BatchRow { scenario: l.scenario.clone(), mode: l.mode, seed: l.seed, metrics: compute_metrics(l) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub status: Option<Status>,
    pub collision: bool,
    pub goal_distance: f64,
    pub tracking_rmse: f64,
    pub time_to_recovery: Option<f64>,
    pub controller_switches: usize,
}

pub fn compute_metrics(log: &RunLog) -> Metrics {
    let n = log.records.len();
    let rmse = if n == 0 {
        0.0
    } else {
        let s: f64 = log
            .records
            .iter()
            .map(|r| (r.pose.x - r.reference.x).powi(2) + (r.pose.y - r.reference.y).powi(2))
            .sum();
        (s / n as f64).sqrt()
    };
    let goal_distance = ((log.final_pose.x - log.goal[0]).powi(2) + (log.final_pose.y - log.goal[1]).powi(2)).sqrt();
    let switches = log
        .records
        .windows(2)
        .filter(|w| w[0].deployed.is_some() && w[1].deployed.is_some() && w[0].deployed != w[1].deployed)
        .count();
    let time_to_recovery = log.failure_at.and_then(|at| {
        let hold = ((log.recovery_hold / log.dt).round() as usize).max(1);
        let rs = &log.records;
        (0..rs.len()).filter(|&i| rs[i].t + 1e-9 >= at).find_map(|i| {
            let span = rs.get(i..i + hold)?;
            span.iter().all(|r| r.eta.is_some_and(|e| e < log.eta_star)).then(|| rs[i].t - at)
        })
    });
    Metrics {
        status: log.status,
        collision: log.status == Some(Status::Collision),
        goal_distance,
        tracking_rmse: rmse,
        time_to_recovery,
        controller_switches: switches,
    }
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join("|")
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trajectory, decision timeline and confidence tables, one row per cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotBundle {
    pub trajectory: String,
    pub timeline: String,
    pub confidence: String,
}

pub fn emit_plot_data(log: &RunLog) -> PlotBundle {
    let mut trajectory = String::from("t,x,y,theta,ref_x,ref_y,ref_theta\n");
    let mut timeline = String::from("t,detection,plausible_mask,deployed,rule,eta,true_failure\n");
    let ids: Vec<ControllerId> = log.records.first().map(|r| r.pmf.ids().to_vec()).unwrap_or_default();
    let mut confidence = format!("t,{}\n", join(ids.iter()).replace('|', ","));
    for r in &log.records {
        let _ = writeln!(
            trajectory,
            "{},{},{},{},{},{},{}",
            r.t, r.pose.x, r.pose.y, r.pose.theta, r.reference.x, r.reference.y, r.reference.theta
        );
        let rule = r.rule.map(|x| serde_json::to_value(x).unwrap().as_str().unwrap().to_string());
        let _ = writeln!(
            timeline,
            "{},{},{},{},{},{},{}",
            r.t,
            r.detection,
            r.plausible.bitmask(),
            opt(r.deployed),
            rule.unwrap_or_default(),
            opt(r.eta),
            r.true_failure
        );
        let probs: Vec<String> = ids.iter().map(|c| r.pmf.get(*c).to_string()).collect();
        let _ = writeln!(confidence, "{},{}", r.t, probs.join(","));
    }
    PlotBundle { trajectory, timeline, confidence }
}

impl PlotBundle {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("trajectory.csv"), &self.trajectory)?;
        std::fs::write(dir.join("timeline.csv"), &self.timeline)?;
        std::fs::write(dir.join("confidence.csv"), &self.confidence)?;
        Ok(())
    }
}

/// Per-cycle decision log: time, α, P, 𝓟, safe set, deployed controller, η
/// and the PMF.
pub fn decision_log_csv(log: &RunLog) -> String {
    let ids: Vec<ControllerId> = log.records.first().map(|r| r.pmf.ids().to_vec()).unwrap_or_default();
    let mut out = String::from("t,dx,dy,dtheta,alpha_controller,detection,plausible,safe,deployed,eta");
    for c in &ids {
        let _ = write!(out, ",pr_{c}");
    }
    out.push('\n');
    for r in &log.records {
        let (dx, dy, dth, ac) = match r.alpha {
            Some(a) => (a.dx.to_string(), a.dy.to_string(), a.dtheta.to_string(), a.controller.to_string()),
            None => Default::default(),
        };
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            dx,
            dy,
            dth,
            ac,
            r.detection,
            join(&r.plausible.failures),
            join(&r.safe),
            opt(r.deployed),
            opt(r.eta)
        );
        for c in &ids {
            let _ = write!(out, ",{}", r.pmf.get(*c));
        }
        out.push('\n');
    }
    out
}

/// Writes the log JSON, decision log and plot data under `dir`.
pub fn write_run_outputs(log: &RunLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.json"), serde_json::to_vec(log)?)?;
    std::fs::write(dir.join("decisions.csv"), decision_log_csv(log))?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&compute_metrics(log))?)?;
    emit_plot_data(log).write(dir)
}
