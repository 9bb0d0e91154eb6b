//! Operator endpoints for a live run.
//!
//! A driver thread owns the [`RunLoop`] and is its only writer. Handlers never
//! touch it: they read the latest published [`Envelope`] and write to a small
//! queue (one pending intervention, newest wins, plus lifecycle commands).
//!
//! ```text
//! GET  /state           latest envelope (404 when no run is loaded)
//! GET  /events          server-sent events, one `state` event per cycle
//! POST /intervention    {"mode": "restrict"|"add"|"clear", "failures": ["f3"]}
//! POST /control         {"verb": "start"|"pause"|"resume"|"reset"|"load-scenario", "payload": ...}
//! GET  /artifacts/meta  tree depth, failure catalogue, sigma table
//! ```

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use recovery_core::catalog::Catalog;
use recovery_core::harness::{write_run_outputs, RunConfig, RunLoop, RunMode, StateSnapshot};
use recovery_core::ids::{ControllerId, FailureId};
use recovery_core::training::{Runtime, ScenarioRef};
use recovery_core::uncertainty::OperatorIntervention;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    BadRequest(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, kind) = match &self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad-request"),
        };
        (code, Json(ErrorBody { error: kind, message: self.to_string() })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lifecycle {
    /// Nothing loaded.
    Empty,
    Loaded,
    Running,
    Paused,
    /// Terminal status reached; the run can be replaced by a new load.
    Finished,
    /// The loop stopped on an internal error.
    Faulted,
}

/// What `/state` returns and `/events` pushes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lifecycle: Lifecycle,
    pub scenario: String,
    pub mode: RunMode,
    pub seed: u64,
    /// Index of the next cycle to run.
    pub next_cycle: usize,
    /// Latest completed cycle, absent before the first one.
    pub snapshot: Option<StateSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionAck {
    /// Cycle whose record will carry the intervention.
    pub applied_at_cycle: usize,
    /// True if this replaced an intervention that had not been applied yet.
    pub replaced_pending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRequest {
    pub scenario: ScenarioRef,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_mode() -> RunMode {
    RunMode::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verb", content = "payload", rename_all = "kebab-case")]
pub enum ControlCommand {
    Start,
    Pause,
    Resume,
    Reset,
    LoadScenario(LoadRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAck {
    pub lifecycle: Lifecycle,
    pub next_cycle: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaEntry {
    pub controller: ControllerId,
    pub failure: FailureId,
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactsMeta {
    pub tree_depth: usize,
    pub n_s: Option<usize>,
    pub residual_window: usize,
    pub tube_window: usize,
    pub plan_hash: String,
    pub catalog: Catalog,
    pub sigma: Vec<SigmaEntry>,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Wall-clock time per decision cycle; `None` runs as fast as possible.
    pub cycle_period: Option<Duration>,
    pub run: RunConfig,
    /// Finished runs are written here, one directory per load.
    pub log_dir: Option<PathBuf>,
}

impl ServiceConfig {
    /// Paced at the scenario's dt, as the console expects.
    pub fn realtime(dt: f64) -> Self {
        ServiceConfig { cycle_period: Some(Duration::from_secs_f64(dt)), run: RunConfig::default(), log_dir: None }
    }
}

enum Command {
    Load(Box<RunLoop>),
    Drop,
    Shutdown,
}

struct Queue {
    lifecycle: Lifecycle,
    /// Bumped on every load/reset so a stale step cannot publish.
    generation: u64,
    next_cycle: usize,
    pending: Option<OperatorIntervention>,
    commands: VecDeque<Command>,
    current: Option<Arc<Envelope>>,
    loads: usize,
}

struct Shared {
    runtime: Arc<Runtime>,
    cfg: ServiceConfig,
    queue: Mutex<Queue>,
    wake: Condvar,
    latest: watch::Sender<Option<Arc<Envelope>>>,
    events: broadcast::Sender<Arc<Envelope>>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Queue> {
        self.queue.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Publishes under the queue lock so ordering matches the lifecycle.
    fn publish(&self, q: &mut Queue, env: Option<Envelope>) {
        let env = env.map(Arc::new);
        q.current = env.clone();
        if let Some(e) = &env {
            let _ = self.events.send(e.clone());
        }
        self.latest.send_replace(env);
    }

    fn relabel(&self, q: &mut Queue, lifecycle: Lifecycle) {
        q.lifecycle = lifecycle;
        if let Some(cur) = q.current.as_deref() {
            let env = Envelope { lifecycle, next_cycle: q.next_cycle, ..cur.clone() };
            self.publish(q, Some(env));
        }
    }
}

/// The service: shared state plus the driver thread.
pub struct OperatorService {
    shared: Arc<Shared>,
    driver: Option<JoinHandle<()>>,
}

impl OperatorService {
    pub fn new(runtime: Arc<Runtime>, cfg: ServiceConfig) -> Self {
        let (latest, _) = watch::channel(None);
        let (events, _) = broadcast::channel(256);
        let shared = Arc::new(Shared {
            runtime,
            cfg,
            queue: Mutex::new(Queue {
                lifecycle: Lifecycle::Empty,
                generation: 0,
                next_cycle: 0,
                pending: None,
                commands: VecDeque::new(),
                current: None,
                loads: 0,
            }),
            wake: Condvar::new(),
            latest,
            events,
        });
        let s = shared.clone();
        let driver = std::thread::Builder::new()
            .name("run-loop".into())
            .spawn(move || drive(s))
            .expect("spawn run-loop thread");
        OperatorService { shared, driver: Some(driver) }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/state", get(get_state))
            .route("/events", get(get_events))
            .route("/intervention", post(post_intervention))
            .route("/control", post(post_control))
            .route("/artifacts/meta", get(get_meta))
            .with_state(self.shared.clone())
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.shared.lock().lifecycle
    }

    /// Applies a control command directly, as `POST /control` would.
    pub fn control(&self, cmd: ControlCommand) -> Result<ControlAck, ApiError> {
        control(&self.shared, cmd)
    }

    /// Latest published state, if a run is loaded.
    pub fn latest(&self) -> Option<Arc<Envelope>> {
        self.shared.latest.borrow().clone()
    }

    /// Resolves once the lifecycle satisfies `pred`.
    pub async fn wait_for(&self, pred: impl Fn(Lifecycle) -> bool) -> Lifecycle {
        let mut rx = self.shared.latest.subscribe();
        loop {
            let lc = self.lifecycle();
            if pred(lc) {
                return lc;
            }
            if rx.changed().await.is_err() {
                return self.lifecycle();
            }
        }
    }

    /// Serves until the listener fails or `shutdown` resolves.
    pub async fn serve(
        &self,
        listener: tokio::net::TcpListener,
        shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        axum::serve(listener, self.router()).with_graceful_shutdown(shutdown).await
    }

    pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
        tokio::net::TcpListener::bind(addr).await
    }
}

impl Drop for OperatorService {
    fn drop(&mut self) {
        {
            let mut q = self.shared.lock();
            q.commands.push_back(Command::Shutdown);
        }
        self.shared.wake.notify_all();
        if let Some(h) = self.driver.take() {
            let _ = h.join();
        }
    }
}

fn envelope(run: &RunLoop, lifecycle: Lifecycle, error: Option<String>) -> Envelope {
    let log = run.log();
    Envelope {
        lifecycle,
        scenario: log.scenario.clone(),
        mode: log.mode,
        seed: log.seed,
        next_cycle: run.cycle_index(),
        snapshot: run.snapshot().cloned(),
        error,
    }
}

fn drive(shared: Arc<Shared>) {
    let mut run: Option<Box<RunLoop>> = None;
    let mut q = shared.lock();
    loop {
        while let Some(cmd) = q.commands.pop_front() {
            match cmd {
                Command::Load(r) => run = Some(r),
                Command::Drop => run = None,
                Command::Shutdown => return,
            }
        }
        let Some(r) = run.as_mut().filter(|_| q.lifecycle == Lifecycle::Running) else {
            q = shared.wake.wait(q).unwrap_or_else(|p| p.into_inner());
            continue;
        };
        let started = Instant::now();
        let generation = q.generation;
        let iv = q.pending.take();
        q.next_cycle = r.cycle_index() + 1;
        drop(q);

        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| match iv {
            Some(iv) => r.submit_intervention(iv).and_then(|_| r.step()),
            None => r.step(),
        }))
        .unwrap_or_else(|_| Err(recovery_core::Error::SimulationFault("run loop panicked".into())));

        q = shared.lock();
        if q.generation != generation {
            continue;
        }
        let (lifecycle, error) = match &outcome {
            Ok(Some(_)) => (Lifecycle::Finished, None),
            Ok(None) => (q.lifecycle, None),
            Err(e) => (Lifecycle::Faulted, Some(e.to_string())),
        };
        q.lifecycle = lifecycle;
        q.next_cycle = r.cycle_index();
        let env = envelope(r, lifecycle, error);
        shared.publish(&mut q, Some(env));
        if lifecycle == Lifecycle::Finished {
            if let Some(dir) = &shared.cfg.log_dir {
                let dir = dir.join(format!("{:03}-{}-{}", q.loads, r.log().scenario, r.log().seed));
                if let Err(e) = write_run_outputs(r.log(), &dir) {
                    tracing::warn!("writing run outputs to {}: {e}", dir.display());
                }
            }
            continue;
        }
        if let Some(period) = shared.cfg.cycle_period {
            // a pause/reset wakes this early; the loop condition rechecks
            let deadline = started + period;
            while q.commands.is_empty() && q.lifecycle == Lifecycle::Running {
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                q = shared.wake.wait_timeout(q, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
            }
        }
    }
}

fn control(shared: &Shared, cmd: ControlCommand) -> Result<ControlAck, ApiError> {
    use Lifecycle::*;
    let mut q = shared.lock();
    let from = q.lifecycle;
    let conflict = |verb: &str| Err(ApiError::Conflict(format!("{verb} is not valid while {}", lifecycle_name(from))));
    match cmd {
        ControlCommand::LoadScenario(req) => {
            if matches!(from, Running | Paused) {
                return conflict("load-scenario");
            }
            let scenario = req.scenario.resolve().map_err(|e| ApiError::Validation(e.to_string()))?;
            let scenario = match req.seed {
                Some(seed) => scenario.with_seed(seed),
                None => scenario,
            };
            let run = RunLoop::new(shared.runtime.clone(), scenario, req.mode, shared.cfg.run)
                .map_err(|e| ApiError::Validation(e.to_string()))?;
            q.generation += 1;
            q.loads += 1;
            q.lifecycle = Loaded;
            q.next_cycle = 0;
            q.pending = None;
            let env = envelope(&run, Loaded, None);
            q.commands.push_back(Command::Load(Box::new(run)));
            shared.publish(&mut q, Some(env));
        }
        ControlCommand::Start => {
            if from != Loaded {
                return conflict("start");
            }
            shared.relabel(&mut q, Running);
        }
        ControlCommand::Pause => {
            if from != Running {
                return conflict("pause");
            }
            shared.relabel(&mut q, Paused);
        }
        ControlCommand::Resume => {
            if from != Paused {
                return conflict("resume");
            }
            shared.relabel(&mut q, Running);
        }
        ControlCommand::Reset => {
            if from == Empty {
                return conflict("reset");
            }
            q.generation += 1;
            q.lifecycle = Empty;
            q.next_cycle = 0;
            q.pending = None;
            q.commands.push_back(Command::Drop);
            // tell stream clients the run is gone, then clear /state
            let _ = shared.events.send(Arc::new(Envelope {
                lifecycle: Empty,
                scenario: String::new(),
                mode: RunMode::Full,
                seed: 0,
                next_cycle: 0,
                snapshot: None,
                error: None,
            }));
            shared.publish(&mut q, None);
        }
    }
    let ack = ControlAck { lifecycle: q.lifecycle, next_cycle: q.next_cycle };
    drop(q);
    shared.wake.notify_all();
    Ok(ack)
}

fn lifecycle_name(l: Lifecycle) -> String {
    serde_json::to_value(l).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

async fn get_state(State(shared): State<Arc<Shared>>) -> Result<Json<Envelope>, ApiError> {
    let cur = shared.latest.borrow().clone();
    match cur {
        Some(env) => Ok(Json((*env).clone())),
        None => Err(ApiError::NotFound("no run loaded".into())),
    }
}

async fn get_events(State(shared): State<Arc<Shared>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    // subscribe before reading the current state so nothing falls between
    let rx = shared.events.subscribe();
    let first = shared.latest.borrow().clone();
    let head = stream::iter(first);
    let tail = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(env) => return Some((env, rx)),
                // a slow client skips ahead; the next event is current
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let events = head.chain(tail).map(|env| {
        let mut ev = Event::default().event("state");
        if let Some(s) = &env.snapshot {
            ev = ev.id(s.record.cycle.to_string());
        }
        Ok(ev.json_data(&*env).unwrap_or_else(|_| Event::default().event("error")))
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn post_intervention(
    State(shared): State<Arc<Shared>>,
    body: Result<Json<OperatorIntervention>, JsonRejection>,
) -> Result<Json<InterventionAck>, ApiError> {
    let Json(iv) = body?;
    iv.validate(&shared.runtime.catalog.failure_ids()).map_err(|e| ApiError::Validation(e.to_string()))?;
    let mut q = shared.lock();
    if !matches!(q.lifecycle, Lifecycle::Running | Lifecycle::Paused | Lifecycle::Loaded) {
        return Err(ApiError::Conflict(format!("no active run ({})", lifecycle_name(q.lifecycle))));
    }
    let replaced_pending = q.pending.replace(iv).is_some();
    Ok(Json(InterventionAck { applied_at_cycle: q.next_cycle, replaced_pending }))
}

async fn post_control(
    State(shared): State<Arc<Shared>>,
    body: Result<Json<ControlCommand>, JsonRejection>,
) -> Result<Json<ControlAck>, ApiError> {
    let Json(cmd) = body?;
    control(&shared, cmd).map(Json)
}

async fn get_meta(State(shared): State<Arc<Shared>>) -> Json<ArtifactsMeta> {
    let rt = &shared.runtime;
    Json(ArtifactsMeta {
        tree_depth: rt.tree.depth(),
        n_s: rt.manifest.n_s,
        residual_window: rt.manifest.residual_window,
        tube_window: rt.manifest.tube_window,
        plan_hash: rt.manifest.plan_hash.clone(),
        catalog: rt.catalog.clone(),
        sigma: rt
            .sigma
            .iter()
            .map(|(controller, failure, b)| SigmaEntry { controller, failure, dx: b.dx, dy: b.dy, dtheta: b.dtheta, r: b.r })
            .collect(),
    })
}
