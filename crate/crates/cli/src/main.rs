use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use recovery_core::catalog::Catalog;
use recovery_core::harness::{batch_rows, run_batch, run_scenario, write_run_outputs, BatchPlan, RunConfig, RunMode, Status};
use recovery_core::monitor::TreeParams;
use recovery_core::scenario::Scenario;
use recovery_core::training::{fit_artifacts, DatasetBundle, Runtime, ScenarioRef, TrainingArtifacts, TrainingPlan};
use recovery_service::{ControlCommand, Lifecycle, LoadRequest, OperatorService, ServiceConfig};

#[derive(Parser)]
#[command(name = "recovery", version, about = "Failure detection and safe controller recovery for a simulated ground robot")]
struct Cli {
    /// Seed: the scenario seed for `run`, the first seed for `batch`, the
    /// only training seed for `train`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where run logs, decision logs and plot data go.
    #[arg(long, global = true, default_value = "runs")]
    log_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate every controller/failure pair and write the dataset.
    Train {
        /// Training plan JSON; `shipped` for the built-in plan.
        #[arg(long)]
        plan: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the decision tree and perturbation table to a dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Neighbourhood size N_s.
        #[arg(long, default_value_t = 10)]
        ns: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TreeParams::default().max_depth)]
        max_depth: usize,
        #[arg(long, default_value_t = TreeParams::default().min_leaf)]
        min_leaf: usize,
    },
    /// Run one scenario, or serve it to the operator console.
    Run {
        /// Scenario JSON file, or the name of a shipped scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        artifacts: PathBuf,
        #[arg(long, default_value = "full")]
        mode: RunMode,
        /// Serve the operator endpoints on this port instead of running headless.
        #[arg(long)]
        serve: Option<u16>,
        /// With --serve: step as fast as possible instead of at dt.
        #[arg(long)]
        fast: bool,
        /// With --serve: start the run without waiting for the console.
        #[arg(long)]
        autostart: bool,
    },
    /// Run a scenario × mode grid over several seeds.
    Batch {
        /// Batch plan JSON: {"artifacts": dir, "runs": [{"scenario", "mode"}], "config"?}.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Overrides the plan's artifacts directory.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Ok(true) only when every run reached its goal; train/fit succeed on Ok.
fn dispatch(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Train { plan, out } => {
            let mut plan = if plan == "shipped" {
                TrainingPlan::shipped()
            } else {
                TrainingPlan::from_json(&read(Path::new(&plan))?)?
            };
            if let Some(s) = cli.seed {
                plan = plan.with_seeds(vec![s]);
            }
            let mut bundle = DatasetBundle::build(&plan, &Catalog::builtin())?;
            bundle.persist(&out)?;
            let d = &bundle.dataset;
            println!(
                "{} samples from {} runs ({} excluded) -> {}",
                d.rows.len(),
                d.runs.len(),
                d.runs.iter().filter(|r| r.excluded.is_some()).count(),
                out.display()
            );
            Ok(true)
        }
        Cmd::Fit { data, ns, out, max_depth, min_leaf } => {
            let bundle = DatasetBundle::load(&data)?;
            let mut art = fit_artifacts(&bundle, ns, TreeParams { max_depth, min_leaf })?;
            art.persist(&out)?;
            println!(
                "tree depth {}, training error {:.4} -> {}",
                art.tree.depth(),
                art.tree.error_rate(&art.dataset.samples()),
                out.display()
            );
            Ok(true)
        }
        Cmd::Run { scenario, artifacts, mode, serve, fast, autostart } => {
            let runtime = load_runtime(&artifacts)?;
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = cli.seed {
                s = s.with_seed(seed);
            }
            match serve {
                None => {
                    let log = run_scenario(runtime, &s, mode, RunConfig::default())?;
                    let dir = cli.log_dir.join(format!("{}-{}-{}", log.scenario, mode_name(mode), log.seed));
                    write_run_outputs(&log, &dir)?;
                    let m = recovery_core::harness::compute_metrics(&log);
                    println!("{}", serde_json::to_string_pretty(&m)?);
                    eprintln!("outputs in {}", dir.display());
                    Ok(log.status == Some(Status::GoalReached))
                }
                Some(port) => serve_run(runtime, s, mode, port, fast, autostart, cli.log_dir),
            }
        }
        Cmd::Batch { plan, seeds, artifacts } => {
            let text = read(&plan)?;
            let batch = BatchPlan::from_json(&text)?;
            let dir = match (artifacts, &batch.artifacts) {
                (Some(d), _) => d,
                (None, Some(d)) => plan.parent().unwrap_or(Path::new(".")).join(d),
                (None, None) => bail!("batch plan names no artifacts directory; pass --artifacts"),
            };
            let runtime = load_runtime(&dir)?;
            let first = cli.seed.unwrap_or(0);
            let seeds: Vec<u64> = (first..first + seeds).collect();
            let logs = run_batch(runtime, &batch, &seeds)?;
            for log in &logs {
                write_run_outputs(log, &cli.log_dir.join(format!("{}-{}-{}", log.scenario, mode_name(log.mode), log.seed)))?;
            }
            let rows = batch_rows(&logs);
            std::fs::create_dir_all(&cli.log_dir)?;
            std::fs::write(cli.log_dir.join("batch.json"), serde_json::to_vec_pretty(&rows)?)?;
            print!("{}", summary(&rows));
            Ok(rows.iter().all(|r| r.metrics.status == Some(Status::GoalReached)))
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_runtime(dir: &Path) -> Result<Arc<Runtime>> {
    let art = TrainingArtifacts::load(dir).with_context(|| format!("loading artifacts from {}", dir.display()))?;
    Ok(Arc::new(Runtime::new(&art)?))
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(Scenario::from_json(&read(path)?)?);
    }
    Scenario::shipped(arg).with_context(|| format!("{arg} is neither a file nor a shipped scenario"))
}

fn mode_name(m: RunMode) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// Per scenario/mode: runs, goal reached, collisions, mean tracking RMSE.
fn summary(rows: &[recovery_core::harness::BatchRow]) -> String {
    let mut out = String::from("scenario\tmode\truns\tgoal\tcollision\trmse\n");
    let mut keys: Vec<(String, RunMode)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(s, m)| *s == r.scenario && *m == r.mode) {
            keys.push((r.scenario.clone(), r.mode));
        }
    }
    for (s, m) in keys {
        let g: Vec<_> = rows.iter().filter(|r| r.scenario == s && r.mode == m).collect();
        let goal = g.iter().filter(|r| r.metrics.status == Some(Status::GoalReached)).count();
        let hit = g.iter().filter(|r| r.metrics.collision).count();
        let rmse = g.iter().map(|r| r.metrics.tracking_rmse).sum::<f64>() / g.len() as f64;
        let _ = writeln!(out, "{s}\t{}\t{}\t{goal}\t{hit}\t{rmse:.3}", mode_name(m), g.len());
    }
    out
}

fn serve_run(
    runtime: Arc<Runtime>,
    scenario: Scenario,
    mode: RunMode,
    port: u16,
    fast: bool,
    autostart: bool,
    log_dir: PathBuf,
) -> Result<bool> {
    let mut cfg = if fast { ServiceConfig::default() } else { ServiceConfig::realtime(scenario.sim.dt) };
    cfg.log_dir = Some(log_dir);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let service = Arc::new(OperatorService::new(runtime, cfg));
        service.control(ControlCommand::LoadScenario(LoadRequest {
            scenario: ScenarioRef::Inline(Box::new(scenario)),
            mode,
            seed: None,
        }))?;
        if autostart {
            service.control(ControlCommand::Start)?;
        }
        let listener = OperatorService::bind(SocketAddr::from(([127, 0, 0, 1], port))).await?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = {
            let s = service.clone();
            tokio::spawn(async move {
                s.serve(listener, async {
                    let _ = stop_rx.await;
                })
                .await
            })
        };
        tokio::select! {
            _ = service.wait_for(|l| matches!(l, Lifecycle::Finished | Lifecycle::Faulted)) => {
                // let connected consoles pick up the final state
                tokio::time::sleep(Duration::from_secs(2)).await;
            }
            _ = tokio::signal::ctrl_c() => {}
        }
        let _ = stop_tx.send(());
        server.await??;
        let status = service.latest().and_then(|e| e.snapshot.as_ref().and_then(|s| s.status));
        eprintln!("final status: {status:?}");
        Ok(status == Some(Status::GoalReached))
    })
}
