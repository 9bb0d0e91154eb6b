//! Offline stage: every controller × failure × scenario × seed closed-loop
//! run, harvesting labelled residual samples and the σ table, then fitting the
//! monitor tree and the perturbation table. Artifacts persist to a directory
//! guarded by a versioned manifest with per-file digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::Catalog;
use crate::controller::{reference_window, solve, ControllerSpec, WarmStart};
use crate::error::{Error, Result};
use crate::ids::{ControllerId, FailureId};
use crate::monitor::{compute_attributes, AttributeVector, DecisionTree, Sample, TreeParams};
use crate::reachability::{BoundMode, DeviationAccumulator, DeviationBoundTable};
use crate::scenario::{derive_seed, ResidualWindow, Scenario};
use crate::sim::{seeded_rng, step, ControlInput, FailureModel, Pose};
use crate::uncertainty::{Perturbation, PerturbationTable, PointSet};

pub const SCHEMA_VERSION: u32 = 1;

fn default_window() -> usize {
    30
}

fn default_tube_window() -> usize {
    5
}

/// A scenario named from the shipped set, or given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Named(String),
    Inline(Box<Scenario>),
}

impl ScenarioRef {
    pub fn resolve(&self) -> Result<Scenario> {
        match self {
            ScenarioRef::Named(n) => Scenario::shipped(n),
            ScenarioRef::Inline(s) => {
                s.validate()?;
                Ok((**s).clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub controllers: Vec<ControllerId>,
    pub failures: Vec<FailureId>,
    pub scenarios: Vec<ScenarioRef>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Residual window length in control steps.
    #[serde(default = "default_window")]
    pub residual_window: usize,
    /// Window of the residual behind the σ table (reachable-tube radii).
    #[serde(default = "default_tube_window")]
    pub tube_window: usize,
    #[serde(default)]
    pub bound_mode: BoundMode,
}

const SHIPPED_PLAN: &str = include_str!("../assets/training-plan.json");

impl TrainingPlan {
    /// Plan the shipped artifacts are fitted from: every failure/controller
    /// pair on two circles and the corridor, three seeds each.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_PLAN).expect("shipped plan is valid")
    }

    /// Same plan on different seeds, e.g. for a holdout set.
    pub fn with_seeds(&self, seeds: Vec<u64>) -> Self {
        TrainingPlan { seeds, ..self.clone() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: TrainingPlan = serde_json::from_str(text).map_err(|e| Error::config(format!("plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.controllers.is_empty() || self.failures.is_empty() || self.scenarios.is_empty() {
            return Err(Error::config("plan needs controllers, failures and scenarios"));
        }
        if self.seeds.is_empty() || self.steps == 0 || self.residual_window == 0 || self.tube_window == 0 {
            return Err(Error::config("plan needs at least one seed, step and window step"));
        }
        Ok(())
    }

    /// Stable digest of the plan's canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("plan serialises")))
    }
}

/// One closed-loop step of a fixed-controller episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub step: usize,
    pub pose: Pose,
    pub input: ControlInput,
    pub next: Pose,
    pub residual: Option<[f64; 3]>,
    pub tube_residual: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
    /// Set when the episode is unusable (solver infeasible, simulation
    /// fault); such runs are excluded from the dataset.
    pub flag: Option<String>,
    /// Set when the episode ended at a collision; the steps before it are kept.
    pub truncated: Option<String>,
}

/// Runs `spec` against `failure` (active from t = 0) on the scenario's
/// reference and obstacles for up to `steps` cycles.
pub fn run_episode(
    spec: &ControllerSpec,
    failure: &FailureModel,
    scenario: &Scenario,
    steps: usize,
    window_len: usize,
    tube_len: usize,
    seed: u64,
) -> Episode {
    let mut cfg = scenario.sim.clone();
    cfg.seed = seed;
    let mut rng = seeded_rng(seed);
    let mut pose = scenario.start_pose();
    let mut warm = WarmStart::cold(ControlInput::ZERO);
    let mut window = ResidualWindow::new(window_len);
    let mut tube = ResidualWindow::new(tube_len);
    let mut out = Vec::with_capacity(steps);
    let free = &scenario.free_space;
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let refs = reference_window(&scenario.reference, t, spec);
        let sol = match solve(spec, &pose, &refs, free, &warm) {
            Ok(s) => s,
            Err(_) => return Episode { steps: out, flag: Some(format!("infeasible at step {k}")), truncated: None },
        };
        let u = cfg.bounds.clamp(sol.prediction.first_input);
        let next = match step(&pose, u, failure, &cfg, &mut rng) {
            Ok(p) => p,
            Err(e) => return Episode { steps: out, flag: Some(e.to_string()), truncated: None },
        };
        window.push(pose, u);
        tube.push(pose, u);
        let residual = window.residual(&next, &spec.model.kind, cfg.dt);
        let tube_residual = tube.residual(&next, &spec.model.kind, cfg.dt);
        out.push(EpisodeStep { step: k, pose, input: u, next, residual, tube_residual });
        if !free.capsule_is_free(pose.position(), next.position(), cfg.robot_radius) {
            return Episode { steps: out, flag: None, truncated: Some(format!("collision at step {k}")) };
        }
        warm = sol.next_warm_start(u);
        pose = next;
    }
    Episode { steps: out, flag: None, truncated: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub controller_id: ControllerId,
    pub failure_id: FailureId,
    pub run_id: usize,
    pub step: usize,
}

impl DatasetRow {
    pub fn sample(&self) -> Sample {
        Sample {
            attributes: AttributeVector { dx: self.dx, dy: self.dy, dtheta: self.dtheta, controller: self.controller_id },
            label: self.failure_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: usize,
    pub controller: ControllerId,
    pub failure: FailureId,
    pub scenario: String,
    pub seed: u64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    pub sigma: DeviationBoundTable,
    pub runs: Vec<RunSummary>,
}

impl Dataset {
    pub fn samples(&self) -> Vec<Sample> {
        self.rows.iter().map(DatasetRow::sample).collect()
    }
}

/// Runs the whole plan. Runs are independent and execute in parallel; the
/// result is ordered by (controller, failure, scenario, seed).
pub fn generate_dataset(plan: &TrainingPlan, catalog: &Catalog) -> Result<Dataset> {
    plan.validate()?;
    let scenarios: Vec<Scenario> = plan.scenarios.iter().map(ScenarioRef::resolve).collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for &c in &plan.controllers {
        let spec = catalog.controller(c)?;
        for &f in &plan.failures {
            let failure = catalog.failure(f)?;
            for (si, s) in scenarios.iter().enumerate() {
                for &seed in &plan.seeds {
                    jobs.push((jobs.len(), spec, failure, si, s, seed));
                }
            }
        }
    }
    let episodes: Vec<(RunSummary, Episode)> = jobs
        .par_iter()
        .map(|&(run_id, spec, failure, si, s, seed)| {
            let run_seed = derive_seed(seed, &[spec.id.0 as u64, failure.id.0 as u64, si as u64]);
            let ep = run_episode(spec, failure, s, plan.steps, plan.residual_window, plan.tube_window, run_seed);
            let summary = RunSummary {
                run_id,
                controller: spec.id,
                failure: failure.id,
                scenario: s.name.clone(),
                seed,
                steps: ep.steps.len(),
                excluded: ep.flag.clone(),
                truncated: ep.truncated.clone(),
            };
            (summary, ep)
        })
        .collect();

    let mut rows = Vec::new();
    let mut acc = DeviationAccumulator::default();
    let mut runs = Vec::with_capacity(episodes.len());
    for (summary, ep) in episodes {
        if summary.excluded.is_none() {
            for st in &ep.steps {
                if let Some(r) = st.tube_residual {
                    acc.push(summary.controller, summary.failure, r);
                }
                let Some(r) = st.residual else { continue };
                rows.push(DatasetRow {
                    dx: r[0],
                    dy: r[1],
                    dtheta: r[2],
                    controller_id: summary.controller,
                    failure_id: summary.failure,
                    run_id: summary.run_id,
                    step: st.step,
                });
            }
        }
        runs.push(summary);
    }
    for &c in &plan.controllers {
        for &f in &plan.failures {
            if !rows.iter().any(|r| r.controller_id == c && r.failure_id == f) {
                return Err(Error::Training(format!("no usable runs for pair ({c}, {f})")));
            }
        }
    }
    Ok(Dataset { rows, sigma: acc.finish(plan.bound_mode), runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Dataset,
    Artifacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: ManifestKind,
    pub plan_hash: String,
    pub seeds: Vec<u64>,
    pub residual_window: usize,
    #[serde(default = "default_tube_window")]
    pub tube_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_params: Option<TreeParams>,
    /// File name → SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
}

/// What `train` produces.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub catalog: Catalog,
    pub dataset: Dataset,
}

impl DatasetBundle {
    pub fn build(plan: &TrainingPlan, catalog: &Catalog) -> Result<Self> {
        let dataset = generate_dataset(plan, catalog)?;
        Ok(DatasetBundle {
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                kind: ManifestKind::Dataset,
                plan_hash: plan.hash(),
                seeds: plan.seeds.clone(),
                residual_window: plan.residual_window,
                tube_window: plan.tube_window,
                n_s: None,
                tree_params: None,
                files: BTreeMap::new(),
            },
            catalog: catalog.clone(),
            dataset,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingArtifacts {
    pub manifest: Manifest,
    pub catalog: Catalog,
    pub dataset: Dataset,
    pub delta: PerturbationTable,
    pub tree: DecisionTree,
}

impl TrainingArtifacts {
    pub fn sigma(&self) -> &DeviationBoundTable {
        &self.dataset.sigma
    }
}

/// Fits the tree and the δ table onto a generated dataset.
pub fn fit_artifacts(bundle: &DatasetBundle, n_s: usize, params: TreeParams) -> Result<TrainingArtifacts> {
    let samples = bundle.dataset.samples();
    if samples.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let classes = bundle.catalog.failure_ids();
    let present: Vec<FailureId> = classes.iter().copied().filter(|f| samples.iter().any(|s| s.label == *f)).collect();
    let tree = DecisionTree::fit(&samples, Some(&present), params)?;
    let perturbation = Perturbation::from_samples(&samples, n_s)?;
    let mut manifest = bundle.manifest.clone();
    manifest.kind = ManifestKind::Artifacts;
    manifest.n_s = Some(n_s);
    manifest.tree_params = Some(params);
    manifest.files.clear();
    Ok(TrainingArtifacts {
        manifest,
        catalog: bundle.catalog.clone(),
        dataset: bundle.dataset.clone(),
        delta: perturbation.table().clone(),
        tree,
    })
}

const MANIFEST: &str = "manifest.json";
const CATALOG: &str = "catalog.json";
const DATASET: &str = "dataset.csv";
const SIGMA: &str = "sigma.csv";
const RUNS: &str = "runs.json";
const DELTA: &str = "delta.json";
const TREE: &str = "tree.json";

fn dataset_csv(rows: &[DatasetRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn write_all(dir: &Path, manifest: &Manifest, files: Vec<(&str, Vec<u8>)>) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = manifest.clone();
    manifest.files.clear();
    for (name, bytes) in files {
        manifest.files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        fs::write(dir.join(name), bytes)?;
    }
    // manifest last: a directory without one is incomplete
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_manifest(dir: &Path, kind: ManifestKind) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path)?;
    // check the version before trusting the rest of the layout
    let raw: serde_json::Value = serde_json::from_slice(&text)
        .map_err(|e| Error::Corrupt { path: path.display().to_string(), reason: e.to_string() })?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found, expected: SCHEMA_VERSION });
    }
    let m: Manifest = serde_json::from_value(raw)
        .map_err(|e| Error::Corrupt { path: path.display().to_string(), reason: e.to_string() })?;
    if m.kind != kind && !(kind == ManifestKind::Dataset && m.kind == ManifestKind::Artifacts) {
        return Err(Error::Corrupt { path: path.display().to_string(), reason: format!("expected {kind:?} manifest") });
    }
    Ok(m)
}

fn read_checked(dir: &Path, manifest: &Manifest, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let expected = manifest
        .files
        .get(name)
        .ok_or_else(|| Error::Corrupt { path: path.display().to_string(), reason: "not listed in manifest".into() })?;
    let bytes = fs::read(&path)?;
    if &hex::encode(Sha256::digest(&bytes)) != expected {
        return Err(Error::Corrupt { path: path.display().to_string(), reason: "digest mismatch (truncated or edited)".into() });
    }
    Ok(bytes)
}

fn corrupt(dir: &Path, name: &str, e: impl std::fmt::Display) -> Error {
    Error::Corrupt { path: dir.join(name).display().to_string(), reason: e.to_string() }
}

fn load_dataset_parts(dir: &Path, m: &Manifest) -> Result<(Catalog, Dataset)> {
    let catalog = Catalog::from_json(&String::from_utf8_lossy(&read_checked(dir, m, CATALOG)?))?;
    let rows = csv::Reader::from_reader(read_checked(dir, m, DATASET)?.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<DatasetRow>, _>>()
        .map_err(|e| corrupt(dir, DATASET, e))?;
    let sigma = DeviationBoundTable::read_csv(read_checked(dir, m, SIGMA)?.as_slice())?;
    let runs: Vec<RunSummary> = serde_json::from_slice(&read_checked(dir, m, RUNS)?).map_err(|e| corrupt(dir, RUNS, e))?;
    Ok((catalog, Dataset { rows, sigma, runs }))
}

fn dataset_files(catalog: &Catalog, d: &Dataset) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut sigma = Vec::new();
    d.sigma.write_csv(&mut sigma)?;
    Ok(vec![
        (CATALOG, serde_json::to_vec_pretty(catalog)?),
        (DATASET, dataset_csv(&d.rows)?),
        (SIGMA, sigma),
        (RUNS, serde_json::to_vec_pretty(&d.runs)?),
    ])
}

impl DatasetBundle {
    pub fn persist(&mut self, dir: &Path) -> Result<()> {
        self.manifest = write_all(dir, &self.manifest, dataset_files(&self.catalog, &self.dataset)?)?;
        Ok(())
    }

    /// Reads the dataset part of either a `train` or a `fit` directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir, ManifestKind::Dataset)?;
        let (catalog, dataset) = load_dataset_parts(dir, &manifest)?;
        Ok(DatasetBundle { manifest, catalog, dataset })
    }
}

impl TrainingArtifacts {
    pub fn persist(&mut self, dir: &Path) -> Result<()> {
        let mut files = dataset_files(&self.catalog, &self.dataset)?;
        files.push((DELTA, serde_json::to_vec(&self.delta)?));
        files.push((TREE, self.tree.to_json()?.into_bytes()));
        self.manifest = write_all(dir, &self.manifest, files)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir, ManifestKind::Artifacts)?;
        if manifest.kind != ManifestKind::Artifacts {
            return Err(corrupt(dir, MANIFEST, "dataset directory has no fitted artifacts"));
        }
        let (catalog, dataset) = load_dataset_parts(dir, &manifest)?;
        let delta: PerturbationTable =
            serde_json::from_slice(&read_checked(dir, &manifest, DELTA)?).map_err(|e| corrupt(dir, DELTA, e))?;
        let tree = DecisionTree::from_json(&String::from_utf8_lossy(&read_checked(dir, &manifest, TREE)?))?;
        if delta.deltas.len() != dataset.rows.len() {
            return Err(corrupt(dir, DELTA, "delta table does not match the dataset"));
        }
        Ok(TrainingArtifacts { manifest, catalog, dataset, delta, tree })
    }
}

/// Immutable runtime view of fitted artifacts.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub catalog: Catalog,
    pub tree: DecisionTree,
    pub perturbation: Perturbation,
    pub sigma: DeviationBoundTable,
    pub residual_window: usize,
    pub manifest: Manifest,
}

impl Runtime {
    pub fn new(a: &TrainingArtifacts) -> Result<Self> {
        let set = PointSet::from_samples(&a.dataset.samples());
        Ok(Runtime {
            catalog: a.catalog.clone(),
            tree: a.tree.clone(),
            perturbation: Perturbation::with_table(&set, a.delta.clone())?,
            sigma: a.dataset.sigma.clone(),
            residual_window: a.manifest.residual_window,
            manifest: a.manifest.clone(),
        })
    }

    /// Detection, explanation and plausible set for one attribute vector.
    pub fn assess(&self, alpha: &AttributeVector) -> Result<(FailureId, String, crate::uncertainty::PlausibleSet)> {
        let e = self.tree.explain(alpha);
        let a = self.perturbation.assess(alpha, e.label)?;
        Ok((e.label, e.to_string(), a.plausible))
    }
}

/// Holdout top-1 accuracy of the tree and the fraction of samples whose true
/// label lies in the plausible set.
pub fn monitor_quality(runtime: &Runtime, holdout: &[Sample]) -> Result<(f64, f64)> {
    if holdout.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut hits = 0usize;
    let mut covered = 0usize;
    for s in holdout {
        let (p, _, set) = runtime.assess(&s.attributes)?;
        hits += (p == s.label) as usize;
        covered += set.contains(s.label) as usize;
    }
    let n = holdout.len() as f64;
    Ok((hits as f64 / n, covered as f64 / n))
}

/// Attribute vector from a raw residual.
pub fn attributes_of(residual: [f64; 3], controller: ControllerId) -> AttributeVector {
    let observed = Pose { x: residual[0], y: residual[1], theta: residual[2] };
    compute_attributes(&Pose { x: 0.0, y: 0.0, theta: 0.0 }, &observed, controller)
}
