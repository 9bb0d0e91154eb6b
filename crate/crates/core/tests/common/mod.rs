#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use recovery_core::catalog::Catalog;
use recovery_core::monitor::TreeParams;
use recovery_core::training::{fit_artifacts, DatasetBundle, Runtime, ScenarioRef, TrainingArtifacts, TrainingPlan};

/// A few seconds of data: every pair on the slow circle, one seed.
pub fn small_plan() -> TrainingPlan {
    TrainingPlan {
        scenarios: vec![ScenarioRef::Named("training-circle-slow".into())],
        seeds: vec![1],
        steps: 80,
        residual_window: 10,
        ..TrainingPlan::shipped()
    }
}

pub fn small_bundle() -> &'static DatasetBundle {
    static B: OnceLock<DatasetBundle> = OnceLock::new();
    B.get_or_init(|| DatasetBundle::build(&small_plan(), &Catalog::builtin()).expect("small dataset"))
}

pub fn small_artifacts() -> &'static TrainingArtifacts {
    static A: OnceLock<TrainingArtifacts> = OnceLock::new();
    A.get_or_init(|| fit_artifacts(small_bundle(), 5, TreeParams::default()).expect("small fit"))
}

pub fn small_runtime() -> Arc<Runtime> {
    Arc::new(Runtime::new(small_artifacts()).unwrap())
}

fn cache_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

/// Shipped-plan dataset on `seeds`, cached on disk between test runs and
/// rebuilt whenever the plan changes.
pub fn cached_bundle(name: &str, plan: &TrainingPlan) -> DatasetBundle {
    let dir = cache_dir(name);
    if let Ok(b) = DatasetBundle::load(&dir) {
        if b.manifest.plan_hash == plan.hash() {
            return b;
        }
    }
    let mut b = DatasetBundle::build(plan, &Catalog::builtin()).expect("dataset");
    let _ = std::fs::remove_dir_all(&dir);
    b.persist(&dir).expect("cache dataset");
    b
}

/// Artifacts fitted from the shipped plan with N_s = 10.
pub fn shipped_artifacts() -> TrainingArtifacts {
    let bundle = cached_bundle("shipped-dataset", &TrainingPlan::shipped());
    fit_artifacts(&bundle, 10, TreeParams::default()).expect("fit shipped artifacts")
}
