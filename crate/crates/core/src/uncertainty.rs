//! Perturbation-based uncertainty: per-sample neighbourhood radii δ, runtime
//! lookup δ*, the perturbed set within δ* of a query, and the plausible
//! failure set an operator may restrict or extend.
//!
//! Points carry a group id; neighbours are only ever searched within the
//! query's group (for attribute vectors the group is the controller).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::FailureId;
use crate::knn::{dist2, KdTree};
use crate::monitor::{AttributeVector, Sample};

/// Per-feature affine map applied before any distance is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// z-scores; a constant feature keeps unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..dim).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|k| {
                let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Labelled, grouped points in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub rows: Vec<Vec<f64>>,
    pub groups: Vec<u32>,
    pub labels: Vec<FailureId>,
}

impl PointSet {
    pub fn from_samples(samples: &[Sample]) -> Self {
        PointSet {
            rows: samples.iter().map(|s| s.attributes.continuous().to_vec()).collect(),
            groups: samples.iter().map(|s| s.attributes.controller.0 as u32).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// δ for every training sample plus the metric it was measured in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTable {
    pub n_s: usize,
    pub standardizer: Standardizer,
    pub deltas: Vec<f64>,
}

/// Runtime view: the table plus per-group search trees over standardized
/// points.
#[derive(Debug, Clone)]
pub struct Perturbation {
    table: PerturbationTable,
    points: Vec<Vec<f64>>,
    groups: Vec<u32>,
    labels: Vec<FailureId>,
    trees: BTreeMap<u32, KdTree>,
}

fn build_trees(points: &[Vec<f64>], groups: &[u32]) -> BTreeMap<u32, KdTree> {
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(*g).or_default().push(i);
    }
    members
        .into_iter()
        .map(|(g, ids)| {
            let dim = points[ids[0]].len();
            let flat: Vec<f64> = ids.iter().flat_map(|&i| points[i].iter().copied()).collect();
            (g, KdTree::build(dim, &flat, &ids))
        })
        .collect()
}

impl Perturbation {
    /// Computes δ_i = distance to the N_s-th nearest same-group neighbour,
    /// excluding sample i itself.
    pub fn fit(set: &PointSet, standardizer: Standardizer, n_s: usize) -> Result<Self> {
        if n_s == 0 {
            return Err(Error::config("N_s must be positive"));
        }
        if set.is_empty() {
            return Err(Error::config("no samples for the perturbation table"));
        }
        let points: Vec<Vec<f64>> = set.rows.iter().map(|r| standardizer.apply(r)).collect();
        let trees = build_trees(&points, &set.groups);
        if let Some((g, t)) = trees.iter().find(|(_, t)| t.len() <= n_s) {
            return Err(Error::config(format!(
                "N_s = {n_s} but group {g} has only {} samples",
                t.len()
            )));
        }
        let deltas = points
            .iter()
            .enumerate()
            .map(|(i, p)| trees[&set.groups[i]].kth_dist2(p, n_s, Some(i)).expect("group size checked").sqrt())
            .collect();
        Ok(Perturbation {
            table: PerturbationTable { n_s, standardizer, deltas },
            points,
            groups: set.groups.clone(),
            labels: set.labels.clone(),
            trees,
        })
    }

    /// Attribute samples under z-scored (dx, dy, dθ), grouped by controller.
    pub fn from_samples(samples: &[Sample], n_s: usize) -> Result<Self> {
        let set = PointSet::from_samples(samples);
        let standardizer = Standardizer::fit(&set.rows);
        Self::fit(&set, standardizer, n_s)
    }

    /// Reattaches a persisted table to its samples.
    pub fn with_table(set: &PointSet, table: PerturbationTable) -> Result<Self> {
        if table.deltas.len() != set.len() {
            return Err(Error::Validation(format!(
                "table has {} deltas for {} samples",
                table.deltas.len(),
                set.len()
            )));
        }
        if table.deltas.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Validation("negative or NaN delta".into()));
        }
        let points: Vec<Vec<f64>> = set.rows.iter().map(|r| table.standardizer.apply(r)).collect();
        let trees = build_trees(&points, &set.groups);
        Ok(Perturbation { table, points, groups: set.groups.clone(), labels: set.labels.clone(), trees })
    }

    pub fn table(&self) -> &PerturbationTable {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self, i: usize) -> FailureId {
        self.labels[i]
    }

    pub fn group(&self, i: usize) -> u32 {
        self.groups[i]
    }

    /// Standardized coordinates of sample i.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        self.table.standardizer.apply(row)
    }

    /// Index of the nearest same-group sample and its δ (Eq. 6).
    pub fn lookup_delta_row(&self, row: &[f64], group: u32) -> Result<(usize, f64)> {
        let q = self.standardize(row);
        let tree = self
            .trees
            .get(&group)
            .ok_or_else(|| Error::config(format!("no training samples in group {group}")))?;
        let (i, _) = tree.nearest(&q).ok_or_else(|| Error::config("empty perturbation table"))?;
        Ok((i, self.table.deltas[i]))
    }

    /// Indices of same-group samples within `delta` of the query (Eq. 7).
    pub fn perturbed_set_row(&self, row: &[f64], group: u32, delta: f64) -> Vec<usize> {
        let q = self.standardize(row);
        match self.trees.get(&group) {
            // widen the squared radius against rounding, then test exactly
            Some(t) => t
                .within(&q, delta * delta * (1.0 + 1e-9) + f64::MIN_POSITIVE)
                .into_iter()
                .filter(|&i| dist2(&q, &self.points[i]).sqrt() <= delta)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn lookup_delta(&self, alpha: &AttributeVector) -> Result<(usize, f64)> {
        self.lookup_delta_row(&alpha.continuous(), alpha.controller.0 as u32)
    }

    pub fn perturbed_set(&self, alpha: &AttributeVector, delta: f64) -> Vec<usize> {
        self.perturbed_set_row(&alpha.continuous(), alpha.controller.0 as u32, delta)
    }

    /// δ* lookup, perturbed set and label union in one go.
    pub fn assess(&self, alpha: &AttributeVector, detection: FailureId) -> Result<Assessment> {
        let (nearest, delta) = self.lookup_delta(alpha)?;
        let members = self.perturbed_set(alpha, delta);
        let labels: Vec<FailureId> = members.iter().map(|&i| self.labels[i]).collect();
        Ok(Assessment { nearest, delta, members: members.len(), plausible: plausible_failures(&labels, detection) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub nearest: usize,
    pub delta: f64,
    pub members: usize,
    pub plausible: PlausibleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlausibleSource {
    Monitor,
    MonitorPerturbation,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlausibleSet {
    pub failures: BTreeSet<FailureId>,
    pub source: PlausibleSource,
}

impl PlausibleSet {
    pub fn single(f: FailureId, source: PlausibleSource) -> Self {
        PlausibleSet { failures: BTreeSet::from([f]), source }
    }

    pub fn contains(&self, f: FailureId) -> bool {
        self.failures.contains(&f)
    }

    pub fn len(&self) -> usize {
        self.failures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.failures.is_empty()
    }

    /// Bit i set iff f_i is plausible.
    pub fn bitmask(&self) -> u64 {
        self.failures.iter().fold(0, |m, f| m | (1u64 << f.0))
    }
}

/// Union of perturbed-set labels and the detection.
pub fn plausible_failures(perturbed: &[FailureId], detection: FailureId) -> PlausibleSet {
    let mut failures: BTreeSet<FailureId> = perturbed.iter().copied().collect();
    failures.insert(detection);
    PlausibleSet { failures, source: PlausibleSource::MonitorPerturbation }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterventionMode {
    Restrict,
    Add,
    Clear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorIntervention {
    pub mode: InterventionMode,
    #[serde(default)]
    pub failures: Vec<FailureId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<f64>,
}

impl OperatorIntervention {
    pub fn restrict() -> Self {
        OperatorIntervention { mode: InterventionMode::Restrict, failures: Vec::new(), timestamp: None }
    }

    pub fn add(failures: Vec<FailureId>) -> Self {
        OperatorIntervention { mode: InterventionMode::Add, failures, timestamp: None }
    }

    pub fn clear() -> Self {
        OperatorIntervention { mode: InterventionMode::Clear, failures: Vec::new(), timestamp: None }
    }

    pub fn validate(&self, catalogue: &[FailureId]) -> Result<()> {
        if self.mode == InterventionMode::Add && self.failures.is_empty() {
            return Err(Error::Validation("add requires at least one failure".into()));
        }
        if let Some(f) = self.failures.iter().find(|f| !catalogue.contains(f)) {
            return Err(Error::Validation(format!("unknown failure {f}")));
        }
        Ok(())
    }
}

/// Operator mode that persists across cycles until cleared.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OperatorOverride {
    #[default]
    None,
    Restrict,
    Add { failures: BTreeSet<FailureId> },
}

impl OperatorOverride {
    /// Folds an intervention into the persistent mode.
    pub fn update(&mut self, iv: &OperatorIntervention, catalogue: &[FailureId]) -> Result<()> {
        iv.validate(catalogue)?;
        *self = match iv.mode {
            InterventionMode::Restrict => OperatorOverride::Restrict,
            InterventionMode::Clear => OperatorOverride::None,
            InterventionMode::Add => {
                let mut failures = match std::mem::take(self) {
                    OperatorOverride::Add { failures } => failures,
                    _ => BTreeSet::new(),
                };
                failures.extend(iv.failures.iter().copied());
                OperatorOverride::Add { failures }
            }
        };
        Ok(())
    }

    /// The cycle's plausible set after operator input.
    pub fn apply(&self, computed: &PlausibleSet, detection: FailureId) -> PlausibleSet {
        match self {
            OperatorOverride::None => computed.clone(),
            OperatorOverride::Restrict => PlausibleSet::single(detection, PlausibleSource::Operator),
            OperatorOverride::Add { failures } => {
                let mut out = computed.failures.clone();
                out.extend(failures.iter().copied());
                PlausibleSet { failures: out, source: PlausibleSource::Operator }
            }
        }
    }
}

/// One-shot form: restrict → {detection}; add → pset ∪ failures; clear →
/// the recomputed monitor set.
pub fn apply_intervention(
    pset: &PlausibleSet,
    iv: &OperatorIntervention,
    detection: FailureId,
    recomputed: &PlausibleSet,
    catalogue: &[FailureId],
) -> Result<PlausibleSet> {
    iv.validate(catalogue)?;
    Ok(match iv.mode {
        InterventionMode::Restrict => PlausibleSet::single(detection, PlausibleSource::Operator),
        InterventionMode::Add => {
            let mut failures = pset.failures.clone();
            failures.extend(iv.failures.iter().copied());
            PlausibleSet { failures, source: PlausibleSource::Operator }
        }
        InterventionMode::Clear => recomputed.clone(),
    })
}
