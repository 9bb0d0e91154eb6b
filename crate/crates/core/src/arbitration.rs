//! Controller confidence: deviation score η, recursive Bayes over the bank,
//! and the per-cycle deployment rules.
//!
//! Rule order: fail-safe, then γ-threshold, then re-initialisation with the
//! argmin-η fallback, then the conservative pick.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ControllerId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArbitrationConfig {
    pub eta_star: f64,
    pub gamma: f64,
    /// meters per radian
    pub w_theta: f64,
    pub p_hit: f64,
    pub p_miss: f64,
    /// Lower bound on every probability after an update, so a controller
    /// written off earlier can regain confidence in a bounded number of
    /// successes. Zero disables it.
    pub floor: f64,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        ArbitrationConfig { eta_star: 0.25, gamma: 0.75, w_theta: 0.5, p_hit: 0.8, p_miss: 0.2, floor: 1e-3 }
    }
}

impl ArbitrationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.p_miss
            && self.p_miss < self.p_hit
            && self.p_hit < 1.0
            && 0.5 < self.gamma
            && self.gamma < 1.0
            && self.eta_star > 0.0
            && self.w_theta >= 0.0
            && (0.0..0.1).contains(&self.floor);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid arbitration config {self:?}")))
        }
    }
}

/// √(dx² + dy² + (w_θ·dθ)²)
pub fn deviation(dx: f64, dy: f64, dtheta: f64, w_theta: f64) -> f64 {
    (dx * dx + dy * dy + (w_theta * dtheta).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ControllerId, f64>", into = "BTreeMap<ControllerId, f64>")]
pub struct ConfidencePmf {
    ids: Vec<ControllerId>,
    probs: Vec<f64>,
}

impl TryFrom<BTreeMap<ControllerId, f64>> for ConfidencePmf {
    type Error = Error;

    fn try_from(m: BTreeMap<ControllerId, f64>) -> Result<Self> {
        let pmf = ConfidencePmf { ids: m.keys().copied().collect(), probs: m.values().copied().collect() };
        if pmf.ids.is_empty() || pmf.probs.iter().any(|p| !(0.0..=1.0).contains(p)) || pmf.normalization_error() > 1e-9 {
            return Err(Error::Validation("not a probability mass function".into()));
        }
        Ok(pmf)
    }
}

impl From<ConfidencePmf> for BTreeMap<ControllerId, f64> {
    fn from(p: ConfidencePmf) -> Self {
        p.ids.into_iter().zip(p.probs).collect()
    }
}

impl ConfidencePmf {
    pub fn uniform(ids: &[ControllerId]) -> Self {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert!(!ids.is_empty(), "PMF over no controllers");
        let p = 1.0 / ids.len() as f64;
        ConfidencePmf { probs: vec![p; ids.len()], ids }
    }

    pub fn ids(&self) -> &[ControllerId] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, c: ControllerId) -> f64 {
        self.ids.binary_search(&c).map_or(0.0, |i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ControllerId, f64)> + '_ {
        self.ids.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn normalization_error(&self) -> f64 {
        (self.probs.iter().sum::<f64>() - 1.0).abs()
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// The most probable controller when its probability exceeds `gamma`.
    pub fn confident(&self, gamma: f64) -> Option<ControllerId> {
        let (c, p) = self.iter().fold(None, |best: Option<(ControllerId, f64)>, (c, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((c, p)),
        })?;
        (p > gamma).then_some(c)
    }

    pub fn reset(&mut self) {
        *self = Self::uniform(&self.ids);
    }
}

/// Eq. 10 with Bernoulli likelihoods: on success the deployed hypothesis is
/// weighted by p_hit and the rest by p_miss; on failure the other way round.
pub fn bayes_update(pmf: &ConfidencePmf, deployed: ControllerId, success: bool, cfg: &ArbitrationConfig) -> Result<ConfidencePmf> {
    let (hit, rest) = if success { (cfg.p_hit, cfg.p_miss) } else { (cfg.p_miss, cfg.p_hit) };
    let weighted: Vec<f64> =
        pmf.iter().map(|(c, p)| p * if c == deployed { hit } else { rest }).collect();
    let beta: f64 = weighted.iter().sum();
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Validation("degenerate Bayes normaliser".into()));
    }
    let mut probs: Vec<f64> = weighted.iter().map(|w| w / beta).collect();
    if cfg.floor > 0.0 && probs.iter().any(|p| *p < cfg.floor) {
        probs.iter_mut().for_each(|p| *p = p.max(cfg.floor));
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
    }
    // fold the rounding residue into the largest entry
    let residue = 1.0 - probs.iter().sum::<f64>();
    let imax = (0..probs.len()).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    probs[imax] = (probs[imax] + residue).clamp(0.0, 1.0);
    Ok(ConfidencePmf { ids: pmf.ids.clone(), probs })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerRecord {
    pub last_eta: Option<f64>,
    pub last_success: Option<bool>,
    pub negative_streak: usize,
    pub deployments: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub entries: BTreeMap<ControllerId, ControllerRecord>,
}

impl PerformanceRecord {
    pub fn get(&self, c: ControllerId) -> ControllerRecord {
        self.entries.get(&c).copied().unwrap_or_default()
    }

    /// Most recent η of every controller ever deployed.
    pub fn recent(&self) -> BTreeMap<ControllerId, f64> {
        self.entries.iter().filter_map(|(c, r)| r.last_eta.map(|e| (*c, e))).collect()
    }

    pub fn failed_last(&self, c: ControllerId) -> bool {
        self.get(c).last_success == Some(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Confident,
    Reinitialized,
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "kebab-case")]
pub enum Decision {
    Deploy { controller: ControllerId, rule: Rule },
    FailSafe,
}

impl Decision {
    pub fn controller(&self) -> Option<ControllerId> {
        match self {
            Decision::Deploy { controller, .. } => Some(*controller),
            Decision::FailSafe => None,
        }
    }
}

/// One cycle's deployment decision. May reset `pmf` (rule 3).
pub fn select(
    pmf: &mut ConfidencePmf,
    safe: &BTreeSet<ControllerId>,
    record: &PerformanceRecord,
    conservative: Option<ControllerId>,
    cfg: &ArbitrationConfig,
) -> Decision {
    if safe.is_empty() {
        return Decision::FailSafe;
    }
    // highest probability ≥ γ, ties to the lowest id
    let confident = safe
        .iter()
        .map(|&c| (c, pmf.get(c)))
        .filter(|(_, p)| *p >= cfg.gamma)
        .fold(None, |best: Option<(ControllerId, f64)>, (c, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((c, p)),
        });
    if let Some((controller, _)) = confident {
        return Decision::Deploy { controller, rule: Rule::Confident };
    }
    let exhausted = safe.iter().all(|&c| {
        let r = record.get(c);
        r.last_eta.is_some_and(|e| !(e < cfg.eta_star))
    });
    if exhausted {
        pmf.reset();
        let recent = record.recent();
        let controller = safe
            .iter()
            .copied()
            .min_by(|a, b| recent[a].total_cmp(&recent[b]).then(a.cmp(b)))
            .expect("safe is nonempty");
        return Decision::Deploy { controller, rule: Rule::Reinitialized };
    }
    let controller = conservative.filter(|c| safe.contains(c)).unwrap_or_else(|| *safe.iter().next().unwrap());
    Decision::Deploy { controller, rule: Rule::Conservative }
}

/// Scores the deployed controller's η against η* and updates both the PMF
/// and the record. Returns whether the step counted as a success.
pub fn reinforce(
    pmf: &mut ConfidencePmf,
    record: &mut PerformanceRecord,
    deployed: ControllerId,
    eta: f64,
    cfg: &ArbitrationConfig,
) -> Result<bool> {
    if !(eta >= 0.0) {
        return Err(Error::Validation(format!("deviation must be nonnegative, got {eta}")));
    }
    let success = eta < cfg.eta_star;
    *pmf = bayes_update(pmf, deployed, success, cfg)?;
    let entry = record.entries.entry(deployed).or_default();
    entry.last_eta = Some(eta);
    entry.last_success = Some(success);
    entry.deployments += 1;
    entry.negative_streak = if success { 0 } else { entry.negative_streak + 1 };
    Ok(success)
}
