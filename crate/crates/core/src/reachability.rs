//! Deviation bounds per (controller, failure) pair and the tubes they inflate
//! around MPC predictions; safe-set filtering and the conservative pick.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::controller::Prediction;
use crate::error::{Error, Result};
use crate::ids::{ControllerId, FailureId};
use crate::space::{point_segment_distance, Disc, FreeSpace, Point};
use crate::uncertainty::PlausibleSet;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationBound {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    /// max √(dx² + dy²)
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum BoundMode {
    #[default]
    Max,
    /// Empirical quantile in (0, 1], nearest-rank.
    Quantile { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationBoundTable {
    entries: BTreeMap<(ControllerId, FailureId), DeviationBound>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SigmaRow {
    controller: ControllerId,
    failure: FailureId,
    dx: f64,
    dy: f64,
    dtheta: f64,
    r: f64,
}

impl DeviationBoundTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: ControllerId, f: FailureId, bound: DeviationBound) {
        self.entries.insert((c, f), bound);
    }

    pub fn get(&self, c: ControllerId, f: FailureId) -> Option<&DeviationBound> {
        self.entries.get(&(c, f))
    }

    /// Position bound r_cf; a missing pair is unbounded.
    pub fn radius(&self, c: ControllerId, f: FailureId) -> f64 {
        self.get(c, f).map_or(f64::INFINITY, |b| b.r)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ControllerId, FailureId, &DeviationBound)> {
        self.entries.iter().map(|((c, f), b)| (*c, *f, b))
    }

    /// Checks the table covers every controller × failure pair.
    pub fn check_complete(&self, controllers: &[ControllerId], failures: &[FailureId]) -> Result<()> {
        for c in controllers {
            for f in failures {
                if self.get(*c, *f).is_none() {
                    return Err(Error::Validation(format!("σ table lacks ({c}, {f})")));
                }
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for b in out.entries.values_mut() {
            *b = DeviationBound { dx: b.dx * k, dy: b.dy * k, dtheta: b.dtheta * k, r: b.r * k };
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (c, f, b) in self.iter() {
            out.serialize(SigmaRow { controller: c, failure: f, dx: b.dx, dy: b.dy, dtheta: b.dtheta, r: b.r })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut table = Self::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: SigmaRow = row?;
            let b = DeviationBound { dx: row.dx, dy: row.dy, dtheta: row.dtheta, r: row.r };
            if [b.dx, b.dy, b.dtheta, b.r].iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Validation(format!("negative bound for ({}, {})", row.controller, row.failure)));
            }
            table.insert(row.controller, row.failure, b);
        }
        Ok(table)
    }
}

/// Collects residuals per pair and reduces them to bounds.
#[derive(Debug, Clone, Default)]
pub struct DeviationAccumulator {
    residuals: BTreeMap<(ControllerId, FailureId), Vec<[f64; 3]>>,
}

impl DeviationAccumulator {
    pub fn push(&mut self, c: ControllerId, f: FailureId, d: [f64; 3]) {
        self.residuals.entry((c, f)).or_default().push(d);
    }

    pub fn finish(&self, mode: BoundMode) -> DeviationBoundTable {
        let mut table = DeviationBoundTable::new();
        for (&(c, f), rs) in &self.residuals {
            let pick = |mut v: Vec<f64>| -> f64 {
                v.sort_by(f64::total_cmp);
                match mode {
                    BoundMode::Max => *v.last().unwrap_or(&0.0),
                    BoundMode::Quantile { q } => {
                        let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
                        v[rank - 1]
                    }
                }
            };
            table.insert(
                c,
                f,
                DeviationBound {
                    dx: pick(rs.iter().map(|d| d[0].abs()).collect()),
                    dy: pick(rs.iter().map(|d| d[1].abs()).collect()),
                    dtheta: pick(rs.iter().map(|d| d[2].abs()).collect()),
                    r: pick(rs.iter().map(|d| d[0].hypot(d[1])).collect()),
                },
            );
        }
        table
    }
}

/// Discs of equal radius at the predicted positions, bridged pairwise by
/// the swept segment between consecutive centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachableSet {
    pub controller: ControllerId,
    pub failure: FailureId,
    pub discs: Vec<Disc>,
}

impl ReachableSet {
    pub fn radius(&self) -> f64 {
        self.discs.first().map_or(0.0, |d| d.radius)
    }

    fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let single = (self.discs.len() == 1).then(|| (self.discs[0].center, self.discs[0].center));
        single.into_iter().chain(self.discs.windows(2).map(|w| (w[0].center, w[1].center)))
    }

    /// Point membership in the tube.
    pub fn contains(&self, p: Point) -> bool {
        let r = self.radius();
        self.segments().any(|(a, b)| point_segment_distance(p, a, b) <= r)
    }
}

pub fn build_reachable_set(pred: &Prediction, failure: FailureId, bound: &DeviationBound, robot_radius: f64) -> ReachableSet {
    let radius = bound.r + robot_radius;
    ReachableSet {
        controller: pred.controller,
        failure,
        discs: pred.states.iter().map(|s| Disc { center: s.position(), radius }).collect(),
    }
}

/// No disc or bridge touches an obstacle, and everything lies inside the
/// workspace.
pub fn is_safe(r: &ReachableSet, free: &FreeSpace) -> bool {
    let radius = r.radius();
    r.segments().all(|(a, b)| free.capsule_is_free(a, b, radius))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeCheck {
    pub tube: ReachableSet,
    pub safe: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SafetyReport {
    pub candidates: BTreeSet<ControllerId>,
    pub safe: BTreeSet<ControllerId>,
    pub tubes: Vec<TubeCheck>,
}

/// Controllers paired with a plausible failure.
pub fn candidates(pset: &PlausibleSet) -> BTreeSet<ControllerId> {
    pset.failures.iter().map(|f| f.paired_controller()).collect()
}

/// Eq. 8: a candidate is safe iff its tube is safe under every plausible
/// failure. Candidates without a prediction are unsafe.
pub fn safe_controllers(
    pset: &PlausibleSet,
    predictions: &BTreeMap<ControllerId, Prediction>,
    table: &DeviationBoundTable,
    free: &FreeSpace,
    robot_radius: f64,
) -> SafetyReport {
    let candidates = candidates(pset);
    let mut report = SafetyReport { candidates: candidates.clone(), ..Default::default() };
    for c in candidates {
        let Some(pred) = predictions.get(&c) else { continue };
        let mut all = true;
        for &f in &pset.failures {
            let bound = table.get(c, f).copied().unwrap_or(DeviationBound {
                r: f64::INFINITY,
                ..Default::default()
            });
            let tube = build_reachable_set(pred, f, &bound, robot_radius);
            let safe = bound.r.is_finite() && is_safe(&tube, free);
            all &= safe;
            report.tubes.push(TubeCheck { tube, safe });
        }
        if all {
            report.safe.insert(c);
        }
    }
    report
}

/// argmin over safe of max_{f ∈ pset} r_cf; ties to the lowest id.
pub fn conservative_select(
    safe: &BTreeSet<ControllerId>,
    pset: &PlausibleSet,
    table: &DeviationBoundTable,
) -> Result<ControllerId> {
    let worst = |c: ControllerId| pset.failures.iter().map(|&f| table.radius(c, f)).fold(0.0f64, f64::max);
    safe.iter()
        .copied()
        .fold(None, |best: Option<(ControllerId, f64)>, c| {
            let w = worst(c);
            match best {
                Some((_, bw)) if bw <= w => best,
                _ => Some((c, w)),
            }
        })
        .map(|(c, _)| c)
        .ok_or_else(|| Error::FailSafe(pset.failures.iter().copied().collect()))
}
