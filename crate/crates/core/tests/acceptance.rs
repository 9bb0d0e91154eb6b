//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Every derived value is recomputed here by an
//! independent oracle rather than read back from the library.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recovery_core::arbitration::{
    bayes_update, reinforce, select, ArbitrationConfig, ConfidencePmf, Decision, PerformanceRecord, Rule,
};
use recovery_core::controller::Prediction;
use recovery_core::harness::{compute_metrics, run_scenario, RunConfig, RunLog, RunMode, Status};
use recovery_core::ids::{ControllerId, FailureId};
use recovery_core::monitor::{AttributeVector, Condition, DecisionTree, Sample, TreeParams};
use recovery_core::reachability::{build_reachable_set, is_safe, DeviationBound};
use recovery_core::scenario::Scenario;
use recovery_core::sim::{predict_step, seeded_rng, step, ControlInput, Pose};
use recovery_core::space::{Disc, FreeSpace, Point, Wall, Workspace};
use recovery_core::training::{monitor_quality, run_episode, Runtime, TrainingArtifacts, TrainingPlan};
use recovery_core::uncertainty::{Perturbation, PointSet, Standardizer};

const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn runs(rt: &Arc<Runtime>, name: &str, mode: RunMode) -> Vec<(RunLog, Duration)> {
    let s = Scenario::shipped(name).unwrap();
    (0..SEEDS)
        .map(|seed| {
            let t0 = Instant::now();
            let log = run_scenario(rt.clone(), &s.with_seed(seed), mode, RunConfig::default()).unwrap();
            (log, t0.elapsed())
        })
        .collect()
}

fn collided(log: &RunLog) -> bool {
    log.status == Some(Status::Collision)
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

// 1 ------------------------------------------------------------------------

fn corridor(full: &[(RunLog, Duration)], frozen: &[(RunLog, Duration)]) -> Outcome {
    let goal = [25.0, 0.0];
    let reached = full
        .iter()
        .filter(|(l, _)| !collided(l) && l.status == Some(Status::GoalReached) && dist(l.final_pose.position(), goal) <= 0.5)
        .count();
    let crashes = frozen.iter().filter(|(l, _)| collided(l)).count();
    let slowest = full.iter().chain(frozen).map(|(_, d)| *d).max().unwrap();
    let pass = reached >= 9 && crashes >= 9 && slowest <= Duration::from_secs(60);
    outcome(
        pass,
        format!("full reached goal {reached}/10, no-recovery collided {crashes}/10, slowest run {:.2}s", slowest.as_secs_f64()),
    )
}

// 2 ------------------------------------------------------------------------

fn adversarial(rt: &Arc<Runtime>) -> Outcome {
    let dt = runs(rt, "adversarial", RunMode::DtOnly).iter().filter(|(l, _)| collided(l)).count();
    let full = runs(rt, "adversarial", RunMode::Full).iter().filter(|(l, _)| collided(l)).count();
    outcome(dt >= 5 && full <= 1, format!("dt-only collided {dt}/10, full collided {full}/10"))
}

// 3 ------------------------------------------------------------------------

/// Posterior of the deployed hypothesis after `k` successes from a uniform
/// prior over `n`, by the closed form p·h^k / (p·h^k + (1-p)·m^k).
fn closed_form(n: usize, k: i32, hit: f64, miss: f64) -> f64 {
    let p = 1.0 / n as f64;
    p * hit.powi(k) / (p * hit.powi(k) + (1.0 - p) * miss.powi(k))
}

fn convergence(logs: &[(RunLog, Duration)]) -> Outcome {
    let cfg = ArbitrationConfig::default();
    let ids: Vec<ControllerId> = (1..=5).map(ControllerId).collect();
    let (o1, o2) = (closed_form(5, 1, cfg.p_hit, cfg.p_miss), closed_form(5, 2, cfg.p_hit, cfg.p_miss));
    let mut ok = (o1 - 0.5).abs() <= 1e-9 && (o2 - 0.8).abs() <= 1e-9;
    // the library update, for every corrective controller
    for &c in &ids {
        let one = bayes_update(&ConfidencePmf::uniform(&ids), c, true, &cfg).unwrap();
        let two = bayes_update(&one, c, true, &cfg).unwrap();
        ok &= (one.get(c) - o1).abs() <= 1e-9 && (two.get(c) - o2).abs() <= 1e-9 && two.get(c) > cfg.gamma;
    }
    // and inside the closed loop: a matched controller's first two successes
    // from a uniform PMF
    let mut seen = 0;
    for (log, _) in logs {
        let rs = &log.records;
        for i in 1..rs.len() {
            let prior_uniform = rs[i - 1].pmf.probs().iter().all(|p| (p - 0.2).abs() <= 1e-12);
            let Some(c) = rs[i - 1].deployed else { continue };
            if !prior_uniform || rs[i].reinforced != Some(true) || rs[i].rule == Some(Rule::Reinitialized) {
                continue;
            }
            if c != rs[i].true_failure.paired_controller() {
                continue;
            }
            let Some(j) = (i + 1..rs.len()).find(|&j| rs[j].reinforced.is_some()) else { continue };
            if rs[j].reinforced != Some(true) || rs[j - 1].deployed != Some(c) || rs[j].rule == Some(Rule::Reinitialized) {
                continue;
            }
            seen += 1;
            ok &= (rs[i].pmf.get(c) - 0.5).abs() <= 1e-9 && (rs[j].pmf.get(c) - 0.8).abs() <= 1e-9;
        }
    }
    outcome(ok && seen > 0, format!("Pr = {o1:.12} then {o2:.12}; {seen} closed-loop success pairs checked"))
}

// 4 ------------------------------------------------------------------------

fn unknown_failure(rt: &Arc<Runtime>) -> Outcome {
    let gamma = ArbitrationConfig::default().gamma;
    let mut good = 0;
    let mut notes = Vec::new();
    for (log, _) in runs(rt, "unknown-failure", RunMode::Full) {
        let deployed: BTreeSet<ControllerId> = log.records.iter().filter_map(|r| r.deployed).collect();
        let max_pr = log.records.iter().map(|r| r.pmf.max_prob()).fold(0.0, f64::max);
        let ok = !collided(&log)
            && deployed.contains(&ControllerId(2))
            && deployed.contains(&ControllerId(5))
            && max_pr <= gamma;
        good += ok as usize;
        if !ok {
            notes.push(format!("seed {}: {:?} max Pr {max_pr:.2}", log.seed, log.status));
        }
    }
    let mut detail = format!("{good}/10 seeds collision-free, deployed c2 and c5, max Pr ≤ γ");
    if !notes.is_empty() {
        detail.push_str(&format!(" ({})", notes.join("; ")));
    }
    outcome(good >= 8, detail)
}

// 5 ------------------------------------------------------------------------

fn sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

fn zscore(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    let mut std = vec![1.0; dim];
    for k in 0..dim {
        mean[k] = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            std[k] = var.sqrt();
        }
    }
    rows.iter().map(|r| (0..dim).map(|k| (r[k] - mean[k]) / std[k]).collect()).collect()
}

fn uncertainty_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0usize;
    let mut queries = 0usize;
    let mut monotone_checks = 0usize;
    for _ in 0..100 {
        let n = rng.random_range(20..=500);
        let n_groups = rng.random_range(1..=3u32);
        // a coarse lattice makes exact ties and duplicates common
        let coarse = rng.random_bool(0.5);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..3)
                .map(|_| {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    if coarse { (v * 4.0).round() / 4.0 } else { v }
                })
                .collect();
            rows.push(row);
        }
        let mut groups: Vec<u32> = (0..n).map(|_| rng.random_range(0..n_groups)).collect();
        // every group needs more than N_s members
        for (i, g) in groups.iter_mut().enumerate().take(n_groups as usize * 12) {
            *g = i as u32 % n_groups;
        }
        let labels: Vec<FailureId> = (0..n).map(|_| FailureId(rng.random_range(0..6))).collect();
        let n_s = rng.random_range(1..=10usize);
        let set = PointSet { rows: rows.clone(), groups: groups.clone(), labels };
        let standardized = rng.random_bool(0.5);
        let (p, pts) = if standardized {
            (Perturbation::fit(&set, Standardizer::fit(&rows), n_s).unwrap(), zscore(&rows))
        } else {
            (Perturbation::fit(&set, Standardizer::identity(3), n_s).unwrap(), rows.clone())
        };
        // δ_i: N_s-th smallest distance to another member of i's group
        for i in 0..n {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i && groups[j] == groups[i]).map(|j| sq(&pts[i], &pts[j])).collect();
            d.sort_by(f64::total_cmp);
            mismatches += (p.table().deltas[i] != d[n_s - 1].sqrt()) as usize;
        }
        for _ in 0..50 {
            queries += 1;
            let g = rng.random_range(0..n_groups);
            let q: Vec<f64> = if rng.random_bool(0.3) {
                rows[rng.random_range(0..n)].clone()
            } else {
                (0..3).map(|_| rng.random_range(-1.2..1.2)).collect()
            };
            let qs = if standardized { p.standardize(&q) } else { q.clone() };
            let members: Vec<usize> = (0..n).filter(|&j| groups[j] == g).collect();
            // nearest, ties to the lowest index
            let mut best = members[0];
            for &j in &members {
                if sq(&qs, &pts[j]) < sq(&qs, &pts[best]) {
                    best = j;
                }
            }
            let delta = p.table().deltas[best];
            let (gi, gd) = p.lookup_delta_row(&q, g).unwrap();
            mismatches += (gi != best || gd != delta) as usize;
            let oracle: Vec<usize> = members.iter().copied().filter(|&j| sq(&qs, &pts[j]).sqrt() <= delta).collect();
            let got = p.perturbed_set_row(&q, g, delta);
            mismatches += (got != oracle) as usize;
            // 𝓟(δ') ⊇ 𝓟(δ) for δ' ≥ δ
            let mut prev: BTreeSet<usize> = BTreeSet::new();
            for k in 0..4 {
                let d2 = delta * (1.0 + 0.5 * k as f64) + 0.05 * k as f64;
                let s: BTreeSet<usize> = p.perturbed_set_row(&q, g, d2).into_iter().collect();
                monotone_checks += 1;
                mismatches += (!s.is_superset(&prev)) as usize;
                prev = s;
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("100 datasets, {queries} queries, {monotone_checks} monotonicity checks, {mismatches} mismatches"),
    )
}

// 6 ------------------------------------------------------------------------

fn monitor_gates(rt: &Runtime) -> Outcome {
    // noiseless, separable: the label is a function of sign(dx), sign(dy)
    // with a dead band, independent of the controller
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<Sample> = (0..2000)
        .map(|_| {
            let mut v = || {
                let m: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) { m } else { -m }
            };
            let (dx, dy) = (v(), v());
            let label = FailureId(1 + (dx > 0.0) as u8 + 2 * (dy > 0.0) as u8);
            let controller = ControllerId(rng.random_range(0..6));
            Sample { attributes: AttributeVector { dx, dy, dtheta: rng.random_range(-0.1..0.1), controller }, label }
        })
        .collect();
    let tree = DecisionTree::fit(&samples, None, TreeParams { max_depth: 12, min_leaf: 1 }).unwrap();
    let wrong = samples.iter().filter(|s| tree.detect(&s.attributes) != s.label).count();

    let holdout = common::cached_bundle("holdout-dataset", &TrainingPlan::shipped().with_seeds(vec![11, 12]));
    let (acc, cov) = monitor_quality(rt, &holdout.dataset.samples()).unwrap();
    outcome(
        wrong == 0 && acc >= 0.7 && cov >= 0.95,
        format!(
            "separable training error {wrong}/2000; holdout ({} samples) top-1 {acc:.3}, coverage {cov:.3} at N_s = 10",
            holdout.dataset.rows.len()
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn containment(art: &TrainingArtifacts) -> (bool, String) {
    let cat = &art.catalog;
    let plan = TrainingPlan::shipped();
    let scenarios: Vec<Scenario> = plan.scenarios.iter().map(|s| s.resolve().unwrap()).collect();
    let l = art.manifest.tube_window;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (1.0f64, ControllerId(0), FailureId(0));
    for c in cat.controller_ids() {
        let spec = cat.controller(c).unwrap();
        for f in cat.failure_ids() {
            let failure = cat.failure(f).unwrap();
            let r = art.sigma().get(c, f).unwrap().r;
            // fresh closed-loop episodes supply start states and input
            // sequences; the plant noise of every rollout is new
            let mut windows: Vec<(Pose, Vec<ControlInput>, usize)> = Vec::new();
            for (si, s) in scenarios.iter().enumerate() {
                let ep = run_episode(spec, failure, s, plan.steps, plan.residual_window, l, 900 + si as u64);
                for k in 0..ep.steps.len().saturating_sub(l) {
                    let inputs = ep.steps[k..k + l].iter().map(|st| st.input).collect();
                    windows.push((ep.steps[k].pose, inputs, si));
                }
            }
            let (mut inside, mut total) = (0usize, 0usize);
            for _ in 0..1000 {
                let (start, inputs, si) = &windows[rng.random_range(0..windows.len())];
                let sim = &scenarios[*si].sim;
                let mut plant = seeded_rng(rng.random());
                let (mut actual, mut model) = (*start, *start);
                for u in inputs {
                    actual = step(&actual, *u, failure, sim, &mut plant).unwrap();
                    model = predict_step(&model, *u, &spec.model.kind, sim.dt);
                    total += 1;
                    inside += (dist(actual.position(), model.position()) <= r) as usize;
                }
            }
            let frac = inside as f64 / total as f64;
            if frac < worst.0 {
                worst = (frac, c, f);
            }
        }
    }
    (worst.0 >= 0.99, format!("worst pair ({}, {}) keeps {:.2}% of rollout steps in its tube", worst.1, worst.2, 100.0 * worst.0))
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0) };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Clearance of a point: distance to the nearest obstacle surface, negative
/// inside a disc or outside the workspace.
fn clearance(p: Point, free: &FreeSpace) -> f64 {
    let mut c = f64::INFINITY;
    for d in &free.discs {
        c = c.min(dist(p, d.center) - d.radius);
    }
    for w in &free.walls {
        c = c.min(seg_dist(p, w.a, w.b));
    }
    if let Some(ws) = &free.workspace {
        c = c.min(p[0] - ws.x_min).min(ws.x_max - p[0]).min(p[1] - ws.y_min).min(ws.y_max - p[1]);
    }
    c
}

fn random_scene(rng: &mut ChaCha8Rng) -> (FreeSpace, Vec<Point>, f64) {
    let mut free = FreeSpace::empty();
    for _ in 0..rng.random_range(0..=4) {
        free.discs.push(Disc { center: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], radius: rng.random_range(0.1..1.0) });
    }
    for _ in 0..rng.random_range(0..=2) {
        let (a, b, c): (f64, f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (lo, hi) = (a.min(b), a.max(b));
        free.walls.push(if rng.random_bool(0.5) { Wall { a: [lo, c], b: [hi, c] } } else { Wall { a: [c, lo], b: [c, hi] } });
    }
    if rng.random_bool(0.5) {
        free.workspace = Some(Workspace { x_min: -4.0, x_max: 4.0, y_min: -4.0, y_max: 4.0 });
    }
    let mut p = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let mut spine = vec![p];
    for _ in 0..rng.random_range(0..8) {
        p = [p[0] + rng.random_range(-0.5..0.5), p[1] + rng.random_range(-0.5..0.5)];
        spine.push(p);
    }
    (free, spine, rng.random_range(0.05..0.6))
}

/// Rasterized verdict: the tube is unsafe iff a grid cell lies in the tube
/// and in an obstacle (or outside the workspace). Walls are infinitely thin,
/// so a cell counts as blocked when a wall crosses it.
fn raster_safe(free: &FreeSpace, spine: &[Point], r: f64, h: f64) -> bool {
    let segs: Vec<(Point, Point)> =
        if spine.len() == 1 { vec![(spine[0], spine[0])] } else { spine.windows(2).map(|w| (w[0], w[1])).collect() };
    let lo = [spine.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - r, spine.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - r];
    let hi = [spine.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + r, spine.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + r];
    let (nx, ny) = (((hi[0] - lo[0]) / h).ceil() as usize + 1, ((hi[1] - lo[1]) / h).ceil() as usize + 1);
    for i in 0..nx {
        for j in 0..ny {
            let q = [lo[0] + i as f64 * h, lo[1] + j as f64 * h];
            if !segs.iter().any(|(a, b)| seg_dist(q, *a, *b) <= r) {
                continue;
            }
            let in_disc = free.discs.iter().any(|d| dist(q, d.center) <= d.radius);
            let on_wall = free.walls.iter().any(|w| seg_dist(q, w.a, w.b) <= h * std::f64::consts::FRAC_1_SQRT_2);
            let outside = free.workspace.is_some_and(|ws| q[0] <= ws.x_min || q[0] >= ws.x_max || q[1] <= ws.y_min || q[1] >= ws.y_max);
            if in_disc || on_wall || outside {
                return false;
            }
        }
    }
    true
}

fn safety_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 0.01;
    let (mut scenes, mut skipped, mut mismatches, mut unsafe_scenes) = (0, 0, 0, 0);
    while scenes < 1000 {
        let (free, spine, r) = random_scene(&mut rng);
        // exact clearance of the spine, sampled finely; skip scenes whose
        // verdict hinges on less than a few raster cells
        let mut gap = f64::INFINITY;
        let pts: Vec<Point> = if spine.len() == 1 {
            spine.clone()
        } else {
            spine
                .windows(2)
                .flat_map(|w| (0..=200).map(move |k| {
                    let t = k as f64 / 200.0;
                    [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])]
                }))
                .collect()
        };
        for p in &pts {
            gap = gap.min(clearance(*p, &free) - r);
        }
        if gap.abs() < 4.0 * h {
            skipped += 1;
            continue;
        }
        scenes += 1;
        let pred = Prediction {
            controller: ControllerId(1),
            states: spine.iter().map(|p| Pose::new(p[0], p[1], 0.0)).collect(),
            first_input: ControlInput::ZERO,
        };
        let bound = DeviationBound { dx: 0.0, dy: 0.0, dtheta: 0.0, r: r - 0.2 };
        let tube = build_reachable_set(&pred, FailureId(1), &bound, 0.2);
        let verdict = is_safe(&tube, &free);
        let oracle = raster_safe(&free, &spine, r, h);
        mismatches += (verdict != oracle) as usize;
        unsafe_scenes += (!oracle) as usize;
    }
    (
        mismatches == 0,
        format!("is_safe vs raster on {scenes} scenes ({unsafe_scenes} unsafe, {skipped} near-tangent redrawn): {mismatches} mismatches"),
    )
}

// 8 ------------------------------------------------------------------------

fn holds(c: &Condition, row: &[f64]) -> bool {
    match c {
        Condition::Le { feature, threshold } => row[*feature] <= *threshold,
        Condition::Gt { feature, threshold } => row[*feature] > *threshold,
        Condition::In { feature, categories } => categories.iter().any(|&k| k as f64 == row[*feature]),
        Condition::NotIn { feature, categories } => categories.iter().all(|&k| k as f64 != row[*feature]),
    }
}

fn explanation_soundness(tree: &DecisionTree, samples: &[Sample]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let thresholds: Vec<(usize, f64)> = tree
        .nodes
        .iter()
        .filter_map(|n| match &n.kind {
            recovery_core::monitor::NodeKind::Split { split: recovery_core::monitor::Split::Threshold { feature, threshold }, .. } => {
                Some((*feature, *threshold))
            }
            _ => None,
        })
        .collect();
    let (mut false_conj, mut label_mismatch, mut region_bad, mut region_points) = (0, 0, 0, 0usize);
    for _ in 0..100_000 {
        let mut row = match rng.random_range(0..3) {
            0 => samples[rng.random_range(0..samples.len())].attributes.row(),
            1 => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0..6) as f64],
            _ => {
                let mut r = samples[rng.random_range(0..samples.len())].attributes.row();
                // land exactly on a split threshold
                let (f, t) = thresholds[rng.random_range(0..thresholds.len())];
                r[f] = t;
                r
            }
        };
        row[3] = row[3].round();
        let e = tree.explain_row(&row);
        if !e.conditions.iter().all(|c| holds(c, &row)) {
            false_conj += 1;
        }
        if e.label != tree.predict_row(&row) {
            label_mismatch += 1;
        }
        // the conjunction's region: an axis box times a category set
        let mut lo = [f64::NEG_INFINITY; 3];
        let mut hi = [f64::INFINITY; 3];
        let mut cats: BTreeSet<u32> = (0..6).collect();
        for c in &e.conditions {
            match c {
                Condition::Le { feature, threshold } => hi[*feature] = hi[*feature].min(*threshold),
                Condition::Gt { feature, threshold } => lo[*feature] = lo[*feature].max(*threshold),
                Condition::In { categories, .. } => cats.retain(|k| categories.contains(k)),
                Condition::NotIn { categories, .. } => cats.retain(|k| !categories.contains(k)),
            }
        }
        let leaf = tree.leaf_of(&row);
        let cats: Vec<u32> = cats.into_iter().collect();
        for _ in 0..3 {
            let mut p = [0.0; 4];
            for k in 0..3 {
                let (a, b) = (lo[k], hi[k]);
                p[k] = match (a.is_finite(), b.is_finite()) {
                    (true, true) => b - (b - a) * rng.random_range(0.0..1.0),
                    (true, false) => a + rng.random_range(1e-9..2.0),
                    (false, true) => b - rng.random_range(0.0..2.0),
                    (false, false) => rng.random_range(-2.0..2.0),
                };
            }
            p[3] = cats[rng.random_range(0..cats.len())] as f64;
            if !e.conditions.iter().all(|c| holds(c, &p)) {
                continue;
            }
            region_points += 1;
            region_bad += (tree.leaf_of(&p) != leaf) as usize;
        }
    }
    outcome(
        false_conj == 0 && label_mismatch == 0 && region_bad == 0,
        format!(
            "100000 queries: {false_conj} false conjunctions, {label_mismatch} label mismatches; {region_points} region points, {region_bad} routed elsewhere"
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn arbitration_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_norm, mut outside, mut bad_failsafe, mut steps) = (0.0f64, 0, 0, 0usize);
    for _ in 0..10_000 {
        let p_hit = rng.random_range(0.55..0.99);
        let cfg = ArbitrationConfig {
            p_hit,
            p_miss: rng.random_range(0.01..p_hit),
            gamma: rng.random_range(0.55..0.95),
            eta_star: rng.random_range(0.05..0.5),
            floor: if rng.random_bool(0.5) { 0.0 } else { 1e-3 },
            ..Default::default()
        };
        let n = rng.random_range(2..=5);
        let ids: Vec<ControllerId> = (1..=n).map(ControllerId).collect();
        let mut pmf = ConfidencePmf::uniform(&ids);
        let mut record = PerformanceRecord::default();
        for _ in 0..rng.random_range(1..=60) {
            steps += 1;
            let safe: BTreeSet<ControllerId> = ids.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
            let conservative = if rng.random_bool(0.8) { Some(ControllerId(rng.random_range(0..=n))) } else { None };
            match select(&mut pmf, &safe, &record, conservative, &cfg) {
                Decision::Deploy { controller, .. } => {
                    outside += (!safe.contains(&controller)) as usize;
                    let eta: f64 = rng.random_range(0.0..1.0);
                    reinforce(&mut pmf, &mut record, controller, eta, &cfg).unwrap();
                }
                Decision::FailSafe => bad_failsafe += (!safe.is_empty()) as usize,
            }
            let total: f64 = pmf.probs().iter().sum();
            worst_norm = worst_norm.max((total - 1.0).abs());
            if pmf.probs().iter().any(|p| !(0.0..=1.0).contains(p)) {
                worst_norm = f64::INFINITY;
            }
        }
    }
    outcome(
        worst_norm <= 1e-9 && outside == 0 && bad_failsafe == 0,
        format!("10000 sequences, {steps} cycles: max |ΣPr − 1| = {worst_norm:.1e}, {outside} picks outside the safe set"),
    )
}

fn main() {
    let t0 = Instant::now();
    let art = common::shipped_artifacts();
    let rt = Arc::new(Runtime::new(&art).unwrap());
    eprintln!("artifacts ready in {:.1}s", t0.elapsed().as_secs_f64());

    let full = runs(&rt, "corridor", RunMode::Full);
    let frozen = runs(&rt, "corridor", RunMode::NoRecovery);
    let mut results: BTreeMap<u8, Outcome> = BTreeMap::new();
    results.insert(1, corridor(&full, &frozen));
    results.insert(2, adversarial(&rt));
    let mut loop_logs = full;
    loop_logs.extend(runs(&rt, "unknown-failure", RunMode::Full));
    results.insert(3, convergence(&loop_logs));
    results.insert(4, unknown_failure(&rt));
    results.insert(5, uncertainty_oracle());
    results.insert(6, monitor_gates(&rt));
    let (tube_ok, tube) = containment(&art);
    let (safe_ok, safe) = safety_oracle();
    results.insert(7, outcome(tube_ok && safe_ok, format!("{tube}; {safe}")));
    results.insert(8, explanation_soundness(&art.tree, &art.dataset.samples()));
    results.insert(9, arbitration_fuzz());

    let mut failed = 0;
    for (k, o) in &results {
        println!("criterion {k}: {} — {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    for (log, _) in loop_logs.iter().take(1) {
        let m = compute_metrics(log);
        println!("(corridor seed 0, full: {:?}, goal distance {:.2} m, rmse {:.2} m)", m.status, m.goal_distance, m.tracking_rmse);
    }
    println!("acceptance finished in {:.1}s", t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
