//! White-box failure monitor: a CART decision tree over prediction residuals.
//!
//! Continuous splits route left when `value <= threshold`; categorical splits
//! route left when the category is in the node's subset. The explanation for
//! a query is the conjunction of the conditions met along its root-to-leaf
//! path, rendered as `"<label> because: {cond ∧ cond}"`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ControllerId, FailureId};
use crate::sim::{wrap_angle, Pose};

/// Residual between the controller's prediction and the observed pose, plus
/// the controller that was deployed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub controller: ControllerId,
}

impl AttributeVector {
    pub fn continuous(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dtheta]
    }

    pub fn row(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dtheta, self.controller.0 as f64]
    }
}

pub fn compute_attributes(predicted: &Pose, observed: &Pose, controller: ControllerId) -> AttributeVector {
    AttributeVector {
        dx: observed.x - predicted.x,
        dy: observed.y - predicted.y,
        dtheta: wrap_angle(observed.theta - predicted.theta),
        controller,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub attributes: AttributeVector,
    pub label: FailureId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    /// Prefix used when rendering category codes, e.g. `c` for `c3`.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub category_prefix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<Feature>,
}

impl FeatureSchema {
    pub fn continuous(names: &[&str]) -> Self {
        FeatureSchema {
            features: names
                .iter()
                .map(|n| Feature { name: n.to_string(), kind: FeatureKind::Continuous, category_prefix: String::new() })
                .collect(),
        }
    }

    /// `dx, dy, dtheta, controller`.
    pub fn attributes() -> Self {
        let mut s = Self::continuous(&["dx", "dy", "dtheta"]);
        s.features.push(Feature {
            name: "controller".into(),
            kind: FeatureKind::Categorical,
            category_prefix: "c".into(),
        });
        s
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Condition {
    /// value <= threshold
    Le { feature: usize, threshold: f64 },
    /// value > threshold
    Gt { feature: usize, threshold: f64 },
    In { feature: usize, categories: Vec<u32> },
    NotIn { feature: usize, categories: Vec<u32> },
}

impl Condition {
    pub fn holds(&self, row: &[f64]) -> bool {
        match self {
            Condition::Le { feature, threshold } => row[*feature] <= *threshold,
            Condition::Gt { feature, threshold } => row[*feature] > *threshold,
            Condition::In { feature, categories } => categories.contains(&(row[*feature] as u32)),
            Condition::NotIn { feature, categories } => !categories.contains(&(row[*feature] as u32)),
        }
    }

    fn render(&self, schema: &FeatureSchema) -> String {
        let set = |feature: usize, cats: &[u32]| {
            let f = &schema.features[feature];
            cats.iter().map(|c| format!("{}{}", f.category_prefix, c)).collect::<Vec<_>>().join(",")
        };
        match self {
            Condition::Le { feature, threshold } => format!("{}<{}", schema.features[*feature].name, threshold),
            Condition::Gt { feature, threshold } => format!("{}>{}", schema.features[*feature].name, threshold),
            Condition::In { feature, categories } => {
                format!("{}∈{{{}}}", schema.features[*feature].name, set(*feature, categories))
            }
            Condition::NotIn { feature, categories } => {
                format!("{}∉{{{}}}", schema.features[*feature].name, set(*feature, categories))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Split {
    Threshold { feature: usize, threshold: f64 },
    Subset { feature: usize, categories: Vec<u32> },
}

impl Split {
    fn goes_left(&self, row: &[f64]) -> bool {
        match self {
            Split::Threshold { feature, threshold } => row[*feature] <= *threshold,
            Split::Subset { feature, categories } => categories.contains(&(row[*feature] as u32)),
        }
    }

    fn condition(&self, left: bool) -> Condition {
        match (self, left) {
            (Split::Threshold { feature, threshold }, true) => Condition::Le { feature: *feature, threshold: *threshold },
            (Split::Threshold { feature, threshold }, false) => Condition::Gt { feature: *feature, threshold: *threshold },
            (Split::Subset { feature, categories }, true) => {
                Condition::In { feature: *feature, categories: categories.clone() }
            }
            (Split::Subset { feature, categories }, false) => {
                Condition::NotIn { feature: *feature, categories: categories.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Split { split: Split, left: usize, right: usize },
    Leaf { label: FailureId, counts: BTreeMap<FailureId, usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 12, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub schema: FeatureSchema,
    pub classes: Vec<FailureId>,
    /// `nodes[0]` is the root; node ids equal their index.
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub conditions: Vec<Condition>,
    pub label: FailureId,
    rendered: String,
}

impl Explanation {
    pub fn holds(&self, row: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.holds(row))
    }

    pub fn depth(&self) -> usize {
        self.conditions.len()
    }

    pub fn as_str(&self) -> &str {
        &self.rendered
    }
}

impl std::fmt::Display for Explanation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.rendered)
    }
}

/// Rows plus labels for the generic fitter.
pub struct TrainingSet<'a> {
    pub schema: FeatureSchema,
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [FailureId],
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    labels: Vec<usize>,
    n_classes: usize,
    schema: &'a FeatureSchema,
    params: TreeParams,
    classes: &'a [FailureId],
    nodes: Vec<Node>,
}

struct Candidate {
    impurity: f64,
    split: Split,
}

fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    // n * gini = n - sum(c^2)/n
    if n == 0 {
        return 0.0;
    }
    let s: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - s / n as f64
}

impl<'a> Builder<'a> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.labels[i]] += 1;
        }
        c
    }

    fn leaf(&mut self, idx: &[usize]) -> usize {
        let counts = self.counts(idx);
        // majority, ties to the lowest class id
        let best = counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
        let id = self.nodes.len();
        let counts = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (self.classes[i], c))
            .collect();
        self.nodes.push(Node { id, kind: NodeKind::Leaf { label: self.classes[best], counts } });
        id
    }

    fn best_split(&self, idx: &[usize]) -> Option<Candidate> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Candidate> = None;
        for (f, feature) in self.schema.features.iter().enumerate() {
            match feature.kind {
                FeatureKind::Continuous => {
                    let mut order: Vec<usize> = idx.to_vec();
                    order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
                    let mut left = vec![0usize; self.n_classes];
                    let mut right = self.counts(idx);
                    for k in 0..n - 1 {
                        let i = order[k];
                        left[self.labels[i]] += 1;
                        right[self.labels[i]] -= 1;
                        let (a, b) = (self.rows[i][f], self.rows[order[k + 1]][f]);
                        if a == b || k + 1 < min_leaf || n - k - 1 < min_leaf {
                            continue;
                        }
                        let imp = weighted_gini(&left, k + 1) + weighted_gini(&right, n - k - 1);
                        if best.as_ref().is_none_or(|c| imp < c.impurity) {
                            let threshold = a + (b - a) / 2.0;
                            best = Some(Candidate { impurity: imp, split: Split::Threshold { feature: f, threshold } });
                        }
                    }
                }
                FeatureKind::Categorical => {
                    let mut cats: Vec<u32> = idx.iter().map(|&i| self.rows[i][f] as u32).collect();
                    cats.sort_unstable();
                    cats.dedup();
                    let k = cats.len();
                    if !(2..=16).contains(&k) {
                        continue;
                    }
                    let mut per_cat = vec![vec![0usize; self.n_classes]; k];
                    let mut per_cat_n = vec![0usize; k];
                    for &i in idx {
                        let c = cats.binary_search(&(self.rows[i][f] as u32)).unwrap();
                        per_cat[c][self.labels[i]] += 1;
                        per_cat_n[c] += 1;
                    }
                    // subsets always contain the lowest category; ascending mask order
                    for rest in 0u32..(1u32 << (k - 1)) - 1 {
                        let mask = 1 | (rest << 1);
                        let mut left = vec![0usize; self.n_classes];
                        let mut nl = 0;
                        for (c, counts) in per_cat.iter().enumerate() {
                            if mask & (1 << c) != 0 {
                                nl += per_cat_n[c];
                                for (l, v) in left.iter_mut().zip(counts) {
                                    *l += v;
                                }
                            }
                        }
                        if nl < min_leaf || n - nl < min_leaf {
                            continue;
                        }
                        let total = self.counts(idx);
                        let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                        let imp = weighted_gini(&left, nl) + weighted_gini(&right, n - nl);
                        if best.as_ref().is_none_or(|c| imp < c.impurity) {
                            let subset = (0..k).filter(|c| mask & (1 << c) != 0).map(|c| cats[c]).collect();
                            best = Some(Candidate { impurity: imp, split: Split::Subset { feature: f, categories: subset } });
                        }
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf.max(1) {
            return self.leaf(&idx);
        }
        let parent = weighted_gini(&counts, idx.len());
        let Some(best) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        if best.impurity > parent {
            return self.leaf(&idx);
        }
        let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| best.split.goes_left(&self.rows[i]));
        let id = self.nodes.len();
        // placeholder, children are filled in after recursion
        self.nodes.push(Node { id, kind: NodeKind::Leaf { label: self.classes[0], counts: BTreeMap::new() } });
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id].kind = NodeKind::Split { split: best.split, left: l, right: r };
        id
    }
}

impl DecisionTree {
    /// Grows a tree on arbitrary rows. `classes`, if given, is the full label
    /// set and every class must have at least one sample.
    pub fn fit_rows(set: &TrainingSet<'_>, classes: Option<&[FailureId]>, params: TreeParams) -> Result<Self> {
        if set.rows.is_empty() || set.rows.len() != set.labels.len() {
            return Err(Error::Training("empty or misaligned training set".into()));
        }
        if let Some(bad) = set.rows.iter().find(|r| r.len() != set.schema.len() || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training(format!("malformed row {bad:?}")));
        }
        let mut present: Vec<FailureId> = set.labels.to_vec();
        present.sort_unstable();
        present.dedup();
        let classes = match classes {
            Some(all) => {
                let mut all = all.to_vec();
                all.sort_unstable();
                all.dedup();
                if let Some(missing) = all.iter().find(|c| !present.contains(c)) {
                    return Err(Error::Training(format!("class {missing} has no samples")));
                }
                if let Some(extra) = present.iter().find(|c| !all.contains(c)) {
                    return Err(Error::Training(format!("label {extra} outside the class set")));
                }
                all
            }
            None => present,
        };
        let labels = set.labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
        let mut b = Builder {
            rows: set.rows,
            labels,
            n_classes: classes.len(),
            schema: &set.schema,
            params,
            classes: &classes,
            nodes: Vec::new(),
        };
        b.grow((0..set.rows.len()).collect(), 0);
        let nodes = b.nodes;
        Ok(DecisionTree { schema: set.schema.clone(), classes, nodes })
    }

    /// Grows the monitor tree over attribute samples.
    pub fn fit(samples: &[Sample], classes: Option<&[FailureId]>, params: TreeParams) -> Result<Self> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.attributes.row().to_vec()).collect();
        let labels: Vec<FailureId> = samples.iter().map(|s| s.label).collect();
        Self::fit_rows(&TrainingSet { schema: FeatureSchema::attributes(), rows: &rows, labels: &labels }, classes, params)
    }

    fn route(&self, row: &[f64], mut visit: impl FnMut(&Split, bool)) -> &Node {
        let mut node = &self.nodes[0];
        loop {
            match &node.kind {
                NodeKind::Leaf { .. } => return node,
                NodeKind::Split { split, left, right } => {
                    let go_left = split.goes_left(row);
                    visit(split, go_left);
                    node = &self.nodes[if go_left { *left } else { *right }];
                }
            }
        }
    }

    pub fn leaf_of(&self, row: &[f64]) -> usize {
        self.route(row, |_, _| {}).id
    }

    pub fn predict_row(&self, row: &[f64]) -> FailureId {
        match &self.route(row, |_, _| {}).kind {
            NodeKind::Leaf { label, .. } => *label,
            NodeKind::Split { .. } => unreachable!("routing ends at a leaf"),
        }
    }

    pub fn explain_row(&self, row: &[f64]) -> Explanation {
        let mut conditions = Vec::new();
        let label = match &self.route(row, |s, left| conditions.push(s.condition(left))).kind {
            NodeKind::Leaf { label, .. } => *label,
            NodeKind::Split { .. } => unreachable!("routing ends at a leaf"),
        };
        let mut rendered = format!("{label} because: {{");
        for (i, c) in conditions.iter().enumerate() {
            if i > 0 {
                rendered.push_str(" ∧ ");
            }
            let _ = write!(rendered, "{}", c.render(&self.schema));
        }
        rendered.push('}');
        Explanation { conditions, label, rendered }
    }

    pub fn detect(&self, alpha: &AttributeVector) -> FailureId {
        self.predict_row(&alpha.row())
    }

    pub fn explain(&self, alpha: &AttributeVector) -> Explanation {
        self.explain_row(&alpha.row())
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, id: usize) -> usize {
            match &t.nodes[id].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    /// Fraction of samples whose detection differs from their label.
    pub fn error_rate(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let wrong = samples.iter().filter(|s| self.detect(&s.attributes) != s.label).count();
        wrong as f64 / samples.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: DecisionTree = serde_json::from_str(text)?;
        tree.check()?;
        Ok(tree)
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Corrupt { path: "tree".into(), reason: msg });
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if id >= self.nodes.len() || seen[id] || self.nodes[id].id != id {
                return bad(format!("bad node reference {id}"));
            }
            seen[id] = true;
            match &self.nodes[id].kind {
                NodeKind::Split { split, left, right } => {
                    let feature = match split {
                        Split::Threshold { feature, threshold } => {
                            if !threshold.is_finite() {
                                return bad(format!("non-finite threshold at node {id}"));
                            }
                            *feature
                        }
                        Split::Subset { feature, .. } => *feature,
                    };
                    if feature >= self.schema.len() {
                        return bad(format!("unknown feature at node {id}"));
                    }
                    stack.push(*left);
                    stack.push(*right);
                }
                NodeKind::Leaf { label, .. } => {
                    if !self.classes.contains(label) {
                        return bad(format!("leaf {id} label {label} not in classes"));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("unreachable nodes".into());
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The four-rectangle toy layout: f0 for x<=48, y>=40; f1 for x>=49,
    /// y>=40; f2 for x<=48, y<=39; f3 otherwise. Integer grid symmetric about
    /// both boundaries.
    pub(crate) fn toy_grid() -> (Vec<Vec<f64>>, Vec<FailureId>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for x in 41..=56 {
            for y in 32..=47 {
                let label = match (x <= 48, y >= 40) {
                    (true, true) => 0,
                    (false, true) => 1,
                    (true, false) => 2,
                    (false, false) => 3,
                };
                rows.push(vec![x as f64, y as f64]);
                labels.push(FailureId(label));
            }
        }
        (rows, labels)
    }

    fn toy_tree() -> DecisionTree {
        let (rows, labels) = toy_grid();
        DecisionTree::fit_rows(
            &TrainingSet { schema: FeatureSchema::continuous(&["x", "y"]), rows: &rows, labels: &labels },
            None,
            TreeParams { max_depth: 8, min_leaf: 1 },
        )
        .unwrap()
    }

    #[test]
    fn toy_tree_detects_and_explains() {
        let tree = toy_tree();
        assert_eq!(tree.predict_row(&[48.0, 40.0]), FailureId(0));
        let e = tree.explain_row(&[48.0, 40.0]);
        assert_eq!(e.as_str(), "f0 because: {x<48.5 ∧ y>39.5}");
        assert_eq!(e.depth(), 2);
        // decision regions reproduce the four rectangles
        let (rows, labels) = toy_grid();
        for (r, l) in rows.iter().zip(&labels) {
            assert_eq!(tree.predict_row(r), *l);
        }
        for (q, l) in [([10.0, 90.0], 0), ([90.0, 90.0], 1), ([10.0, 0.0], 2), ([90.0, 0.0], 3)] {
            assert_eq!(tree.predict_row(&q), FailureId(l));
        }
        assert_eq!(tree.leaf_count(), 4);
    }

    #[test]
    fn single_split_between_classes() {
        // 10 points, two classes separated at dx = 0
        let xs = [-2.0, -1.5, -1.0, -0.7, -0.2, 0.3, 0.6, 1.1, 1.4, 2.0];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let labels: Vec<FailureId> = xs.iter().map(|&x| FailureId(if x < 0.0 { 1 } else { 2 })).collect();
        let tree = DecisionTree::fit_rows(
            &TrainingSet { schema: FeatureSchema::continuous(&["dx"]), rows: &rows, labels: &labels },
            None,
            TreeParams { max_depth: 8, min_leaf: 1 },
        )
        .unwrap();
        assert_eq!(tree.depth(), 1);
        // exhaustive oracle: the only zero-impurity cut lies between -0.2 and 0.3
        match &tree.nodes[0].kind {
            NodeKind::Split { split: Split::Threshold { threshold, .. }, .. } => {
                assert!(*threshold > -0.2 && *threshold < 0.3);
                assert!((threshold - 0.05).abs() < 1e-12);
            }
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn single_class_is_single_leaf() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| Sample {
                attributes: AttributeVector { dx: i as f64, dy: 0.0, dtheta: 0.0, controller: ControllerId(1) },
                label: FailureId(3),
            })
            .collect();
        let tree = DecisionTree::fit(&samples, None, TreeParams::default()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let q = AttributeVector { dx: -100.0, dy: 5.0, dtheta: 1.0, controller: ControllerId(4) };
        assert_eq!(tree.detect(&q), FailureId(3));
        let e = tree.explain(&q);
        assert_eq!(e.as_str(), "f3 because: {}");
        assert!(e.holds(&q.row()));
    }

    #[test]
    fn missing_class_is_training_error() {
        let samples = vec![Sample {
            attributes: AttributeVector { dx: 0.0, dy: 0.0, dtheta: 0.0, controller: ControllerId(0) },
            label: FailureId(1),
        }];
        let err = DecisionTree::fit(&samples, Some(&[FailureId(1), FailureId(2)]), TreeParams::default());
        assert!(matches!(err, Err(Error::Training(_))));
        assert!(matches!(DecisionTree::fit(&[], None, TreeParams::default()), Err(Error::Training(_))));
    }

    #[test]
    fn categorical_split_on_controller() {
        // identical residuals, label determined by controller subset
        let mut samples = Vec::new();
        for c in 0..4u8 {
            for k in 0..10 {
                samples.push(Sample {
                    attributes: AttributeVector { dx: k as f64 * 0.01, dy: 0.0, dtheta: 0.0, controller: ControllerId(c) },
                    label: FailureId(if c == 1 || c == 3 { 5 } else { 2 }),
                });
            }
        }
        let tree = DecisionTree::fit(&samples, None, TreeParams { max_depth: 3, min_leaf: 1 }).unwrap();
        assert_eq!(tree.error_rate(&samples), 0.0);
        let q = AttributeVector { dx: 0.0, dy: 0.0, dtheta: 0.0, controller: ControllerId(3) };
        assert_eq!(tree.explain(&q).as_str(), "f5 because: {controller∉{c0,c2}}");
    }

    #[test]
    fn centroids_match_nearest_centroid_oracle() {
        use rand::Rng;
        let mut rng = crate::sim::seeded_rng(3);
        let centroids = [[-1.0, 0.0, 0.0], [1.0, 0.5, 0.0], [0.0, -1.0, 0.3], [0.5, 1.5, -0.3]];
        let mut samples = Vec::new();
        for (i, c) in centroids.iter().enumerate() {
            for _ in 0..50 {
                let j: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
                samples.push(Sample {
                    attributes: AttributeVector { dx: c[0] + j[0], dy: c[1] + j[1], dtheta: c[2] + j[2], controller: ControllerId(0) },
                    label: FailureId(i as u8 + 1),
                });
            }
        }
        let tree = DecisionTree::fit(&samples, None, TreeParams::default()).unwrap();
        assert_eq!(tree.error_rate(&samples), 0.0);
        for (i, c) in centroids.iter().enumerate() {
            let q = AttributeVector { dx: c[0], dy: c[1], dtheta: c[2], controller: ControllerId(0) };
            let oracle = centroids
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let d = |p: &[f64; 3]| (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>();
                    d(a.1).total_cmp(&d(b.1))
                })
                .unwrap()
                .0;
            assert_eq!(oracle, i);
            assert_eq!(tree.detect(&q), FailureId(i as u8 + 1));
        }
    }

    #[test]
    fn attributes_from_poses() {
        let p = Pose::new(1.0, 2.0, 0.4);
        let a = compute_attributes(&p, &p, ControllerId(2));
        assert_eq!((a.dx, a.dy, a.dtheta), (0.0, 0.0, 0.0));
        let a = compute_attributes(&Pose::new(0.0, 0.0, 3.1), &Pose::new(0.0, 0.0, -3.1), ControllerId(0));
        assert!((a.dtheta - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-12);
        assert!((a.dtheta - 0.0832).abs() < 1e-4);
        let a = compute_attributes(&Pose::new(1.0, 1.0, 0.0), &Pose::new(1.2, 0.9, 0.0), ControllerId(2));
        assert!((a.dx - 0.2).abs() < 1e-12 && (a.dy + 0.1).abs() < 1e-12 && a.dtheta == 0.0);
        assert_eq!(a.controller, ControllerId(2));
    }

    #[test]
    fn json_round_trip_and_corruption() {
        let tree = toy_tree();
        let text = tree.to_json().unwrap();
        let back = DecisionTree::from_json(&text).unwrap();
        assert_eq!(back, tree);
        assert_eq!(back.to_json().unwrap(), text);
        let mut broken = tree.clone();
        if let NodeKind::Split { left, .. } = &mut broken.nodes[0].kind {
            *left = 999;
        }
        assert!(DecisionTree::from_json(&serde_json::to_string(&broken).unwrap()).is_err());
    }

    fn random_samples() -> impl Strategy<Value = Vec<Sample>> {
        prop::collection::vec(
            (-1.0f64..1.0, -1.0f64..1.0, -0.5f64..0.5, 0u8..4, 0u8..4).prop_map(|(dx, dy, dt, c, l)| Sample {
                attributes: AttributeVector { dx, dy, dtheta: dt, controller: ControllerId(c) },
                label: FailureId(l),
            }),
            10..120,
        )
    }

    proptest! {
        #[test]
        fn explanation_is_sound(samples in random_samples(), q in (-2.0f64..2.0, -2.0f64..2.0, -1.0f64..1.0, 0u8..5)) {
            let tree = DecisionTree::fit(&samples, None, TreeParams { max_depth: 6, min_leaf: 2 }).unwrap();
            let alpha = AttributeVector { dx: q.0, dy: q.1, dtheta: q.2, controller: ControllerId(q.3) };
            let e = tree.explain(&alpha);
            prop_assert!(e.holds(&alpha.row()));
            prop_assert_eq!(e.label, tree.detect(&alpha));
            let prefix = format!("{} because: {{", e.label);
            prop_assert!(e.as_str().starts_with(&prefix));
        }

        #[test]
        fn fit_is_deterministic(samples in random_samples()) {
            let a = DecisionTree::fit(&samples, None, TreeParams::default()).unwrap();
            let b = DecisionTree::fit(&samples, None, TreeParams::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
