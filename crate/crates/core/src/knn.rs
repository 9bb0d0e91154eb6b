//! Exact nearest-neighbour queries over small point sets with a kd-tree.
//!
//! All distances are squared Euclidean, summed in coordinate order, so the
//! tree and a brute-force scan produce bit-identical values. Ties resolve to
//! the lowest point index.

use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

/// Squared distance; the single definition every query uses.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[derive(Debug, Clone)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { lo: Box<Bounded>, hi: Box<Bounded> },
}

#[derive(Debug, Clone)]
struct Bounded {
    node: KdNode,
    min: Vec<f64>,
    max: Vec<f64>,
}

/// kd-tree over borrowed-by-copy points. Point `i` keeps its caller index.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    root: Option<Box<Bounded>>,
}

impl KdTree {
    /// `points` is row-major, `dim` coordinates per point; `ids` are the
    /// caller's indices reported back by queries.
    pub fn build(dim: usize, points: &[f64], ids: &[usize]) -> Self {
        assert!(dim > 0 && points.len() == dim * ids.len());
        let n = ids.len();
        let mut order: Vec<usize> = (0..n).collect();
        let root = if n == 0 { None } else { Some(Box::new(Self::grow(dim, points, &mut order, 0, n))) };
        // store points in tree order for locality
        let mut packed = Vec::with_capacity(points.len());
        for &i in &order {
            packed.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        let order = order.iter().map(|&i| ids[i]).collect();
        KdTree { dim, points: packed, order, root }
    }

    fn grow(dim: usize, pts: &[f64], order: &mut [usize], start: usize, end: usize) -> Bounded {
        let slice = &mut order[start..end];
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for &i in slice.iter() {
            for k in 0..dim {
                min[k] = min[k].min(pts[i * dim + k]);
                max[k] = max[k].max(pts[i * dim + k]);
            }
        }
        if end - start <= LEAF_SIZE {
            return Bounded { node: KdNode::Leaf { start, end }, min, max };
        }
        let axis = (0..dim).max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b]))).unwrap();
        if max[axis] == min[axis] {
            // all coincident
            return Bounded { node: KdNode::Leaf { start, end }, min, max };
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| pts[a * dim + axis].total_cmp(&pts[b * dim + axis]));
        let lo = Self::grow(dim, pts, order, start, start + mid);
        let hi = Self::grow(dim, pts, order, start + mid, end);
        Bounded { node: KdNode::Split { lo: Box::new(lo), hi: Box::new(hi) }, min, max }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn point(&self, slot: usize) -> &[f64] {
        &self.points[slot * self.dim..(slot + 1) * self.dim]
    }

    fn box_dist2(q: &[f64], min: &[f64], max: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..q.len() {
            let c = q[k].clamp(min[k], max[k]);
            let d = q[k] - c;
            s += d * d;
        }
        s
    }

    fn visit<'a>(&'a self, q: &[f64], bound: &mut dyn FnMut() -> f64, leaf: &mut dyn FnMut(usize, f64)) {
        let Some(root) = &self.root else { return };
        let mut stack: Vec<&'a Bounded> = vec![root];
        while let Some(b) = stack.pop() {
            if Self::box_dist2(q, &b.min, &b.max) > bound() {
                continue;
            }
            match &b.node {
                KdNode::Leaf { start, end } => {
                    for slot in *start..*end {
                        leaf(slot, dist2(q, self.point(slot)));
                    }
                }
                KdNode::Split { lo, hi } => {
                    let (lo, hi) = (lo.as_ref(), hi.as_ref());
                    // visit the nearer child first (pushed last)
                    if Self::box_dist2(q, &lo.min, &lo.max) <= Self::box_dist2(q, &hi.min, &hi.max) {
                        stack.push(hi);
                        stack.push(lo);
                    } else {
                        stack.push(lo);
                        stack.push(hi);
                    }
                }
            }
        }
    }

    /// Nearest point (caller id, squared distance); ties to the lowest id.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let cell = std::cell::Cell::new(f64::INFINITY);
        self.visit(q, &mut || cell.get(), &mut |slot, d| {
            let id = self.order[slot];
            let better = match best {
                None => true,
                Some((bid, bd)) => d < bd || (d == bd && id < bid),
            };
            if better {
                best = Some((id, d));
                cell.set(d);
            }
        });
        best
    }

    /// Squared distance to the k-th nearest point, not counting the point
    /// with caller id `exclude`. None if fewer than k candidates.
    pub fn kth_dist2(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Option<f64> {
        assert!(k >= 1);
        let mut heap: BinaryHeap<OrdF64> = BinaryHeap::with_capacity(k + 1);
        let cell = std::cell::Cell::new(f64::INFINITY);
        self.visit(q, &mut || cell.get(), &mut |slot, d| {
            if Some(self.order[slot]) == exclude {
                return;
            }
            if heap.len() < k {
                heap.push(OrdF64(d));
            } else if d < heap.peek().unwrap().0 {
                heap.pop();
                heap.push(OrdF64(d));
            }
            if heap.len() == k {
                cell.set(heap.peek().unwrap().0);
            }
        });
        (heap.len() == k).then(|| heap.peek().unwrap().0)
    }

    /// Caller ids of all points with squared distance ≤ r2, ascending.
    pub fn within(&self, q: &[f64], r2: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(q, &mut || r2, &mut |slot, d| {
            if d <= r2 {
                out.push(self.order[slot]);
            }
        });
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
