//! Known obstacle map: disc obstacles, axis-aligned wall segments and a
//! rectangular workspace boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Workspace {
    /// Signed distance to the boundary, positive inside.
    fn inner_distance(&self, p: Point) -> (f64, Point) {
        let candidates = [
            (p[0] - self.x_min, [1.0, 0.0]),
            (self.x_max - p[0], [-1.0, 0.0]),
            (p[1] - self.y_min, [0.0, 1.0]),
            (self.y_max - p[1], [0.0, -1.0]),
        ];
        candidates
            .into_iter()
            .fold((f64::INFINITY, [0.0, 0.0]), |best, c| if c.0 < best.0 { c } else { best })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FreeSpace {
    #[serde(default)]
    pub discs: Vec<Disc>,
    #[serde(default)]
    pub walls: Vec<Wall>,
    #[serde(default)]
    pub workspace: Option<Workspace>,
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Closest point on segment [a, b] to p.
pub fn closest_on_segment(p: Point, a: Point, b: Point) -> Point {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    norm(sub(p, closest_on_segment(p, a, b)))
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(q2, q1), sub(p1, q1));
    let d2 = cross(sub(q2, q1), sub(p2, q1));
    let d3 = cross(sub(p2, p1), sub(q1, p1));
    let d4 = cross(sub(p2, p1), sub(q2, p1));
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn segment_segment_distance(p1: Point, p2: Point, q1: Point, q2: Point) -> f64 {
    if segments_cross(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}

impl FreeSpace {
    pub fn empty() -> Self {
        FreeSpace::default()
    }

    pub fn obstacle_count(&self) -> usize {
        self.discs.len() + self.walls.len()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.discs.iter().find(|d| !(d.radius > 0.0)) {
            return Err(Error::config(format!("obstacle radius must be positive: {d:?}")));
        }
        if let Some(w) = self.walls.iter().find(|w| w.a[0] != w.b[0] && w.a[1] != w.b[1]) {
            return Err(Error::config(format!("wall segment must be axis-aligned: {w:?}")));
        }
        if let Some(ws) = &self.workspace {
            if !(ws.x_min < ws.x_max && ws.y_min < ws.y_max) {
                return Err(Error::config("empty workspace"));
            }
        }
        Ok(())
    }

    /// Distance from `p` to the nearest obstacle surface (negative inside a
    /// disc or outside the workspace) and the unit direction of increasing
    /// clearance.
    pub fn clearance(&self, p: Point) -> (f64, Point) {
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for d in &self.discs {
            let v = sub(p, d.center);
            let n = norm(v);
            let dist = n - d.radius;
            if dist < best.0 {
                let dir = if n > 0.0 { [v[0] / n, v[1] / n] } else { [1.0, 0.0] };
                best = (dist, dir);
            }
        }
        for w in &self.walls {
            let c = closest_on_segment(p, w.a, w.b);
            let v = sub(p, c);
            let n = norm(v);
            if n < best.0 {
                let dir = if n > 0.0 { [v[0] / n, v[1] / n] } else { [0.0, 0.0] };
                best = (n, dir);
            }
        }
        if let Some(ws) = &self.workspace {
            let (dist, dir) = ws.inner_distance(p);
            if dist < best.0 {
                best = (dist, dir);
            }
        }
        best
    }

    /// True if a disc of `radius` at `p` touches no obstacle and lies inside
    /// the workspace.
    pub fn disc_is_free(&self, p: Point, radius: f64) -> bool {
        self.capsule_is_free(p, p, radius)
    }

    /// True if the swept disc (capsule) of `radius` along [a, b] touches no
    /// obstacle and lies inside the workspace. Touching counts as contact.
    pub fn capsule_is_free(&self, a: Point, b: Point, radius: f64) -> bool {
        for d in &self.discs {
            if point_segment_distance(d.center, a, b) <= d.radius + radius {
                return false;
            }
        }
        for w in &self.walls {
            if segment_segment_distance(a, b, w.a, w.b) <= radius {
                return false;
            }
        }
        if let Some(ws) = &self.workspace {
            // convex workspace: the capsule is inside iff both end discs are
            for p in [a, b] {
                if ws.inner_distance(p).0 <= radius {
                    return false;
                }
            }
        }
        true
    }

    /// Copy with every disc obstacle grown by `extra`.
    pub fn inflated(&self, extra: f64) -> FreeSpace {
        let mut out = self.clone();
        for d in &mut out.discs {
            d.radius += extra;
        }
        out
    }
}
