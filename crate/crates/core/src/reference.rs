//! Time-parametrised reference trajectories.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{wrap_angle, Pose};
use crate::space::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ReferenceShape {
    Straight {
        start: Point,
        goal: Point,
        speed: f64,
    },
    /// Starts at `center + (a, 0)` and runs counter-clockwise unless
    /// `clockwise` is set.
    Ellipse {
        center: Point,
        semi_axes: [f64; 2],
        speed: f64,
        #[serde(default = "one_lap")]
        laps: f64,
        #[serde(default)]
        clockwise: bool,
    },
}

fn one_lap() -> f64 {
    1.0
}

const ARC_TABLE_SIZE: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "ReferenceShape", into = "ReferenceShape")]
pub struct ReferenceTrajectory {
    shape: ReferenceShape,
    // cumulative arc length over one lap, ellipse only
    arc: OnceLock<Vec<f64>>,
}

impl PartialEq for ReferenceTrajectory {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
    }
}

impl From<ReferenceShape> for ReferenceTrajectory {
    fn from(shape: ReferenceShape) -> Self {
        ReferenceTrajectory { shape, arc: OnceLock::new() }
    }
}

impl From<ReferenceTrajectory> for ReferenceShape {
    fn from(r: ReferenceTrajectory) -> Self {
        r.shape
    }
}

impl ReferenceTrajectory {
    pub fn straight(start: Point, goal: Point, speed: f64) -> Self {
        ReferenceShape::Straight { start, goal, speed }.into()
    }

    pub fn ellipse(center: Point, semi_axes: [f64; 2], speed: f64, laps: f64) -> Self {
        ReferenceShape::Ellipse { center, semi_axes, speed, laps, clockwise: false }.into()
    }

    pub fn shape(&self) -> &ReferenceShape {
        &self.shape
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            ReferenceShape::Straight { start, goal, speed } => speed > 0.0 && (start != goal),
            ReferenceShape::Ellipse { semi_axes, speed, laps, .. } => {
                speed > 0.0 && laps > 0.0 && semi_axes.iter().all(|a| *a > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("degenerate reference {:?}", self.shape)))
        }
    }

    fn arc_table(&self, semi_axes: [f64; 2]) -> &[f64] {
        self.arc.get_or_init(|| {
            let [a, b] = semi_axes;
            let h = 2.0 * PI / (ARC_TABLE_SIZE - 1) as f64;
            let speed_at = |phi: f64| (a * phi.sin()).hypot(b * phi.cos());
            let mut table = Vec::with_capacity(ARC_TABLE_SIZE);
            table.push(0.0);
            for i in 1..ARC_TABLE_SIZE {
                let (p0, p1) = ((i - 1) as f64 * h, i as f64 * h);
                // Simpson on each cell
                let s = h / 6.0 * (speed_at(p0) + 4.0 * speed_at(0.5 * (p0 + p1)) + speed_at(p1));
                table.push(table[i - 1] + s);
            }
            table
        })
    }

    fn lap_length(&self) -> f64 {
        match self.shape {
            ReferenceShape::Straight { start, goal, .. } => (goal[0] - start[0]).hypot(goal[1] - start[1]),
            ReferenceShape::Ellipse { semi_axes, .. } => *self.arc_table(semi_axes).last().unwrap(),
        }
    }

    pub fn speed(&self) -> f64 {
        match self.shape {
            ReferenceShape::Straight { speed, .. } | ReferenceShape::Ellipse { speed, .. } => speed,
        }
    }

    /// Time to traverse the whole reference.
    pub fn duration(&self) -> f64 {
        let laps = match self.shape {
            ReferenceShape::Straight { .. } => 1.0,
            ReferenceShape::Ellipse { laps, .. } => laps,
        };
        laps * self.lap_length() / self.speed()
    }

    /// Final pose; sampling past the end clamps here.
    pub fn end_pose(&self) -> Pose {
        self.sample(self.duration())
    }

    pub fn sample(&self, t: f64) -> Pose {
        let t = t.clamp(0.0, self.duration());
        match self.shape {
            ReferenceShape::Straight { start, goal, speed } => {
                let d = [goal[0] - start[0], goal[1] - start[1]];
                let len = d[0].hypot(d[1]);
                let s = (speed * t).min(len);
                Pose::new(start[0] + d[0] / len * s, start[1] + d[1] / len * s, d[1].atan2(d[0]))
            }
            ReferenceShape::Ellipse { center, semi_axes, speed, clockwise, .. } => {
                let table = self.arc_table(semi_axes);
                let lap = *table.last().unwrap();
                let s = (speed * t).rem_euclid(lap);
                let s = if speed * t > 0.0 && s == 0.0 && speed * t >= lap { lap } else { s };
                let i = table.partition_point(|&x| x < s).clamp(1, ARC_TABLE_SIZE - 1);
                let (s0, s1) = (table[i - 1], table[i]);
                let frac = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
                let h = 2.0 * PI / (ARC_TABLE_SIZE - 1) as f64;
                let phi = (i - 1) as f64 * h + frac * h;
                let [a, b] = semi_axes;
                let dir = if clockwise { -1.0 } else { 1.0 };
                let x = center[0] + a * phi.cos();
                let y = center[1] + dir * b * phi.sin();
                let heading = (dir * b * phi.cos()).atan2(-a * phi.sin());
                Pose::new(x, y, wrap_angle(heading))
            }
        }
    }
}
