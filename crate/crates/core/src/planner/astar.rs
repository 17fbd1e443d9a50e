use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::Vector2;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::grid::OccupancyGrid2D;
use crate::error::{Error, Result};

const NEIGHBORS: [[i64; 2]; 8] = [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]];

fn octile(a: [i64; 2], b: [i64; 2]) -> f64 {
    let dx = (a[0] - b[0]).abs() as f64;
    let dy = (a[1] - b[1]).abs() as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

/// Shortest 8-connected path between two free cells, in cell units.
/// Diagonal moves may not cut an occupied corner. Ties on f are broken by
/// smaller g, then by lexicographic cell order.
pub fn astar(grid: &OccupancyGrid2D, start: [i64; 2], goal: [i64; 2]) -> Option<(Vec<[i64; 2]>, f64)> {
    if grid.is_occupied(start) || grid.is_occupied(goal) {
        return None;
    }
    let n = grid.dims[0] * grid.dims[1];
    let idx = |c: [i64; 2]| grid.index(c[0] as usize, c[1] as usize);
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0.0;
    open.push(Reverse((OrderedFloat(octile(start, goal)), OrderedFloat(0.0), start)));
    while let Some(Reverse((_, OrderedFloat(gc), c))) = open.pop() {
        let ci = idx(c);
        if closed[ci] || gc > g[ci] {
            continue;
        }
        closed[ci] = true;
        if c == goal {
            let mut path = vec![c];
            let mut k = ci;
            while parent[k] != usize::MAX {
                k = parent[k];
                let [i, j] = [k % grid.dims[0], k / grid.dims[0]];
                path.push([i as i64, j as i64]);
            }
            path.reverse();
            return Some((path, gc));
        }
        for d in NEIGHBORS {
            let nb = [c[0] + d[0], c[1] + d[1]];
            if grid.is_occupied(nb) {
                continue;
            }
            let diagonal = d[0] != 0 && d[1] != 0;
            if diagonal && (grid.is_occupied([c[0] + d[0], c[1]]) || grid.is_occupied([c[0], c[1] + d[1]])) {
                continue;
            }
            let ng = gc + if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let ni = idx(nb);
            if ng < g[ni] {
                g[ni] = ng;
                parent[ni] = ci;
                open.push(Reverse((OrderedFloat(ng + octile(nb, goal)), OrderedFloat(ng), nb)));
            }
        }
    }
    None
}

/// A start or waypoint moved out of an occupied cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snap {
    pub waypoint: usize,
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathPlan {
    /// Smoothed polyline from the start through every waypoint.
    pub points: Vec<Vector2<f64>>,
    /// Concatenated A* polyline before smoothing.
    pub raw: Vec<Vector2<f64>>,
    /// Sum of segment-wise A* costs (m).
    pub raw_cost: f64,
    pub snaps: Vec<Snap>,
    pub source_version: u64,
}

impl PathPlan {
    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }
}

pub(crate) fn polyline_length(points: &[Vector2<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn snap(grid: &OccupancyGrid2D, p: &Vector2<f64>, radius: f64) -> Option<[i64; 2]> {
    let c = grid.cell_of(p);
    if !grid.is_occupied(c) {
        return Some(c);
    }
    let r = (radius / grid.cell).ceil() as i64;
    let mut best: Option<(f64, [i64; 2])> = None;
    for dj in -r..=r {
        for di in -r..=r {
            let nb = [c[0] + di, c[1] + dj];
            if grid.is_occupied(nb) {
                continue;
            }
            let d = (grid.center(nb) - p).norm();
            if d <= radius && best.is_none_or(|(bd, bc)| (d, nb) < (bd, bc)) {
                best = Some((d, nb));
            }
        }
    }
    best.map(|(_, c)| c)
}

fn blocking_region(grid: &OccupancyGrid2D, a: [i64; 2], b: [i64; 2]) -> String {
    let pa = grid.center(a);
    let pb = grid.center(b);
    let blocked: Vec<[i64; 2]> = grid.traversed_cells(&pa, &pb).into_iter().filter(|c| grid.is_occupied(*c)).collect();
    match (blocked.first(), blocked.last()) {
        (Some(f), Some(l)) => {
            let (pf, pl) = (grid.center(*f), grid.center(*l));
            format!("no path from ({:.2}, {:.2}) to ({:.2}, {:.2}); straight line blocked between ({:.2}, {:.2}) and ({:.2}, {:.2})", pa.x, pa.y, pb.x, pb.y, pf.x, pf.y, pl.x, pl.y)
        }
        _ => format!("no path from ({:.2}, {:.2}) to ({:.2}, {:.2}); target region enclosed", pa.x, pa.y, pb.x, pb.y),
    }
}

/// Greedy line-of-sight shortcutting: from each kept vertex jump to the
/// farthest later vertex reachable by a free straight segment.
pub fn smooth_path(grid: &OccupancyGrid2D, raw: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    if raw.len() <= 2 {
        return raw.to_vec();
    }
    let mut out = vec![raw[0]];
    let mut i = 0;
    while i < raw.len() - 1 {
        let mut j = raw.len() - 1;
        while j > i + 1 && !grid.segment_free(&raw[i], &raw[j]) {
            j -= 1;
        }
        out.push(raw[j]);
        i = j;
    }
    out
}

/// Shortest path from `start` through the ordered `waypoints`.
pub fn plan_path(grid: &OccupancyGrid2D, start: Vector2<f64>, waypoints: &[Vector2<f64>], snap_radius: f64) -> Result<PathPlan> {
    let mut snaps = Vec::new();
    let mut anchors = Vec::with_capacity(waypoints.len() + 1);
    for (k, p) in std::iter::once(&start).chain(waypoints).enumerate() {
        let c = snap(grid, p, snap_radius).ok_or_else(|| {
            Error::Planning(format!("{} ({:.2}, {:.2}) is occupied with no free cell within {snap_radius} m", if k == 0 { "start".to_string() } else { format!("waypoint {}", k - 1) }, p.x, p.y))
        })?;
        let point = if c == grid.cell_of(p) { *p } else {
            let to = grid.center(c);
            snaps.push(Snap { waypoint: k, from: [p.x, p.y], to: [to.x, to.y] });
            to
        };
        anchors.push((c, point));
    }
    let mut raw = vec![anchors[0].1];
    let mut raw_cost = 0.0;
    let mut points = vec![anchors[0].1];
    // smooth each leg separately so every waypoint stays on the path
    for w in anchors.windows(2) {
        let ((ca, pa), (cb, pb)) = (w[0], w[1]);
        let (cells, cost) = astar(grid, ca, cb).ok_or_else(|| Error::Planning(blocking_region(grid, ca, cb)))?;
        raw_cost += cost * grid.cell;
        let mut leg = vec![pa];
        if cells.len() > 2 {
            leg.extend(cells[1..cells.len() - 1].iter().map(|c| grid.center(*c)));
        }
        if (leg.last().unwrap() - pb).norm() > 1e-12 {
            leg.push(pb);
        }
        raw.extend_from_slice(&leg[1..]);
        points.extend_from_slice(&smooth_path(grid, &leg)[1..]);
    }
    Ok(PathPlan { points, raw, raw_cost, snaps, source_version: grid.source_version })
}
