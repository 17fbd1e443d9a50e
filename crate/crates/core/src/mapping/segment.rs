//! Ground removal and single-linkage Euclidean clustering.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSegment {
    pub points: Vec<Vector3<f64>>,
    pub centroid: Vector3<f64>,
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

impl ObservationSegment {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let n = points.len().max(1) as f64;
        let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
        let mut lower = Vector3::repeat(f64::INFINITY);
        let mut upper = Vector3::repeat(f64::NEG_INFINITY);
        for p in &points {
            lower = lower.inf(p);
            upper = upper.sup(p);
        }
        Self { points, centroid, lower, upper }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Points at or below this height are ground.
    pub ground_height: f64,
    pub cluster_radius: f64,
    pub min_points: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { ground_height: 0.05, cluster_radius: 0.15, min_points: 20 }
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Segments a world-frame cloud. Output order follows the first point of
/// each cluster, so it is deterministic for a given input order.
pub fn segment_cloud(points: &[Vector3<f64>], cfg: &SegmentationConfig) -> Vec<ObservationSegment> {
    let pts: Vec<Vector3<f64>> = points
        .iter()
        .filter(|p| p.z > cfg.ground_height && p.iter().all(|v| v.is_finite()))
        .copied()
        .collect();
    if pts.is_empty() {
        return Vec::new();
    }
    let r = cfg.cluster_radius;
    let r2 = r * r;
    let cell = |p: &Vector3<f64>| -> (i64, i64, i64) {
        ((p.x / r).floor() as i64, (p.y / r).floor() as i64, (p.z / r).floor() as i64)
    };
    let mut hash: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        hash.entry(cell(p)).or_default().push(i);
    }
    let mut uf = UnionFind::new(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = hash.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            if j > i && (pts[j] - p).norm_squared() <= r2 {
                                uf.union(i, j);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = Vec::new();
    let mut members: HashMap<usize, Vec<Vector3<f64>>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        let root = uf.find(i);
        let entry = members.entry(root).or_default();
        if entry.is_empty() {
            order.push(root);
        }
        entry.push(*p);
    }
    order
        .into_iter()
        .filter_map(|root| {
            let m = members.remove(&root).expect("cluster");
            (m.len() >= cfg.min_points).then(|| ObservationSegment::from_points(m))
        })
        .collect()
}
