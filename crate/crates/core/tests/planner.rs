use htmpc_core::geometry::{FrameId, VoxelGrid};
use htmpc_core::mapping::build_local_edf;
use htmpc_core::planner::*;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(rng: &mut ChaCha8Rng, n: usize, density: f64) -> OccupancyGrid2D {
    let mut g = OccupancyGrid2D::free(Vector2::zeros(), 0.1, [n, n]);
    for j in 0..n {
        for i in 0..n {
            g.set([i, j], rng.random_bool(density));
        }
    }
    g
}

/// Plain Dijkstra over the same move set, scanning for the minimum each step.
fn dijkstra(g: &OccupancyGrid2D, s: [i64; 2], t: [i64; 2]) -> Option<f64> {
    let (nx, ny) = (g.dims[0] as i64, g.dims[1] as i64);
    let n = (nx * ny) as usize;
    let id = |c: [i64; 2]| (c[0] + nx * c[1]) as usize;
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[id(s)] = 0.0;
    loop {
        let mut best = None;
        for k in 0..n {
            if !done[k] && dist[k].is_finite() && best.is_none_or(|b: usize| dist[k] < dist[b]) {
                best = Some(k);
            }
        }
        let k = best?;
        done[k] = true;
        let c = [k as i64 % nx, k as i64 / nx];
        if c == t {
            return Some(dist[k]);
        }
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let nb = [c[0] + dx, c[1] + dy];
                if g.is_occupied(nb) {
                    continue;
                }
                if dx != 0 && dy != 0 && (g.is_occupied([c[0] + dx, c[1]]) || g.is_occupied([c[0], c[1] + dy])) {
                    continue;
                }
                let w = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 };
                let m = id(nb);
                dist[m] = dist[m].min(dist[k] + w);
            }
        }
    }
}

/// Independent collision check by dense sampling.
fn sampled_free(g: &OccupancyGrid2D, pts: &[Vector2<f64>]) -> bool {
    pts.windows(2).all(|w| {
        let steps = (((w[1] - w[0]).norm() / g.cell) * 200.0).ceil() as usize + 1;
        (0..=steps).all(|k| !g.is_occupied(g.cell_of(&(w[0] + (w[1] - w[0]) * (k as f64 / steps as f64)))))
    })
}

fn raw_length(pts: &[Vector2<f64>]) -> f64 {
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

#[test]
fn astar_cost_equals_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut solved = 0;
    for _ in 0..50 {
        let g = random_grid(&mut rng, 24, 0.25);
        let free: Vec<[i64; 2]> = (0..24 * 24).map(|k| [k % 24, k / 24]).filter(|c| !g.is_occupied(*c)).collect();
        let s = free[rng.random_range(0..free.len())];
        let t = free[rng.random_range(0..free.len())];
        let oracle = dijkstra(&g, s, t);
        let found = astar(&g, s, t);
        match (oracle, found) {
            (Some(d), Some((path, cost))) => {
                assert!((d - cost).abs() < 1e-9, "{d} vs {cost}");
                assert_eq!(path[0], s);
                assert_eq!(*path.last().unwrap(), t);
                solved += 1;
            }
            (None, None) => {}
            (o, f) => panic!("reachability disagrees: {o:?} {:?}", f.map(|x| x.1)),
        }
    }
    assert!(solved > 25);
}

#[test]
fn empty_field_is_free_and_path_is_straight() {
    let field = build_local_edf(&[], &Vector3::new(0.0, 0.0, 0.0), [4.0, 4.0, 2.0], 1.5, 0.1).unwrap();
    let g = occupancy_from_field(&field, [0.1, 1.6], 0.45);
    assert_eq!(g.occupied_count(), 0);
    let plan = plan_path(&g, Vector2::new(-1.5, -1.0), &[Vector2::new(1.2, 1.4)], 0.5).unwrap();
    assert_eq!(plan.points.len(), 2);
    assert!((plan.length() - (2.7f64.powi(2) + 2.4f64.powi(2)).sqrt()).abs() < 1e-12);
}

fn box_cells(lo: [i64; 3], hi: [i64; 3]) -> Vec<[i64; 3]> {
    let mut v = vec![];
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                v.push([i, j, k]);
            }
        }
    }
    v
}

#[test]
fn box_footprint_is_dilated_by_inflation() {
    // box occupying x in [0.5, 1.0], y in [-0.2, 0.3], z up to 0.6
    let cells = box_cells([5, -2, 0], [10, 3, 6]);
    let field = build_local_edf(&cells, &Vector3::new(0.5, 0.0, 0.0), [5.0, 5.0, 2.0], 1.5, 0.1).unwrap();
    let inflation = 0.45;
    let g = occupancy_from_field(&field, [0.1, 1.6], inflation);
    for j in 0..g.dims[1] {
        for i in 0..g.dims[0] {
            let p = g.center([i as i64, j as i64]);
            let dx = (0.5 - p.x).max(p.x - 1.0).max(0.0);
            let dy = (-0.2 - p.y).max(p.y - 0.3).max(0.0);
            let d = (dx * dx + dy * dy).sqrt();
            let occ = g.is_occupied([i as i64, j as i64]);
            if d < inflation - g.cell {
                assert!(occ, "{p:?} should be occupied");
            }
            if d > inflation + g.cell {
                assert!(!occ, "{p:?} should be free");
            }
        }
    }
    // zero inflation keeps only the footprint itself
    let g0 = occupancy_from_field(&field, [0.1, 1.6], 0.0);
    assert_eq!(g0.occupied_count(), 6 * 6);
}

fn wall_with_gap() -> OccupancyGrid2D {
    let mut g = OccupancyGrid2D::free(Vector2::zeros(), 0.1, [40, 40]);
    for j in 0..40 {
        if !(30..34).contains(&j) {
            g.set([20, j], true);
            g.set([21, j], true);
        }
    }
    g
}

#[test]
fn path_goes_through_the_gap() {
    let g = wall_with_gap();
    let plan = plan_path(&g, Vector2::new(0.5, 0.5), &[Vector2::new(3.5, 0.5)], 0.3).unwrap();
    let oracle = dijkstra(&g, [5, 5], [35, 5]).unwrap() * g.cell;
    assert!((plan.raw_cost - oracle).abs() < 1e-9);
    assert!(plan.points.iter().any(|p| p.y > 2.9));
    assert!(sampled_free(&g, &plan.points));
    assert!(plan.length() <= raw_length(&plan.raw) + 1e-12);
}

#[test]
fn waypoint_in_obstacle_fails_or_snaps() {
    let mut g = OccupancyGrid2D::free(Vector2::zeros(), 0.1, [40, 40]);
    for j in 10..30 {
        for i in 10..30 {
            g.set([i, j], true);
        }
    }
    let err = plan_path(&g, Vector2::new(0.3, 0.3), &[Vector2::new(2.0, 2.0)], 0.3).unwrap_err();
    assert!(err.to_string().contains("waypoint 0"));
    let plan = plan_path(&g, Vector2::new(0.3, 0.3), &[Vector2::new(1.05, 2.0)], 0.3).unwrap();
    assert_eq!(plan.snaps.len(), 1);
    assert!((plan.points.last().unwrap() - Vector2::new(0.9, 2.0)).norm() < 1e-9);
}

#[test]
fn enclosed_goal_reports_blocking_region() {
    let mut g = OccupancyGrid2D::free(Vector2::zeros(), 0.1, [30, 30]);
    for k in 10..=20 {
        g.set([k, 10], true);
        g.set([k, 20], true);
        g.set([10, k], true);
        g.set([20, k], true);
    }
    let err = plan_path(&g, Vector2::new(0.2, 0.2), &[Vector2::new(1.5, 1.5)], 0.05).unwrap_err();
    assert!(err.to_string().contains("blocked between"));
}

#[test]
fn multi_waypoint_path_visits_all() {
    let g = wall_with_gap();
    let wps = [Vector2::new(3.5, 0.5), Vector2::new(3.5, 3.5), Vector2::new(0.5, 3.8)];
    let plan = plan_path(&g, Vector2::new(0.5, 0.5), &wps, 0.3).unwrap();
    for w in &wps {
        assert!(plan.points.iter().any(|p| (p - w).norm() < 1e-12));
    }
    assert!(sampled_free(&g, &plan.points));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn smoothing_is_free_shorter_and_deterministic(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(&mut rng, 30, 0.15);
        let free: Vec<[i64; 2]> = (0..900).map(|k| [k % 30, k / 30]).filter(|c| !g.is_occupied(*c)).collect();
        let s = g.center(free[0]);
        let t = g.center(*free.last().unwrap());
        if let Ok(plan) = plan_path(&g, s, &[t], 0.0) {
            prop_assert!(sampled_free(&g, &plan.points));
            prop_assert!(plan.length() <= raw_length(&plan.raw) + 1e-9);
            let again = plan_path(&g, s, &[t], 0.0).unwrap();
            prop_assert_eq!(plan.points, again.points);
        }
    }
}

#[test]
fn straight_line_duration_closed_form() {
    let line = [Vector2::new(0.0, 0.0), Vector2::new(10.0, 0.0)];
    let r = time_parameterize(FrameId(0), &line, 1.0, 0.0, 10.0, HeadingMode::Tangent, 0.0, 2.0, 0.05, 0.3).unwrap();
    r.validate().unwrap();
    assert!((r.end_time() - 2.0 - 10.1).abs() < 1e-9);
    assert!((r.final_pose().position.x - 10.0).abs() < 1e-12);
    for w in r.poses.windows(2).zip(r.times.windows(2)) {
        let (p, t) = w;
        assert!((p[1].position - p[0].position).norm() <= 1.0 * (t[1] - t[0]) + 1e-9);
    }
    assert!(r.twists.iter().all(|(v, _)| v.norm() <= 1.0 + 1e-9));
    let (p, _) = r.sample(100.0);
    assert_eq!(p, r.final_pose());
}

#[test]
fn short_path_uses_triangular_profile() {
    let line = [Vector2::new(0.0, 0.0), Vector2::new(0.1, 0.0)];
    let r = time_parameterize(FrameId(0), &line, 1.0, 0.0, 1.0, HeadingMode::Fixed(0.5), 0.5, 0.0, 0.05, 0.3).unwrap();
    assert!((r.end_time() - 2.0 * 0.1f64.sqrt()).abs() < 1e-9);
    assert!(r.twists.iter().all(|(v, _)| v.norm() <= 0.1f64.sqrt() + 1e-9));
    assert!((r.final_pose().yaw() - 0.5).abs() < 1e-12);
}

#[test]
fn zero_length_path_holds_pose() {
    let r = time_parameterize(FrameId(0), &[Vector2::new(1.0, 2.0)], 1.0, 0.0, 1.0, HeadingMode::Tangent, 0.7, 3.0, 0.05, 0.3).unwrap();
    assert_eq!(r.times, vec![3.0]);
    let (p, (v, w)) = r.sample(10.0);
    assert!((p.yaw() - 0.7).abs() < 1e-12);
    assert_eq!(v.norm() + w.norm(), 0.0);
}

#[test]
fn tangent_heading_follows_turns_continuously() {
    let path = [Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0), Vector2::new(2.0, 2.0), Vector2::new(0.0, 2.0)];
    let r = time_parameterize(FrameId(0), &path, 0.5, 0.0, 1.0, HeadingMode::Tangent, 0.0, 0.0, 0.05, 0.3).unwrap();
    let mid = r.sample(r.end_time() * 0.5).0.yaw();
    assert!((mid - std::f64::consts::FRAC_PI_2).abs() < 0.1);
    let yaws: Vec<f64> = r.poses.iter().map(|p| p.yaw()).collect();
    for w in yaws.windows(2) {
        assert!(htmpc_core::geometry::wrap_angle(w[1] - w[0]).abs() < 0.2);
    }
}

#[test]
fn field_from_grid_helper_dims() {
    let f = VoxelGrid::filled(Vector3::new(-1.0, -2.0, 0.0), 0.2, [5, 6, 3], 10.0);
    let g = occupancy_from_field(&f, [0.0, 1.0], 0.5);
    assert_eq!(g.dims, [5, 6]);
    assert_eq!(g.origin, Vector2::new(-1.0, -2.0));
    assert_eq!(g.occupied_count(), 0);
}

#[test]
fn moving_start_skips_the_ramp_up() {
    let line = [Vector2::new(0.0, 0.0), Vector2::new(5.0, 0.0)];
    let r = time_parameterize(FrameId(0), &line, 1.0, 1.0, 2.0, HeadingMode::Tangent, 0.0, 0.0, 0.05, 0.3).unwrap();
    assert!((r.twists[0].0.x - 1.0).abs() < 1e-12);
    // cruise 4.75 m, brake 0.5 s
    assert!((r.end_time() - (4.75 + 0.5)).abs() < 1e-9);
    // too short to stop at the nominal rate: braking stretches over the path
    let short = [Vector2::new(0.0, 0.0), Vector2::new(0.1, 0.0)];
    let r = time_parameterize(FrameId(0), &short, 1.0, 1.0, 2.0, HeadingMode::Tangent, 0.0, 0.0, 0.05, 0.3).unwrap();
    assert!((r.end_time() - 0.2).abs() < 1e-9);
    assert!((r.final_pose().position.x - 0.1).abs() < 1e-12);
}
