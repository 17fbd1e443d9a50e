use std::sync::Arc;

use htmpc_core::geometry::{rpy, Pose3};
use htmpc_core::mapping::*;
use htmpc_core::world::{render_depth, BoxObject, DepthCameraSpec, DepthFrame, WorldState};
use nalgebra::Vector3;
use proptest::prelude::*;

mod common;
use common::{quadrature, rel_err, trapezoid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ------------------------------------------------------------ consistency

#[test]
fn closed_form_moments_match_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let delta_max = 1.0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = ConsistencyParams {
            mu: rng.random_range(-0.3..0.3),
            sigma: rng.random_range(0.005..0.15),
            alpha: rng.random_range(1.0..20.0),
            beta: rng.random_range(1.0..20.0),
        };
        let m = MeasurementPair { delta: rng.random_range(-1.0..1.0), s: rng.random_bool(0.5) };
        let tau = rng.random_range(0.02..0.1);
        let closed = posterior_moments(&p, &m, tau, delta_max);
        let q = quadrature(&p, &m, tau, delta_max);
        let sd = q.var_l.sqrt();
        let errs = [
            rel_err(closed.mean_l, q.mean_l, sd),
            rel_err(closed.var_l, q.var_l, 1e-12),
            rel_err(closed.mean_v, q.mean_v, 1e-12),
            rel_err(closed.mean_v2, q.mean_v2, 1e-12),
        ];
        for e in errs {
            worst = worst.max(e);
        }
        assert!(errs.iter().all(|e| *e < 1e-3), "{p:?} {m:?} tau={tau}: {errs:?}");
    }
    println!("worst relative error {worst:.2e}");
}

#[test]
fn expected_consistency_matches_beta_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (a, b): (f64, f64) = (rng.random_range(1.0..30.0), rng.random_range(1.0..30.0));
        let n = 20001;
        let vs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let dens: Vec<f64> = vs.iter().map(|v| v.powf(a - 1.0) * (1.0 - v).powf(b - 1.0)).collect();
        let z = trapezoid(&vs, &dens);
        let mean = trapezoid(&vs, &vs.iter().zip(&dens).map(|(v, d)| v * d).collect::<Vec<_>>()) / z;
        let p = ConsistencyParams { mu: 0.0, sigma: 0.1, alpha: a, beta: b };
        assert!((expected_consistency(&p) - mean).abs() < 1e-6);
    }
}

#[test]
fn consistent_semantic_match_raises_consistency() {
    let p = ConsistencyParams { mu: 0.02, sigma: 0.1, alpha: 1.0, beta: 1.0 };
    let (q, _) = bayes_update(&p, &MeasurementPair { delta: 0.02, s: true }, 0.005, 1.0);
    assert!(expected_consistency(&q) > expected_consistency(&p));
    assert!(q.alpha > q.beta);
    assert!((q.mu - 0.02).abs() < 1e-3);
}

#[test]
fn outlier_lowers_confident_belief() {
    let p = ConsistencyParams { mu: 0.0, sigma: 0.05, alpha: 50.0, beta: 2.0 };
    let (q, _) = bayes_update(&p, &MeasurementPair { delta: 1.0, s: false }, 0.05, 1.0);
    assert!(expected_consistency(&q) < expected_consistency(&p));
}

#[test]
fn saturated_belief_barely_moves_on_consistent_evidence() {
    let p = ConsistencyParams { mu: 0.0, sigma: 0.02, alpha: PARAM_CEIL, beta: PARAM_FLOOR };
    let (q, _) = bayes_update(&p, &MeasurementPair { delta: 0.0, s: true }, 0.05, 1.0);
    assert!((expected_consistency(&q) - expected_consistency(&p)).abs() < 1e-3);
}

#[test]
fn saturated_belief_is_not_absorbing() {
    let mut p = ConsistencyParams::prior(1.0);
    for _ in 0..300 {
        p = bayes_update(&p, &MeasurementPair { delta: 0.0, s: true }, 0.05, 1.0).0;
    }
    let before = expected_consistency(&p);
    let mut q = p;
    for _ in 0..10 {
        q = bayes_update(&q, &MeasurementPair { delta: 1.0, s: false }, 0.05, 1.0).0;
    }
    assert!(expected_consistency(&q) < before - 0.01, "{before} -> {}", expected_consistency(&q));
}

#[test]
fn static_object_sequence() {
    // consistent geometry with a positive semantic label strengthens the belief
    let mut p = ConsistencyParams::prior(1.0);
    let start = expected_consistency(&p);
    for _ in 0..10 {
        p = bayes_update(&p, &MeasurementPair { delta: 0.02, s: true }, 0.05, 1.0).0;
    }
    assert!(expected_consistency(&p) >= start);
    // the default label keeps a static object above the removal threshold
    let mut p = ConsistencyParams::prior(1.0);
    for _ in 0..50 {
        p = bayes_update(&p, &MeasurementPair { delta: 0.02, s: false }, 0.05, 1.0).0;
        assert!(expected_consistency(&p) > 0.3);
    }
}

#[test]
fn negative_evidence_removes_within_ten_frames() {
    let mut p = ConsistencyParams::prior(1.0);
    for _ in 0..5 {
        p = bayes_update(&p, &MeasurementPair { delta: 0.02, s: false }, 0.05, 1.0).0;
    }
    let mut frames = 0;
    while expected_consistency(&p) >= 0.3 {
        p = bayes_update(&p, &MeasurementPair { delta: 1.0, s: false }, 0.05, 1.0).0;
        frames += 1;
        assert!(frames <= 10);
    }
}

proptest! {
    #[test]
    fn posterior_consistency_is_monotone(
        mu in -0.3f64..0.3,
        sigma in 0.01f64..0.3,
        alpha in 1.0f64..20.0,
        beta in 1.0f64..20.0,
        tau in 0.02f64..0.1,
    ) {
        let p = ConsistencyParams { mu, sigma, alpha, beta };
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let d = mu + 0.025 * i as f64;
            let m0 = MeasurementPair { delta: d.min(1.0), s: false };
            let m1 = MeasurementPair { s: true, ..m0 };
            let e0 = expected_consistency(&bayes_update(&p, &m0, tau, 1.0).0);
            let e1 = expected_consistency(&bayes_update(&p, &m1, tau, 1.0).0);
            prop_assert!(e0 <= prev + 1e-12);
            prop_assert!(e1 >= e0 - 1e-12);
            prev = e0;
        }
    }

    #[test]
    fn updates_keep_parameters_valid(
        mu in -1.0f64..1.0,
        sigma in 0.001f64..1.0,
        alpha in 0.5f64..200.0,
        beta in 0.5f64..200.0,
        delta in -3.0f64..3.0,
        s in any::<bool>(),
    ) {
        let p = ConsistencyParams { mu, sigma, alpha, beta };
        let (q, _) = bayes_update(&p, &MeasurementPair { delta, s }, 0.05, 1.0);
        prop_assert!(q.is_valid());
        prop_assert!(q.sigma >= SIGMA_MIN && q.sigma <= 1.0);
        prop_assert!(q.alpha >= PARAM_FLOOR && q.alpha <= PARAM_CEIL);
        prop_assert!(q.beta >= PARAM_FLOOR && q.beta <= PARAM_CEIL);
        let e = expected_consistency(&q);
        prop_assert!(e > 0.0 && e < 1.0);
    }
}

// ------------------------------------------------------ scene utilities

fn camera(width: usize, height: usize) -> DepthCameraSpec {
    DepthCameraSpec {
        name: "test".into(),
        parent_frame: "base".into(),
        mount_position: [0.0; 3],
        mount_rpy: [0.0; 3],
        horizontal_fov: 1.2,
        vertical_fov: 0.9,
        width,
        height,
        max_range: 4.0,
        noise_sigma: 0.0,
        latency: 0.0,
        rate_hz: 5.0,
    }
}

fn look_from(p: [f64; 3], pitch: f64, yaw: f64) -> Pose3 {
    Pose3 { position: Vector3::from(p), rotation: rpy(0.0, pitch, yaw) }
}

fn observe(world: &WorldState, pose: &Pose3, spec: &DepthCameraSpec) -> (Vec<ObservationSegment>, Vec<DepthFrame>) {
    let frame = render_depth(world, pose, spec, &mut ChaCha8Rng::seed_from_u64(0));
    let segs = segment_cloud(&frame.points(), &SegmentationConfig::default());
    (segs, vec![frame])
}

// ------------------------------------------------------------ segmentation

#[test]
fn plates_seen_from_above_segment_at_their_centroids() {
    let plates: Vec<BoxObject> = [(-0.8, 0.0), (0.0, 0.7), (0.8, -0.4)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| BoxObject { id: i as u32 + 1, x, y, yaw: 0.0, size: [0.5, 0.5, 0.1], level: 0 })
        .collect();
    let world = WorldState::new(plates.clone(), 0);
    let pose = look_from([0.0, 0.0, 3.0], std::f64::consts::FRAC_PI_2, 0.0);
    let (segs, _) = observe(&world, &pose, &camera(160, 120));
    assert_eq!(segs.len(), plates.len());
    for b in &plates {
        let nearest = segs.iter().map(|s| (s.centroid - b.center()).norm()).fold(f64::INFINITY, f64::min);
        assert!(nearest < 0.1, "plate {} off by {nearest}", b.id);
    }
}

// ------------------------------------------------------------ association

fn object_at(id: u32, c: Vector3<f64>) -> ObjectEntry {
    let pts: Vec<Vector3<f64>> = (0..27)
        .map(|i| c + Vector3::new((i % 3) as f64 - 1.0, ((i / 3) % 3) as f64 - 1.0, (i / 9) as f64 - 1.0) * 0.1)
        .collect();
    ObjectEntry {
        id,
        anchor_position: c,
        anchor_heading: 0.0,
        submap: Submap::from_points(&pts, 0.1, 3).unwrap(),
        params: ConsistencyParams::prior(1.0),
        observation_count: 1,
        last_seen: 0.0,
    }
}

fn segment_at(c: Vector3<f64>) -> ObservationSegment {
    ObservationSegment::from_points((0..20).map(|i| c + Vector3::new(0.0, 0.0, 0.001 * (i as f64 - 9.5))).collect())
}

#[test]
fn association_basics() {
    let cfg = MappingConfig { gate: 0.5, ..Default::default() };
    let a = associate(&[segment_at(Vector3::new(1.0, 0.0, 0.5))], &[], &[], &cfg);
    assert_eq!(a.unmatched_segments, vec![0]);
    let objs = vec![object_at(1, Vector3::new(1.0, 0.0, 0.5))];
    let a = associate(&[segment_at(Vector3::new(1.05, 0.0, 0.5))], &objs, &[], &cfg);
    assert_eq!(a.matched, vec![(0, 0)]);
    let a = associate(&[segment_at(Vector3::new(2.0, 0.0, 0.5))], &objs, &[], &cfg);
    assert_eq!(a.unmatched_segments, vec![0]);
}

#[test]
fn association_is_optimal_over_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let cfg = MappingConfig { gate: 100.0, ..Default::default() };
    for _ in 0..20 {
        let objs: Vec<ObjectEntry> = (0..3)
            .map(|i| object_at(i, Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.5)))
            .collect();
        let segs: Vec<ObservationSegment> = (0..3)
            .map(|_| segment_at(Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.5)))
            .collect();
        let cost = |s: usize, o: usize| (segs[s].centroid - objs[o].submap.centroid()).norm();
        let best = perms.iter().map(|p| (0..3).map(|s| cost(s, p[s])).sum::<f64>()).fold(f64::INFINITY, f64::min);
        let a = associate(&segs, &objs, &[], &cfg);
        assert_eq!(a.matched.len(), 3);
        let got: f64 = a.matched.iter().map(|&(s, o)| cost(s, o)).sum();
        assert!((got - best).abs() < 1e-9);
    }
}

// ------------------------------------------------------ geometric change

fn wall_world(x: f64) -> WorldState {
    WorldState::new(vec![BoxObject { id: 1, x, y: 0.0, yaw: 0.0, size: [0.6, 1.2, 0.8], level: 0 }], 0)
}

#[test]
fn geometric_consistency_tracks_shift() {
    let pose = look_from([0.0, 0.0, 0.6], 0.15, 0.0);
    let spec = camera(80, 60);
    let (segs, frames) = observe(&wall_world(2.0), &pose, &spec);
    assert_eq!(segs.len(), 1);
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    lib.process_frame(&segs, &frames, 0.0);
    let obj = &lib.objects[0];

    match geometric_consistency(obj, &segs[0], 0.2, 1.0) {
        Consistency::Measured(d) => assert!(d.abs() < 0.1, "{d}"),
        Consistency::NoOverlap => panic!("overlap expected"),
    }
    let (shifted, _) = observe(&wall_world(2.3), &pose, &spec);
    match geometric_consistency(obj, &shifted[0], 0.2, 1.0) {
        Consistency::Measured(d) => assert!((d - 0.3).abs() < 0.2, "{d}"),
        Consistency::NoOverlap => panic!("overlap expected"),
    }
    let far = segment_at(Vector3::new(10.0, 0.0, 0.5));
    assert_eq!(geometric_consistency(obj, &far, 0.2, 1.0), Consistency::NoOverlap);
}

#[test]
fn static_object_is_retained_and_removed_object_is_dropped() {
    let pose = look_from([0.0, 0.0, 0.6], 0.15, 0.0);
    let spec = camera(80, 60);
    let world = wall_world(2.0);
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    for k in 0..10 {
        let (segs, frames) = observe(&world, &pose, &spec);
        lib.process_frame(&segs, &frames, k as f64 * 0.2);
    }
    assert_eq!(lib.objects.len(), 1);
    assert_eq!(lib.objects[0].observation_count, 10);
    assert!(lib.objects[0].expected_consistency() > 0.3);

    let empty = WorldState::new(vec![], 0);
    let mut removed_after = None;
    for k in 0..10 {
        let (segs, frames) = observe(&empty, &pose, &spec);
        let events = lib.process_frame(&segs, &frames, 2.0 + k as f64 * 0.2);
        if events.iter().any(|e| matches!(e, MapEvent::Removed { .. })) {
            removed_after = Some(k + 1);
            break;
        }
    }
    assert!(removed_after.is_some());
    assert!(lib.objects.is_empty());
}

#[test]
fn occluded_object_keeps_its_belief() {
    let spec = camera(80, 60);
    let pose = look_from([0.0, 0.0, 0.6], 0.15, 0.0);
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    let (segs, frames) = observe(&wall_world(2.0), &pose, &spec);
    lib.process_frame(&segs, &frames, 0.0);
    let before = lib.objects[0].params;
    // a taller wall right in front hides the first one completely
    let hidden = WorldState::new(
        vec![
            BoxObject { id: 1, x: 2.0, y: 0.0, yaw: 0.0, size: [0.6, 1.2, 0.8], level: 0 },
            BoxObject { id: 2, x: 1.0, y: 0.0, yaw: 0.0, size: [0.2, 4.0, 3.0], level: 0 },
        ],
        0,
    );
    let (segs, frames) = observe(&hidden, &pose, &spec);
    lib.process_frame(&segs, &frames, 0.2);
    let first = lib.objects.iter().find(|o| o.id == 1).unwrap();
    assert_eq!(first.params, before);
}

#[test]
fn nothing_seen_leaves_library_unchanged() {
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    lib.objects.push(object_at(1, Vector3::new(5.0, 5.0, 0.5)));
    let before = lib.objects.clone();
    let events = lib.process_frame(&[], &[], 1.0);
    assert!(events.is_empty());
    assert_eq!(lib.objects, before);
}

// ------------------------------------------------------------ local field

#[test]
fn local_field_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let s = 0.1;
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    for id in 1..=2 {
        let c = Vector3::new(rng.random_range(0.8..2.3), rng.random_range(0.8..2.3), rng.random_range(0.6..2.0));
        let pts: Vec<Vector3<f64>> = (0..40)
            .map(|_| c + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
            .collect();
        let mut o = object_at(id, c);
        o.submap = Submap::from_points(&pts, s, 4).unwrap();
        lib.objects.push(o);
    }
    let surface = lib.surface_cells();
    let cutoff = 1.5;
    let grid = build_local_edf(&surface, &Vector3::new(1.55, 1.55, 0.0), [3.1, 3.1, 3.1], cutoff, s).unwrap();
    assert_eq!(grid.dims, [32, 32, 32]);
    let pts: Vec<Vector3<f64>> = surface.iter().map(|c| cell_position(c, s)).collect();
    for idx in 0..grid.len() {
        let [i, j, k] = grid.unravel(idx);
        let p = grid.node_position(i, j, k);
        let d = pts.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min).min(cutoff);
        assert!((grid.values[idx] - d).abs() <= 0.5 * s, "{idx}: {} vs {d}", grid.values[idx]);
    }
    // 1-Lipschitz between neighbours and bounded by the cutoff
    for idx in 0..grid.len() {
        let [i, j, k] = grid.unravel(idx);
        assert!(grid.values[idx] <= cutoff && grid.values[idx] >= 0.0);
        if i + 1 < 32 && j + 1 < 32 && k + 1 < 32 {
            for n in [grid.index(i + 1, j, k), grid.index(i, j + 1, k), grid.index(i, j, k + 1), grid.index(i + 1, j + 1, k + 1)] {
                assert!((grid.values[idx] - grid.values[n]).abs() <= 3f64.sqrt() * s + 1e-12);
            }
        }
    }
}

#[test]
fn local_field_single_cell_and_empty() {
    let s = 0.1;
    let g = build_local_edf(&[], &Vector3::zeros(), [1.0, 1.0, 1.0], 1.5, s).unwrap();
    assert!(g.values.iter().all(|v| *v == 1.5));
    let p0 = [2, -1, 3];
    let g = build_local_edf(&[p0], &Vector3::zeros(), [1.0, 1.0, 1.0], 0.4, s).unwrap();
    for idx in 0..g.len() {
        let [i, j, k] = g.unravel(idx);
        let d = (g.node_position(i, j, k) - cell_position(&p0, s)).norm().min(0.4);
        assert!((g.values[idx] - d).abs() < 1e-9);
    }
}

#[test]
fn fused_submap_matches_brute_force_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vector3<f64>> = (0..60)
        .map(|_| Vector3::new(rng.random_range(0.0..0.8), rng.random_range(0.0..0.5), rng.random_range(0.0..0.6)))
        .collect();
    let mut m = Submap::from_points(&pts[..30], 0.1, 3).unwrap();
    m.integrate(&pts[30..]);
    for idx in 0..m.edf.len() {
        let [i, j, k] = m.edf.unravel(idx);
        let p = m.edf.node_position(i, j, k);
        let d = m.occupied.iter().map(|c| (cell_position(c, 0.1) - p).norm()).fold(f64::INFINITY, f64::min);
        assert!((m.edf.values[idx] - d).abs() < 1e-9);
    }
}

// ---------------------------------------------------------------- baseline

#[test]
fn baseline_keeps_phantoms_and_agrees_on_static_scenes() {
    let pose = look_from([0.0, 0.0, 0.6], 0.15, 0.0);
    let spec = camera(80, 60);
    let mut base = VoxelBaseline::new(0.1);
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    assert!(base.occupied.is_empty());
    for k in 0..3 {
        let (segs, frames) = observe(&wall_world(2.0), &pose, &spec);
        base.update(&segs);
        lib.process_frame(&segs, &frames, k as f64);
    }
    let object_cells: std::collections::BTreeSet<Cell> = lib.surface_cells().into_iter().collect();
    let within_one = |a: &std::collections::BTreeSet<Cell>, b: &std::collections::BTreeSet<Cell>| {
        a.iter().all(|c| {
            (-1..=1).any(|dx| (-1..=1).any(|dy| (-1..=1).any(|dz| b.contains(&[c[0] + dx, c[1] + dy, c[2] + dz]))))
        })
    };
    assert!(within_one(&base.occupied, &object_cells) && within_one(&object_cells, &base.occupied));

    let old = base.occupied.clone();
    let (segs, _) = observe(&WorldState::new(vec![], 0), &pose, &spec);
    base.update(&segs);
    assert_eq!(base.occupied, old);
}

// ---------------------------------------------------------------- snapshot

#[test]
fn published_snapshots_are_immutable() {
    let mailbox = SnapshotMailbox::default();
    let mut lib = ObjectLibrary::new(MappingConfig::default());
    let pose = look_from([0.0, 0.0, 0.6], 0.15, 0.0);
    let spec = camera(80, 60);
    let (segs, frames) = observe(&wall_world(2.0), &pose, &spec);
    lib.process_frame(&segs, &frames, 0.0);
    let edf = build_local_edf(&lib.surface_cells(), &Vector3::zeros(), [6.0, 6.0, 2.0], 1.5, 0.1).unwrap();
    let first = mailbox.publish(MapSnapshot {
        version: 1,
        time: 0.0,
        objects: Arc::new(lib.objects.clone()),
        edf: Arc::new(edf),
        theta_cutoff: 1.5,
    });
    let hash = first.content_hash();
    for k in 1..5 {
        let (segs, frames) = observe(&WorldState::new(vec![], 0), &pose, &spec);
        lib.process_frame(&segs, &frames, k as f64 * 0.2);
    }
    assert!(lib.objects.is_empty());
    assert_eq!(first.content_hash(), hash);
    assert_eq!(first.objects.len(), 1);
}
