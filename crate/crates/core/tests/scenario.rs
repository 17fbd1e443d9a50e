use std::io::BufReader;

use htmpc_core::geometry::RobotModel;
use htmpc_core::scenario::*;
use htmpc_core::world::{BoxObject, WorldState};
use htmpc_core::Error;
use nalgebra::DVector;

fn open_field(script: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml(&format!("name = \"open\"\nduration = 20.0\n\n[tasks]\nv_des = 0.7\n{script}")).unwrap()
}

fn navigate_to_3() -> ScenarioConfig {
    open_field("[[tasks.script]]\ntype = \"navigate\"\nname = \"out\"\nwaypoints = [[3.0, 0.0]]\n")
}

fn round_trip(log: &RunLog) -> RunLog {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    RunLog::read_jsonl(BufReader::new(buf.as_slice())).unwrap()
}

fn jsonl(log: &RunLog) -> Vec<u8> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    buf
}

#[test]
fn open_field_navigation_reaches_goal() {
    let out = run_scenario(&navigate_to_3(), 0).unwrap();
    let m = &out.metrics;
    assert_eq!(out.end, EndReason::Completed);
    assert!(m.collision_free);
    assert_eq!(m.subtasks_completed, 1);
    assert!((3.0..=3.3).contains(&m.path_length), "path length {}", m.path_length);
    let (cfg, _) = out.log.meta().unwrap();
    let last = out.log.records.iter().rev().find_map(|r| match r {
        LogRecord::State { q, .. } => Some(q.clone()),
        _ => None,
    });
    let q = last.unwrap();
    assert!(((q[0] - 3.0).powi(2) + q[1].powi(2)).sqrt() < cfg.tasks.tolerances.base_position);
}

#[test]
fn empty_script_completes_at_start() {
    let out = run_scenario(&open_field(""), 0).unwrap();
    assert_eq!(out.end, EndReason::Completed);
    assert_eq!(out.log.end(), Some((0.0, EndReason::Completed)));
    assert_eq!(out.metrics.subtasks_total, 0);
    assert_eq!(out.metrics.path_length, 0.0);
}

#[test]
fn runs_are_bit_identical_for_a_seed() {
    let cfg = navigate_to_3();
    let a = run_scenario(&cfg, 7).unwrap();
    let b = run_scenario(&cfg, 7).unwrap();
    assert_eq!(jsonl(&a.log), jsonl(&b.log));
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn replay_reproduces_metrics_exactly() {
    let out = run_scenario(&navigate_to_3(), 3).unwrap();
    let back = round_trip(&out.log);
    assert_eq!(back, out.log);
    let row = compute_metrics(&back).unwrap();
    assert_eq!(row, out.metrics);
    assert_eq!(row.csv_fields(), out.metrics.csv_fields());
    assert_eq!(row.csv_fields().len(), METRICS_COLUMNS.len());
}

#[test]
fn log_is_ordered_and_subtasks_alternate() {
    let cfg = open_field(
        "[[tasks.script]]\ntype = \"navigate\"\nwaypoints = [[1.5, 0.0]]\n\n\
         [[tasks.script]]\ntype = \"manipulate\"\nname = \"reach\"\ntarget = [2.2, 0.0, 0.7]\ndwell = 0.3\n",
    );
    let out = run_scenario(&cfg, 0).unwrap();
    assert_eq!(out.end, EndReason::Completed, "{:?}", out.metrics);
    assert!(out.log.timestamps_monotone());
    assert!(matches!(out.log.records.first(), Some(LogRecord::Meta { .. })));
    assert!(matches!(out.log.records.last(), Some(LogRecord::End { .. })));

    let events: Vec<(usize, SubtaskEvent, Vec<String>)> = out
        .log
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Subtask { index, event, stack, .. } => Some((*index, *event, stack.clone())),
            _ => None,
        })
        .collect();
    let expected = [(0, SubtaskEvent::Start), (0, SubtaskEvent::Complete), (1, SubtaskEvent::Start), (1, SubtaskEvent::Complete)];
    assert_eq!(events.iter().map(|e| (e.0, e.1)).collect::<Vec<_>>(), expected);
    assert_eq!(events[0].2, ["base", "ee_lookahead"]);
    assert_eq!(events[2].2, ["ee", "base"]);
    assert_eq!(out.metrics.subtask_path_lengths.len(), 2);
}

fn wall() -> WorldState {
    // a wide, tall wall whose face is the plane x = 2
    WorldState::new(vec![BoxObject { id: 1, x: 2.5, y: 0.0, yaw: 0.0, size: [1.0, 10.0, 2.0], level: 0 }], 0)
}

fn tucked(model: &RobotModel) -> DVector<f64> {
    let mut q = DVector::zeros(model.dof());
    q.rows_mut(3, 3).copy_from(&DVector::from_row_slice(&[1.2, -2.0, 0.8]));
    q
}

#[test]
fn approach_speed_is_velocity_along_the_obstacle_normal() {
    let model = RobotModel::reference();
    let q = tucked(&model);
    let mut v = DVector::zeros(model.dof());
    let (clearance, still) = sample_metrics(&wall(), &model, &q, &v);
    assert!(clearance > 0.0);
    assert_eq!(still, Some(0.0));

    v[0] = 1.0;
    let (_, toward) = sample_metrics(&wall(), &model, &q, &v);
    assert!((toward.unwrap() - 1.0).abs() < 1e-12);

    v[0] = -0.4;
    v[1] = 0.7;
    let (_, away) = sample_metrics(&wall(), &model, &q, &v);
    assert!((away.unwrap() + 0.4).abs() < 1e-12);

    let (_, none) = sample_metrics(&WorldState::new(vec![], 0), &model, &q, &v);
    assert_eq!(none, None);
}

#[test]
fn percentile_is_nearest_rank() {
    let xs: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(percentile(&xs, 95.0), Some(19.0));
    assert_eq!(percentile(&xs, 100.0), Some(20.0));
    assert_eq!(percentile(&[3.0], 50.0), Some(3.0));
    assert_eq!(percentile(&[], 50.0), None);
}

#[test]
fn generated_scenes_meet_the_layout_contract() {
    let g = SceneGenerator::default();
    let mut layouts = Vec::new();
    for seed in 0..15 {
        let boxes = g.generate(seed).unwrap();
        assert!(boxes.len() >= 8);
        assert!(boxes.iter().any(|b| b.level == 1));
        for b in &boxes {
            assert_eq!(b.size, [0.6; 3]);
            assert!(b.x > g.area[0] && b.x < g.area[2] && b.y > g.area[1] && b.y < g.area[3]);
            if b.level == 1 {
                assert!(boxes.iter().any(|u| u.level == 0 && u.x == b.x && u.y == b.y && u.yaw == b.yaw));
            }
        }
        assert!(g.corridor_free(&boxes));
        assert_eq!(g.generate(seed).unwrap(), boxes);
        layouts.push(boxes);
    }
    layouts.dedup();
    assert_eq!(layouts.len(), 15);
}

#[test]
fn grid_expansion_orders_every_cell() {
    let grid: BatchGrid = toml::from_str(
        "v_des = [0.4, 0.7, 1.0]\n[[variants]]\nmode = \"cbf\"\ngamma = 1.0\n[[variants]]\nmode = \"cbf\"\ngamma = 5.0\n[[variants]]\nmode = \"edf\"\n",
    )
    .unwrap();
    let cells = grid.expand(&navigate_to_3());
    assert_eq!(cells.len(), 9);
    assert_eq!(cells[0].name, "open-object-cbf1-d0.1-v0.4");
    assert_eq!(cells[8].name, "open-object-edf-d0.1-v1");
    assert_eq!(cells[4].safety.gamma, 5.0);
    assert_eq!(cells[4].tasks.v_des, 0.7);
}

#[test]
fn batch_rows_and_aggregates_are_deterministic() {
    let mut template = navigate_to_3();
    template.duration = 1.0;
    let grid: BatchGrid = toml::from_str("v_des = [0.4, 0.7]").unwrap();
    let mut seen = 0;
    let results = run_batch(&template, 0..3, &grid, |_, o| seen += o.is_some() as usize);
    assert_eq!(results.len(), 6);
    assert_eq!(seen, 6);
    assert!(results.iter().all(|r| r.error.is_none() && r.row.as_ref().unwrap().end_reason == EndReason::DurationCap));
    assert_eq!(results[0].name, "open-object-cbf1-d0.1-v0.4-s0");

    let again = run_batch(&template, 0..3, &grid, |_, _| {});
    assert_eq!(results, again);
    let agg = aggregate(&results);
    assert_eq!(agg.len(), 2);
    assert!(agg.iter().all(|a| a.trials == 3 && a.collision_free_rate == 1.0 && a.completion_rate == 0.0));

    let mut csv = Vec::new();
    write_aggregate_csv(&mut csv, &agg).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), AGGREGATE_COLUMNS.join(","));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_configs_are_rejected() {
    let bad = [
        "name = \"x\"\nduration = -1.0\n",
        "name = \"x\"\nduration = 5.0\nspeed = 3\n",
        "name = \"x\"\nduration = 5.0\n[[tasks.script]]\ntype = \"fly\"\n",
        "name = \"x\"\nduration = 5.0\n[[tasks.script]]\ntype = \"navigate\"\nwaypoints = []\n",
        "name = \"x\"\nduration = 5.0\n[[tasks.script]]\ntype = \"manipulate\"\ntarget = [1.0, 0.0, 0.5]\nstack = [\"ee_lookahead\"]\n",
        "name = \"x\"\nduration = 5.0\n[[world.changes]]\ntrigger = { waypoint = \"nowhere\" }\naction = { kind = \"remove\", id = 1 }\n",
        "name = \"x\"\nduration = 5.0\nsubsteps = 0\n",
    ];
    for text in bad {
        match ScenarioConfig::from_toml(text) {
            Err(Error::Config(_)) => {}
            other => panic!("accepted or wrong error for {text:?}: {other:?}"),
        }
    }
}

#[test]
fn config_survives_a_toml_round_trip() {
    let cfg = navigate_to_3();
    let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn scripted_removal_reaches_the_log() {
    let cfg = ScenarioConfig::from_toml(
        "name = \"rm\"\nduration = 1.0\n\
         [[world.boxes]]\nid = 4\nx = 2.0\ny = 1.5\nsize = [0.6, 0.6, 0.6]\n\
         [[world.changes]]\ntrigger = { time = 0.5 }\naction = { kind = \"remove\", id = 4 }\n\
         [[tasks.script]]\ntype = \"navigate\"\nwaypoints = [[3.0, 0.0]]\n",
    )
    .unwrap();
    let out = run_scenario(&cfg, 0).unwrap();
    let worlds: Vec<(f64, usize)> = out
        .log
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::World { t, boxes, .. } => Some((*t, boxes.len())),
            _ => None,
        })
        .collect();
    assert_eq!(worlds.len(), 2);
    assert_eq!(worlds[0], (0.0, 1));
    assert!((worlds[1].0 - 0.5).abs() < 1e-9 && worlds[1].1 == 0);
}
