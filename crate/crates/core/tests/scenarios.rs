//! End-to-end runs of the bundled scenarios and a reduced benchmark suite.

use urbansim::bench::{run_benchmark, score_episode, Suite, Task};
use urbansim::config::RunConfig;
use urbansim::control::ControlState;
use urbansim::geometry::obb_distance;
use urbansim::perception::PerceptionModel;
use urbansim::planner::TopoGraph;
use urbansim::sim::{
    apply_overrides, builtin_scenario, ego_frame, run_episode, EpisodeResult, EpisodeSpec,
    Outcome, Scenario,
};
use urbansim::town::{LightState, Town};

struct ScenarioRun {
    town: Town,
    config: RunConfig,
    spec: EpisodeSpec,
    result: EpisodeResult,
}

fn run_builtin(name: &str) -> ScenarioRun {
    let text = builtin_scenario(name).expect("scenario is bundled");
    let scenario = Scenario::parse(text).expect("scenario parses");
    let mut town = Town::builtin(scenario.town.as_deref().expect("scenario names a town"))
        .expect("town is bundled");
    scenario.apply_lights(&mut town).expect("light overrides apply");
    let graph = TopoGraph::from_town(&town).expect("town wires into a graph");
    let mut config = RunConfig::default();
    apply_overrides(&mut config, &scenario.overrides).expect("overrides apply");
    let spec = scenario
        .resolve(&town, &graph, &config.episode)
        .expect("scenario resolves");
    let perception = scenario
        .perception
        .clone()
        .unwrap_or_else(PerceptionModel::clean);
    let result = run_episode(&town, &config, &perception, &spec);
    ScenarioRun {
        town,
        config,
        spec,
        result,
    }
}

fn front_axle_x(run: &ScenarioRun, row: &urbansim::sim::TraceRow) -> f64 {
    let pose = urbansim::geometry::Pose2D::new(row.x_m, row.y_m, row.heading_rad);
    ego_frame(&pose, &run.config.vehicle).front_axle.x
}

#[test]
fn red_light_crawl_holds_short_of_the_line() {
    let run = run_builtin("red-light-crawl");
    assert_eq!(run.result.outcome, Outcome::Success);

    let light = run
        .town
        .lights
        .iter()
        .find(|l| l.id == "jb-e")
        .expect("overridden light exists");
    let line_x = light.stop_line.0.x;
    assert_eq!(line_x, light.stop_line.1.x, "stop line is vertical here");

    // The car comes to a true standstill short of the line while the red
    // phase lasts.
    let held: Vec<_> = run
        .result
        .trace
        .rows
        .iter()
        .filter(|r| r.time_s >= 40.0 && r.time_s <= 55.0)
        .collect();
    assert!(!held.is_empty());
    for row in &held {
        assert!(
            row.speed_mps < 0.01,
            "still moving at t={}: v={}",
            row.time_s,
            row.speed_mps
        );
        let fa = front_axle_x(&run, row);
        assert!(
            fa < line_x && fa > line_x - 4.0,
            "held at x={fa}, line at {line_x}"
        );
        assert_eq!(light.state_at(row.time_s), LightState::Red);
    }
    assert!(run
        .result
        .trace
        .rows
        .iter()
        .any(|r| r.state == ControlState::RedLight));

    // The single crossing of the stop line happens on green.
    let mut crossings = 0;
    for pair in run.result.trace.rows.windows(2) {
        let before = front_axle_x(&run, &pair[0]);
        let after = front_axle_x(&run, &pair[1]);
        if before < line_x && after >= line_x {
            crossings += 1;
            assert_eq!(
                light.state_at(pair[1].time_s),
                LightState::Green,
                "crossed the line at t={} under {:?}",
                pair[1].time_s,
                light.state_at(pair[1].time_s)
            );
        }
    }
    assert_eq!(crossings, 1);

    let score = score_episode(&run.town, &run.spec.actors, &run.config, &run.result);
    assert_eq!(score.infractions, [0; 6]);
}

#[test]
fn ped_crossing_stops_with_margin_and_continues() {
    let run = run_builtin("ped-crossing");
    assert_eq!(run.result.outcome, Outcome::Success);

    let walker = run
        .spec
        .actors
        .iter()
        .find(|a| a.id == "walker")
        .expect("scenario adds the walker");

    let mut stopped_for_hazard = 0;
    let mut min_gap = f64::INFINITY;
    for row in &run.result.trace.rows {
        if !row.truth.hazard_stop {
            continue;
        }
        if row.speed_mps >= 0.01 {
            continue;
        }
        stopped_for_hazard += 1;
        let pose = urbansim::geometry::Pose2D::new(row.x_m, row.y_m, row.heading_rad);
        let ego = ego_frame(&pose, &run.config.vehicle);
        let gap = obb_distance(&ego.obb, &walker.obb_at(row.time_s));
        min_gap = min_gap.min(gap);
    }
    assert!(stopped_for_hazard > 20, "never waited for the crossing");
    assert!(
        min_gap >= 5.0,
        "stopped too close to the pedestrian: {min_gap} m"
    );
    assert!(run
        .result
        .trace
        .rows
        .iter()
        .any(|r| r.state == ControlState::HazardStop));

    let score = score_episode(&run.town, &run.spec.actors, &run.config, &run.result);
    assert_eq!(score.infractions, [0; 6]);
}

#[test]
fn follow_lead_settles_at_the_equilibrium_gap() {
    let run = run_builtin("follow-lead");
    assert_eq!(run.result.outcome, Outcome::Success);
    assert!(run.result.final_time_s < 35.0);

    let following: Vec<_> = run
        .result
        .trace
        .rows
        .iter()
        .filter(|r| r.state == ControlState::Following)
        .collect();
    assert!(following.len() > 100, "barely followed: {}", following.len());

    // Equilibrium gap for a 30 km/h lead under a 90 km/h target.
    let v_max: f64 = 90.0 / 3.6;
    let expected = -(v_max / 1.25) * (1.0 - 0.05 - 8.3333 / v_max).ln();
    let t_end = run.result.final_time_s;
    let mut worst = 0.0f64;
    for row in &run.result.trace.rows {
        if row.time_s < t_end - 2.0 || row.state != ControlState::Following {
            continue;
        }
        worst = worst.max((row.truth.vehicle_distance - expected).abs());
    }
    assert!(
        worst < 1.5,
        "gap off equilibrium by {worst} m near the goal (expected {expected} m)"
    );

    let score = score_episode(&run.town, &run.spec.actors, &run.config, &run.result);
    assert_eq!(score.infractions, [0; 6]);
}

#[test]
fn desk_suite_text_parses() {
    let suite = Suite::parse(urbansim::bench::builtin_suite("desk").expect("bundled"))
        .expect("suite parses");
    assert_eq!(suite.name, "desk");
    assert_eq!(suite.towns, vec!["town-a", "town-b"]);
    assert_eq!(suite.tiers, vec!["clean", "train", "test"]);
    assert_eq!(suite.tasks.len(), 4);
    assert_eq!(suite.episodes_per_cell, 25);
    assert_eq!(suite.cruise_cap_kmh, Some(20.0));
    assert_eq!(suite.seed, 20240817);
}

#[test]
fn reduced_suite_runs_deterministically() {
    let suite = Suite {
        name: "smoke".to_owned(),
        towns: vec!["town-a".to_owned(), "town-b".to_owned()],
        tiers: vec!["clean".to_owned()],
        tasks: vec![Task::Straight, Task::OneTurn],
        episodes_per_cell: 2,
        seed: 7,
        cruise_cap_kmh: Some(20.0),
        dynamic_actor_count: 4,
        min_route_m: 60.0,
    };
    let towns = [
        Town::builtin("town-a").unwrap(),
        Town::builtin("town-b").unwrap(),
    ];
    let config = RunConfig::default();
    let report = run_benchmark(&suite, &config, &towns).expect("suite runs");

    assert_eq!(report.suite, "smoke");
    assert_eq!(report.cells.len(), 4);
    for cell in &report.cells {
        assert_eq!(cell.episodes, 2);
        assert_eq!(cell.successes + cell.timeouts + cell.off_road, 2);
        assert!(
            cell.successes >= 1,
            "cell {}/{}/{} mostly failed",
            cell.town,
            cell.tier,
            cell.task
        );
        assert!(cell.total_km > 0.0);
    }

    let text = report.render_text();
    assert!(text.contains("town-a") && text.contains("town-b"));
    assert!(text.contains("one_turn"));
    let json = report.to_json();
    let value: serde_json::Value = serde_json::from_str(&json).expect("valid json");
    assert_eq!(value["cells"].as_array().unwrap().len(), 4);

    let again = run_benchmark(&suite, &config, &towns).expect("suite runs twice");
    assert_eq!(again.to_json(), json, "benchmark is not deterministic");
}
