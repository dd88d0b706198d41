//! Driving benchmark: task generation, infraction detection, comfort and
//! accuracy metrics, and the suite runner.
//!
//! A suite is a grid of cells (town x perception tier x task); every cell
//! runs a fixed number of generated episodes. Episode generation and the
//! perception streams derive their seeds from the suite seed and the cell
//! indices alone, so a suite is reproducible episode by episode regardless
//! of which worker runs which episode.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{parse_document, ParseError, RunConfig};
use crate::geometry::{point_in_polygon, segments_intersect, wrap_angle, Obb, Vec2};
use crate::perception::PerceptionModel;
use crate::planner::{plan_route, PlanError, Route, TopoGraph};
use crate::sim::{
    default_time_limit_s, run_episode, EpisodeSpec, EpisodeTrace, Outcome, TraceRow,
    VehicleParams,
};
use crate::town::{Actor, ActorKind, DirectionalCommand, LaneIdx, LightState, Script, Town};

/// Benchmark task families, by the shape of the generated route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// No turn maneuvers on the route.
    Straight,
    /// Exactly one turn maneuver.
    OneTurn,
    /// At least two turn maneuvers.
    Navigation,
    /// Navigation plus scripted traffic.
    NavDynamic,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::Straight,
        Task::OneTurn,
        Task::Navigation,
        Task::NavDynamic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Straight => "straight",
            Task::OneTurn => "one_turn",
            Task::Navigation => "navigation",
            Task::NavDynamic => "nav_dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn wants_dynamic_actors(self) -> bool {
        self == Task::NavDynamic
    }

    fn accepts_turn_count(self, turns: usize) -> bool {
        match self {
            Task::Straight => turns == 0,
            Task::OneTurn => turns == 1,
            Task::Navigation | Task::NavDynamic => turns >= 2,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Classifies a planned route the same way generation filters it.
pub fn classify_route(route: &Route, has_dynamic_actors: bool) -> Option<Task> {
    let turns = route.commands.iter().filter(|c| c.is_turn()).count();
    match (turns, has_dynamic_actors) {
        (0, false) => Some(Task::Straight),
        (1, false) => Some(Task::OneTurn),
        (n, false) if n >= 2 => Some(Task::Navigation),
        (n, true) if n >= 2 => Some(Task::NavDynamic),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    OppositeLane,
    Sidewalk,
    CollisionStatic,
    CollisionVehicle,
    CollisionPedestrian,
    RedLightViolation,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 6] = [
        InfractionKind::OppositeLane,
        InfractionKind::Sidewalk,
        InfractionKind::CollisionStatic,
        InfractionKind::CollisionVehicle,
        InfractionKind::CollisionPedestrian,
        InfractionKind::RedLightViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InfractionKind::OppositeLane => "opposite_lane",
            InfractionKind::Sidewalk => "sidewalk",
            InfractionKind::CollisionStatic => "collision_static",
            InfractionKind::CollisionVehicle => "collision_vehicle",
            InfractionKind::CollisionPedestrian => "collision_pedestrian",
            InfractionKind::RedLightViolation => "red_light",
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Infraction {
    pub kind: InfractionKind,
    pub time_s: f64,
    pub position: Vec2,
}

/// A condition that stays active over consecutive steps is one event; a new
/// event of the same kind starts only after the condition has been clear for
/// this long.
pub const INFRACTION_CLEAR_S: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
struct Debounce {
    blocked_until: f64,
}

impl Debounce {
    fn new() -> Self {
        Debounce {
            blocked_until: f64::NEG_INFINITY,
        }
    }

    /// Registers activity at `t`; true when it starts a new event.
    fn hit(&mut self, t: f64) -> bool {
        let fresh = t >= self.blocked_until;
        self.blocked_until = t + INFRACTION_CLEAR_S;
        fresh
    }
}

/// Ego heading must be within this of a lane's opposing tangent to count as
/// wrong-way; crossing a lane at a right angle is not an infraction.
const WRONG_WAY_MIN_RAD: f64 = 2.0 * std::f64::consts::FRAC_PI_3;

/// Replays a trace against the map and the actor scripts and lists the
/// infraction events. Pure in the trace, so detection gives identical
/// results online or from a reloaded trace file.
pub fn detect_infractions(
    town: &Town,
    actors: &[Actor],
    vp: &VehicleParams,
    trace: &EpisodeTrace,
) -> Vec<Infraction> {
    let mut found = Vec::new();
    let mut debounce = [Debounce::new(); 6];
    let half = Vec2::new(vp.half_length, vp.half_width);

    for (i, row) in trace.rows.iter().enumerate() {
        let center = Vec2::new(row.x_m, row.y_m);
        let t = row.time_s;
        let mut active: Vec<InfractionKind> = Vec::new();

        let ego = Obb::new(center, half, row.heading_rad);
        for actor in actors {
            if obb_overlap_actor(&ego, actor, t) {
                active.push(match actor.kind {
                    ActorKind::Static => InfractionKind::CollisionStatic,
                    ActorKind::Vehicle => InfractionKind::CollisionVehicle,
                    ActorKind::Pedestrian => InfractionKind::CollisionPedestrian,
                });
            }
        }

        if town
            .sidewalks
            .iter()
            .any(|s| point_in_polygon(center, &s.polygon))
        {
            active.push(InfractionKind::Sidewalk);
        }

        for lane in &town.lanes {
            if lane.junction {
                continue;
            }
            let hit = lane.project(center);
            if (center - hit.point).norm() < lane.width / 2.0
                && wrap_angle(hit.tangent - row.heading_rad).abs() > WRONG_WAY_MIN_RAD
            {
                active.push(InfractionKind::OppositeLane);
                break;
            }
        }

        if i > 0 {
            let prev = &trace.rows[i - 1];
            let from = Vec2::new(prev.x_m, prev.y_m);
            for light in &town.lights {
                let (a, b) = light.stop_line;
                if light.state_at(prev.time_s) == LightState::Red
                    && segments_intersect(from, center, a, b)
                    && wrap_angle(prev.heading_rad - light.pose.heading).abs()
                        < std::f64::consts::FRAC_PI_2
                {
                    active.push(InfractionKind::RedLightViolation);
                }
            }
        }

        for kind in active {
            if debounce[kind.index()].hit(t) {
                found.push(Infraction {
                    kind,
                    time_s: t,
                    position: center,
                });
            }
        }
    }
    found
}

fn obb_overlap_actor(ego: &Obb, actor: &Actor, time: f64) -> bool {
    crate::geometry::obb_overlap(ego, &actor.obb_at(time))
}

/// Central difference derivative; the result is two samples shorter and
/// entry k belongs to input index k + 1.
pub fn central_diff(xs: &[f64], dt: f64) -> Vec<f64> {
    if xs.len() < 3 {
        return Vec::new();
    }
    (1..xs.len() - 1)
        .map(|i| (xs[i + 1] - xs[i - 1]) / (2.0 * dt))
        .collect()
}

fn central_diff_angle(xs: &[f64], dt: f64) -> Vec<f64> {
    if xs.len() < 3 {
        return Vec::new();
    }
    (1..xs.len() - 1)
        .map(|i| wrap_angle(xs[i + 1] - xs[i - 1]) / (2.0 * dt))
        .collect()
}

/// Sum-of-squares accumulators for the jerk metrics, mergeable across
/// episodes so a cell RMS weights every sample equally.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JerkAccum {
    pub long_sum_sq: f64,
    pub long_n: usize,
    pub lat_straight_sum_sq: f64,
    pub lat_straight_n: usize,
    pub lat_turn_sum_sq: f64,
    pub lat_turn_n: usize,
}

impl JerkAccum {
    pub fn merge(&mut self, o: &JerkAccum) {
        self.long_sum_sq += o.long_sum_sq;
        self.long_n += o.long_n;
        self.lat_straight_sum_sq += o.lat_straight_sum_sq;
        self.lat_straight_n += o.lat_straight_n;
        self.lat_turn_sum_sq += o.lat_turn_sum_sq;
        self.lat_turn_n += o.lat_turn_n;
    }

    fn rms(sum_sq: f64, n: usize) -> Option<f64> {
        (n > 0).then(|| (sum_sq / n as f64).sqrt())
    }

    pub fn rms_long(&self) -> Option<f64> {
        Self::rms(self.long_sum_sq, self.long_n)
    }

    pub fn rms_lat_straight(&self) -> Option<f64> {
        Self::rms(self.lat_straight_sum_sq, self.lat_straight_n)
    }

    pub fn rms_lat_turn(&self) -> Option<f64> {
        Self::rms(self.lat_turn_sum_sq, self.lat_turn_n)
    }
}

/// Longitudinal jerk is the speed series differentiated twice; lateral jerk
/// differentiates v times the yaw rate once. Lateral samples split by the
/// command active at their center row. Traces shorter than five rows have no
/// jerk samples.
pub fn trace_jerk(rows: &[TraceRow], dt: f64) -> JerkAccum {
    let mut acc = JerkAccum::default();
    if rows.len() < 5 {
        return acc;
    }
    let v: Vec<f64> = rows.iter().map(|r| r.speed_mps).collect();
    let accel = central_diff(&v, dt);
    for j in central_diff(&accel, dt) {
        acc.long_sum_sq += j * j;
        acc.long_n += 1;
    }

    let headings: Vec<f64> = rows.iter().map(|r| r.heading_rad).collect();
    let yaw_rate = central_diff_angle(&headings, dt);
    let a_lat: Vec<f64> = yaw_rate
        .iter()
        .enumerate()
        .map(|(k, w)| v[k + 1] * w)
        .collect();
    for (k, j) in central_diff(&a_lat, dt).into_iter().enumerate() {
        // This sample's center is input row k + 2.
        if rows[k + 2].command.is_turn() {
            acc.lat_turn_sum_sq += j * j;
            acc.lat_turn_n += 1;
        } else {
            acc.lat_straight_sum_sq += j * j;
            acc.lat_straight_n += 1;
        }
    }
    acc
}

/// Sorts in place; even-length input averages the two middle values.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Mean driven distance between events of one kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KmBetween {
    Observed(f64),
    /// No events: the true spacing is at least the whole driven distance.
    AtLeast(f64),
}

pub fn km_between(total_km: f64, events: usize) -> KmBetween {
    if events == 0 {
        KmBetween::AtLeast(total_km)
    } else {
        KmBetween::Observed(total_km / events as f64)
    }
}

impl fmt::Display for KmBetween {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KmBetween::Observed(v) => write!(f, "{v:.2}"),
            KmBetween::AtLeast(v) => write!(f, ">{v:.2}"),
        }
    }
}

impl serde::Serialize for KmBetween {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Suite definition: the cell grid and its generation settings.
#[derive(Debug, Clone)]
pub struct Suite {
    pub name: String,
    pub towns: Vec<String>,
    /// Perception presets, one tier per column.
    pub tiers: Vec<String>,
    pub tasks: Vec<Task>,
    pub episodes_per_cell: usize,
    pub seed: u64,
    /// Cap applied to the controller for every episode, km/h.
    pub cruise_cap_kmh: Option<f64>,
    /// Scripted vehicles added to nav_dynamic episodes.
    pub dynamic_actor_count: usize,
    /// Shortest acceptable generated route, m.
    pub min_route_m: f64,
}

/// Suites shipped with the library, loadable by name.
pub const BUILTIN_SUITES: [&str; 1] = ["desk"];

/// Source text of a built-in suite.
pub fn builtin_suite(name: &str) -> Option<&'static str> {
    match name {
        "desk" => Some(include_str!("../assets/suites/desk.suite")),
        _ => None,
    }
}

impl Suite {
    pub fn parse(text: &str) -> Result<Suite, ParseError> {
        let blocks = parse_document(text)?;
        let block = blocks
            .iter()
            .find(|b| b.kind == "suite")
            .ok_or_else(|| ParseError::new(1, "no `suite` block"))?;
        let mut suite = Suite {
            name: block.id()?.to_owned(),
            towns: Vec::new(),
            tiers: Vec::new(),
            tasks: Vec::new(),
            episodes_per_cell: 25,
            seed: 0,
            cruise_cap_kmh: None,
            dynamic_actor_count: 4,
            min_route_m: 40.0,
        };
        for prop in &block.props {
            match prop.key.as_str() {
                "towns" => suite.towns = prop.values.clone(),
                "tiers" => {
                    for tier in &prop.values {
                        if PerceptionModel::preset(tier).is_none() {
                            return Err(ParseError::new(
                                prop.line,
                                format!("unknown perception tier `{tier}`"),
                            ));
                        }
                    }
                    suite.tiers = prop.values.clone();
                }
                "tasks" => {
                    suite.tasks = prop
                        .values
                        .iter()
                        .map(|v| {
                            Task::parse(v).ok_or_else(|| {
                                ParseError::new(prop.line, format!("unknown task `{v}`"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                }
                "episodes" => suite.episodes_per_cell = prop.one_f64()? as usize,
                "seed" => suite.seed = prop.one_f64()? as u64,
                "cruise_cap_kmh" => {
                    suite.cruise_cap_kmh = match prop.one_str()? {
                        "none" => None,
                        v => Some(v.parse::<f64>().map_err(|_| {
                            ParseError::new(prop.line, format!("bad cap `{v}`"))
                        })?),
                    }
                }
                "dynamic_actors" => suite.dynamic_actor_count = prop.one_f64()? as usize,
                "min_route_m" => suite.min_route_m = prop.one_f64()?,
                other => {
                    return Err(ParseError::new(
                        prop.line,
                        format!("unknown suite field `{other}`"),
                    ))
                }
            }
        }
        if suite.towns.is_empty() || suite.tiers.is_empty() || suite.tasks.is_empty() {
            return Err(ParseError::new(
                block.line,
                "suite needs towns, tiers and tasks",
            ));
        }
        Ok(suite)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Stable per-episode seed from the suite seed and the cell coordinates.
pub fn derive_seed(base: u64, town: u64, tier: u64, task: u64, episode: u64) -> u64 {
    let mut s = splitmix(base);
    for part in [town, tier, task, episode] {
        s = splitmix(s ^ part);
    }
    s
}

/// Follows straight successors until the chain closes back on the start
/// lane, giving a closed loop a scripted vehicle can drive forever.
fn straight_loop(town: &Town, start: LaneIdx) -> Option<Vec<Vec2>> {
    let mut points = town.lanes[start].centerline.clone();
    let mut cur = start;
    for _ in 0..64 {
        let next = *town.lanes[cur]
            .successors
            .get(&DirectionalCommand::Straight)?;
        if next == start {
            return Some(points);
        }
        points.extend(town.lanes[next].centerline.iter().skip(1).copied());
        cur = next;
    }
    None
}

fn spawn_dynamic_actors(
    town: &Town,
    rng: &mut ChaCha8Rng,
    vehicles: usize,
    ego_start: Vec2,
) -> Vec<Actor> {
    let candidates: Vec<LaneIdx> = (0..town.lanes.len())
        .filter(|&i| !town.lanes[i].junction)
        .collect();
    let mut actors = Vec::new();
    if candidates.is_empty() {
        return actors;
    }
    for k in 0..vehicles {
        for _ in 0..20 {
            let li = candidates[rng.gen_range(0..candidates.len())];
            let lane = &town.lanes[li];
            if (lane.start() - ego_start).norm() < 20.0 {
                continue;
            }
            // Only closed circuits: a vehicle that ran out of waypoints
            // would park across a junction approach forever.
            let Some(waypoints) = straight_loop(town, li) else {
                continue;
            };
            let dir = waypoints[1] - waypoints[0];
            let pose = crate::geometry::Pose2D::new(
                waypoints[0].x,
                waypoints[0].y,
                dir.y.atan2(dir.x),
            );
            actors.push(Actor {
                id: format!("traffic-{k}"),
                kind: ActorKind::Vehicle,
                pose,
                half: Vec2::new(2.0, 0.9),
                speed: 0.0,
                script: Some(Script {
                    waypoints,
                    speed: rng.gen_range(3.0..6.0),
                    delay_s: rng.gen_range(0.0..4.0),
                    loop_path: true,
                }),
            });
            break;
        }
    }
    let pedestrians = vehicles / 2;
    for k in 0..pedestrians {
        let li = candidates[rng.gen_range(0..candidates.len())];
        let lane = &town.lanes[li];
        let s = rng.gen_range(0.3..0.7) * lane.length();
        let (p, heading) = lane.point_at(s);
        let normal = Vec2::new(-heading.sin(), heading.cos());
        let a = p + normal * 7.0;
        let b = p - normal * 7.0;
        actors.push(Actor {
            id: format!("walker-{k}"),
            kind: ActorKind::Pedestrian,
            pose: crate::geometry::Pose2D::new(a.x, a.y, (b - a).y.atan2((b - a).x)),
            half: Vec2::new(0.4, 0.4),
            speed: 0.0,
            script: Some(Script {
                waypoints: vec![a, b],
                speed: rng.gen_range(1.0..2.0),
                delay_s: rng.gen_range(5.0..40.0),
                loop_path: false,
            }),
        });
    }
    actors
}

/// Draws random start lanes and goal nodes until a route matches the task,
/// then assembles the episode. Deterministic in the rng state.
pub fn generate_episode(
    town: &Town,
    graph: &TopoGraph,
    task: Task,
    dynamic_actor_count: usize,
    min_route_m: f64,
    goal_radius: f64,
    rng: &mut ChaCha8Rng,
) -> Option<EpisodeSpec> {
    let starts: Vec<LaneIdx> = (0..town.lanes.len())
        .filter(|&i| !town.lanes[i].junction && town.lanes[i].length() >= 15.0)
        .collect();
    if starts.is_empty() || graph.nodes.is_empty() {
        return None;
    }

    for _ in 0..400 {
        let li = starts[rng.gen_range(0..starts.len())];
        let lane = &town.lanes[li];
        let s0 = rng.gen_range(2.0..(lane.length() / 2.0).min(12.0));
        let goal_node = rng.gen_range(0..graph.nodes.len());
        let start_end = graph.lane_end_node(li)?;
        let Ok(mut route) = plan_route(graph, start_end, goal_node) else {
            continue;
        };
        if route.is_empty() {
            continue;
        }
        let edge = graph.edges.iter().find(|e| e.lane == li).unwrap();
        route.lanes.insert(0, li);
        route.commands.insert(0, edge.command);
        route.pairs.insert(0, (edge.from, edge.command));
        route.length += edge.length;

        let turns = route.commands.iter().filter(|c| c.is_turn()).count();
        if !task.accepts_turn_count(turns) {
            continue;
        }
        let route_length_m = route.length - s0;
        if route_length_m < min_route_m {
            continue;
        }

        let (p, heading) = lane.point_at(s0);
        let start_pose = crate::geometry::Pose2D::new(p.x, p.y, heading);
        let goal_point = graph.nodes[goal_node].position;
        let mut actors = town.actors.clone();
        if task.wants_dynamic_actors() {
            actors.extend(spawn_dynamic_actors(
                town,
                rng,
                dynamic_actor_count,
                start_pose.position(),
            ));
        }
        return Some(EpisodeSpec {
            start_pose,
            start_speed: 0.0,
            start_limit_kmh: lane.speed_limit_kmh,
            goal_point,
            goal_radius,
            route,
            route_length_m,
            time_limit_s: default_time_limit_s(route_length_m),
            actors,
        });
    }
    None
}

/// Per-episode results kept for aggregation.
#[derive(Debug, Clone)]
pub struct EpisodeScore {
    pub outcome: Outcome,
    pub final_time_s: f64,
    pub time_limit_s: f64,
    pub route_length_m: f64,
    pub distance_km: f64,
    pub infractions: [usize; 6],
    pub jerk: JerkAccum,
    pub median_abs_center_m: Option<f64>,
}

/// Scores one finished episode: infractions plus comfort and accuracy.
pub fn score_episode(
    town: &Town,
    actors: &[Actor],
    config: &RunConfig,
    result: &crate::sim::EpisodeResult,
) -> EpisodeScore {
    let mut infractions = [0usize; 6];
    for inf in detect_infractions(town, actors, &config.vehicle, &result.trace) {
        infractions[inf.kind.index()] += 1;
    }
    let mut abs_center: Vec<f64> = result
        .trace
        .rows
        .iter()
        .map(|r| r.truth.center_distance.abs())
        .collect();
    EpisodeScore {
        outcome: result.outcome,
        final_time_s: result.final_time_s,
        time_limit_s: result.time_limit_s,
        route_length_m: result.route_length_m,
        distance_km: result.distance_driven_m / 1000.0,
        infractions,
        jerk: trace_jerk(&result.trace.rows, config.episode.dt),
        median_abs_center_m: median(&mut abs_center),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct InfractionStat {
    pub kind: InfractionKind,
    pub count: usize,
    pub km_between: KmBetween,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CellReport {
    pub town: String,
    pub tier: String,
    pub task: Task,
    pub episodes: usize,
    pub successes: usize,
    pub timeouts: usize,
    pub off_road: usize,
    pub total_km: f64,
    /// Mean completion time over the successful episodes.
    pub mean_success_time_s: Option<f64>,
    pub infractions: Vec<InfractionStat>,
    pub rms_long_jerk: Option<f64>,
    pub rms_lat_jerk_straight: Option<f64>,
    pub rms_lat_jerk_turn: Option<f64>,
    /// Median over episodes of the per-episode median |centerline offset|.
    pub median_abs_center_m: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchmarkReport {
    pub suite: String,
    pub episodes_per_cell: usize,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("suite references unknown town `{0}`")]
    UnknownTown(String),
    #[error("suite references unknown perception tier `{0}`")]
    UnknownTier(String),
    #[error("could not generate a {task} episode in `{town}` (episode {index})")]
    Generation {
        town: String,
        task: Task,
        index: usize,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Graph(#[from] crate::planner::GraphError),
}

fn aggregate_cell(
    town: &str,
    tier: &str,
    task: Task,
    scores: &[EpisodeScore],
) -> CellReport {
    let episodes = scores.len();
    let successes = scores.iter().filter(|s| s.outcome.is_success()).count();
    let timeouts = scores
        .iter()
        .filter(|s| s.outcome == Outcome::Timeout)
        .count();
    let off_road = scores
        .iter()
        .filter(|s| s.outcome == Outcome::OffRoad)
        .count();
    let total_km: f64 = scores.iter().map(|s| s.distance_km).sum();
    let mut success_times: Vec<f64> = scores
        .iter()
        .filter(|s| s.outcome.is_success())
        .map(|s| s.final_time_s)
        .collect();
    let mean_success_time_s = (!success_times.is_empty())
        .then(|| success_times.iter().sum::<f64>() / success_times.len() as f64);
    success_times.clear();

    let infractions = InfractionKind::ALL
        .into_iter()
        .map(|kind| {
            let count = scores.iter().map(|s| s.infractions[kind.index()]).sum();
            InfractionStat {
                kind,
                count,
                km_between: km_between(total_km, count),
            }
        })
        .collect();

    let mut jerk = JerkAccum::default();
    for s in scores {
        jerk.merge(&s.jerk);
    }
    let mut episode_medians: Vec<f64> = scores
        .iter()
        .filter_map(|s| s.median_abs_center_m)
        .collect();

    CellReport {
        town: town.to_owned(),
        tier: tier.to_owned(),
        task,
        episodes,
        successes,
        timeouts,
        off_road,
        total_km,
        mean_success_time_s,
        infractions,
        rms_long_jerk: jerk.rms_long(),
        rms_lat_jerk_straight: jerk.rms_lat_straight(),
        rms_lat_jerk_turn: jerk.rms_lat_turn(),
        median_abs_center_m: median(&mut episode_medians),
    }
}

/// Runs the whole suite. Episodes within a cell run in parallel; scores are
/// collected in episode order so reports do not depend on scheduling.
pub fn run_benchmark(
    suite: &Suite,
    base_config: &RunConfig,
    towns: &[Town],
) -> Result<BenchmarkReport, BenchError> {
    let mut config = base_config.clone();
    if let Some(cap) = suite.cruise_cap_kmh {
        config.controller.cruise_cap_kmh = Some(cap);
    }

    let mut prepared: Vec<(&Town, TopoGraph)> = Vec::new();
    for name in &suite.towns {
        let town = towns
            .iter()
            .find(|t| &t.name == name)
            .ok_or_else(|| BenchError::UnknownTown(name.clone()))?;
        prepared.push((town, TopoGraph::from_town(town)?));
    }
    let mut tier_models: Vec<PerceptionModel> = Vec::new();
    for tier in &suite.tiers {
        tier_models
            .push(PerceptionModel::preset(tier).ok_or_else(|| BenchError::UnknownTier(tier.clone()))?);
    }

    let mut cells = Vec::new();
    for (town_i, (town, graph)) in prepared.iter().enumerate() {
        for (tier_i, tier) in suite.tiers.iter().enumerate() {
            for (task_i, &task) in suite.tasks.iter().enumerate() {
                let scores: Result<Vec<EpisodeScore>, BenchError> = (0..suite.episodes_per_cell)
                    .into_par_iter()
                    .map(|index| {
                        let seed = derive_seed(
                            suite.seed,
                            town_i as u64,
                            tier_i as u64,
                            task_i as u64,
                            index as u64,
                        );
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        let spec = generate_episode(
                            town,
                            graph,
                            task,
                            suite.dynamic_actor_count,
                            suite.min_route_m,
                            config.episode.goal_radius,
                            &mut rng,
                        )
                        .ok_or_else(|| BenchError::Generation {
                            town: town.name.clone(),
                            task,
                            index,
                        })?;
                        let model = tier_models[tier_i].with_seed(rng.gen());
                        let result = run_episode(town, &config, &model, &spec);
                        Ok(score_episode(town, &spec.actors, &config, &result))
                    })
                    .collect();
                cells.push(aggregate_cell(&town.name, tier, task, &scores?));
            }
        }
    }

    Ok(BenchmarkReport {
        suite: suite.name.clone(),
        episodes_per_cell: suite.episodes_per_cell,
        cells,
    })
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables with aligned columns.
    pub fn render_text(&self) -> String {
        let fmt_opt = |v: Option<f64>, digits: usize| match v {
            Some(x) => format!("{x:.digits$}"),
            None => "-".to_owned(),
        };

        let mut main_rows: Vec<Vec<String>> = vec![vec![
            "town".into(),
            "tier".into(),
            "task".into(),
            "success".into(),
            "timeout".into(),
            "offroad".into(),
            "km".into(),
            "t_mean_s".into(),
            "med|d|_m".into(),
            "rmsJ_long".into(),
            "rmsJ_lat_s".into(),
            "rmsJ_lat_t".into(),
        ]];
        for c in &self.cells {
            main_rows.push(vec![
                c.town.clone(),
                c.tier.clone(),
                c.task.as_str().into(),
                format!("{}/{}", c.successes, c.episodes),
                c.timeouts.to_string(),
                c.off_road.to_string(),
                format!("{:.2}", c.total_km),
                fmt_opt(c.mean_success_time_s, 1),
                fmt_opt(c.median_abs_center_m, 3),
                fmt_opt(c.rms_long_jerk, 2),
                fmt_opt(c.rms_lat_jerk_straight, 2),
                fmt_opt(c.rms_lat_jerk_turn, 2),
            ]);
        }

        let mut infraction_rows: Vec<Vec<String>> = vec![{
            let mut head = vec!["town".into(), "tier".into(), "task".into()];
            head.extend(InfractionKind::ALL.iter().map(|k| k.as_str().to_owned()));
            head
        }];
        for c in &self.cells {
            let mut row = vec![c.town.clone(), c.tier.clone(), c.task.as_str().to_owned()];
            for stat in &c.infractions {
                row.push(stat.km_between.to_string());
            }
            infraction_rows.push(row);
        }

        let mut out = format!(
            "suite {}: {} cells, {} episodes each\n\n",
            self.suite,
            self.cells.len(),
            self.episodes_per_cell
        );
        out.push_str(&render_table(&main_rows));
        out.push_str("\nkm between infractions (> total driven km means none observed)\n");
        out.push_str(&render_table(&infraction_rows));
        out
    }
}

fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            line.push_str(&format!("{:<width$}", cell, width = widths[i] + 2));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::Affordances;
    use crate::control::ControlState;
    use crate::perception::PerceivedAffordances;
    use crate::sim::{EpisodeParams, Scenario, StartRef, GoalRef};
    use approx::assert_relative_eq;

    #[test]
    fn km_between_formats() {
        assert_eq!(km_between(10.0, 4).to_string(), "2.50");
        assert_eq!(km_between(4.6, 0).to_string(), ">4.60");
        assert_eq!(km_between(0.0, 0).to_string(), ">0.00");
    }

    #[test]
    fn sinusoid_jerk_matches_analytic_rms() {
        // v(t) = 5 + sin(2 t): jerk amplitude is A w^2 = 4, RMS 4 / sqrt(2).
        let dt = 0.05;
        let omega = 2.0;
        let periods = 10.0;
        let n = (periods * std::f64::consts::TAU / omega / dt).round() as usize;
        let rows: Vec<TraceRow> = (0..n)
            .map(|i| synthetic_row(i as f64 * dt, 0.0, 0.0, 0.0, 5.0 + (omega * i as f64 * dt).sin()))
            .collect();
        let acc = trace_jerk(&rows, dt);
        let expected = omega * omega / 2f64.sqrt();
        let got = acc.rms_long().unwrap();
        assert!(
            (got - expected).abs() / expected < 0.02,
            "rms {got} vs analytic {expected}"
        );
        // Heading is constant, so lateral jerk is exactly zero.
        assert_eq!(acc.rms_lat_straight(), Some(0.0));
    }

    #[test]
    fn short_traces_have_no_jerk_samples() {
        let rows: Vec<TraceRow> = (0..4)
            .map(|i| synthetic_row(i as f64 * 0.05, 0.0, 0.0, 0.0, 1.0))
            .collect();
        assert_eq!(trace_jerk(&rows, 0.05), JerkAccum::default());
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0]), Some(3.0));
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn debounce_collapses_streaks() {
        let mut d = Debounce::new();
        let mut events = 0;
        for t in [0.0, 0.05, 0.1, 5.0, 5.05, 6.0, 9.0] {
            if d.hit(t) {
                events += 1;
            }
        }
        // 0.0 starts one, 5.0 starts one (4.9 s clear), 6.0 is blocked by
        // 5.05 + 2 s, 9.0 starts the third.
        assert_eq!(events, 3);
    }

    #[test]
    fn classify_matches_turn_counts() {
        let route = |cmds: &[DirectionalCommand]| Route {
            pairs: Vec::new(),
            lanes: vec![0; cmds.len()],
            commands: cmds.to_vec(),
            length: 100.0,
        };
        use DirectionalCommand::*;
        assert_eq!(classify_route(&route(&[Straight, Straight]), false), Some(Task::Straight));
        assert_eq!(classify_route(&route(&[Straight, Left]), false), Some(Task::OneTurn));
        assert_eq!(
            classify_route(&route(&[Left, Straight, Right]), false),
            Some(Task::Navigation)
        );
        assert_eq!(
            classify_route(&route(&[Left, Right]), true),
            Some(Task::NavDynamic)
        );
        assert_eq!(classify_route(&route(&[Straight]), true), None);
    }

    #[test]
    fn suite_parses_and_validates() {
        let text = "\
suite desk
  towns town-a town-b
  tiers clean train test
  tasks straight one_turn navigation nav_dynamic
  episodes 25
  seed 7
  cruise_cap_kmh 20
  dynamic_actors 4
";
        let suite = Suite::parse(text).unwrap();
        assert_eq!(suite.name, "desk");
        assert_eq!(suite.towns.len(), 2);
        assert_eq!(suite.tiers.len(), 3);
        assert_eq!(suite.tasks.len(), 4);
        assert_eq!(suite.episodes_per_cell, 25);
        assert_eq!(suite.cruise_cap_kmh, Some(20.0));

        let bad = "suite x\n  towns a\n  tiers nope\n  tasks straight\n";
        assert!(Suite::parse(bad).is_err());
        let no_tasks = "suite x\n  towns a\n  tiers clean\n";
        assert!(Suite::parse(no_tasks).is_err());
    }

    fn synthetic_row(t: f64, x: f64, y: f64, heading: f64, v: f64) -> TraceRow {
        let truth = Affordances {
            hazard_stop: false,
            red_light: false,
            speed_sign: crate::affordance::SignReading::None,
            vehicle_distance: 50.0,
            relative_angle: 0.0,
            center_distance: 0.0,
        };
        TraceRow {
            time_s: t,
            x_m: x,
            y_m: y,
            heading_rad: heading,
            speed_mps: v,
            throttle: 0.0,
            brake: 0.0,
            steer_rad: 0.0,
            state: ControlState::Cruising,
            command: DirectionalCommand::Straight,
            limit_kmh: 60.0,
            truth,
            perceived: PerceivedAffordances::exact(&truth),
        }
    }

    const DETECTOR_TOWN: &str = "\
lane east
  center 0 0  100 0
  width 4
  limit 60
  opposite west

lane west
  center 100 4  0 4
  width 4
  limit 60
  opposite east

sidewalk south
  poly 0 -3  100 -3  100 -8  0 -8

light junction
  pose 50 -6 0
  cycle 5 2 13
  offset 7
  stopline 45 -2  45 2
";

    fn detector_town() -> Town {
        Town::parse(DETECTOR_TOWN).unwrap()
    }

    fn walk(rows: &mut Vec<TraceRow>, t0: f64, from: (f64, f64), to: (f64, f64), steps: usize, heading: f64) {
        for i in 0..steps {
            let f = i as f64 / (steps.max(2) - 1) as f64;
            rows.push(synthetic_row(
                t0 + i as f64 * 0.05,
                from.0 + (to.0 - from.0) * f,
                from.1 + (to.1 - from.1) * f,
                heading,
                5.0,
            ));
        }
    }

    #[test]
    fn wrong_way_needs_corridor_and_anti_alignment() {
        let town = detector_town();
        let vp = VehicleParams::default();
        // Driving east on the eastbound lane: clean.
        let mut rows = Vec::new();
        walk(&mut rows, 0.0, (10.0, 0.0), (30.0, 0.0), 20, 0.0);
        let trace = EpisodeTrace { rows };
        assert!(detect_infractions(&town, &[], &vp, &trace).is_empty());

        // Driving east while inside the westbound corridor: wrong way.
        let mut rows = Vec::new();
        walk(&mut rows, 0.0, (10.0, 4.0), (30.0, 4.0), 20, 0.0);
        let trace = EpisodeTrace { rows };
        let found = detect_infractions(&town, &[], &vp, &trace);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].kind, InfractionKind::OppositeLane);

        // Crossing the westbound lane at a right angle is not wrong-way.
        let mut rows = Vec::new();
        walk(
            &mut rows,
            0.0,
            (50.0, 3.0),
            (50.0, 5.0),
            10,
            std::f64::consts::FRAC_PI_2,
        );
        let trace = EpisodeTrace { rows };
        assert!(detect_infractions(&town, &[], &vp, &trace).is_empty());
    }

    #[test]
    fn wrong_way_debounces_separate_excursions() {
        let town = detector_town();
        let vp = VehicleParams::default();
        let mut rows = Vec::new();
        walk(&mut rows, 0.0, (10.0, 4.0), (15.0, 4.0), 10, 0.0); // 0.0 .. 0.45 s
        walk(&mut rows, 0.5, (15.0, 0.0), (40.0, 0.0), 60, 0.0); // clear ~3 s
        walk(&mut rows, 3.55, (40.0, 4.0), (45.0, 4.0), 10, 0.0);
        let trace = EpisodeTrace { rows };
        let found = detect_infractions(&town, &[], &vp, &trace);
        assert_eq!(found.len(), 2);
        assert!(found.iter().all(|i| i.kind == InfractionKind::OppositeLane));
    }

    #[test]
    fn sidewalk_detected_by_containment() {
        let town = detector_town();
        let vp = VehicleParams::default();
        let mut rows = Vec::new();
        walk(&mut rows, 0.0, (20.0, -5.0), (25.0, -5.0), 10, 0.0);
        let trace = EpisodeTrace { rows };
        let found = detect_infractions(&town, &[], &vp, &trace);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].kind, InfractionKind::Sidewalk);
    }

    #[test]
    fn collisions_report_actor_kind() {
        let town = detector_town();
        let vp = VehicleParams::default();
        let mk = |kind, x: f64| Actor {
            id: "a".into(),
            kind,
            pose: crate::geometry::Pose2D::new(x, 0.0, 0.0),
            half: Vec2::new(1.0, 1.0),
            speed: 0.0,
            script: None,
        };
        for (kind, expected) in [
            (ActorKind::Static, InfractionKind::CollisionStatic),
            (ActorKind::Vehicle, InfractionKind::CollisionVehicle),
            (ActorKind::Pedestrian, InfractionKind::CollisionPedestrian),
        ] {
            let actor = mk(kind, 30.0);
            let mut rows = Vec::new();
            walk(&mut rows, 0.0, (26.0, 0.0), (29.0, 0.0), 10, 0.0);
            let trace = EpisodeTrace { rows };
            let found = detect_infractions(&town, &[actor], &vp, &trace);
            assert_eq!(found.len(), 1, "{expected:?}");
            assert_eq!(found[0].kind, expected);
        }
    }

    #[test]
    fn red_light_only_when_crossing_on_red() {
        let town = detector_town();
        let vp = VehicleParams::default();
        // Light cycle 5/2/13, offset 7: red on [0, 13), green on [13, 18).
        let mut rows = Vec::new();
        walk(&mut rows, 1.0, (44.0, 0.0), (46.0, 0.0), 5, 0.0);
        let trace = EpisodeTrace { rows };
        let found = detect_infractions(&town, &[], &vp, &trace);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].kind, InfractionKind::RedLightViolation);

        // Same crossing during green: clean.
        let mut rows = Vec::new();
        walk(&mut rows, 14.0, (44.0, 0.0), (46.0, 0.0), 5, 0.0);
        let trace = EpisodeTrace { rows };
        assert!(detect_infractions(&town, &[], &vp, &trace).is_empty());

        // Crossing on red but heading the other way is not this approach.
        let mut rows = Vec::new();
        walk(&mut rows, 1.0, (46.0, 0.0), (44.0, 0.0), 5, std::f64::consts::PI);
        let trace = EpisodeTrace { rows };
        let found = detect_infractions(&town, &[], &vp, &trace);
        assert!(found.iter().all(|i| i.kind != InfractionKind::RedLightViolation));
    }

    #[test]
    fn detection_survives_trace_round_trip() {
        let town =
            Town::parse("lane main\n  center 0 0  100 0\n  width 4\n  limit 60\n").unwrap();
        let graph = TopoGraph::from_town(&town).unwrap();
        let scenario = Scenario {
            name: "s".into(),
            town: None,
            start: StartRef::LaneOffset {
                lane: "main".into(),
                s: 0.0,
            },
            start_speed_mps: 0.0,
            start_limit_kmh: None,
            goal: GoalRef::Point(Vec2::new(80.0, 0.0)),
            goal_radius: None,
            route_nodes: None,
            time_limit_s: None,
            overrides: Vec::new(),
            perception: None,
            lights: Vec::new(),
            actors: vec![Actor {
                id: "parked".into(),
                kind: ActorKind::Static,
                pose: crate::geometry::Pose2D::new(80.0, 0.0, 0.0),
                half: Vec2::new(1.0, 1.0),
                speed: 0.0,
                script: None,
            }],
        };
        let spec = scenario
            .resolve(&town, &graph, &EpisodeParams::default())
            .unwrap();
        let config = RunConfig::default();
        let result = run_episode(&town, &config, &PerceptionModel::clean(), &spec);
        let online = detect_infractions(&town, &spec.actors, &config.vehicle, &result.trace);
        let reloaded = EpisodeTrace::parse_csv(&result.trace.to_csv()).unwrap();
        let replayed = detect_infractions(&town, &spec.actors, &config.vehicle, &reloaded);
        assert_eq!(online, replayed);
    }

    #[test]
    fn derive_seed_is_stable_and_spread() {
        let a = derive_seed(7, 0, 1, 2, 3);
        let b = derive_seed(7, 0, 1, 2, 3);
        assert_eq!(a, b);
        assert_ne!(a, derive_seed(7, 0, 1, 2, 4));
        assert_ne!(a, derive_seed(7, 0, 1, 3, 2));
        assert_ne!(a, derive_seed(8, 0, 1, 2, 3));
    }

    #[test]
    fn time_limit_rule_is_exact() {
        assert_eq!(default_time_limit_s(100.0), 36.0);
        assert_relative_eq!(default_time_limit_s(250.0), 90.0, epsilon = 1e-12);
    }
}
