//! Vehicle dynamics, scenario definitions and the closed-loop episode runner.
//!
//! One control step advances the world in a fixed order: route command,
//! ground-truth affordances, perception, controller, vehicle update. Every
//! stage is deterministic given the scenario and the perception seed, and
//! the trace writer prints floats in their shortest round-trip form, so a
//! repeated run produces a byte-identical trace.

use crate::affordance::{compute_affordances, Affordances, AffordanceError, EgoFrame, SignReading};
use crate::config::{parse_document, ParseError, RunConfig};
use crate::control::{ControlState, Controller};
use crate::geometry::{wrap_angle, Obb, Pose2D, Vec2};
use crate::perception::{PerceivedAffordances, PerceptionModel, PerceptionSim};
use crate::planner::{plan_route, NodeId, PlanError, Route, RouteFollower, TopoGraph};
use crate::town::{parse_actor, Actor, DirectionalCommand, Town};

/// Longitudinal and geometric parameters of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Acceleration at full throttle, m/s^2.
    pub a_max: f64,
    /// Deceleration at full brake, m/s^2.
    pub b_max: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
    /// Axle distance, m; the front axle sits half of it ahead of the center.
    pub wheelbase: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            a_max: 3.0,
            b_max: 8.0,
            drag: 0.02,
            wheelbase: 2.7,
            half_length: 2.0,
            half_width: 0.9,
        }
    }
}

/// Step size and loop-level limits of an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeParams {
    pub dt: f64,
    /// Distance from the goal point at which an episode succeeds, m.
    pub goal_radius: f64,
    /// Arc length ahead of the vehicle at which a turn command activates, m.
    pub activation_distance: f64,
    /// Hard step cap independent of the scenario time limit.
    pub max_steps: usize,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        EpisodeParams {
            dt: 0.05,
            goal_radius: 2.0,
            activation_distance: 30.0,
            max_steps: 20_000,
        }
    }
}

/// Kinematic bicycle step. The order is fixed: speed from the pedal inputs
/// first, then heading from the new speed, then position along the new
/// heading. Speed never goes negative; the car has no reverse.
pub fn step_vehicle(
    pose: &mut Pose2D,
    v: &mut f64,
    throttle: f64,
    brake: f64,
    steer: f64,
    p: &VehicleParams,
    dt: f64,
) {
    let a = p.a_max * throttle.clamp(0.0, 1.0) - p.b_max * brake.clamp(0.0, 1.0) - p.drag * *v;
    *v = (*v + a * dt).max(0.0);
    pose.heading = wrap_angle(pose.heading + *v / p.wheelbase * steer.tan() * dt);
    let dir = pose.forward();
    pose.x += *v * dt * dir.x;
    pose.y += *v * dt * dir.y;
}

/// Ego geometry for the affordance extractor at the given center pose.
pub fn ego_frame(pose: &Pose2D, p: &VehicleParams) -> EgoFrame {
    EgoFrame {
        front_axle: pose.advanced(p.wheelbase / 2.0),
        obb: Obb::new(
            pose.position(),
            Vec2::new(p.half_length, p.half_width),
            pose.heading,
        ),
    }
}

/// Default episode budget: the time to cover the route at 10 km/h.
pub fn default_time_limit_s(route_length_m: f64) -> f64 {
    route_length_m * 3.6 / 10.0
}

/// Fully resolved episode: world-frame start, goal, route and actors.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    /// Center pose of the ego at t = 0.
    pub start_pose: Pose2D,
    pub start_speed: f64,
    /// Seed for the controller's speed-limit memory, km/h.
    pub start_limit_kmh: f64,
    pub goal_point: Vec2,
    pub goal_radius: f64,
    pub route: Route,
    /// Arc length from the start position to the route end, m.
    pub route_length_m: f64,
    pub time_limit_s: f64,
    /// Town actors plus any scenario actors.
    pub actors: Vec<Actor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Timeout,
    OffRoad,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Timeout => "timeout",
            Outcome::OffRoad => "off_road",
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// One logged control step; the pose and speed are from before the step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time_s: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub speed_mps: f64,
    pub throttle: f64,
    pub brake: f64,
    pub steer_rad: f64,
    pub state: ControlState,
    pub command: DirectionalCommand,
    pub limit_kmh: f64,
    pub truth: Affordances,
    pub perceived: PerceivedAffordances,
}

pub const TRACE_HEADER: &str = "time_s,x_m,y_m,heading_rad,speed_mps,throttle,brake,steer_rad,\
state,command,limit_kmh,true_hazard,true_red,true_sign,true_vehicle_distance_m,\
true_relative_angle_rad,true_center_distance_m,p_hazard,p_red,perc_hazard,perc_red,perc_sign,\
perc_vehicle_distance_m,perc_relative_angle_rad,perc_center_distance_m";

const TRACE_FIELDS: usize = 25;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    /// Renders the trace as comma-separated text. Floats use the shortest
    /// representation that parses back to the same bits, so the text is both
    /// stable across runs and lossless to reload.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::with_capacity(128 * (self.rows.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        let b = |v: bool| u8::from(v);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.time_s,
                r.x_m,
                r.y_m,
                r.heading_rad,
                r.speed_mps,
                r.throttle,
                r.brake,
                r.steer_rad,
                r.state.as_str(),
                r.command.as_str(),
                r.limit_kmh,
                b(r.truth.hazard_stop),
                b(r.truth.red_light),
                r.truth.speed_sign.as_str(),
                r.truth.vehicle_distance,
                r.truth.relative_angle,
                r.truth.center_distance,
                r.perceived.p_hazard,
                r.perceived.p_red,
                b(r.perceived.hazard_stop),
                b(r.perceived.red_light),
                r.perceived.speed_sign.as_str(),
                r.perceived.vehicle_distance,
                r.perceived.relative_angle,
                r.perceived.center_distance,
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<EpisodeTrace, ParseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| ParseError::new(1, "empty trace"))?;
        if header != TRACE_HEADER {
            return Err(ParseError::new(1, "unexpected trace header"));
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != TRACE_FIELDS {
                return Err(ParseError::new(
                    line_no,
                    format!("expected {TRACE_FIELDS} fields, got {}", fields.len()),
                ));
            }
            let num = |i: usize| -> Result<f64, ParseError> {
                fields[i]
                    .parse()
                    .map_err(|_| ParseError::new(line_no, format!("bad number `{}`", fields[i])))
            };
            let flag = |i: usize| -> Result<bool, ParseError> {
                match fields[i] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(ParseError::new(line_no, format!("bad flag `{other}`"))),
                }
            };
            let sign = |i: usize| -> Result<SignReading, ParseError> {
                SignReading::parse(fields[i])
                    .ok_or_else(|| ParseError::new(line_no, format!("bad sign `{}`", fields[i])))
            };
            rows.push(TraceRow {
                time_s: num(0)?,
                x_m: num(1)?,
                y_m: num(2)?,
                heading_rad: num(3)?,
                speed_mps: num(4)?,
                throttle: num(5)?,
                brake: num(6)?,
                steer_rad: num(7)?,
                state: ControlState::parse(fields[8])
                    .ok_or_else(|| ParseError::new(line_no, format!("bad state `{}`", fields[8])))?,
                command: DirectionalCommand::parse(fields[9]).ok_or_else(|| {
                    ParseError::new(line_no, format!("bad command `{}`", fields[9]))
                })?,
                limit_kmh: num(10)?,
                truth: Affordances {
                    hazard_stop: flag(11)?,
                    red_light: flag(12)?,
                    speed_sign: sign(13)?,
                    vehicle_distance: num(14)?,
                    relative_angle: num(15)?,
                    center_distance: num(16)?,
                },
                perceived: PerceivedAffordances {
                    p_hazard: num(17)?,
                    p_red: num(18)?,
                    hazard_stop: flag(19)?,
                    red_light: flag(20)?,
                    speed_sign: sign(21)?,
                    vehicle_distance: num(22)?,
                    relative_angle: num(23)?,
                    center_distance: num(24)?,
                },
            });
        }
        Ok(EpisodeTrace { rows })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    pub final_time_s: f64,
    pub steps: usize,
    pub distance_driven_m: f64,
    pub route_length_m: f64,
    pub time_limit_s: f64,
    pub trace: EpisodeTrace,
}

/// Runs one closed-loop episode to success, timeout or an off-road abort.
pub fn run_episode(
    town: &Town,
    config: &RunConfig,
    perception: &PerceptionModel,
    spec: &EpisodeSpec,
) -> EpisodeResult {
    let vp = &config.vehicle;
    let ep = &config.episode;
    let mut pose = spec.start_pose;
    let mut v = spec.start_speed;
    let mut controller = Controller::new(config.controller.clone(), spec.start_limit_kmh);
    let mut perception_sim = PerceptionSim::new(perception.clone());
    let mut follower = RouteFollower::new();
    let mut trace = EpisodeTrace::default();
    let mut time = 0.0;
    let mut steps = 0usize;
    let mut distance = 0.0;

    let outcome = loop {
        if (pose.position() - spec.goal_point).norm() <= spec.goal_radius {
            break Outcome::Success;
        }
        if time > spec.time_limit_s + 1e-9 || steps >= ep.max_steps {
            break Outcome::Timeout;
        }

        let query = follower.advance(town, &spec.route, pose.position(), ep.activation_distance);
        let command = query.command;
        let frame = ego_frame(&pose, vp);
        let truth = match compute_affordances(town, time, &spec.actors, &frame, command) {
            Ok(t) => t,
            Err(AffordanceError::OffRoad { .. }) => break Outcome::OffRoad,
        };
        let perceived = perception_sim.perceive(&truth);
        let out = controller.step(&perceived, v, command, ep.dt);
        trace.rows.push(TraceRow {
            time_s: time,
            x_m: pose.x,
            y_m: pose.y,
            heading_rad: pose.heading,
            speed_mps: v,
            throttle: out.throttle,
            brake: out.brake,
            steer_rad: out.steer,
            state: out.state,
            command,
            limit_kmh: controller.limit_kmh(),
            truth,
            perceived,
        });
        let before = pose.position();
        step_vehicle(&mut pose, &mut v, out.throttle, out.brake, out.steer, vp, ep.dt);
        distance += (pose.position() - before).norm();
        time += ep.dt;
        steps += 1;
    };

    EpisodeResult {
        outcome,
        final_time_s: time,
        steps,
        distance_driven_m: distance,
        route_length_m: spec.route_length_m,
        time_limit_s: spec.time_limit_s,
        trace,
    }
}

/// Where the ego starts, by lane arc length or an explicit pose.
#[derive(Debug, Clone, PartialEq)]
pub enum StartRef {
    LaneOffset { lane: String, s: f64 },
    Pose(Pose2D),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoalRef {
    /// End point of the named lane.
    LaneEnd(String),
    Point(Vec2),
    Node(NodeId),
}

/// Per-light cycle or phase override.
#[derive(Debug, Clone, PartialEq)]
pub struct LightOverride {
    pub light: String,
    pub offset_s: Option<f64>,
    pub cycle: Option<(f64, f64, f64)>,
}

/// A scenario file: start, goal and run settings over a named town.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub town: Option<String>,
    pub start: StartRef,
    pub start_speed_mps: f64,
    pub start_limit_kmh: Option<f64>,
    pub goal: GoalRef,
    pub goal_radius: Option<f64>,
    pub route_nodes: Option<(NodeId, NodeId)>,
    pub time_limit_s: Option<f64>,
    /// `section.key value` pairs applied to the run configuration.
    pub overrides: Vec<(String, String)>,
    pub perception: Option<PerceptionModel>,
    pub lights: Vec<LightOverride>,
    pub actors: Vec<Actor>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("unknown lane `{0}`")]
    UnknownLane(String),
    #[error("unknown light `{0}`")]
    UnknownLight(String),
    #[error("start pose is not aligned with any lane")]
    NoStartLane,
    #[error("the town has no lanes to plan over")]
    EmptyGraph,
}

/// Scenarios shipped with the library, loadable by name.
pub const BUILTIN_SCENARIOS: [&str; 3] = ["red-light-crawl", "ped-crossing", "follow-lead"];

/// Source text of a built-in scenario.
pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    match name {
        "red-light-crawl" => Some(include_str!("../assets/scenarios/red-light-crawl.scn")),
        "ped-crossing" => Some(include_str!("../assets/scenarios/ped-crossing.scn")),
        "follow-lead" => Some(include_str!("../assets/scenarios/follow-lead.scn")),
        _ => None,
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ParseError> {
        let blocks = parse_document(text)?;
        let mut name = String::new();
        let mut town = None;
        let mut start = None;
        let mut start_speed_mps = 0.0;
        let mut start_limit_kmh = None;
        let mut goal = None;
        let mut goal_radius = None;
        let mut route_nodes = None;
        let mut time_limit_s = None;
        let mut overrides = Vec::new();
        let mut perception = None;
        let mut lights = Vec::new();
        let mut actors = Vec::new();

        for block in &blocks {
            match block.kind.as_str() {
                "scenario" => {
                    name = block.id()?.to_owned();
                    if let Some(p) = block.prop("town") {
                        town = Some(p.one_str()?.to_owned());
                    }
                }
                "ego" => {
                    for prop in &block.props {
                        match prop.key.as_str() {
                            "lane" => {
                                if prop.values.len() != 2 {
                                    return Err(ParseError::new(
                                        prop.line,
                                        "`lane` expects a lane id and an arc offset",
                                    ));
                                }
                                let s = prop.values[1].parse::<f64>().map_err(|_| {
                                    ParseError::new(
                                        prop.line,
                                        format!("bad arc offset `{}`", prop.values[1]),
                                    )
                                })?;
                                start = Some(StartRef::LaneOffset {
                                    lane: prop.values[0].clone(),
                                    s,
                                });
                            }
                            "pose" => {
                                let v = prop.f64s()?;
                                if v.len() != 3 {
                                    return Err(ParseError::new(
                                        prop.line,
                                        "`pose` expects x, y and heading",
                                    ));
                                }
                                start = Some(StartRef::Pose(Pose2D::new(v[0], v[1], v[2])));
                            }
                            "speed_kmh" => start_speed_mps = prop.one_f64()? / 3.6,
                            "speed_mps" => start_speed_mps = prop.one_f64()?,
                            "limit_kmh" => start_limit_kmh = Some(prop.one_f64()?),
                            other => {
                                return Err(ParseError::new(
                                    prop.line,
                                    format!("unknown ego field `{other}`"),
                                ))
                            }
                        }
                    }
                }
                "goal" => {
                    for prop in &block.props {
                        match prop.key.as_str() {
                            "lane" => goal = Some(GoalRef::LaneEnd(prop.one_str()?.to_owned())),
                            "point" => {
                                let v = prop.f64s()?;
                                if v.len() != 2 {
                                    return Err(ParseError::new(
                                        prop.line,
                                        "`point` expects x and y",
                                    ));
                                }
                                goal = Some(GoalRef::Point(Vec2::new(v[0], v[1])));
                            }
                            "node" => goal = Some(GoalRef::Node(prop.one_f64()? as NodeId)),
                            "radius" => goal_radius = Some(prop.one_f64()?),
                            other => {
                                return Err(ParseError::new(
                                    prop.line,
                                    format!("unknown goal field `{other}`"),
                                ))
                            }
                        }
                    }
                }
                "route" => {
                    let p = block.require("nodes")?;
                    let v = p.f64s()?;
                    if v.len() != 2 {
                        return Err(ParseError::new(p.line, "`nodes` expects two node ids"));
                    }
                    route_nodes = Some((v[0] as NodeId, v[1] as NodeId));
                }
                "run" => {
                    for prop in &block.props {
                        match prop.key.as_str() {
                            "time_limit_s" => time_limit_s = Some(prop.one_f64()?),
                            "cruise_cap_kmh" => overrides.push((
                                "controller.cruise_cap_kmh".to_owned(),
                                prop.one_str()?.to_owned(),
                            )),
                            "max_steps" => overrides
                                .push(("episode.max_steps".to_owned(), prop.one_str()?.to_owned())),
                            "set" => {
                                if prop.values.len() != 2 {
                                    return Err(ParseError::new(
                                        prop.line,
                                        "`set` expects a config key and a value",
                                    ));
                                }
                                overrides.push((prop.values[0].clone(), prop.values[1].clone()));
                            }
                            other => {
                                return Err(ParseError::new(
                                    prop.line,
                                    format!("unknown run field `{other}`"),
                                ))
                            }
                        }
                    }
                }
                "light" => {
                    let mut over = LightOverride {
                        light: block.id()?.to_owned(),
                        offset_s: None,
                        cycle: None,
                    };
                    for prop in &block.props {
                        match prop.key.as_str() {
                            "offset" => over.offset_s = Some(prop.one_f64()?),
                            "cycle" => {
                                let v = prop.f64s()?;
                                if v.len() != 3 {
                                    return Err(ParseError::new(
                                        prop.line,
                                        "`cycle` expects green, orange and red durations",
                                    ));
                                }
                                over.cycle = Some((v[0], v[1], v[2]));
                            }
                            other => {
                                return Err(ParseError::new(
                                    prop.line,
                                    format!("unknown light field `{other}`"),
                                ))
                            }
                        }
                    }
                    lights.push(over);
                }
                "perception" => perception = Some(PerceptionModel::from_block(block)?),
                "actor" => actors.push(parse_actor(block)?),
                other => {
                    return Err(ParseError::new(
                        block.line,
                        format!("unknown scenario block `{other}`"),
                    ))
                }
            }
        }

        let start = start.ok_or_else(|| ParseError::new(1, "scenario has no ego start"))?;
        let goal = goal.ok_or_else(|| ParseError::new(1, "scenario has no goal"))?;
        Ok(Scenario {
            name,
            town,
            start,
            start_speed_mps,
            start_limit_kmh,
            goal,
            goal_radius,
            route_nodes,
            time_limit_s,
            overrides,
            perception,
            lights,
            actors,
        })
    }

    /// Applies the scenario's light overrides to a town instance.
    pub fn apply_lights(&self, town: &mut Town) -> Result<(), ScenarioError> {
        for over in &self.lights {
            let light = town
                .lights
                .iter_mut()
                .find(|l| l.id == over.light)
                .ok_or_else(|| ScenarioError::UnknownLight(over.light.clone()))?;
            if let Some(offset) = over.offset_s {
                light.offset_s = offset;
            }
            if let Some((g, o, r)) = over.cycle {
                light.green_s = g;
                light.orange_s = o;
                light.red_s = r;
            }
        }
        Ok(())
    }

    /// Resolves lane references against the town, plans the route and fills
    /// in the defaults. Call `apply_lights` on the town first.
    pub fn resolve(
        &self,
        town: &Town,
        graph: &TopoGraph,
        defaults: &EpisodeParams,
    ) -> Result<EpisodeSpec, ScenarioError> {
        let (start_pose, start_lane) = match &self.start {
            StartRef::LaneOffset { lane, s } => {
                let li = town
                    .lane_idx(lane)
                    .ok_or_else(|| ScenarioError::UnknownLane(lane.clone()))?;
                let (p, heading) = town.lanes[li].point_at(*s);
                (Pose2D::new(p.x, p.y, heading), li)
            }
            StartRef::Pose(pose) => {
                let (li, hit) = town
                    .nearest_lane_aligned(pose.position(), pose.heading)
                    .ok_or(ScenarioError::NoStartLane)?;
                if (pose.position() - hit.point).norm() > crate::affordance::OFF_ROAD_LIMIT_M {
                    return Err(ScenarioError::NoStartLane);
                }
                (*pose, li)
            }
        };
        let start_limit_kmh = self
            .start_limit_kmh
            .unwrap_or(town.lanes[start_lane].speed_limit_kmh);

        let (goal_point, goal_node) = match &self.goal {
            GoalRef::LaneEnd(id) => {
                let li = town
                    .lane_idx(id)
                    .ok_or_else(|| ScenarioError::UnknownLane(id.clone()))?;
                let end = town.lanes[li].end();
                let node = graph.nearest_node(end).ok_or(ScenarioError::EmptyGraph)?;
                (end, node)
            }
            GoalRef::Point(p) => {
                let node = graph.nearest_node(*p).ok_or(ScenarioError::EmptyGraph)?;
                (*p, node)
            }
            GoalRef::Node(n) => {
                if *n >= graph.nodes.len() {
                    return Err(PlanError::UnknownNode(*n).into());
                }
                (graph.nodes[*n].position, *n)
            }
        };

        let start_end_node = graph
            .lane_end_node(start_lane)
            .ok_or(ScenarioError::EmptyGraph)?;
        let (from, to) = self.route_nodes.unwrap_or((start_end_node, goal_node));
        let mut route = plan_route(graph, from, to)?;
        if from == start_end_node {
            // Include the lane the ego starts on so the follower covers the
            // whole drive.
            let edge = graph
                .edges
                .iter()
                .find(|e| e.lane == start_lane)
                .expect("start lane has an edge");
            route.lanes.insert(0, start_lane);
            route.commands.insert(0, edge.command);
            route.pairs.insert(0, (edge.from, edge.command));
            if route.pairs.len() == 1 {
                route.pairs.push((edge.to, DirectionalCommand::Straight));
            }
            route.length += edge.length;
        }

        let s0 = if route.lanes.is_empty() {
            0.0
        } else {
            town.lanes[route.lanes[0]].project(start_pose.position()).s
        };
        let route_length_m = (route.length - s0).max(0.0);
        let time_limit_s = self
            .time_limit_s
            .unwrap_or_else(|| default_time_limit_s(route_length_m));

        let mut actors = town.actors.clone();
        actors.extend(self.actors.iter().cloned());

        Ok(EpisodeSpec {
            start_pose,
            start_speed: self.start_speed_mps,
            start_limit_kmh,
            goal_point,
            goal_radius: self.goal_radius.unwrap_or(defaults.goal_radius),
            route,
            route_length_m,
            time_limit_s,
            actors,
        })
    }
}

/// Applies scenario overrides to a run configuration.
pub fn apply_overrides(
    cfg: &mut RunConfig,
    overrides: &[(String, String)],
) -> Result<(), crate::config::ConfigError> {
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    Ok(())
}
