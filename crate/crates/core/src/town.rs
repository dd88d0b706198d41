//! Town maps: lanes, traffic lights, speed signs, sidewalks and actors.
//!
//! Towns are loaded from the structured-text format in [`crate::config`].
//! Lane connectivity is labeled with [`DirectionalCommand`]s; intersections
//! are modeled as branch points where one approach lane fans out into one
//! connector lane per allowed command.

use std::collections::BTreeMap;

use crate::config::{parse_document, Block, ParseError};
use crate::geometry::{
    point_at_arclength, polyline_length, project_on_polyline, wrap_angle, Obb, PolylineHit,
    Pose2D, Vec2,
};

/// High-level routing input: which way to go at the next branch point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum DirectionalCommand {
    Straight,
    Left,
    Right,
}

impl DirectionalCommand {
    pub const ALL: [DirectionalCommand; 3] = [
        DirectionalCommand::Straight,
        DirectionalCommand::Left,
        DirectionalCommand::Right,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DirectionalCommand::Straight => "straight",
            DirectionalCommand::Left => "left",
            DirectionalCommand::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "straight" => Some(DirectionalCommand::Straight),
            "left" => Some(DirectionalCommand::Left),
            "right" => Some(DirectionalCommand::Right),
            _ => None,
        }
    }

    pub fn is_turn(&self) -> bool {
        !matches!(self, DirectionalCommand::Straight)
    }
}

pub type LaneIdx = usize;

/// One directed lane. The centerline runs in driving direction.
#[derive(Debug, Clone)]
pub struct Lane {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub speed_limit_kmh: f64,
    pub successors: BTreeMap<DirectionalCommand, LaneIdx>,
    /// Lane carrying the opposing traffic direction on the same road, if any.
    pub opposite: Option<LaneIdx>,
    /// Junction connectors cross opposing paths by design; checks that flag
    /// wrong-way driving skip them.
    pub junction: bool,
    length: f64,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn project(&self, p: Vec2) -> PolylineHit {
        project_on_polyline(&self.centerline, p)
    }

    pub fn point_at(&self, s: f64) -> (Vec2, f64) {
        point_at_arclength(&self.centerline, s)
    }

    pub fn start(&self) -> Vec2 {
        self.centerline[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.centerline.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightState {
    Green,
    Orange,
    Red,
}

impl LightState {
    pub fn as_str(&self) -> &'static str {
        match self {
            LightState::Green => "green",
            LightState::Orange => "orange",
            LightState::Red => "red",
        }
    }
}

/// Pretimed signal. The phase sequence is green, orange, red, repeating.
#[derive(Debug, Clone)]
pub struct TrafficLight {
    pub id: String,
    /// Pole position on the right-hand sidewalk, heading along the lane it governs.
    pub pose: Pose2D,
    pub green_s: f64,
    pub orange_s: f64,
    pub red_s: f64,
    /// Shifts the cycle: the state at time t is the phase at t + offset.
    pub offset_s: f64,
    pub stop_line: (Vec2, Vec2),
}

impl TrafficLight {
    pub fn cycle_total(&self) -> f64 {
        self.green_s + self.orange_s + self.red_s
    }

    /// State as a pure function of time; replaying a timeline reproduces it.
    pub fn state_at(&self, time: f64) -> LightState {
        let phase = (time + self.offset_s).rem_euclid(self.cycle_total());
        if phase < self.green_s {
            LightState::Green
        } else if phase < self.green_s + self.orange_s {
            LightState::Orange
        } else {
            LightState::Red
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpeedSign {
    pub id: String,
    pub pose: Pose2D,
    pub limit_kmh: f64,
}

#[derive(Debug, Clone)]
pub struct Sidewalk {
    pub id: String,
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
    Static,
}

impl ActorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActorKind::Vehicle => "vehicle",
            ActorKind::Pedestrian => "pedestrian",
            ActorKind::Static => "static",
        }
    }
}

/// Waypoint-following motion script: hold for `delay_s`, then advance along
/// the waypoints at constant speed, stopping at the end unless `loop_path`.
#[derive(Debug, Clone)]
pub struct Script {
    pub waypoints: Vec<Vec2>,
    pub speed: f64,
    pub delay_s: f64,
    pub loop_path: bool,
}

/// A non-ego traffic participant or static obstacle.
#[derive(Debug, Clone)]
pub struct Actor {
    pub id: String,
    pub kind: ActorKind,
    pub pose: Pose2D,
    /// Half extents of the bounding box: (half length, half width).
    pub half: Vec2,
    pub speed: f64,
    pub script: Option<Script>,
}

impl Actor {
    pub fn obb(&self) -> Obb {
        Obb::new(self.pose.position(), self.half, self.pose.heading)
    }

    /// Footprint at absolute time t, following the script if there is one.
    pub fn obb_at(&self, time: f64) -> Obb {
        let (pose, _) = self.pose_at(time);
        Obb::new(pose.position(), self.half, pose.heading)
    }

    /// Pose at absolute time t from the script; static actors never move.
    pub fn pose_at(&self, time: f64) -> (Pose2D, f64) {
        let Some(script) = &self.script else {
            return (self.pose, 0.0);
        };
        let total = polyline_length(&script.waypoints);
        let travelled = script.speed * (time - script.delay_s).max(0.0);
        let (s, moving) = if script.loop_path && total > 0.0 {
            (travelled.rem_euclid(total), travelled > 0.0)
        } else {
            (travelled.min(total), travelled > 0.0 && travelled < total)
        };
        let (p, heading) = point_at_arclength(&script.waypoints, s);
        let speed = if moving { script.speed } else { 0.0 };
        (Pose2D::new(p.x, p.y, heading), speed)
    }
}

/// A complete static map plus the actors declared in its source file.
#[derive(Debug, Clone)]
pub struct Town {
    pub name: String,
    pub lanes: Vec<Lane>,
    pub lights: Vec<TrafficLight>,
    pub signs: Vec<SpeedSign>,
    pub sidewalks: Vec<Sidewalk>,
    pub actors: Vec<Actor>,
    lane_index: BTreeMap<String, LaneIdx>,
}

pub const BUILTIN_TOWNS: [&str; 2] = ["town-a", "town-b"];

impl Town {
    pub fn lane_idx(&self, id: &str) -> Option<LaneIdx> {
        self.lane_index.get(id).copied()
    }

    /// Built-in maps shipped with the crate.
    pub fn builtin(name: &str) -> Option<Town> {
        let text = match name {
            "town-a" => include_str!("../assets/town-a.town"),
            "town-b" => include_str!("../assets/town-b.town"),
            _ => return None,
        };
        Some(Town::parse(text).expect("built-in town parses"))
    }

    /// Parses and validates a town document. All errors carry source lines.
    pub fn parse(text: &str) -> Result<Town, ParseError> {
        let blocks = parse_document(text)?;
        let mut name = String::from("unnamed");
        let mut lanes: Vec<Lane> = Vec::new();
        let mut lane_index: BTreeMap<String, LaneIdx> = BTreeMap::new();
        // Successor/opposite references are resolved after all lanes exist.
        let mut pending_succ: Vec<(LaneIdx, DirectionalCommand, String, usize)> = Vec::new();
        let mut pending_opp: Vec<(LaneIdx, String, usize)> = Vec::new();
        let mut lights = Vec::new();
        let mut signs = Vec::new();
        let mut sidewalks = Vec::new();
        let mut actors = Vec::new();

        for block in &blocks {
            match block.kind.as_str() {
                "town" => name = block.id()?.to_owned(),
                "lane" => {
                    let id = block.id()?.to_owned();
                    if lane_index.contains_key(&id) {
                        return Err(ParseError::new(block.line, format!("duplicate lane `{id}`")));
                    }
                    let center_prop = block.require("center")?;
                    let centerline = parse_points(center_prop)?;
                    if centerline.len() < 2 {
                        return Err(ParseError::new(
                            center_prop.line,
                            "lane centerline needs at least two points",
                        ));
                    }
                    for w in centerline.windows(2) {
                        if (w[1] - w[0]).norm() < 1e-9 {
                            return Err(ParseError::new(
                                center_prop.line,
                                "consecutive centerline points must be distinct",
                            ));
                        }
                    }
                    let width = block.require("width")?.one_f64()?;
                    if width <= 0.0 {
                        return Err(ParseError::new(
                            block.require("width")?.line,
                            "lane width must be positive",
                        ));
                    }
                    let limit_prop = block.require("limit")?;
                    let speed_limit_kmh = limit_prop.one_f64()?;
                    if ![30.0, 60.0, 90.0].contains(&speed_limit_kmh) {
                        return Err(ParseError::new(
                            limit_prop.line,
                            "speed limit must be one of 30, 60, 90",
                        ));
                    }
                    let idx = lanes.len();
                    for succ in block.props_named("succ") {
                        if succ.values.len() != 2 {
                            return Err(ParseError::new(
                                succ.line,
                                "`succ` expects a command and a lane id",
                            ));
                        }
                        let cmd = DirectionalCommand::parse(&succ.values[0]).ok_or_else(|| {
                            ParseError::new(
                                succ.line,
                                format!("unknown command `{}`", succ.values[0]),
                            )
                        })?;
                        pending_succ.push((idx, cmd, succ.values[1].clone(), succ.line));
                    }
                    if let Some(opp) = block.prop("opposite") {
                        pending_opp.push((idx, opp.one_str()?.to_owned(), opp.line));
                    }
                    let junction = match block.prop("junction") {
                        Some(p) if p.values.is_empty() => true,
                        Some(p) => p.one_f64()? != 0.0,
                        None => false,
                    };
                    let length = polyline_length(&centerline);
                    lane_index.insert(id.clone(), idx);
                    lanes.push(Lane {
                        id,
                        centerline,
                        width,
                        speed_limit_kmh,
                        successors: BTreeMap::new(),
                        opposite: None,
                        junction,
                        length,
                    });
                }
                "light" => {
                    let id = block.id()?.to_owned();
                    let pose = parse_pose(block.require("pose")?)?;
                    let cycle = block.require("cycle")?;
                    let c = cycle.f64s()?;
                    if c.len() != 3 || c.iter().any(|d| *d <= 0.0) {
                        return Err(ParseError::new(
                            cycle.line,
                            "`cycle` expects three positive durations (green orange red)",
                        ));
                    }
                    let offset_s = match block.prop("offset") {
                        Some(p) => p.one_f64()?,
                        None => 0.0,
                    };
                    let sl = block.require("stopline")?;
                    let pts = parse_points(sl)?;
                    if pts.len() != 2 {
                        return Err(ParseError::new(sl.line, "`stopline` expects two points"));
                    }
                    lights.push(TrafficLight {
                        id,
                        pose,
                        green_s: c[0],
                        orange_s: c[1],
                        red_s: c[2],
                        offset_s,
                        stop_line: (pts[0], pts[1]),
                    });
                }
                "sign" => {
                    let id = block.id()?.to_owned();
                    let pose = parse_pose(block.require("pose")?)?;
                    let limit_prop = block.require("limit")?;
                    let limit_kmh = limit_prop.one_f64()?;
                    if ![30.0, 60.0, 90.0].contains(&limit_kmh) {
                        return Err(ParseError::new(
                            limit_prop.line,
                            "sign limit must be one of 30, 60, 90",
                        ));
                    }
                    signs.push(SpeedSign {
                        id,
                        pose,
                        limit_kmh,
                    });
                }
                "sidewalk" => {
                    let id = block.id()?.to_owned();
                    let poly_prop = block.require("poly")?;
                    let polygon = parse_points(poly_prop)?;
                    if polygon.len() < 3 {
                        return Err(ParseError::new(
                            poly_prop.line,
                            "sidewalk polygon needs at least three points",
                        ));
                    }
                    sidewalks.push(Sidewalk { id, polygon });
                }
                "actor" => actors.push(parse_actor(block)?),
                other => {
                    return Err(ParseError::new(
                        block.line,
                        format!("unknown block `{other}` in town file"),
                    ))
                }
            }
        }

        for (idx, cmd, target, line) in pending_succ {
            let t = *lane_index.get(&target).ok_or_else(|| {
                ParseError::new(line, format!("`succ` references unknown lane `{target}`"))
            })?;
            lanes[idx].successors.insert(cmd, t);
        }
        for (idx, target, line) in pending_opp {
            let t = *lane_index.get(&target).ok_or_else(|| {
                ParseError::new(
                    line,
                    format!("`opposite` references unknown lane `{target}`"),
                )
            })?;
            lanes[idx].opposite = Some(t);
        }

        Ok(Town {
            name,
            lanes,
            lights,
            signs,
            sidewalks,
            actors,
            lane_index,
        })
    }

    /// Nearest lane to `p` whose direction roughly matches `heading`
    /// (within 90 degrees). Falls back to the nearest lane of any direction.
    /// Returns the lane index and the projection.
    pub fn nearest_lane_aligned(&self, p: Vec2, heading: f64) -> Option<(LaneIdx, PolylineHit)> {
        let mut best_aligned: Option<(f64, LaneIdx, PolylineHit)> = None;
        let mut best_any: Option<(f64, LaneIdx, PolylineHit)> = None;
        for (i, lane) in self.lanes.iter().enumerate() {
            let hit = lane.project(p);
            let dist = (p - hit.point).norm();
            if best_any.as_ref().map_or(true, |(d, _, _)| dist < *d - 1e-12) {
                best_any = Some((dist, i, hit));
            }
            let aligned = wrap_angle(hit.tangent - heading).abs() <= std::f64::consts::FRAC_PI_2;
            if aligned
                && best_aligned
                    .as_ref()
                    .map_or(true, |(d, _, _)| dist < *d - 1e-12)
            {
                best_aligned = Some((dist, i, hit));
            }
        }
        best_aligned.or(best_any).map(|(_, i, h)| (i, h))
    }
}

fn parse_points(prop: &crate::config::Prop) -> Result<Vec<Vec2>, ParseError> {
    let vals = prop.f64s()?;
    if vals.len() % 2 != 0 {
        return Err(ParseError::new(
            prop.line,
            format!("`{}` expects an even number of coordinates", prop.key),
        ));
    }
    Ok(vals.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
}

fn parse_pose(prop: &crate::config::Prop) -> Result<Pose2D, ParseError> {
    let vals = prop.f64s()?;
    if vals.len() != 3 {
        return Err(ParseError::new(
            prop.line,
            format!("`{}` expects x y heading", prop.key),
        ));
    }
    Ok(Pose2D::new(vals[0], vals[1], vals[2]))
}

/// Parses an `actor` block; shared between town and scenario files.
pub fn parse_actor(block: &Block) -> Result<Actor, ParseError> {
    let id = block.id()?.to_owned();
    let kind_prop = block.require("kind")?;
    let kind = match kind_prop.one_str()? {
        "vehicle" => ActorKind::Vehicle,
        "pedestrian" => ActorKind::Pedestrian,
        "static" => ActorKind::Static,
        other => {
            return Err(ParseError::new(
                kind_prop.line,
                format!("unknown actor kind `{other}`"),
            ))
        }
    };
    let half_prop = block.require("half_extents")?;
    let half_vals = half_prop.f64s()?;
    if half_vals.len() != 2 || half_vals.iter().any(|v| *v <= 0.0) {
        return Err(ParseError::new(
            half_prop.line,
            "`half_extents` expects two positive numbers",
        ));
    }
    let half = Vec2::new(half_vals[0], half_vals[1]);
    let script = match block.prop("waypoints") {
        Some(wp_prop) => {
            let waypoints = parse_points(wp_prop)?;
            if waypoints.len() < 2 {
                return Err(ParseError::new(
                    wp_prop.line,
                    "`waypoints` needs at least two points",
                ));
            }
            let speed_prop = block.require("speed")?;
            let speed = speed_prop.one_f64()?;
            if speed <= 0.0 {
                return Err(ParseError::new(
                    speed_prop.line,
                    "scripted speed must be positive",
                ));
            }
            Some(Script {
                waypoints,
                speed,
                delay_s: match block.prop("delay") {
                    Some(p) => p.one_f64()?,
                    None => 0.0,
                },
                loop_path: match block.prop("loop") {
                    Some(p) => p.one_f64()? != 0.0,
                    None => false,
                },
            })
        }
        None => None,
    };
    let pose = match block.prop("pose") {
        Some(p) => parse_pose(p)?,
        None => match &script {
            Some(s) => {
                let dir = s.waypoints[1] - s.waypoints[0];
                Pose2D::new(s.waypoints[0].x, s.waypoints[0].y, dir.y.atan2(dir.x))
            }
            None => {
                return Err(ParseError::new(
                    block.line,
                    "actor needs a `pose` or `waypoints`",
                ))
            }
        },
    };
    Ok(Actor {
        id,
        kind,
        pose,
        half,
        speed: 0.0,
        script,
    })
}
