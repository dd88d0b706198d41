//! Scalar scene description around the ego vehicle.
//!
//! Six values summarize what the controller needs: two stop flags, the last
//! speed sign, the gap to a lead vehicle, and the pose error relative to a
//! command-conditional reference path. All geometry runs in the ego frame:
//! origin at the center of the front axle, x forward, y left.

use crate::geometry::{obb_distance, obb_overlap, project_on_polyline, wrap_angle, Obb, Pose2D, Vec2};
use crate::town::{ActorKind, DirectionalCommand, LaneIdx, LightState, Town};

pub use crate::town::DirectionalCommand as Command;

/// Upper clamp for the lead-vehicle gap; also the "no vehicle" sentinel.
pub const VEHICLE_DISTANCE_MAX_M: f64 = 50.0;
/// Clamp for the signed centerline offset.
pub const CENTER_DISTANCE_MAX_M: f64 = 2.0;
/// A lane must be this close to count as the ego's current lane.
pub const OFF_ROAD_LIMIT_M: f64 = 5.0;

/// Axis-aligned rectangle in the ego frame (x forward, y left).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationArea {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Traffic lights and speed signs stand on the right-hand sidewalk.
pub const AREA_SIGNALS: ObservationArea = ObservationArea {
    x_min: 7.4,
    x_max: 14.0,
    y_min: -5.8,
    y_max: -0.8,
};

/// Short strip directly ahead; anything inside forces a hazard stop.
pub const AREA_HAZARD: ObservationArea = ObservationArea {
    x_min: 0.0,
    x_max: 8.2,
    y_min: -2.0,
    y_max: 2.0,
};

/// Long corridor ahead used to measure the gap to a lead vehicle.
pub const AREA_LEAD: ObservationArea = ObservationArea {
    x_min: 0.0,
    x_max: 50.0,
    y_min: -1.6,
    y_max: 1.6,
};

impl ObservationArea {
    /// Boundary-inclusive membership test for an ego-frame point.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// The rectangle as a world-frame box anchored at the ego frame.
    pub fn to_world_obb(&self, frame: &Pose2D) -> Obb {
        let center_local = Vec2::new(
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        );
        Obb::new(
            frame.to_global(center_local),
            Vec2::new(
                0.5 * (self.x_max - self.x_min),
                0.5 * (self.y_max - self.y_min),
            ),
            frame.heading,
        )
    }

    pub fn vertices(&self) -> [Vec2; 4] {
        [
            Vec2::new(self.x_min, self.y_max),
            Vec2::new(self.x_min, self.y_min),
            Vec2::new(self.x_max, self.y_max),
            Vec2::new(self.x_max, self.y_min),
        ]
    }
}

/// Speed-sign reading: either nothing visible or one of the three limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SignReading {
    None,
    Limit30,
    Limit60,
    Limit90,
}

impl SignReading {
    pub fn kmh(&self) -> Option<f64> {
        match self {
            SignReading::None => None,
            SignReading::Limit30 => Some(30.0),
            SignReading::Limit60 => Some(60.0),
            SignReading::Limit90 => Some(90.0),
        }
    }

    pub fn from_kmh(limit: f64) -> Option<SignReading> {
        match limit as i64 {
            30 => Some(SignReading::Limit30),
            60 => Some(SignReading::Limit60),
            90 => Some(SignReading::Limit90),
            _ => None,
        }
    }

    /// Class index used by the perception confusion matrix.
    pub fn index(&self) -> usize {
        match self {
            SignReading::None => 0,
            SignReading::Limit30 => 1,
            SignReading::Limit60 => 2,
            SignReading::Limit90 => 3,
        }
    }

    pub fn from_index(i: usize) -> SignReading {
        match i {
            0 => SignReading::None,
            1 => SignReading::Limit30,
            2 => SignReading::Limit60,
            _ => SignReading::Limit90,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SignReading::None => "none",
            SignReading::Limit30 => "30",
            SignReading::Limit60 => "60",
            SignReading::Limit90 => "90",
        }
    }

    pub fn parse(s: &str) -> Option<SignReading> {
        match s {
            "none" => Some(SignReading::None),
            "30" => Some(SignReading::Limit30),
            "60" => Some(SignReading::Limit60),
            "90" => Some(SignReading::Limit90),
            _ => None,
        }
    }
}

/// Ground-truth affordance vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affordances {
    /// Something is inside the hazard strip and the car must stop now.
    pub hazard_stop: bool,
    /// A light governing the ego lane shows red (orange does not count).
    pub red_light: bool,
    pub speed_sign: SignReading,
    /// Gap to the nearest lead vehicle, m, clamped to [0, 50]; 50 when clear.
    pub vehicle_distance: f64,
    /// Heading error toward the reference path tangent, rad, in (-pi, pi].
    pub relative_angle: f64,
    /// Signed front-axle offset from the reference path, m, positive left,
    /// clamped to [-2, 2].
    pub center_distance: f64,
}

/// Ego geometry the extractor needs: the local frame and the footprint.
#[derive(Debug, Clone, Copy)]
pub struct EgoFrame {
    /// Center of the front axle, heading along the vehicle.
    pub front_axle: Pose2D,
    pub obb: Obb,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum AffordanceError {
    #[error("ego is off road: nearest lane centerline {distance:.2} m away")]
    OffRoad { distance: f64 },
}

/// Reference path for the lateral affordances: the current lane plus the
/// successor selected by the command at the next branch.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    pub points: Vec<Vec2>,
    pub lanes: Vec<LaneIdx>,
    /// True when the command had no successor and another one was used.
    pub substituted: bool,
}

/// Builds the command-conditional reference path from the ego position.
pub fn select_reference_path(
    town: &Town,
    ego_center: Vec2,
    ego_heading: f64,
    command: DirectionalCommand,
) -> Result<ReferencePath, AffordanceError> {
    let (lane_idx, hit) = town
        .nearest_lane_aligned(ego_center, ego_heading)
        .ok_or(AffordanceError::OffRoad {
            distance: f64::INFINITY,
        })?;
    let dist = (ego_center - hit.point).norm();
    if dist > OFF_ROAD_LIMIT_M {
        return Err(AffordanceError::OffRoad { distance: dist });
    }
    let lane = &town.lanes[lane_idx];
    let mut points = lane.centerline.clone();
    let mut lanes = vec![lane_idx];
    let mut substituted = false;
    let succ = lane.successors.get(&command).copied().or_else(|| {
        // Fall back to whatever the branch offers, preferring straight.
        let fallback = DirectionalCommand::ALL
            .iter()
            .find_map(|c| lane.successors.get(c).copied());
        if fallback.is_some() {
            substituted = true;
        }
        fallback
    });
    if let Some(next_idx) = succ {
        let next = &town.lanes[next_idx];
        let skip_first = (next.centerline[0] - *points.last().unwrap()).norm() < 1e-9;
        points.extend(
            next.centerline
                .iter()
                .skip(if skip_first { 1 } else { 0 })
                .copied(),
        );
        lanes.push(next_idx);
    }
    Ok(ReferencePath {
        points,
        lanes,
        substituted,
    })
}

/// Extracts the ground-truth affordance vector for one simulation step.
pub fn compute_affordances(
    town: &Town,
    time: f64,
    actors: &[crate::town::Actor],
    ego: &EgoFrame,
    command: DirectionalCommand,
) -> Result<Affordances, AffordanceError> {
    let frame = ego.front_axle;

    // Signals: lights and signs on the right-hand sidewalk ahead.
    let mut red_light = false;
    for light in &town.lights {
        if AREA_SIGNALS.contains(frame.to_local(light.pose.position()))
            && light.state_at(time) == LightState::Red
        {
            red_light = true;
            break;
        }
    }
    let mut best_sign: Option<(f64, SignReading)> = None;
    for sign in &town.signs {
        let local = frame.to_local(sign.pose.position());
        if AREA_SIGNALS.contains(local) {
            let reading = SignReading::from_kmh(sign.limit_kmh).unwrap_or(SignReading::None);
            // The nearest sign ahead wins.
            if best_sign.map_or(true, |(x, _)| local.x < x) {
                best_sign = Some((local.x, reading));
            }
        }
    }
    let speed_sign = best_sign.map_or(SignReading::None, |(_, r)| r);

    // Obstacles in the hazard strip and the lead corridor.
    let hazard_area = AREA_HAZARD.to_world_obb(&frame);
    let lead_area = AREA_LEAD.to_world_obb(&frame);
    let mut hazard_stop = false;
    let mut vehicle_distance = VEHICLE_DISTANCE_MAX_M;
    for actor in actors {
        let obb = actor.obb_at(time);
        match actor.kind {
            ActorKind::Vehicle | ActorKind::Pedestrian => {
                if !hazard_stop && obb_overlap(&obb, &hazard_area) {
                    hazard_stop = true;
                }
            }
            ActorKind::Static => {}
        }
        if actor.kind == ActorKind::Vehicle && obb_overlap(&obb, &lead_area) {
            let gap = obb_distance(&ego.obb, &obb).clamp(0.0, VEHICLE_DISTANCE_MAX_M);
            vehicle_distance = vehicle_distance.min(gap);
        }
    }

    // Pose error against the command-conditional reference path, measured at
    // the front axle.
    let path = select_reference_path(town, ego.obb.center, frame.heading, command)?;
    let hit = project_on_polyline(&path.points, frame.position());
    let center_distance = hit
        .offset
        .clamp(-CENTER_DISTANCE_MAX_M, CENTER_DISTANCE_MAX_M);
    let relative_angle = wrap_angle(hit.tangent - frame.heading);

    Ok(Affordances {
        hazard_stop,
        red_light,
        speed_sign,
        vehicle_distance,
        relative_angle,
        center_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::town::{Actor, Script};
    use proptest::prelude::*;

    fn ego_at(x: f64, y: f64, heading: f64) -> EgoFrame {
        // Wheelbase 2.7: the front axle sits 1.35 m ahead of the box center.
        let center = Pose2D::new(x, y, heading);
        EgoFrame {
            front_axle: center.advanced(1.35),
            obb: Obb::new(center.position(), Vec2::new(2.0, 0.9), heading),
        }
    }

    fn straight_town(extra: &str) -> Town {
        let base = "town t\n\nlane a\n  width 4\n  limit 60\n  center 0 0  200 0\n";
        Town::parse(&format!("{base}{extra}")).unwrap()
    }

    fn vehicle(id: &str, x: f64, y: f64, heading: f64) -> Actor {
        Actor {
            id: id.into(),
            kind: ActorKind::Vehicle,
            pose: Pose2D::new(x, y, heading),
            half: Vec2::new(2.0, 0.9),
            speed: 0.0,
            script: None,
        }
    }

    #[test]
    fn signal_area_contains_documented_point() {
        assert!(AREA_SIGNALS.contains(Vec2::new(10.0, -3.0)));
        // Boundary-inclusive on all four corners.
        for v in AREA_SIGNALS.vertices() {
            assert!(AREA_SIGNALS.contains(v));
        }
        assert!(!AREA_SIGNALS.contains(Vec2::new(7.39, -3.0)));
        assert!(!AREA_SIGNALS.contains(Vec2::new(14.01, -3.0)));
        assert!(!AREA_SIGNALS.contains(Vec2::new(10.0, -0.79)));
        assert!(!AREA_SIGNALS.contains(Vec2::new(10.0, -5.81)));
    }

    #[test]
    fn empty_straight_road_is_all_clear() {
        let town = straight_town("");
        let ego = ego_at(50.0, 0.0, 0.0);
        let a = compute_affordances(&town, 0.0, &[], &ego, DirectionalCommand::Straight).unwrap();
        assert!(!a.hazard_stop);
        assert!(!a.red_light);
        assert_eq!(a.speed_sign, SignReading::None);
        assert_eq!(a.vehicle_distance, VEHICLE_DISTANCE_MAX_M);
        assert!(a.relative_angle.abs() < 1e-9);
        assert!(a.center_distance.abs() < 1e-9);
    }

    #[test]
    fn red_light_toggles_exactly_at_area_bounds() {
        // Light is red at t=0 (offset starts the red phase). Slide the ego so
        // the pole crosses the forward span of the signal area.
        let town = straight_town(
            "light l\n  pose 100 -3 0\n  cycle 10 3 7\n  offset 13\n  stopline 95 -2 95 2\n",
        );
        let check = |front_x: f64| {
            let center = Pose2D::new(front_x - 1.35, 0.0, 0.0);
            let ego = EgoFrame {
                front_axle: center.advanced(1.35),
                obb: Obb::new(center.position(), Vec2::new(2.0, 0.9), 0.0),
            };
            compute_affordances(&town, 0.0, &[], &ego, DirectionalCommand::Straight)
                .unwrap()
                .red_light
        };
        // Pole at local x = 100 - front_x.
        assert!(!check(100.0 - 14.0 - 0.01));
        assert!(check(100.0 - 14.0));
        assert!(check(100.0 - 7.4));
        assert!(!check(100.0 - 7.4 + 0.01));
    }

    #[test]
    fn green_and_orange_do_not_trigger() {
        let town = straight_town(
            "light l\n  pose 60 -3 0\n  cycle 10 3 7\n  stopline 55 -2 55 2\n",
        );
        let ego = ego_at(48.65, 0.0, 0.0); // pole at local x = 10
        let at = |t: f64| {
            compute_affordances(&town, t, &[], &ego, DirectionalCommand::Straight)
                .unwrap()
                .red_light
        };
        assert!(!at(5.0)); // green
        assert!(!at(11.0)); // orange
        assert!(at(14.0)); // red
    }

    #[test]
    fn nearest_sign_wins() {
        let town = straight_town(
            "sign near\n  pose 60 -3 0\n  limit 30\n\nsign far\n  pose 62 -3 0\n  limit 90\n",
        );
        let ego = ego_at(48.65, 0.0, 0.0); // signs at local x = 10 and 12
        let a = compute_affordances(&town, 0.0, &[], &ego, DirectionalCommand::Straight).unwrap();
        assert_eq!(a.speed_sign, SignReading::Limit30);
    }

    #[test]
    fn lead_vehicle_gap_is_bbox_to_bbox() {
        let town = straight_town("");
        let ego = ego_at(10.0, 0.0, 0.0);
        // Ego front bumper at x=12; lead rear bumper at x=32: gap 20.
        let lead = vehicle("lead", 34.0, 0.0, 0.0);
        let a =
            compute_affordances(&town, 0.0, &[lead], &ego, DirectionalCommand::Straight).unwrap();
        assert!((a.vehicle_distance - 20.0).abs() < 1e-6);
    }

    #[test]
    fn vehicle_beyond_corridor_reads_as_clear() {
        let town = straight_town("");
        let ego = ego_at(10.0, 0.0, 0.0);
        let far = vehicle("far", 70.0, 0.0, 0.0); // past the 50 m corridor
        let a =
            compute_affordances(&town, 0.0, &[far], &ego, DirectionalCommand::Straight).unwrap();
        assert_eq!(a.vehicle_distance, VEHICLE_DISTANCE_MAX_M);
        let side = vehicle("side", 30.0, 6.0, 0.0); // outside laterally
        let a =
            compute_affordances(&town, 0.0, &[side], &ego, DirectionalCommand::Straight).unwrap();
        assert_eq!(a.vehicle_distance, VEHICLE_DISTANCE_MAX_M);
    }

    #[test]
    fn pedestrian_in_strip_forces_hazard_for_any_command() {
        let town = straight_town("");
        let ego = ego_at(10.0, 0.0, 0.0);
        // The script starts inside the strip, so the scripted position is
        // what the extractor must use, not the rest pose.
        let ped = Actor {
            id: "p".into(),
            kind: ActorKind::Pedestrian,
            pose: Pose2D::new(-40.0, -40.0, 0.0),
            half: Vec2::new(0.3, 0.3),
            speed: 0.0,
            script: Some(Script {
                waypoints: vec![Vec2::new(16.0, 1.0), Vec2::new(16.0, 6.0)],
                speed: 1.5,
                delay_s: 0.0,
                loop_path: false,
            }),
        };
        for cmd in DirectionalCommand::ALL {
            let a = compute_affordances(&town, 0.0, &[ped.clone()], &ego, cmd).unwrap();
            assert!(a.hazard_stop);
            // Pedestrians never count as lead vehicles.
            assert_eq!(a.vehicle_distance, VEHICLE_DISTANCE_MAX_M);
        }
    }

    #[test]
    fn static_obstacle_is_not_a_hazard() {
        let town = straight_town("");
        let ego = ego_at(10.0, 0.0, 0.0);
        let rock = Actor {
            id: "rock".into(),
            kind: ActorKind::Static,
            pose: Pose2D::new(16.0, 0.0, 0.0),
            half: Vec2::new(0.5, 0.5),
            speed: 0.0,
            script: None,
        };
        let a =
            compute_affordances(&town, 0.0, &[rock], &ego, DirectionalCommand::Straight).unwrap();
        assert!(!a.hazard_stop);
    }

    #[test]
    fn command_selects_reference_branch() {
        let town = Town::parse(
            "town fork\n\nlane a\n  width 4\n  limit 30\n  center 0 0  50 0\n  succ straight b\n  succ left c\n\nlane b\n  width 4\n  limit 30\n  center 50 0  100 0\n\nlane c\n  width 4\n  limit 30\n  center 50 0  60 10\n",
        )
        .unwrap();
        // Center still on lane a, front axle just past the fork so the
        // projection lands on the chosen branch.
        let ego = ego_at(49.5, 0.2, 0.0); // front axle at (50.85, 0.2)
        let straight =
            compute_affordances(&town, 0.0, &[], &ego, DirectionalCommand::Straight).unwrap();
        let left = compute_affordances(&town, 0.0, &[], &ego, DirectionalCommand::Left).unwrap();
        assert!((straight.center_distance - 0.2).abs() < 1e-9);
        assert!(straight.relative_angle.abs() < 1e-9);
        assert!(left.center_distance < straight.center_distance);
        assert!(left.relative_angle > 0.3); // path bends left ahead of the car
        // Hazard and signals are command-independent by construction.
        assert_eq!(straight.hazard_stop, left.hazard_stop);
        assert_eq!(straight.red_light, left.red_light);
    }

    #[test]
    fn missing_branch_falls_back_and_flags() {
        let town = straight_town("");
        let path =
            select_reference_path(&town, Vec2::new(50.0, 0.0), 0.0, DirectionalCommand::Left)
                .unwrap();
        assert!(!path.substituted); // no successors at all: just the lane
        assert_eq!(path.lanes.len(), 1);

        let town2 = Town::parse(
            "town t\n\nlane a\n  width 4\n  limit 30\n  center 0 0  50 0\n  succ right b\n\nlane b\n  width 4\n  limit 30\n  center 50 0  50 -40\n",
        )
        .unwrap();
        let path2 =
            select_reference_path(&town2, Vec2::new(40.0, 0.0), 0.0, DirectionalCommand::Left)
                .unwrap();
        assert!(path2.substituted);
        assert_eq!(path2.lanes.len(), 2);
    }

    #[test]
    fn off_road_is_an_error() {
        let town = straight_town("");
        let err = select_reference_path(
            &town,
            Vec2::new(50.0, 40.0),
            0.0,
            DirectionalCommand::Straight,
        )
        .unwrap_err();
        let AffordanceError::OffRoad { distance } = err;
        assert!(distance > 5.0);
    }

    proptest! {
        #[test]
        fn outputs_stay_in_range(
            ex in 5.0..195.0f64,
            ey in -4.0..4.0f64,
            eh in -0.6..0.6f64,
            vx in 0.0..220.0f64,
            vy in -8.0..8.0f64,
            t in 0.0..100.0f64,
        ) {
            let town = straight_town(
                "light l\n  pose 100 -3 0\n  cycle 10 3 7\n  stopline 95 -2 95 2\n",
            );
            let ego = ego_at(ex, ey, eh);
            let lead = vehicle("v", vx, vy, 0.0);
            let a = compute_affordances(&town, t, &[lead], &ego, DirectionalCommand::Straight)
                .unwrap();
            prop_assert!((0.0..=VEHICLE_DISTANCE_MAX_M).contains(&a.vehicle_distance));
            prop_assert!((-CENTER_DISTANCE_MAX_M..=CENTER_DISTANCE_MAX_M)
                .contains(&a.center_distance));
            prop_assert!(a.relative_angle > -std::f64::consts::PI - 1e-12);
            prop_assert!(a.relative_angle <= std::f64::consts::PI + 1e-12);
        }
    }
}
