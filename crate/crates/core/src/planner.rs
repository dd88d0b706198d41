//! Topological route planning over the lane network.
//!
//! Lane endpoints collapse into graph nodes and every lane becomes one
//! directed edge weighted by its centerline length. A route is the shortest
//! node path between two endpoints together with the directional command
//! under which each lane on it is entered; a follower walks that lane
//! sequence at runtime and emits the command for the controller.

use std::collections::BinaryHeap;

use crate::geometry::Vec2;
use crate::town::{DirectionalCommand, LaneIdx, Town};

pub type NodeId = usize;

/// Endpoints closer than this merge into one node.
const NODE_MERGE_TOL: f64 = 1e-6;
/// A successor lane must start this close to its predecessor's end.
const SUCCESSOR_GAP_TOL: f64 = 1e-3;
/// Distance from the end of the final lane at which a route counts as done.
const ROUTE_END_TOL_M: f64 = 0.25;
/// How many route lanes the follower considers when re-locating itself.
const CURSOR_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoNode {
    pub id: NodeId,
    pub position: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub lane: LaneIdx,
    /// Command under which this lane is entered from any predecessor.
    pub command: DirectionalCommand,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("lane `{lane}` is referenced as `{first}` by one predecessor and `{second}` by another")]
    ConflictingLabels {
        lane: String,
        first: &'static str,
        second: &'static str,
    },
    #[error("lane `{pred}` ends {gap_mm} mm away from the start of its successor `{succ}`")]
    MisalignedSuccessor {
        pred: String,
        succ: String,
        gap_mm: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("no route from node {from} to node {to}")]
    Unreachable { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone)]
pub struct TopoGraph {
    pub nodes: Vec<TopoNode>,
    pub edges: Vec<TopoEdge>,
    /// Outgoing edge indices per node.
    outgoing: Vec<Vec<usize>>,
}

impl TopoGraph {
    pub fn from_parts(positions: Vec<Vec2>, edges: Vec<TopoEdge>) -> Self {
        let nodes = positions
            .into_iter()
            .enumerate()
            .map(|(id, position)| TopoNode { id, position })
            .collect::<Vec<_>>();
        let mut outgoing = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            outgoing[e.from].push(i);
        }
        TopoGraph {
            nodes,
            edges,
            outgoing,
        }
    }

    pub fn from_town(town: &Town) -> Result<Self, GraphError> {
        // Label every lane with the command its predecessors use for it;
        // lanes nothing leads into are plain straight entries.
        let mut labels: Vec<Option<DirectionalCommand>> = vec![None; town.lanes.len()];
        for pred in &town.lanes {
            for (&cmd, &succ) in &pred.successors {
                let gap = (pred.end() - town.lanes[succ].start()).norm();
                if gap > SUCCESSOR_GAP_TOL {
                    return Err(GraphError::MisalignedSuccessor {
                        pred: pred.id.clone(),
                        succ: town.lanes[succ].id.clone(),
                        gap_mm: (gap * 1000.0).round() as u64,
                    });
                }
                match labels[succ] {
                    None => labels[succ] = Some(cmd),
                    Some(prev) if prev == cmd => {}
                    Some(prev) => {
                        return Err(GraphError::ConflictingLabels {
                            lane: town.lanes[succ].id.clone(),
                            first: prev.as_str(),
                            second: cmd.as_str(),
                        })
                    }
                }
            }
        }

        let mut positions: Vec<Vec2> = Vec::new();
        let node_of = |p: Vec2, positions: &mut Vec<Vec2>| -> NodeId {
            for (i, q) in positions.iter().enumerate() {
                if (*q - p).norm() <= NODE_MERGE_TOL {
                    return i;
                }
            }
            positions.push(p);
            positions.len() - 1
        };

        let mut edges = Vec::with_capacity(town.lanes.len());
        for (li, lane) in town.lanes.iter().enumerate() {
            let from = node_of(lane.start(), &mut positions);
            let to = node_of(lane.end(), &mut positions);
            edges.push(TopoEdge {
                from,
                to,
                lane: li,
                command: labels[li].unwrap_or(DirectionalCommand::Straight),
                length: lane.length(),
            });
        }
        Ok(Self::from_parts(positions, edges))
    }

    pub fn nearest_node(&self, p: Vec2) -> Option<NodeId> {
        self.nodes
            .iter()
            .min_by(|a, b| {
                let da = (a.position - p).norm_sq();
                let db = (b.position - p).norm_sq();
                da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
            })
            .map(|n| n.id)
    }

    /// Node at the end of the given lane.
    pub fn lane_end_node(&self, lane: LaneIdx) -> Option<NodeId> {
        self.edges.iter().find(|e| e.lane == lane).map(|e| e.to)
    }

    pub fn outgoing(&self, node: NodeId) -> &[usize] {
        &self.outgoing[node]
    }
}

/// Planned route: the visited nodes with the command taken out of each, and
/// the lane sequence with each lane's entry command.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub pairs: Vec<(NodeId, DirectionalCommand)>,
    pub lanes: Vec<LaneIdx>,
    pub commands: Vec<DirectionalCommand>,
    pub length: f64,
}

impl Route {
    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    /// World point at the end of the final lane.
    pub fn goal_point(&self, town: &Town) -> Option<Vec2> {
        self.lanes.last().map(|&li| town.lanes[li].end())
    }
}

/// Heap entry ordered so the max-heap pops the smallest f-score and, among
/// equal scores, the smallest node id.
#[derive(Debug, PartialEq)]
struct HeapEntry {
    f: f64,
    node: NodeId,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .f
            .partial_cmp(&self.f)
            .unwrap()
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over the lane graph. Edge weights are centerline lengths, which are
/// never shorter than the straight-line distance between their endpoints,
/// so the Euclidean heuristic never overestimates.
pub fn plan_route(graph: &TopoGraph, start: NodeId, goal: NodeId) -> Result<Route, PlanError> {
    let n = graph.nodes.len();
    if start >= n {
        return Err(PlanError::UnknownNode(start));
    }
    if goal >= n {
        return Err(PlanError::UnknownNode(goal));
    }
    if start == goal {
        return Ok(Route {
            pairs: Vec::new(),
            lanes: Vec::new(),
            commands: Vec::new(),
            length: 0.0,
        });
    }

    let goal_pos = graph.nodes[goal].position;
    let h = |id: NodeId| (graph.nodes[id].position - goal_pos).norm();

    let mut g = vec![f64::INFINITY; n];
    let mut came_from: Vec<Option<(NodeId, usize)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    g[start] = 0.0;
    heap.push(HeapEntry {
        f: h(start),
        node: start,
    });

    while let Some(HeapEntry { node, .. }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        if node == goal {
            break;
        }
        for &ei in graph.outgoing(node) {
            let edge = &graph.edges[ei];
            let tentative = g[node] + edge.length;
            if tentative < g[edge.to] {
                g[edge.to] = tentative;
                came_from[edge.to] = Some((node, ei));
                heap.push(HeapEntry {
                    f: tentative + h(edge.to),
                    node: edge.to,
                });
            }
        }
    }

    if !g[goal].is_finite() {
        return Err(PlanError::Unreachable { from: start, to: goal });
    }

    let mut edge_path = Vec::new();
    let mut cur = goal;
    while cur != start {
        let (prev, ei) = came_from[cur].expect("reached node has a predecessor");
        edge_path.push(ei);
        cur = prev;
    }
    edge_path.reverse();

    let mut pairs = Vec::with_capacity(edge_path.len() + 1);
    let mut lanes = Vec::with_capacity(edge_path.len());
    let mut commands = Vec::with_capacity(edge_path.len());
    let mut length = 0.0;
    for &ei in &edge_path {
        let e = &graph.edges[ei];
        pairs.push((e.from, e.command));
        lanes.push(e.lane);
        commands.push(e.command);
        length += e.length;
    }
    pairs.push((goal, DirectionalCommand::Straight));
    Ok(Route {
        pairs,
        lanes,
        commands,
        length,
    })
}

/// Snapshot returned by the follower on each query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteQuery {
    pub command: DirectionalCommand,
    /// Lane of the route the follower currently locates the vehicle on.
    pub lane: Option<LaneIdx>,
    /// Arc length from the projection to the end of the route, m.
    pub remaining_m: f64,
    pub complete: bool,
}

/// Walks the route's lane sequence. The cursor only moves forward, so a
/// route that revisits a lane is followed in order rather than snapping back.
#[derive(Debug, Clone, Default)]
pub struct RouteFollower {
    cursor: usize,
}

impl RouteFollower {
    pub fn new() -> Self {
        Self::default()
    }

    /// Re-locates the vehicle on the route and reports the command to hold.
    /// A turn command is raised while on a turn-entered lane and during the
    /// final `lookahead_m` of arc length before one.
    pub fn advance(
        &mut self,
        town: &Town,
        route: &Route,
        position: Vec2,
        lookahead_m: f64,
    ) -> RouteQuery {
        if route.is_empty() {
            return RouteQuery {
                command: DirectionalCommand::Straight,
                lane: None,
                remaining_m: 0.0,
                complete: true,
            };
        }

        let end = (self.cursor + CURSOR_WINDOW).min(route.lanes.len());
        let mut best = self.cursor;
        let mut best_dist = f64::INFINITY;
        let mut best_s = 0.0;
        for i in self.cursor..end {
            let hit = town.lanes[route.lanes[i]].project(position);
            let dist = (hit.point - position).norm();
            if dist < best_dist - 1e-9 {
                best = i;
                best_dist = dist;
                best_s = hit.s;
            }
        }
        self.cursor = best;

        let lane = route.lanes[best];
        let mut remaining = town.lanes[lane].length() - best_s;
        let mut command = route.commands[best];
        if !command.is_turn() {
            // Look for the next turn entry within the activation window.
            let mut ahead = remaining;
            command = DirectionalCommand::Straight;
            for i in best + 1..route.lanes.len() {
                if ahead >= lookahead_m {
                    break;
                }
                if route.commands[i].is_turn() {
                    command = route.commands[i];
                    break;
                }
                ahead += town.lanes[route.lanes[i]].length();
            }
        }
        for &li in &route.lanes[best + 1..] {
            remaining += town.lanes[li].length();
        }

        let complete = best + 1 == route.lanes.len()
            && town.lanes[lane].length() - best_s < ROUTE_END_TOL_M;
        RouteQuery {
            command,
            lane: Some(lane),
            remaining_m: remaining,
            complete,
        }
    }
}
