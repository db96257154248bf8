//! Shortest paths over composite actions.
//!
//! Every action costs one step and turning is free, so the remaining cost from
//! a node depends only on its location. [`astar`] is the production search,
//! [`bfs_oracle`] exists to cross-check it, and [`distance_field`] gives all
//! node-to-nearest-destination costs at once.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::citygraph::{Action, CityGraph, Heading, Location, NodeId};
use crate::error::{NavError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathResult {
    pub cost: u32,
    /// `(node, action)` pairs from the start; empty when the start is already at the goal.
    pub path: Vec<(NodeId, Action)>,
    pub goal: Location,
}

impl PathResult {
    /// Re-applies the path from `start`, checking availability and continuity.
    /// Returns the final node.
    pub fn replay(&self, graph: &CityGraph, start: NodeId) -> Result<NodeId> {
        let mut cur = start;
        for &(node, action) in &self.path {
            if node != cur {
                return Err(NavError::malformed("path", format!("expected {cur}, path lists {node}")));
            }
            cur = graph.apply_action(cur, action)?;
        }
        if cur.location() != self.goal {
            return Err(NavError::malformed("path", format!("ends at {cur}, goal is ({},{})", self.goal.x, self.goal.y)));
        }
        Ok(cur)
    }
}

fn check_endpoints(graph: &CityGraph, start: NodeId, goal: Location) -> Result<()> {
    if !graph.contains(start) {
        return Err(NavError::UnknownNode(start));
    }
    if !graph.is_populated(goal) {
        return Err(NavError::UnpopulatedLocation(goal));
    }
    Ok(())
}

fn manhattan(a: Location, b: Location) -> u32 {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

fn successors(graph: &CityGraph, node: NodeId) -> impl Iterator<Item = (Action, NodeId)> + '_ {
    let loc = node.location();
    Action::ALL.into_iter().filter_map(move |a| {
        let dir = a.direction_from(node.heading);
        graph.has_arm(loc, dir).then(|| (a, graph.step_unchecked(loc, dir)))
    })
}

fn rebuild(graph: &CityGraph, parent: &[Option<(u32, Action)>], mut idx: usize, goal: Location) -> PathResult {
    let mut path = Vec::new();
    while let Some((p, a)) = parent[idx] {
        path.push((graph.node_from_index(p as usize), a));
        idx = p as usize;
    }
    path.reverse();
    PathResult { cost: path.len() as u32, path, goal }
}

/// A* from `start` to any node at `goal`, Manhattan heuristic in bins.
///
/// The heuristic is consistent for unit-cost moves between 4-neighbors, so
/// the first goal node popped is optimal. Ties in the open list go to the
/// smaller node id, and successors are generated in [`Action::ALL`] order.
pub fn astar(graph: &CityGraph, start: NodeId, goal: Location) -> Result<PathResult> {
    check_endpoints(graph, start, goal)?;
    let bound = graph.node_index_bound();
    let mut g = vec![u32::MAX; bound];
    let mut closed = vec![false; bound];
    let mut parent: Vec<Option<(u32, Action)>> = vec![None; bound];
    let mut open = BinaryHeap::new();

    let s = graph.node_index(start);
    g[s] = 0;
    open.push(Reverse((manhattan(start.location(), goal), s)));
    while let Some(Reverse((_, u))) = open.pop() {
        if closed[u] {
            continue;
        }
        closed[u] = true;
        let node = graph.node_from_index(u);
        if node.location() == goal {
            return Ok(rebuild(graph, &parent, u, goal));
        }
        for (action, next) in successors(graph, node) {
            let v = graph.node_index(next);
            let ng = g[u] + 1;
            if ng < g[v] {
                g[v] = ng;
                parent[v] = Some((u as u32, action));
                open.push(Reverse((ng + manhattan(next.location(), goal), v)));
            }
        }
    }
    Err(NavError::NoPath { start })
}

/// Plain breadth-first search with the same contract as [`astar`].
pub fn bfs_oracle(graph: &CityGraph, start: NodeId, goal: Location) -> Result<PathResult> {
    check_endpoints(graph, start, goal)?;
    let bound = graph.node_index_bound();
    let mut seen = vec![false; bound];
    let mut parent: Vec<Option<(u32, Action)>> = vec![None; bound];
    let s = graph.node_index(start);
    seen[s] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        let node = graph.node_from_index(u);
        if node.location() == goal {
            return Ok(rebuild(graph, &parent, u, goal));
        }
        for (action, next) in successors(graph, node) {
            let v = graph.node_index(next);
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some((u as u32, action));
                queue.push_back(v);
            }
        }
    }
    Err(NavError::NoPath { start })
}

/// Runs A* to every destination and keeps the cheapest; equal costs keep the
/// earlier destination. Returns the chosen destination's index with the path.
pub fn nearest_destination_path(graph: &CityGraph, node: NodeId, dests: &[Location]) -> Result<(usize, PathResult)> {
    if dests.is_empty() {
        return Err(NavError::Empty("destination list".into()));
    }
    let mut best: Option<(usize, PathResult)> = None;
    for (i, &d) in dests.iter().enumerate() {
        match astar(graph, node, d) {
            Ok(r) => {
                if best.as_ref().is_none_or(|(_, b)| r.cost < b.cost) {
                    best = Some((i, r));
                }
            }
            Err(NavError::NoPath { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or(NavError::NoPath { start: node })
}

const UNREACHED: u32 = u32::MAX;

/// Minimum action count from every node to the nearest of a destination list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceField {
    width: u32,
    dests: Vec<Location>,
    /// Per location; the cost is the same for every heading at a location.
    values: Vec<u32>,
    nearest: Vec<u32>,
}

impl DistanceField {
    fn index(&self, loc: Location) -> usize {
        loc.y as usize * self.width as usize + loc.x as usize
    }

    pub fn dests(&self) -> &[Location] {
        &self.dests
    }

    pub fn value_at(&self, loc: Location) -> Option<u32> {
        let v = *self.values.get(self.index(loc))?;
        (v != UNREACHED).then_some(v)
    }

    pub fn value(&self, node: NodeId) -> Option<u32> {
        self.value_at(node.location())
    }

    /// Index into [`Self::dests`] of the nearest destination; ties go to the earlier one.
    pub fn nearest_at(&self, loc: Location) -> Option<usize> {
        self.value_at(loc).map(|_| self.nearest[self.index(loc)] as usize)
    }

    pub fn nearest(&self, node: NodeId) -> Option<usize> {
        self.nearest_at(node.location())
    }

    pub fn max_value(&self) -> Option<u32> {
        self.values.iter().copied().filter(|&v| v != UNREACHED).max()
    }
}

/// Multi-source breadth-first search over reversed move edges, one level at a time.
/// Within a level the smaller destination index wins, so `nearest` agrees with
/// [`nearest_destination_path`].
pub fn distance_field(graph: &CityGraph, dests: &[Location]) -> Result<DistanceField> {
    if dests.is_empty() {
        return Err(NavError::Empty("destination list".into()));
    }
    if let Some(&bad) = dests.iter().find(|&&d| !graph.is_populated(d)) {
        return Err(NavError::UnpopulatedLocation(bad));
    }
    let n = graph.location_count();
    let mut values = vec![UNREACHED; n];
    let mut nearest = vec![u32::MAX; n];
    let mut frontier = Vec::new();
    for (i, &d) in dests.iter().enumerate() {
        let li = graph.loc_index(d);
        if values[li] == UNREACHED {
            values[li] = 0;
            nearest[li] = i as u32;
            frontier.push(li);
        }
    }
    let mut level = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &li in &frontier {
            let loc = graph.loc_from_index(li);
            for dir in Heading::ALL {
                let Some(pred) = graph.neighbor(loc, dir.opposite()) else { continue };
                if !graph.has_arm(pred, dir) {
                    continue;
                }
                let pi = graph.loc_index(pred);
                if values[pi] == UNREACHED {
                    values[pi] = level + 1;
                    nearest[pi] = nearest[li];
                    next.push(pi);
                } else if values[pi] == level + 1 && nearest[li] < nearest[pi] {
                    nearest[pi] = nearest[li];
                }
            }
        }
        frontier = next;
        level += 1;
    }
    Ok(DistanceField { width: graph.width(), dests: dests.to_vec(), values, nearest })
}

/// Same answers as [`nearest_destination_path`] with one A* call per query:
/// per-destination fields pick the winner, A* produces the path to it.
pub struct NearestPathFinder<'g> {
    graph: &'g CityGraph,
    dests: Vec<Location>,
    fields: Vec<DistanceField>,
}

impl<'g> NearestPathFinder<'g> {
    pub fn new(graph: &'g CityGraph, dests: &[Location]) -> Result<Self> {
        if dests.is_empty() {
            return Err(NavError::Empty("destination list".into()));
        }
        let fields = dests.iter().map(|&d| distance_field(graph, &[d])).collect::<Result<Vec<_>>>()?;
        Ok(NearestPathFinder { graph, dests: dests.to_vec(), fields })
    }

    pub fn find(&self, node: NodeId) -> Result<(usize, PathResult)> {
        if !self.graph.contains(node) {
            return Err(NavError::UnknownNode(node));
        }
        let mut best: Option<(usize, u32)> = None;
        for (i, f) in self.fields.iter().enumerate() {
            if let Some(c) = f.value(node) {
                if best.is_none_or(|(_, bc)| c < bc) {
                    best = Some((i, c));
                }
            }
        }
        let (i, _) = best.ok_or(NavError::NoPath { start: node })?;
        Ok((i, astar(self.graph, node, self.dests[i])?))
    }
}
