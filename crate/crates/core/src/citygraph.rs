//! City graphs on a square lattice of bins.
//!
//! A location is a bin `(x, y)`; a node is a location plus one of the four
//! cardinal headings. A node exists exactly when a road leaves its location in
//! the node's heading. Moving along a road keeps the heading; turning in place is
//! free and never stored, so the agent interface is the four composite actions
//! of [`Action`]. The x axis points east and the y axis points north.

use std::collections::VecDeque;
use std::fmt;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};


use crate::error::{NavError, Result};
use crate::rng;

pub const DEFAULT_BIN_SIZE_M: f64 = 25.0;

pub const DEFAULT_CLASSES: [&str; 5] = ["bank", "church", "gas_station", "high_school", "fast_food"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width_bins: u32,
    pub height_bins: u32,
    #[serde(default = "default_bin_size")]
    pub bin_size_m: f64,
    pub road_density: f64,
    pub one_way_fraction: f64,
    pub seed: u64,
}

fn default_bin_size() -> f64 {
    DEFAULT_BIN_SIZE_M
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width_bins: 40,
            height_bins: 40,
            bin_size_m: DEFAULT_BIN_SIZE_M,
            road_density: 0.6,
            one_way_fraction: 0.1,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width_bins < 3 || self.height_bins < 3 {
            return Err(NavError::InvalidSpec(format!(
                "grid must be at least 3x3, got {}x{}",
                self.width_bins, self.height_bins
            )));
        }
        if !(self.bin_size_m > 0.0 && self.bin_size_m.is_finite()) {
            return Err(NavError::InvalidSpec(format!("bin_size_m must be positive, got {}", self.bin_size_m)));
        }
        if !(self.road_density > 0.0 && self.road_density <= 1.0) {
            return Err(NavError::InvalidSpec(format!("road_density must be in (0,1], got {}", self.road_density)));
        }
        if !(0.0..=1.0).contains(&self.one_way_fraction) {
            return Err(NavError::InvalidSpec(format!(
                "one_way_fraction must be in [0,1], got {}",
                self.one_way_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    /// Clockwise order starting at north.
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }

    /// 90 degrees clockwise.
    pub fn right(self) -> Heading {
        Heading::from_index(self.index() + 1)
    }

    /// 90 degrees counter-clockwise.
    pub fn left(self) -> Heading {
        Heading::from_index(self.index() + 3)
    }

    pub fn opposite(self) -> Heading {
        Heading::from_index(self.index() + 2)
    }

    /// Unit step in bins.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::N => (0, 1),
            Heading::E => (1, 0),
            Heading::S => (0, -1),
            Heading::W => (-1, 0),
        }
    }

    pub fn bit(self) -> u8 {
        1 << self.index()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        }
    }

    pub fn parse(s: &str) -> Result<Heading> {
        match s.trim() {
            "N" => Ok(Heading::N),
            "E" => Ok(Heading::E),
            "S" => Ok(Heading::S),
            "W" => Ok(Heading::W),
            other => Err(NavError::malformed("heading", format!("expected N|E|S|W, got {other:?}"))),
        }
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Composite action: an optional free turn followed by one move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Forward,
    Backward,
    Left,
    Right,
}

impl Action {
    /// Fixed order used for listing and tie-breaking.
    pub const ALL: [Action; 4] = [Action::Forward, Action::Backward, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }

    /// Absolute direction of this action for an agent facing `heading`.
    pub fn direction_from(self, heading: Heading) -> Heading {
        match self {
            Action::Forward => heading,
            Action::Backward => heading.opposite(),
            Action::Left => heading.left(),
            Action::Right => heading.right(),
        }
    }

    /// The action that moves toward `direction` for an agent facing `heading`.
    pub fn toward(heading: Heading, direction: Heading) -> Action {
        match (direction.index() + 4 - heading.index()) % 4 {
            0 => Action::Forward,
            1 => Action::Right,
            2 => Action::Backward,
            _ => Action::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Backward => "backward",
            Action::Left => "left",
            Action::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Result<Action> {
        match s.trim() {
            "forward" => Ok(Action::Forward),
            "backward" => Ok(Action::Backward),
            "left" => Ok(Action::Left),
            "right" => Ok(Action::Right),
            other => Err(NavError::malformed("action", format!("unknown action {other:?}"))),
        }
    }
}

/// Bin coordinates. Ordered by row, then column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Location {
    pub x: u32,
    pub y: u32,
}

impl Location {
    pub fn new(x: u32, y: u32) -> Self {
        Location { x, y }
    }

    fn key(&self) -> (u32, u32) {
        (self.y, self.x)
    }

    /// Squared center-to-center distance in bins.
    pub fn dist2(self, other: Location) -> i64 {
        let dx = other.x as i64 - self.x as i64;
        let dy = other.y as i64 - self.y as i64;
        dx * dx + dy * dy
    }

    pub fn with_heading(self, heading: Heading) -> NodeId {
        NodeId { x: self.x, y: self.y, heading }
    }
}

impl PartialOrd for Location {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Location {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// A graph node: location plus heading. Ordered by row, column, heading,
/// which is also the order of [`CityGraph::node_index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub x: u32,
    pub y: u32,
    pub heading: Heading,
}

impl NodeId {
    pub fn new(x: u32, y: u32, heading: Heading) -> Self {
        NodeId { x, y, heading }
    }

    pub fn location(&self) -> Location {
        Location { x: self.x, y: self.y }
    }

    fn key(&self) -> (u32, u32, Heading) {
        (self.y, self.x, self.heading)
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.x, self.y, self.heading)
    }
}

/// Latitude/longitude anchor of bin (0,0). Export metadata only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CityGraph {
    spec: GridSpec,
    origin: Origin,
    /// Per location (row-major), bit `h` set when a move edge leaves in heading `h`.
    arms: Vec<u8>,
    populated: Vec<Location>,
    node_count: usize,
}

/// Builds a city from a spec. Deterministic for a fixed seed.
///
/// Every lattice segment is kept with probability `road_density`; the
/// perimeter plus the central row and column are always kept and always
/// two-way. Other kept segments become one-way with probability
/// `one_way_fraction`. The city is then grown breadth-first from the center
/// bin and cut down to the locations that can both be reached from the center
/// and reach it back.
pub fn build_city(spec: &GridSpec) -> Result<CityGraph> {
    spec.validate()?;
    let (w, h) = (spec.width_bins as usize, spec.height_bins as usize);
    let (cx, cy) = (w / 2, h / 2);
    let mut arms = vec![0u8; w * h];
    let mut rng = rng::seeded(spec.seed, &[0x6369_7479]);

    let lay = |arms: &mut Vec<u8>, a: (usize, usize), dir: Heading, backbone: bool, rng: &mut rand_chacha::ChaCha8Rng| {
        let u_keep: f64 = rng.gen();
        let u_oneway: f64 = rng.gen();
        let u_dir: f64 = rng.gen();
        if !(backbone || u_keep < spec.road_density) {
            return;
        }
        let (dx, dy) = dir.delta();
        let b = ((a.0 as i64 + dx) as usize, (a.1 as i64 + dy) as usize);
        let ia = a.1 * w + a.0;
        let ib = b.1 * w + b.0;
        if !backbone && u_oneway < spec.one_way_fraction {
            if u_dir < 0.5 {
                arms[ia] |= dir.bit();
            } else {
                arms[ib] |= dir.opposite().bit();
            }
        } else {
            arms[ia] |= dir.bit();
            arms[ib] |= dir.opposite().bit();
        }
    };

    for y in 0..h {
        for x in 0..w - 1 {
            let backbone = y == 0 || y == h - 1 || y == cy;
            lay(&mut arms, (x, y), Heading::E, backbone, &mut rng);
        }
    }
    for x in 0..w {
        for y in 0..h - 1 {
            let backbone = x == 0 || x == w - 1 || x == cx;
            lay(&mut arms, (x, y), Heading::N, backbone, &mut rng);
        }
    }

    let center = cy * w + cx;
    let forward = reach(&arms, w, h, center, false);
    let backward = reach(&arms, w, h, center, true);
    for i in 0..w * h {
        if !(forward[i] && backward[i]) {
            arms[i] = 0;
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for d in Heading::ALL {
            if arms[i] & d.bit() != 0 {
                let (dx, dy) = d.delta();
                let j = ((y + dy) as usize) * w + (x + dx) as usize;
                if !(forward[j] && backward[j]) {
                    arms[i] &= !d.bit();
                }
            }
        }
    }
    Ok(CityGraph::from_arms(spec.clone(), Origin::default(), arms))
}

/// Breadth-first reachability over directed location edges (or their reverse).
fn reach(arms: &[u8], w: usize, h: usize, start: usize, reverse: bool) -> Vec<bool> {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for d in Heading::ALL {
            let (dx, dy) = d.delta();
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            let linked = if reverse { arms[j] & d.opposite().bit() != 0 } else { arms[i] & d.bit() != 0 };
            if linked && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

impl CityGraph {
    fn from_arms(spec: GridSpec, origin: Origin, arms: Vec<u8>) -> Self {
        let w = spec.width_bins as usize;
        let populated: Vec<Location> = arms
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0)
            .map(|(i, _)| Location::new((i % w) as u32, (i / w) as u32))
            .collect();
        let node_count = arms.iter().map(|a| a.count_ones() as usize).sum();
        CityGraph { spec, origin, arms, populated, node_count }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn width(&self) -> u32 {
        self.spec.width_bins
    }

    pub fn height(&self) -> u32 {
        self.spec.height_bins
    }

    pub fn bin_size_m(&self) -> f64 {
        self.spec.bin_size_m
    }

    pub fn location_count(&self) -> usize {
        self.arms.len()
    }

    pub fn in_bounds(&self, loc: Location) -> bool {
        loc.x < self.width() && loc.y < self.height()
    }

    pub fn loc_index(&self, loc: Location) -> usize {
        loc.y as usize * self.width() as usize + loc.x as usize
    }

    pub fn loc_from_index(&self, i: usize) -> Location {
        let w = self.width() as usize;
        Location::new((i % w) as u32, (i / w) as u32)
    }

    /// Bitmask of outgoing road directions at a location (0 when unpopulated or out of bounds).
    pub fn arms(&self, loc: Location) -> u8 {
        if self.in_bounds(loc) {
            self.arms[self.loc_index(loc)]
        } else {
            0
        }
    }

    pub fn has_arm(&self, loc: Location, dir: Heading) -> bool {
        self.arms(loc) & dir.bit() != 0
    }

    pub fn is_populated(&self, loc: Location) -> bool {
        self.arms(loc) != 0
    }

    /// Populated locations in (row, column) order.
    pub fn populated_locations(&self) -> &[Location] {
        &self.populated
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.has_arm(node.location(), node.heading)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Size of the dense node index space (`4 * width * height`).
    pub fn node_index_bound(&self) -> usize {
        self.arms.len() * 4
    }

    pub fn node_index(&self, node: NodeId) -> usize {
        self.loc_index(node.location()) * 4 + node.heading.index()
    }

    pub fn node_from_index(&self, i: usize) -> NodeId {
        self.loc_from_index(i / 4).with_heading(Heading::from_index(i % 4))
    }

    /// All nodes in ascending [`NodeId`] order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.populated.iter().flat_map(move |&loc| self.nodes_at(loc))
    }

    /// Nodes at a location in heading order N, E, S, W.
    pub fn nodes_at(&self, loc: Location) -> impl Iterator<Item = NodeId> {
        let arms = self.arms(loc);
        Heading::ALL.into_iter().filter(move |h| arms & h.bit() != 0).map(move |h| loc.with_heading(h))
    }

    /// Adjacent in-bounds location one bin along `dir`.
    pub fn neighbor(&self, loc: Location, dir: Heading) -> Option<Location> {
        let (dx, dy) = dir.delta();
        let (nx, ny) = (loc.x as i64 + dx, loc.y as i64 + dy);
        if nx < 0 || ny < 0 || nx >= self.width() as i64 || ny >= self.height() as i64 {
            None
        } else {
            Some(Location::new(nx as u32, ny as u32))
        }
    }

    pub fn is_available(&self, node: NodeId, action: Action) -> bool {
        self.has_arm(node.location(), action.direction_from(node.heading))
    }

    /// Actions whose absolute direction has a road at the node's location, in [`Action::ALL`] order.
    pub fn available_actions(&self, node: NodeId) -> Result<Vec<Action>> {
        if !self.contains(node) {
            return Err(NavError::UnknownNode(node));
        }
        Ok(Action::ALL.into_iter().filter(|&a| self.is_available(node, a)).collect())
    }

    /// Takes one step. The arrival node faces the direction of travel when a
    /// road continues that way; otherwise it takes the first present heading
    /// among right, left and opposite of that direction.
    pub fn apply_action(&self, node: NodeId, action: Action) -> Result<NodeId> {
        if !self.contains(node) {
            return Err(NavError::UnknownNode(node));
        }
        if !self.is_available(node, action) {
            return Err(NavError::UnavailableAction { node, action });
        }
        Ok(self.step_unchecked(node.location(), action.direction_from(node.heading)))
    }

    /// Moves from `loc` one bin along `dir`; the caller guarantees the arm exists.
    pub(crate) fn step_unchecked(&self, loc: Location, dir: Heading) -> NodeId {
        let target = self.neighbor(loc, dir).expect("move edge stays in bounds");
        self.arrival(target, dir)
    }

    /// Node occupied after arriving at `loc` while travelling along `dir`.
    pub fn arrival(&self, loc: Location, dir: Heading) -> NodeId {
        let arms = self.arms(loc);
        let heading = [dir, dir.right(), dir.left(), dir.opposite()]
            .into_iter()
            .find(|h| arms & h.bit() != 0)
            .expect("every location reachable by a move edge hosts a node");
        loc.with_heading(heading)
    }

    /// Directed move edges as (source node, target location), in node order.
    pub fn move_edges(&self) -> impl Iterator<Item = (NodeId, Location)> + '_ {
        self.nodes().map(move |n| (n, self.neighbor(n.location(), n.heading).expect("in bounds")))
    }

    /// Straight-line distance between bin centers in meters.
    pub fn distance_m(&self, a: Location, b: Location) -> f64 {
        (a.dist2(b) as f64).sqrt() * self.bin_size_m()
    }

    /// Length of the grid diagonal in meters.
    pub fn diagonal_m(&self) -> f64 {
        let w = (self.width() - 1) as f64;
        let h = (self.height() - 1) as f64;
        (w * w + h * h).sqrt() * self.bin_size_m()
    }

    /// Bin center in origin-anchored meters (east, north).
    pub fn meters(&self, loc: Location) -> (f64, f64) {
        (loc.x as f64 * self.bin_size_m(), loc.y as f64 * self.bin_size_m())
    }

    /// Bin center as approximate latitude/longitude around the origin.
    pub fn lat_lon(&self, loc: Location) -> (f64, f64) {
        const M_PER_DEG: f64 = 111_320.0;
        let (e, n) = self.meters(loc);
        let lat = self.origin.lat + n / M_PER_DEG;
        let lon = self.origin.lon + e / (M_PER_DEG * self.origin.lat.to_radians().cos());
        (lat, lon)
    }

    /// Checks the structural invariants. Used by tests and by artifact loading.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(NavError::malformed("city graph", msg));
        for &loc in &self.populated {
            for node in self.nodes_at(loc) {
                match self.neighbor(loc, node.heading) {
                    Some(t) if self.is_populated(t) => {}
                    _ => return bad(format!("node {node} has a move edge to a missing location")),
                }
            }
        }
        if self.populated.is_empty() {
            return bad("graph has no nodes".into());
        }
        let w = self.width() as usize;
        let h = self.height() as usize;
        let start = self.loc_index(self.populated[0]);
        let fwd = reach(&self.arms, w, h, start, false);
        let bwd = reach(&self.arms, w, h, start, true);
        for &loc in &self.populated {
            let i = self.loc_index(loc);
            if !(fwd[i] && bwd[i]) {
                return bad(format!("location ({},{}) is not strongly connected", loc.x, loc.y));
            }
        }
        Ok(())
    }

    /// Serializes to the graph document format: canonical field order,
    /// one node or edge per line, LF line endings.
    pub fn to_document(&self, config_hash: &str) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str("  \"format\": \"citynav-graph\",\n");
        out.push_str("  \"version\": 1,\n");
        let _ = writeln!(out, "  \"config_hash\": {},", serde_json::to_string(config_hash).unwrap());
        let _ = writeln!(out, "  \"spec\": {},", serde_json::to_string(&self.spec).unwrap());
        let _ = writeln!(out, "  \"origin\": {},", serde_json::to_string(&self.origin).unwrap());
        out.push_str("  \"nodes\": [");
        let mut first = true;
        for n in self.nodes() {
            out.push_str(if first { "\n" } else { ",\n" });
            first = false;
            let _ = write!(out, "    [{},{},\"{}\"]", n.x, n.y, n.heading);
        }
        out.push_str("\n  ],\n  \"move_edges\": [");
        first = true;
        for (n, t) in self.move_edges() {
            out.push_str(if first { "\n" } else { ",\n" });
            first = false;
            let _ = write!(out, "    [{},{},\"{}\",{},{}]", n.x, n.y, n.heading, t.x, t.y);
        }
        out.push_str("\n  ]\n}\n");
        out
    }

    /// Parses a graph document, returning the graph and its embedded config hash.
    pub fn from_document(text: &str) -> Result<(CityGraph, String)> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        if doc.format != "citynav-graph" || doc.version != 1 {
            return Err(NavError::malformed("graph file", format!("unsupported format {} v{}", doc.format, doc.version)));
        }
        doc.spec.validate()?;
        let (w, h) = (doc.spec.width_bins, doc.spec.height_bins);
        let mut arms = vec![0u8; w as usize * h as usize];
        for (x, y, heading, tx, ty) in &doc.move_edges {
            if *x >= w || *y >= h {
                return Err(NavError::malformed("graph file", format!("edge source ({x},{y}) out of bounds")));
            }
            let (dx, dy) = heading.delta();
            if (*x as i64 + dx, *y as i64 + dy) != (*tx as i64, *ty as i64) {
                return Err(NavError::malformed("graph file", format!("edge ({x},{y},{heading}) does not move one bin")));
            }
            arms[*y as usize * w as usize + *x as usize] |= heading.bit();
        }
        let graph = CityGraph::from_arms(doc.spec, doc.origin, arms);
        let mut listed: Vec<NodeId> = doc.nodes.iter().map(|&(x, y, hd)| NodeId::new(x, y, hd)).collect();
        listed.sort();
        if !graph.nodes().eq(listed.iter().copied()) {
            return Err(NavError::malformed("graph file", "node list disagrees with move edges"));
        }
        graph.check_invariants()?;
        Ok((graph, doc.config_hash))
    }
}

#[derive(Deserialize)]
struct GraphDocument {
    format: String,
    version: u32,
    config_hash: String,
    spec: GridSpec,
    origin: Origin,
    nodes: Vec<(u32, u32, Heading)>,
    move_edges: Vec<(u32, u32, Heading, u32, u32)>,
}

/// Destination locations per class, in list order.
#[derive(Clone, Debug, PartialEq)]
pub struct DestinationSet {
    classes: Vec<String>,
    locations: Vec<Vec<Location>>,
}

impl DestinationSet {
    pub fn new(graph: &CityGraph, classes: Vec<String>, locations: Vec<Vec<Location>>) -> Result<Self> {
        if classes.is_empty() || classes.len() != locations.len() {
            return Err(NavError::InvalidConfig("destination classes and location lists must align".into()));
        }
        for (name, locs) in classes.iter().zip(&locations) {
            if locs.is_empty() {
                return Err(NavError::Empty(format!("no destinations for class {name}")));
            }
            if let Some(&bad) = locs.iter().find(|&&l| !graph.is_populated(l)) {
                return Err(NavError::UnpopulatedLocation(bad));
            }
        }
        Ok(DestinationSet { classes, locations })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn locations(&self, class: usize) -> &[Location] {
        &self.locations[class]
    }

    pub fn all(&self) -> &[Vec<Location>] {
        &self.locations
    }

    /// Destination document: header fields plus `class -> [[x,y], ...]` in class order.
    pub fn to_document(&self, config_hash: &str) -> String {
        let mut out = String::from("{\n  \"format\": \"citynav-destinations\",\n  \"version\": 1,\n");
        let _ = writeln!(out, "  \"config_hash\": {},", serde_json::to_string(config_hash).unwrap());
        out.push_str("  \"destinations\": {");
        for (ci, (name, locs)) in self.classes.iter().zip(&self.locations).enumerate() {
            out.push_str(if ci == 0 { "\n" } else { ",\n" });
            let pts: Vec<String> = locs.iter().map(|l| format!("[{},{}]", l.x, l.y)).collect();
            let _ = write!(out, "    {}: [{}]", serde_json::to_string(name).unwrap(), pts.join(","));
        }
        out.push_str("\n  }\n}\n");
        out
    }

    pub fn from_document(graph: &CityGraph, text: &str) -> Result<(DestinationSet, String)> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let field = |k: &str| value.get(k).ok_or_else(|| NavError::malformed("destination file", format!("missing {k}")));
        if field("format")?.as_str() != Some("citynav-destinations") {
            return Err(NavError::malformed("destination file", "wrong format tag"));
        }
        let hash = field("config_hash")?.as_str().unwrap_or_default().to_string();
        let map = field("destinations")?
            .as_object()
            .ok_or_else(|| NavError::malformed("destination file", "destinations must be an object"))?;
        let mut classes = Vec::new();
        let mut locations = Vec::new();
        for (name, pts) in map {
            let pts: Vec<(u32, u32)> = serde_json::from_value(pts.clone())?;
            classes.push(name.clone());
            locations.push(pts.into_iter().map(|(x, y)| Location::new(x, y)).collect());
        }
        Ok((DestinationSet::new(graph, classes, locations)?, hash))
    }
}

/// Samples `per_class_count` distinct populated locations per class.
/// Each class draws from its own stream so classes are independent.
pub fn place_destinations(
    graph: &CityGraph,
    classes: &[String],
    per_class_count: usize,
    seed: u64,
) -> Result<DestinationSet> {
    if per_class_count == 0 {
        return Err(NavError::InvalidConfig("per_class_count must be >= 1".into()));
    }
    let populated = graph.populated_locations();
    if populated.is_empty() {
        return Err(NavError::Empty("graph has no populated locations".into()));
    }
    if per_class_count > populated.len() {
        return Err(NavError::TooManyDestinations { requested: per_class_count, available: populated.len() });
    }
    let locations = (0..classes.len())
        .map(|ci| {
            let mut rng = rng::seeded(seed, &[0x6465_7374, ci as u64]);
            index::sample(&mut rng, populated.len(), per_class_count).into_iter().map(|i| populated[i]).collect()
        })
        .collect();
    DestinationSet::new(graph, classes.to_vec(), locations)
}

/// Nearest populated location to a point in bin units; ties go to the smaller (y, x).
pub fn snap_to_road(graph: &CityGraph, point: (f64, f64)) -> Result<Location> {
    let mut best: Option<(f64, Location)> = None;
    for &loc in graph.populated_locations() {
        let dx = loc.x as f64 - point.0;
        let dy = loc.y as f64 - point.1;
        let d = dx * dx + dy * dy;
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, loc));
        }
    }
    best.map(|(_, l)| l).ok_or_else(|| NavError::Empty("graph has no populated locations".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn full_lattice(w: u32, h: u32) -> CityGraph {
        build_city(&GridSpec { width_bins: w, height_bins: h, road_density: 1.0, one_way_fraction: 0.0, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn heading_rotations() {
        for h in Heading::ALL {
            assert_eq!(h.right().left(), h);
            assert_eq!(h.opposite().opposite(), h);
            assert_eq!(h.right().right(), h.opposite());
        }
        assert_eq!(Heading::N.right(), Heading::E);
        assert_eq!(Heading::N.left(), Heading::W);
    }

    #[test]
    fn action_toward_inverts_direction_from() {
        for h in Heading::ALL {
            for a in Action::ALL {
                assert_eq!(Action::toward(h, a.direction_from(h)), a);
            }
        }
        assert_eq!(Action::toward(Heading::N, Heading::E), Action::Right);
        assert_eq!(Action::toward(Heading::E, Heading::E), Action::Forward);
    }

    /// Hand enumeration of the full 3x3 lattice: a node per road arm.
    #[test]
    fn full_three_by_three_has_24_nodes() {
        let g = full_lattice(3, 3);
        let mut oracle = 0;
        for y in 0..3i32 {
            for x in 0..3i32 {
                for (dx, dy) in [(0, 1), (1, 0), (0, -1), (-1, 0)] {
                    if (0..3).contains(&(x + dx)) && (0..3).contains(&(y + dy)) {
                        oracle += 1;
                    }
                }
            }
        }
        assert_eq!(oracle, 24);
        assert_eq!(g.node_count(), 24);
        assert_eq!(g.nodes().count(), 24);
        assert_eq!(g.nodes_at(Location::new(0, 0)).count(), 2);
        assert_eq!(g.nodes_at(Location::new(1, 0)).count(), 3);
        assert_eq!(g.nodes_at(Location::new(1, 1)).count(), 4);
    }

    #[test]
    fn full_density_populates_every_location() {
        let g = full_lattice(7, 5);
        assert_eq!(g.populated_locations().len(), 35);
        let arms: usize = (0..7u32)
            .flat_map(|x| (0..5u32).map(move |y| (x, y)))
            .map(|(x, y)| Heading::ALL.iter().filter(|h| g.neighbor(Location::new(x, y), **h).is_some()).count())
            .sum();
        assert_eq!(g.node_count(), arms);
    }

    #[test]
    fn available_actions_examples() {
        let g = full_lattice(3, 3);
        assert_eq!(g.available_actions(NodeId::new(1, 1, Heading::N)).unwrap(), Action::ALL.to_vec());
        assert_eq!(g.available_actions(NodeId::new(0, 0, Heading::N)).unwrap(), vec![Action::Forward, Action::Right]);
        assert!(matches!(g.available_actions(NodeId::new(0, 0, Heading::S)), Err(NavError::UnknownNode(_))));
    }

    #[test]
    fn one_way_corridor_has_forward_only() {
        // Hand-built one-way eastbound corridor closed into a loop by the backbone.
        let spec = GridSpec { width_bins: 3, height_bins: 3, road_density: 1.0, one_way_fraction: 0.0, ..Default::default() };
        let mut arms = vec![0u8; 9];
        arms[3] = Heading::E.bit();
        arms[4] = Heading::E.bit();
        let g = CityGraph::from_arms(spec, Origin::default(), arms);
        assert_eq!(g.available_actions(NodeId::new(0, 1, Heading::E)).unwrap(), vec![Action::Forward]);
    }

    #[test]
    fn apply_action_examples() {
        let g = full_lattice(11, 11);
        let n = NodeId::new(5, 5, Heading::N);
        assert_eq!(g.apply_action(n, Action::Forward).unwrap(), NodeId::new(5, 6, Heading::N));
        assert_eq!(g.apply_action(n, Action::Right).unwrap(), NodeId::new(6, 5, Heading::E));
        assert_eq!(g.apply_action(n, Action::Backward).unwrap(), NodeId::new(5, 4, Heading::S));
        assert_eq!(g.apply_action(n, Action::Left).unwrap(), NodeId::new(4, 5, Heading::W));
        let corner = NodeId::new(0, 0, Heading::N);
        assert!(matches!(g.apply_action(corner, Action::Left), Err(NavError::UnavailableAction { .. })));
        // Arriving at a border where the road does not continue turns right first.
        assert_eq!(g.apply_action(NodeId::new(9, 0, Heading::E), Action::Forward).unwrap(), NodeId::new(10, 0, Heading::N));
    }

    #[test]
    fn seeded_city_satisfies_invariants() {
        let spec = GridSpec { width_bins: 40, height_bins: 40, road_density: 0.6, one_way_fraction: 0.1, seed: 7, ..Default::default() };
        let g = build_city(&spec).unwrap();
        g.check_invariants().unwrap();
        for loc in g.populated_locations() {
            let n = g.nodes_at(*loc).count();
            assert!((1..=4).contains(&n));
            assert_eq!(n, g.arms(*loc).count_ones() as usize);
        }
        for node in g.nodes() {
            for a in g.available_actions(node).unwrap() {
                let next = g.apply_action(node, a).unwrap();
                assert!(g.contains(next));
                let dist = (next.x as i64 - node.x as i64).abs().max((next.y as i64 - node.y as i64).abs());
                assert_eq!(dist, 1);
                let (dx, dy) = a.direction_from(node.heading).delta();
                assert_eq!((next.x as i64 - node.x as i64, next.y as i64 - node.y as i64), (dx, dy));
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            GridSpec { width_bins: 2, ..Default::default() },
            GridSpec { bin_size_m: 0.0, ..Default::default() },
            GridSpec { road_density: 0.0, ..Default::default() },
            GridSpec { one_way_fraction: 1.5, ..Default::default() },
        ] {
            assert!(matches!(build_city(&spec), Err(NavError::InvalidSpec(_))));
        }
    }

    #[test]
    fn build_is_deterministic_and_document_round_trips() {
        let spec = GridSpec { width_bins: 12, height_bins: 9, road_density: 0.5, one_way_fraction: 0.3, seed: 11, ..Default::default() };
        let a = build_city(&spec).unwrap().to_document("h");
        let b = build_city(&spec).unwrap().to_document("h");
        assert_eq!(a, b);
        let (g, hash) = CityGraph::from_document(&a).unwrap();
        assert_eq!(hash, "h");
        assert_eq!(g.to_document("h"), a);
        assert!(!a.contains('\r'));
    }

    #[test]
    fn place_destinations_examples() {
        let g = full_lattice(3, 3);
        let classes = vec!["bank".to_string()];
        let d = place_destinations(&g, &classes, 9, 1).unwrap();
        let mut locs = d.locations(0).to_vec();
        locs.sort();
        assert_eq!(locs, g.populated_locations().to_vec());
        assert!(matches!(place_destinations(&g, &classes, 10, 1), Err(NavError::TooManyDestinations { .. })));

        let spec = GridSpec { width_bins: 40, height_bins: 40, road_density: 0.6, one_way_fraction: 0.1, seed: 7, ..Default::default() };
        let g = build_city(&spec).unwrap();
        let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        let d = place_destinations(&g, &classes, 8, 3).unwrap();
        for c in 0..5 {
            assert_eq!(d.locations(c).len(), 8);
            assert!(d.locations(c).iter().all(|l| g.nodes_at(*l).count() >= 1));
        }
        assert_eq!(d, place_destinations(&g, &classes, 8, 3).unwrap());
        let (back, _) = DestinationSet::from_document(&g, &d.to_document("x")).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn snap_examples() {
        let g = full_lattice(5, 5);
        assert_eq!(snap_to_road(&g, (2.0, 3.0)).unwrap(), Location::new(2, 3));
        assert_eq!(snap_to_road(&g, (2.5, 3.0)).unwrap(), Location::new(2, 3));
        assert_eq!(snap_to_road(&g, (-3.0, 9.0)).unwrap(), Location::new(0, 4));
    }

    #[test]
    fn snap_matches_linear_scan_on_seeded_city() {
        let spec = GridSpec { width_bins: 40, height_bins: 40, road_density: 0.6, one_way_fraction: 0.1, seed: 7, ..Default::default() };
        let g = build_city(&spec).unwrap();
        let mut rng = rng::seeded(99, &[]);
        for _ in 0..200 {
            let p: (f64, f64) = (rng.gen_range(-2.0..42.0), rng.gen_range(-2.0..42.0));
            let got = snap_to_road(&g, p).unwrap();
            let d = |l: Location| (l.x as f64 - p.0).powi(2) + (l.y as f64 - p.1).powi(2);
            let best = g.populated_locations().iter().map(|&l| d(l)).fold(f64::INFINITY, f64::min);
            assert_eq!(d(got), best);
            let first = g.populated_locations().iter().copied().filter(|&l| d(l) == best).min().unwrap();
            assert_eq!(got, first);
        }
    }
}
