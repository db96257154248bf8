//! Supervision derived from the graph and destination geometry.
//!
//! Three label schemes share one shortest-path enumeration ([`shortest_path_cover`]):
//! straight-line distances inside each node's 90 degree arc, the optimal action
//! per node, and favorable/ignored verdicts for heading pairs at a location.

use std::fmt;

use rayon::prelude::*;

use crate::artifact;
use crate::citygraph::{Action, CityGraph, DestinationSet, Heading, Location, NodeId};
use crate::error::{NavError, Result};
use crate::scalar::Scalar;
use crate::search::NearestPathFinder;

/// True when `target` lies in the half-open arc `[heading-45deg, heading+45deg)`
/// seen from the node's location. A target at the node's own location is in
/// every arc. The four arcs partition the plane.
pub fn arc_contains(node: NodeId, target: Location) -> bool {
    let dx = target.x as i64 - node.x as i64;
    let dy = target.y as i64 - node.y as i64;
    if dx == 0 && dy == 0 {
        return true;
    }
    // Components along the heading and along its clockwise perpendicular.
    let (fwd, side) = match node.heading {
        Heading::N => (dy, dx),
        Heading::E => (dx, -dy),
        Heading::S => (-dy, -dx),
        Heading::W => (-dx, dy),
    };
    fwd > 0 && -fwd <= side && side < fwd
}

/// Per (node, class): square root of the straight-line meters to the nearest
/// in-arc destination, `None` when the arc holds none.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceLabelTable<T> {
    width: u32,
    classes: usize,
    labels: Vec<Option<T>>,
}

impl<T: Scalar> DistanceLabelTable<T> {
    fn slot(&self, node: NodeId) -> usize {
        ((node.y as usize * self.width as usize + node.x as usize) * 4 + node.heading.index()) * self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn get(&self, node: NodeId, class: usize) -> Option<T> {
        self.labels[self.slot(node) + class]
    }

    pub fn row(&self, node: NodeId) -> &[Option<T>] {
        let s = self.slot(node);
        &self.labels[s..s + self.classes]
    }

    pub fn to_csv(&self, graph: &CityGraph, class_names: &[String], config_hash: &str) -> Result<String> {
        let mut buf = artifact::hash_comment(config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["x", "y", "heading", "class", "label"])?;
            for node in graph.nodes() {
                for (c, name) in class_names.iter().enumerate() {
                    let label = self.get(node, c).map(|v| v.as_f64().to_string()).unwrap_or_default();
                    w.write_record([&node.x.to_string(), &node.y.to_string(), node.heading.as_str(), name, &label])?;
                }
            }
            w.flush().map_err(|e| NavError::io("<memory>", e))?;
        }
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn from_csv(graph: &CityGraph, class_names: &[String], text: &str) -> Result<(Self, String)> {
        let (hash, body) = artifact::split_hash_comment(text)?;
        let mut table = DistanceLabelTable {
            width: graph.width(),
            classes: class_names.len(),
            labels: vec![None; graph.node_index_bound() * class_names.len()],
        };
        for rec in csv::Reader::from_reader(body.as_bytes()).records() {
            let rec = rec?;
            let node = parse_node(&rec, 0)?;
            let class = class_of(class_names, &rec[3])?;
            let label = match rec[4].trim() {
                "" => None,
                s => Some(T::lit(s.parse::<f64>().map_err(|e| NavError::malformed("distance label", e))?)),
            };
            let slot = table.slot(node) + class;
            table.labels[slot] = label;
        }
        Ok((table, hash))
    }
}

fn parse_node(rec: &csv::StringRecord, at: usize) -> Result<NodeId> {
    let num = |i: usize| rec[i].trim().parse::<u32>().map_err(|e| NavError::malformed("label row", e));
    Ok(NodeId::new(num(at)?, num(at + 1)?, Heading::parse(&rec[at + 2])?))
}

fn class_of(class_names: &[String], name: &str) -> Result<usize> {
    class_names.iter().position(|c| c == name).ok_or_else(|| NavError::malformed("label row", format!("unknown class {name}")))
}

pub fn distance_labels<T: Scalar>(graph: &CityGraph, dests: &DestinationSet) -> DistanceLabelTable<T> {
    let classes = dests.class_count();
    let mut labels = vec![None; graph.node_index_bound() * classes];
    for node in graph.nodes() {
        let base = graph.node_index(node) * classes;
        for c in 0..classes {
            let best = dests.locations(c).iter().filter(|&&d| arc_contains(node, d)).map(|&d| node.location().dist2(d)).min();
            labels[base + c] = best.map(|d2| T::lit(((d2 as f64).sqrt() * graph.bin_size_m()).sqrt()));
        }
    }
    DistanceLabelTable { width: graph.width(), classes, labels }
}

/// A node that started a shortest-path walk, with the cost of that path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoverSource {
    pub node: NodeId,
    pub cost: u32,
    pub dest: usize,
}

/// Outcome of the shortest-path enumeration for one class: the absolute step
/// direction written at each covered location, and the walks that wrote them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathCover {
    width: u32,
    steps: Vec<Option<Heading>>,
    sources: Vec<CoverSource>,
}

impl PathCover {
    pub fn step_at(&self, loc: Location) -> Option<Heading> {
        self.steps[loc.y as usize * self.width as usize + loc.x as usize]
    }

    pub fn sources(&self) -> &[CoverSource] {
        &self.sources
    }

    pub fn covered_locations(&self) -> usize {
        self.steps.iter().filter(|s| s.is_some()).count()
    }
}

/// Shortest-path enumeration for one destination list.
///
/// Nodes are visited in ascending id order. A node whose location is still
/// unlabeled starts a walk along its nearest-destination path; every location
/// on that path not yet labeled gets the path's step direction for all of its
/// nodes. The first write wins. Destination locations end paths and are never
/// labeled.
pub fn shortest_path_cover(graph: &CityGraph, dests: &[Location]) -> Result<PathCover> {
    let finder = NearestPathFinder::new(graph, dests)?;
    let mut steps = vec![None; graph.location_count()];
    let mut sources = Vec::new();
    for node in graph.nodes() {
        if steps[graph.loc_index(node.location())].is_some() {
            continue;
        }
        let (dest, path) = finder.find(node)?;
        if path.path.is_empty() {
            continue;
        }
        for &(n, a) in &path.path {
            let slot = &mut steps[graph.loc_index(n.location())];
            if slot.is_none() {
                *slot = Some(a.direction_from(n.heading));
            }
        }
        sources.push(CoverSource { node, cost: path.cost, dest });
    }
    Ok(PathCover { width: graph.width(), steps, sources })
}

/// Optimal action per (node, class). Every node at a labeled location carries
/// the same absolute direction, expressed relative to its own heading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectionLabelTable {
    covers: Vec<PathCover>,
}

impl DirectionLabelTable {
    pub fn from_covers(covers: Vec<PathCover>) -> Self {
        DirectionLabelTable { covers }
    }

    pub fn class_count(&self) -> usize {
        self.covers.len()
    }

    pub fn label(&self, node: NodeId, class: usize) -> Option<Action> {
        self.covers[class].step_at(node.location()).map(|d| Action::toward(node.heading, d))
    }

    /// Absolute direction written at a location.
    pub fn direction_at(&self, loc: Location, class: usize) -> Option<Heading> {
        self.covers[class].step_at(loc)
    }

    pub fn cover(&self, class: usize) -> &PathCover {
        &self.covers[class]
    }

    pub fn to_csv(&self, graph: &CityGraph, class_names: &[String], config_hash: &str) -> Result<String> {
        let mut buf = artifact::hash_comment(config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["x", "y", "heading", "class", "action"])?;
            for node in graph.nodes() {
                for (c, name) in class_names.iter().enumerate() {
                    let label = self.label(node, c).map(|a| a.as_str()).unwrap_or_default();
                    w.write_record([&node.x.to_string(), &node.y.to_string(), node.heading.as_str(), name, label])?;
                }
            }
            w.flush().map_err(|e| NavError::io("<memory>", e))?;
        }
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Reads a direction label file. Walk sources are not persisted.
    pub fn from_csv(graph: &CityGraph, class_names: &[String], text: &str) -> Result<(Self, String)> {
        let (hash, body) = artifact::split_hash_comment(text)?;
        let mut covers: Vec<PathCover> = class_names
            .iter()
            .map(|_| PathCover { width: graph.width(), steps: vec![None; graph.location_count()], sources: Vec::new() })
            .collect();
        for rec in csv::Reader::from_reader(body.as_bytes()).records() {
            let rec = rec?;
            let node = parse_node(&rec, 0)?;
            let class = class_of(class_names, &rec[3])?;
            if rec[4].trim().is_empty() {
                continue;
            }
            let dir = Action::parse(&rec[4])?.direction_from(node.heading);
            let slot = &mut covers[class].steps[graph.loc_index(node.location())];
            match slot {
                Some(d) if *d != dir => {
                    return Err(NavError::malformed("direction labels", format!("conflicting labels at {node}")));
                }
                _ => *slot = Some(dir),
            }
        }
        Ok((DirectionLabelTable { covers }, hash))
    }
}

/// Algorithm for direction labels: one path cover per class, computed in parallel.
pub fn direction_labels(graph: &CityGraph, dests: &DestinationSet) -> Result<DirectionLabelTable> {
    Ok(DirectionLabelTable::from_covers(covers(graph, dests)?))
}

fn covers(graph: &CityGraph, dests: &DestinationSet) -> Result<Vec<PathCover>> {
    (0..dests.class_count()).into_par_iter().map(|c| shortest_path_cover(graph, dests.locations(c))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLabel {
    /// The first member (earlier heading) is favorable.
    First,
    Second,
    Ignore,
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairLabel::First => "0",
            PairLabel::Second => "1",
            PairLabel::Ignore => "X",
        })
    }
}

impl PairLabel {
    pub fn parse(s: &str) -> Result<PairLabel> {
        match s.trim() {
            "0" => Ok(PairLabel::First),
            "1" => Ok(PairLabel::Second),
            "X" => Ok(PairLabel::Ignore),
            other => Err(NavError::malformed("pair label", format!("expected 0|1|X, got {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub loc: Location,
    pub first: Heading,
    pub second: Heading,
    pub label: PairLabel,
}

/// Per class, every heading pair at every covered location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairLabelTable {
    records: Vec<Vec<PairRecord>>,
}

impl PairLabelTable {
    pub fn from_covers(graph: &CityGraph, covers: &[PathCover]) -> Self {
        let records = covers
            .iter()
            .map(|cover| {
                let mut out = Vec::new();
                for &loc in graph.populated_locations() {
                    let Some(step) = cover.step_at(loc) else { continue };
                    let heads: Vec<Heading> = graph.nodes_at(loc).map(|n| n.heading).collect();
                    for (i, &first) in heads.iter().enumerate() {
                        for &second in &heads[i + 1..] {
                            let label = if first == step {
                                PairLabel::First
                            } else if second == step {
                                PairLabel::Second
                            } else {
                                PairLabel::Ignore
                            };
                            out.push(PairRecord { loc, first, second, label });
                        }
                    }
                }
                out
            })
            .collect();
        PairLabelTable { records }
    }

    pub fn class_count(&self) -> usize {
        self.records.len()
    }

    /// Records in (location, first, second) order.
    pub fn records(&self, class: usize) -> &[PairRecord] {
        &self.records[class]
    }

    pub fn at(&self, loc: Location, class: usize) -> impl Iterator<Item = &PairRecord> {
        let recs = &self.records[class];
        let start = recs.partition_point(|r| r.loc < loc);
        recs[start..].iter().take_while(move |r| r.loc == loc)
    }

    /// The heading marked favorable at a location, if any pair there is labeled.
    pub fn favorable_at(&self, loc: Location, class: usize) -> Option<Heading> {
        self.at(loc, class).find_map(|r| match r.label {
            PairLabel::First => Some(r.first),
            PairLabel::Second => Some(r.second),
            PairLabel::Ignore => None,
        })
    }

    pub fn to_csv(&self, class_names: &[String], config_hash: &str) -> Result<String> {
        let mut buf = artifact::hash_comment(config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["x", "y", "class", "first", "second", "label"])?;
            for (c, name) in class_names.iter().enumerate() {
                for r in &self.records[c] {
                    w.write_record([
                        &r.loc.x.to_string(),
                        &r.loc.y.to_string(),
                        name,
                        r.first.as_str(),
                        r.second.as_str(),
                        &r.label.to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| NavError::io("<memory>", e))?;
        }
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn from_csv(class_names: &[String], text: &str) -> Result<(Self, String)> {
        let (hash, body) = artifact::split_hash_comment(text)?;
        let mut records = vec![Vec::new(); class_names.len()];
        for rec in csv::Reader::from_reader(body.as_bytes()).records() {
            let rec = rec?;
            let num = |i: usize| rec[i].trim().parse::<u32>().map_err(|e| NavError::malformed("pair row", e));
            let class = class_of(class_names, &rec[2])?;
            records[class].push(PairRecord {
                loc: Location::new(num(0)?, num(1)?),
                first: Heading::parse(&rec[3])?,
                second: Heading::parse(&rec[4])?,
                label: PairLabel::parse(&rec[5])?,
            });
        }
        for r in &mut records {
            r.sort_by_key(|p| (p.loc, p.first, p.second));
        }
        Ok((PairLabelTable { records }, hash))
    }
}

/// Algorithm for pair labels; uses the same enumeration as [`direction_labels`].
pub fn pair_labels(graph: &CityGraph, dests: &DestinationSet) -> Result<PairLabelTable> {
    Ok(PairLabelTable::from_covers(graph, &covers(graph, dests)?))
}

/// All three label schemes from a single enumeration.
#[derive(Clone, Debug)]
pub struct LabelSet<T> {
    pub distance: DistanceLabelTable<T>,
    pub direction: DirectionLabelTable,
    pub pairs: PairLabelTable,
}

impl<T: Scalar> LabelSet<T> {
    pub fn generate(graph: &CityGraph, dests: &DestinationSet) -> Result<Self> {
        let covers = covers(graph, dests)?;
        let pairs = PairLabelTable::from_covers(graph, &covers);
        Ok(LabelSet { distance: distance_labels(graph, dests), direction: DirectionLabelTable::from_covers(covers), pairs })
    }
}

/// Geographic loss weight `lambda^l` for a sample `l` steps from its nearest destination.
pub fn geo_weight<T: Scalar>(l: u32, lambda: T) -> Result<T> {
    if !(lambda > T::zero() && lambda < T::one()) {
        return Err(NavError::InvalidConfig(format!("lambda must be in (0,1), got {lambda}")));
    }
    Ok(lambda.powi(l.min(i32::MAX as u32) as i32))
}

/// Result of following direction labels from a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replay {
    Reached { steps: u32 },
    /// Hit a node with no label before reaching a destination.
    Unlabeled { at: NodeId, steps: u32 },
    TooLong,
}

/// Repeatedly applies the class label from `start` until a class destination
/// location is reached.
pub fn replay_direction_labels(
    graph: &CityGraph,
    labels: &DirectionLabelTable,
    dests: &[Location],
    class: usize,
    start: NodeId,
    max_steps: u32,
) -> Result<Replay> {
    let mut node = start;
    let mut steps = 0;
    loop {
        if dests.contains(&node.location()) {
            return Ok(Replay::Reached { steps });
        }
        if steps >= max_steps {
            return Ok(Replay::TooLong);
        }
        let Some(action) = labels.label(node, class) else {
            return Ok(Replay::Unlabeled { at: node, steps });
        };
        node = graph.apply_action(node, action)?;
        steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citygraph::{build_city, place_destinations, GridSpec};
    use crate::search::{astar, distance_field};

    fn full(w: u32, h: u32) -> CityGraph {
        build_city(&GridSpec { width_bins: w, height_bins: h, road_density: 1.0, one_way_fraction: 0.0, ..Default::default() })
            .unwrap()
    }

    /// Bearing in degrees clockwise from north; oracle for the integer arc test.
    fn bearing_in_arc(node: NodeId, t: Location) -> bool {
        let dx = t.x as f64 - node.x as f64;
        let dy = t.y as f64 - node.y as f64;
        let bearing = dx.atan2(dy).to_degrees().rem_euclid(360.0);
        let center = node.heading.index() as f64 * 90.0;
        let rel = (bearing - center + 45.0).rem_euclid(360.0);
        rel < 90.0 - 1e-9 && rel >= -1e-9 || rel > 360.0 - 1e-9
    }

    #[test]
    fn arc_examples() {
        let n = NodeId::new(10, 10, Heading::N);
        // 44.9 degrees east of north: tan(44.9deg) * 1000 ~ 996.5
        assert!(arc_contains(NodeId::new(0, 0, Heading::N), Location::new(996, 1000)));
        assert!(!arc_contains(n, Location::new(13, 13)));
        assert!(arc_contains(NodeId::new(10, 10, Heading::E), Location::new(13, 13)));
        for h in Heading::ALL {
            assert!(arc_contains(NodeId::new(10, 10, h), Location::new(10, 10)));
        }
    }

    #[test]
    fn arcs_partition_and_match_bearing_oracle() {
        for dx in -6i64..=6 {
            for dy in -6i64..=6 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let t = Location::new((10 + dx) as u32, (10 + dy) as u32);
                let owners = Heading::ALL.iter().filter(|&&h| arc_contains(NodeId::new(10, 10, h), t)).count();
                assert_eq!(owners, 1, "offset ({dx},{dy})");
                for h in Heading::ALL {
                    assert_eq!(arc_contains(NodeId::new(10, 10, h), t), bearing_in_arc(NodeId::new(10, 10, h), t));
                }
            }
        }
    }

    #[test]
    fn distance_label_examples() {
        let g = full(9, 9);
        let dests = DestinationSet::new(&g, vec!["a".into()], vec![vec![Location::new(4, 8)]]).unwrap();
        let t: DistanceLabelTable<f64> = distance_labels(&g, &dests);
        assert_eq!(t.get(NodeId::new(4, 4, Heading::N), 0), Some(10.0));
        assert_eq!(t.get(NodeId::new(4, 4, Heading::S), 0), None);
        let round: DistanceLabelTable<f64> = DistanceLabelTable::from_csv(&g, &["a".into()], &t.to_csv(&g, &["a".into()], "h").unwrap()).unwrap().0;
        assert_eq!(round, t);
    }

    #[test]
    fn distance_labels_match_brute_force_on_seeded_city() {
        let g = build_city(&GridSpec { width_bins: 40, height_bins: 40, seed: 7, ..Default::default() }).unwrap();
        let classes: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        let dests = place_destinations(&g, &classes, 6, 1).unwrap();
        let t: DistanceLabelTable<f64> = distance_labels(&g, &dests);
        let diag = g.diagonal_m();
        for node in g.nodes() {
            for c in 0..5 {
                let mut best: Option<f64> = None;
                for &d in dests.locations(c) {
                    if bearing_in_arc(node, d) || d == node.location() {
                        let m = g.distance_m(node.location(), d);
                        best = Some(best.map_or(m, |b: f64| b.min(m)));
                    }
                }
                let got = t.get(node, c);
                assert_eq!(got.is_some(), best.is_some());
                if let (Some(v), Some(m)) = (got, best) {
                    assert!((v - m.sqrt()).abs() < 1e-12);
                    assert!(v >= 0.0 && v * v <= diag + 1e-9);
                }
            }
        }
    }

    #[test]
    fn direction_labels_relative_to_heading() {
        // East of the location is the destination: facing E gives forward, facing N gives right.
        let g = full(5, 5);
        let dests = DestinationSet::new(&g, vec!["a".into()], vec![vec![Location::new(4, 2)]]).unwrap();
        let table = direction_labels(&g, &dests).unwrap();
        assert_eq!(table.direction_at(Location::new(3, 2), 0), Some(Heading::E));
        assert_eq!(table.label(NodeId::new(3, 2, Heading::E), 0), Some(Action::Forward));
        assert_eq!(table.label(NodeId::new(3, 2, Heading::N), 0), Some(Action::Right));
        assert_eq!(table.label(NodeId::new(3, 2, Heading::W), 0), Some(Action::Backward));
        assert_eq!(table.direction_at(Location::new(4, 2), 0), None);
    }

    #[test]
    fn replay_reaches_destination_in_field_steps() {
        for seed in 0..4 {
            let g = build_city(&GridSpec { width_bins: 5, height_bins: 5, road_density: 0.7, one_way_fraction: 0.2, seed, ..Default::default() })
                .unwrap();
            let dests = place_destinations(&g, &["a".to_string()], 1, seed).unwrap();
            let table = direction_labels(&g, &dests).unwrap();
            let field = distance_field(&g, dests.locations(0)).unwrap();
            for node in g.nodes() {
                if table.label(node, 0).is_none() {
                    continue;
                }
                let r = replay_direction_labels(&g, &table, dests.locations(0), 0, node, 1000).unwrap();
                assert_eq!(r, Replay::Reached { steps: field.value(node).unwrap() });
            }
            for s in table.cover(0).sources() {
                assert_eq!(s.cost, astar(&g, s.node, dests.locations(0)[0]).unwrap().cost);
            }
        }
    }

    #[test]
    fn pair_examples() {
        let g = full(5, 5);
        let dests = DestinationSet::new(&g, vec!["a".into()], vec![vec![Location::new(4, 2)]]).unwrap();
        let t = pair_labels(&g, &dests).unwrap();
        let at: Vec<&PairRecord> = t.at(Location::new(3, 2), 0).collect();
        assert_eq!(at.len(), 6);
        let find = |a: Heading, b: Heading| at.iter().find(|r| r.first == a && r.second == b).unwrap().label;
        assert_eq!(find(Heading::N, Heading::E), PairLabel::Second);
        assert_eq!(find(Heading::N, Heading::S), PairLabel::Ignore);
        assert_eq!(at.iter().filter(|r| r.label != PairLabel::Ignore).count(), 3);
        // Border location (4,1): arms N, S, W -> 3 pairs; the favorable (N) joins 2 of them.
        let border: Vec<&PairRecord> = t.at(Location::new(4, 1), 0).collect();
        assert_eq!(border.len(), 3);
        assert_eq!(t.favorable_at(Location::new(4, 1), 0), Some(Heading::N));
        let names = vec!["a".to_string()];
        assert_eq!(PairLabelTable::from_csv(&names, &t.to_csv(&names, "h").unwrap()).unwrap().0, t);
    }

    #[test]
    fn two_node_location_gets_one_labeled_pair() {
        let g = full(5, 5);
        // (0,2) lies on the west border with arms N, E, S; (0,0) corner has N and E.
        let dests = DestinationSet::new(&g, vec!["a".into()], vec![vec![Location::new(0, 1)]]).unwrap();
        let t = pair_labels(&g, &dests).unwrap();
        let corner: Vec<&PairRecord> = t.at(Location::new(0, 0), 0).collect();
        assert_eq!(corner.len(), 1);
        assert_eq!(corner[0].label, PairLabel::First);
    }

    #[test]
    fn pair_and_direction_agree() {
        let g = build_city(&GridSpec { width_bins: 15, height_bins: 15, seed: 2, ..Default::default() }).unwrap();
        let classes: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let dests = place_destinations(&g, &classes, 2, 5).unwrap();
        let labels: LabelSet<f64> = LabelSet::generate(&g, &dests).unwrap();
        for c in 0..3 {
            for &loc in g.populated_locations() {
                let dir = labels.direction.direction_at(loc, c);
                match labels.pairs.favorable_at(loc, c) {
                    Some(h) => assert_eq!(Some(h), dir),
                    // A single-node location has no pairs to label.
                    None => assert!(dir.is_none() || g.nodes_at(loc).count() == 1),
                }
            }
            for r in labels.pairs.records(c) {
                let step = labels.direction.direction_at(r.loc, c).unwrap();
                let labeled = r.label != PairLabel::Ignore;
                assert_eq!(labeled, (r.first == step) != (r.second == step));
            }
        }
        let names = classes.clone();
        let text = labels.direction.to_csv(&g, &names, "h").unwrap();
        let (back, hash) = DirectionLabelTable::from_csv(&g, &names, &text).unwrap();
        assert_eq!(hash, "h");
        for c in 0..3 {
            for n in g.nodes() {
                assert_eq!(back.label(n, c), labels.direction.label(n, c));
            }
        }
    }

    #[test]
    fn removing_destinations_never_shrinks_distance_labels() {
        let g = build_city(&GridSpec { width_bins: 20, height_bins: 20, seed: 4, ..Default::default() }).unwrap();
        let all = place_destinations(&g, &["a".to_string()], 6, 9).unwrap();
        let fewer = DestinationSet::new(&g, vec!["a".into()], vec![all.locations(0)[..3].to_vec()]).unwrap();
        let a: DistanceLabelTable<f64> = distance_labels(&g, &all);
        let b: DistanceLabelTable<f64> = distance_labels(&g, &fewer);
        for n in g.nodes() {
            if let (Some(x), Some(y)) = (a.get(n, 0), b.get(n, 0)) {
                assert!(y >= x);
            }
        }
    }

    #[test]
    fn geo_weight_examples() {
        assert_eq!(geo_weight(0, 0.9f64).unwrap(), 1.0);
        assert!((geo_weight(1, 0.9f64).unwrap() - 0.9).abs() < 1e-12);
        assert!((geo_weight(2, 0.9f64).unwrap() - 0.81).abs() < 1e-12);
        assert!((geo_weight(2, 0.9f32).unwrap() - 0.81).abs() < 1e-6);
        assert!(geo_weight(1, 1.0f64).is_err());
        assert!(geo_weight(1, 0.0f64).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn geo_weight_is_multiplicative_and_decreasing(a in 0u32..120, b in 0u32..120, lambda in 0.05f64..0.99) {
                let wa = geo_weight(a, lambda).unwrap();
                let wb = geo_weight(b, lambda).unwrap();
                let wab = geo_weight(a + b, lambda).unwrap();
                prop_assert!((wab - wa * wb).abs() <= 1e-12);
                prop_assert!(wa > 0.0 && wa <= 1.0);
                prop_assert!(geo_weight(a + 1, lambda).unwrap() < wa);
            }
        }
    }
}
