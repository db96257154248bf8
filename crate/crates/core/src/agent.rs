//! Navigation policies and the episode runner.
//!
//! An episode starts at a node and ends when the agent's location is within
//! the success radius of a destination of the target class, or after
//! `max_steps` actions. An action already taken from a node is blocked for
//! the rest of the episode; an agent with every action blocked is respawned,
//! free of charge, at the nearest node that still has an open action.

use std::fmt;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::citygraph::{Action, CityGraph, DestinationSet, Location, NodeId};
use crate::error::{NavError, Result};
use crate::learner::{Head, ScorerModel};
use crate::rng;
use crate::scalar::Scalar;
use crate::search::NearestPathFinder;
use crate::synthfeat::FeatureTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    AstarOracle,
    DistanceGreedy,
    DirectionArgmax,
    PairArgmax,
    RandomWalk,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::AstarOracle,
        PolicyKind::DistanceGreedy,
        PolicyKind::DirectionArgmax,
        PolicyKind::PairArgmax,
        PolicyKind::RandomWalk,
    ];

    /// Model head a learned policy needs; `None` for the baselines.
    pub fn head(self) -> Option<Head> {
        match self {
            PolicyKind::DistanceGreedy => Some(Head::Distance),
            PolicyKind::DirectionArgmax => Some(Head::Direction),
            PolicyKind::PairArgmax => Some(Head::Pair),
            PolicyKind::AstarOracle | PolicyKind::RandomWalk => None,
        }
    }

    pub fn for_head(head: Head) -> PolicyKind {
        match head {
            Head::Distance => PolicyKind::DistanceGreedy,
            Head::Direction => PolicyKind::DirectionArgmax,
            Head::Pair => PolicyKind::PairArgmax,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::AstarOracle => "astar_oracle",
            PolicyKind::DistanceGreedy => "distance_greedy",
            PolicyKind::DirectionArgmax => "direction_argmax",
            PolicyKind::PairArgmax => "pair_argmax",
            PolicyKind::RandomWalk => "random_walk",
        }
    }

    pub fn parse(s: &str) -> Result<PolicyKind> {
        let s = s.trim().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| NavError::InvalidConfig(format!("unknown policy {s:?}")))
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = NavError;

    fn from_str(s: &str) -> Result<PolicyKind> {
        PolicyKind::parse(s)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy<T> {
    kind: PolicyKind,
    model: Option<ScorerModel<T>>,
    seed: u64,
}

impl<T: Scalar> Policy<T> {
    pub fn random_walk(seed: u64) -> Self {
        Policy { kind: PolicyKind::RandomWalk, model: None, seed }
    }

    pub fn astar_oracle() -> Self {
        Policy { kind: PolicyKind::AstarOracle, model: None, seed: 0 }
    }

    /// A learned policy; the model head must match the kind.
    pub fn learned(kind: PolicyKind, model: ScorerModel<T>) -> Result<Self> {
        let Some(head) = kind.head() else {
            return Err(NavError::InvalidConfig(format!("{kind} does not take a model")));
        };
        if model.head() != head {
            return Err(NavError::HeadMismatch { expected: head.to_string(), got: model.head().to_string() });
        }
        Ok(Policy { kind, model: Some(model), seed: 0 })
    }

    /// Policy matching the model's head.
    pub fn from_model(model: ScorerModel<T>) -> Self {
        Policy { kind: PolicyKind::for_head(model.head()), model: Some(model), seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn model(&self) -> Option<&ScorerModel<T>> {
        self.model.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: u32,
    pub success_radius_m: f64,
    pub dest_class: String,
}

impl EpisodeConfig {
    pub fn new(dest_class: impl Into<String>) -> Self {
        EpisodeConfig { max_steps: 1000, success_radius_m: 75.0, dest_class: dest_class.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(NavError::InvalidConfig("max_steps must be >= 1".into()));
        }
        if !(self.success_radius_m >= 0.0) {
            return Err(NavError::InvalidConfig("success_radius_m must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Start,
    Move(Action),
    Respawn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub node: NodeId,
    pub kind: StepKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub steps: u32,
    pub respawns: u32,
    /// No node anywhere had an open action left.
    pub degenerate: bool,
    pub trajectory: Vec<TrajectoryStep>,
}

impl EpisodeResult {
    pub fn final_node(&self) -> NodeId {
        self.trajectory.last().expect("trajectory holds the start").node
    }
}

/// Per-node class scores precomputed from the model.
enum Scores<T> {
    None,
    /// Predicted class distance at each node (lower is better).
    Distance(Vec<T>),
    /// Four action scores per node.
    Direction(Vec<T>),
    /// One score per node (higher is better).
    Pair(Vec<T>),
}

/// A policy bound to one city, class and feature table, ready to run episodes.
pub struct Navigator<'a, T> {
    policy: &'a Policy<T>,
    graph: &'a CityGraph,
    config: EpisodeConfig,
    goal: Vec<bool>,
    scores: Scores<T>,
    oracle: Option<NearestPathFinder<'a>>,
    offsets: Vec<(i64, i32, i32)>,
}

impl<'a, T: Scalar> Navigator<'a, T> {
    pub fn new(
        policy: &'a Policy<T>,
        graph: &'a CityGraph,
        dests: &DestinationSet,
        features: Option<&FeatureTable<T>>,
        config: &EpisodeConfig,
    ) -> Result<Self> {
        config.validate()?;
        let class = dests
            .class_index(&config.dest_class)
            .ok_or_else(|| NavError::InvalidConfig(format!("unknown destination class {:?}", config.dest_class)))?;
        let targets = dests.locations(class);
        let goal = (0..graph.location_count())
            .map(|i| {
                let loc = graph.loc_from_index(i);
                targets.iter().any(|&d| graph.distance_m(loc, d) <= config.success_radius_m)
            })
            .collect();
        let oracle = match policy.kind {
            PolicyKind::AstarOracle => Some(NearestPathFinder::new(graph, targets)?),
            _ => None,
        };
        let scores = match (policy.kind, &policy.model) {
            (PolicyKind::AstarOracle | PolicyKind::RandomWalk, _) => Scores::None,
            (kind, None) => return Err(NavError::InvalidConfig(format!("{kind} needs a model"))),
            (kind, Some(model)) => {
                let features =
                    features.ok_or_else(|| NavError::InvalidConfig(format!("{kind} needs a feature table")))?;
                if model.classes() != dests.class_count() {
                    return Err(NavError::DimensionMismatch { expected: dests.class_count(), got: model.classes() });
                }
                let per_node = node_scores(model, graph, features, class)?;
                match kind {
                    PolicyKind::DistanceGreedy => Scores::Distance(per_node),
                    PolicyKind::DirectionArgmax => Scores::Direction(per_node),
                    _ => Scores::Pair(per_node),
                }
            }
        };
        Ok(Navigator { policy, graph, config: config.clone(), goal, scores, oracle, offsets: sorted_offsets(graph) })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn policy(&self) -> &Policy<T> {
        self.policy
    }

    pub fn graph(&self) -> &CityGraph {
        self.graph
    }

    pub fn at_goal(&self, loc: Location) -> bool {
        self.goal[self.graph.loc_index(loc)]
    }

    /// Picks an action among the open ones. `None` means every available
    /// action is blocked.
    pub fn decide(&self, node: NodeId, blocked: impl Fn(Action) -> bool, rng: &mut ChaCha8Rng) -> Result<Option<Action>> {
        let open: Vec<Action> = self.graph.available_actions(node)?.into_iter().filter(|&a| !blocked(a)).collect();
        if open.is_empty() {
            return Ok(None);
        }
        let g = self.graph;
        let loc = node.location();
        // Highest key wins; ties keep the earlier action.
        let best_by = |key: &dyn Fn(Action) -> T| {
            let mut best = open[0];
            let mut best_key = key(best);
            for &a in &open[1..] {
                let k = key(a);
                if k > best_key {
                    best = a;
                    best_key = k;
                }
            }
            best
        };
        let choice = match &self.scores {
            Scores::Distance(d) => {
                best_by(&|a: Action| -d[g.node_index(loc.with_heading(a.direction_from(node.heading)))])
            }
            Scores::Direction(s) => best_by(&|a: Action| s[g.node_index(node) * 4 + a.index()]),
            Scores::Pair(s) => best_by(&|a: Action| s[g.node_index(loc.with_heading(a.direction_from(node.heading)))]),
            Scores::None => match self.policy.kind {
                PolicyKind::AstarOracle => {
                    let oracle = self.oracle.as_ref().expect("oracle built for this kind");
                    let (_, path) = oracle.find(node)?;
                    match path.path.first() {
                        Some(&(_, a)) if open.contains(&a) => a,
                        _ => open[0],
                    }
                }
                _ => *open.choose(rng).expect("nonempty"),
            },
        };
        Ok(Some(choice))
    }

    /// Runs one episode. The random stream depends only on the policy seed,
    /// the start node and `trial`.
    pub fn run(&self, start: NodeId, trial: u64) -> Result<EpisodeResult> {
        let g = self.graph;
        if !g.contains(start) {
            return Err(NavError::UnknownNode(start));
        }
        let mut rng = rng::seeded(self.policy.seed, &[g.node_index(start) as u64, trial]);
        let mut used = vec![0u8; g.node_index_bound()];
        let mut node = start;
        let mut steps = 0;
        let mut respawns = 0;
        let mut trajectory = vec![TrajectoryStep { node, kind: StepKind::Start }];
        let (success, degenerate) = loop {
            if self.at_goal(node.location()) {
                break (true, false);
            }
            if steps >= self.config.max_steps {
                break (false, false);
            }
            let mask = used[g.node_index(node)];
            match self.decide(node, |a| mask & (1 << a.index()) != 0, &mut rng)? {
                Some(a) => {
                    used[g.node_index(node)] |= 1 << a.index();
                    node = g.apply_action(node, a)?;
                    steps += 1;
                    trajectory.push(TrajectoryStep { node, kind: StepKind::Move(a) });
                }
                None => match nearest_open(g, &self.offsets, &used, node.location()) {
                    Some(n) => {
                        node = n;
                        respawns += 1;
                        trajectory.push(TrajectoryStep { node, kind: StepKind::Respawn });
                    }
                    None => break (false, true),
                },
            }
        };
        Ok(EpisodeResult { success, steps, respawns, degenerate, trajectory })
    }
}

/// Location offsets of a grid sorted by squared length, for nearest-first scans.
fn sorted_offsets(graph: &CityGraph) -> Vec<(i64, i32, i32)> {
    let (w, h) = (graph.width() as i32, graph.height() as i32);
    let mut out: Vec<(i64, i32, i32)> = (-(h - 1)..h)
        .flat_map(|dy| (-(w - 1)..w).map(move |dx| ((dx as i64).pow(2) + (dy as i64).pow(2), dx, dy)))
        .collect();
    out.sort_unstable();
    out
}

/// Nearest node (straight line between bin centers, ties by [`NodeId`]) with
/// at least one action not yet used.
fn nearest_open(graph: &CityGraph, offsets: &[(i64, i32, i32)], used: &[u8], from: Location) -> Option<NodeId> {
    let mut best: Option<(i64, NodeId)> = None;
    for &(d2, dx, dy) in offsets {
        if best.is_some_and(|(bd, _)| d2 > bd) {
            break;
        }
        let (x, y) = (from.x as i64 + dx as i64, from.y as i64 + dy as i64);
        if x < 0 || y < 0 || x >= graph.width() as i64 || y >= graph.height() as i64 {
            continue;
        }
        let loc = Location::new(x as u32, y as u32);
        for node in graph.nodes_at(loc) {
            let avail = Action::ALL.iter().filter(|&&a| graph.is_available(node, a)).fold(0u8, |m, a| m | 1 << a.index());
            if avail & !used[graph.node_index(node)] != 0 && best.is_none_or(|(_, b)| node < b) {
                best = Some((d2, node));
            }
        }
    }
    best.map(|(_, n)| n)
}

/// Class-`class` model output for every node, indexed by dense node index:
/// the predicted distance (distance head), the four action scores (direction
/// head, four entries per node) or the node's score (pair head).
pub fn node_scores<T: Scalar>(
    model: &ScorerModel<T>,
    graph: &CityGraph,
    features: &FeatureTable<T>,
    class: usize,
) -> Result<Vec<T>> {
    if class >= model.classes() {
        return Err(NavError::InvalidConfig(format!("class {class} out of range")));
    }
    let width = if model.head() == Head::Direction { 4 } else { 1 };
    let mut out = vec![T::zero(); graph.node_index_bound() * width];
    let mut pred = vec![T::zero(); model.outputs()];
    for node in graph.nodes() {
        let x = features.get(graph, node).ok_or(NavError::UnknownNode(node))?;
        model.predict_into(x, &mut pred)?;
        let i = graph.node_index(node);
        if width == 4 {
            out[i * 4..i * 4 + 4].copy_from_slice(&pred[class * 4..class * 4 + 4]);
        } else {
            out[i] = pred[class];
        }
    }
    Ok(out)
}

/// One episode with trial index 0.
pub fn run_episode<T: Scalar>(
    policy: &Policy<T>,
    graph: &CityGraph,
    dests: &DestinationSet,
    features: Option<&FeatureTable<T>>,
    start: NodeId,
    config: &EpisodeConfig,
) -> Result<EpisodeResult> {
    Navigator::new(policy, graph, dests, features, config)?.run(start, 0)
}

/// Protocol violations found by replaying a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolAudit {
    /// (node, action) pairs executed more than once.
    pub repeated_actions: u32,
    /// Episodes with more than `max_steps` actions.
    pub over_cap: u32,
    /// Respawns landing on a node without an open action, or on a node whose
    /// predecessor still had one.
    pub bad_respawns: u32,
    /// Moves that do not match `apply_action`, or a step count that disagrees with the trajectory.
    pub invalid_moves: u32,
}

impl ProtocolAudit {
    pub fn is_clean(&self) -> bool {
        *self == ProtocolAudit::default()
    }

    pub fn merge(&mut self, other: &ProtocolAudit) {
        self.repeated_actions += other.repeated_actions;
        self.over_cap += other.over_cap;
        self.bad_respawns += other.bad_respawns;
        self.invalid_moves += other.invalid_moves;
    }
}

/// Replays an episode against the graph and counts protocol violations.
pub fn audit_episode(graph: &CityGraph, result: &EpisodeResult, max_steps: u32) -> ProtocolAudit {
    let mut audit = ProtocolAudit::default();
    let mut used = vec![0u8; graph.node_index_bound()];
    let open = |used: &[u8], n: NodeId| {
        graph.contains(n) && Action::ALL.iter().any(|&a| graph.is_available(n, a) && used[graph.node_index(n)] & (1 << a.index()) == 0)
    };
    let mut moves = 0u32;
    for w in result.trajectory.windows(2) {
        let (from, to) = (w[0].node, w[1].node);
        match w[1].kind {
            StepKind::Move(a) => {
                moves += 1;
                if graph.apply_action(from, a).ok() != Some(to) {
                    audit.invalid_moves += 1;
                    continue;
                }
                let slot = &mut used[graph.node_index(from)];
                if *slot & (1 << a.index()) != 0 {
                    audit.repeated_actions += 1;
                }
                *slot |= 1 << a.index();
            }
            StepKind::Respawn => {
                if open(&used, from) || !open(&used, to) {
                    audit.bad_respawns += 1;
                }
            }
            StepKind::Start => audit.invalid_moves += 1,
        }
    }
    if moves > max_steps || result.steps > max_steps {
        audit.over_cap += 1;
    }
    if moves != result.steps {
        audit.invalid_moves += 1;
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::citygraph::{build_city, place_destinations, GridSpec, Heading, DEFAULT_CLASSES};
    use crate::labeling::arc_contains;
    use crate::learner::TrainConfig;
    use crate::search::{bfs_oracle, distance_field};
    use crate::synthfeat::{gen_features, FeatureSpec};
    use rand::Rng;
    use std::collections::HashSet;

    fn full(w: u32, h: u32) -> CityGraph {
        build_city(&GridSpec { width_bins: w, height_bins: h, road_density: 1.0, one_way_fraction: 0.0, ..Default::default() })
            .unwrap()
    }

    fn one_class(g: &CityGraph, locs: Vec<Location>) -> DestinationSet {
        DestinationSet::new(g, vec!["a".into()], vec![locs]).unwrap()
    }

    fn cfg(radius: f64) -> EpisodeConfig {
        EpisodeConfig { max_steps: 1000, success_radius_m: radius, dest_class: "a".into() }
    }

    fn check_protocol(g: &CityGraph, r: &EpisodeResult, max_steps: u32) {
        assert!(r.steps <= max_steps);
        let mut seen = HashSet::new();
        let mut moves = 0;
        for w in r.trajectory.windows(2) {
            match w[1].kind {
                StepKind::Move(a) => {
                    assert!(seen.insert((w[0].node, a)), "repeated {:?} at {}", a, w[0].node);
                    assert_eq!(g.apply_action(w[0].node, a).unwrap(), w[1].node);
                    moves += 1;
                }
                StepKind::Respawn => {}
                StepKind::Start => panic!("start inside trajectory"),
            }
        }
        assert_eq!(moves, r.steps);
    }

    #[test]
    fn start_inside_radius_succeeds_immediately() {
        let g = full(9, 9);
        let d = one_class(&g, vec![Location::new(4, 4)]);
        let p = Policy::<f64>::random_walk(1);
        let r = run_episode(&p, &g, &d, None, NodeId::new(4, 6, Heading::N), &cfg(75.0)).unwrap();
        assert!(r.success);
        assert_eq!(r.steps, 0);
    }

    #[test]
    fn oracle_takes_a_cost_reducing_action() {
        let g = build_city(&GridSpec { width_bins: 20, height_bins: 20, seed: 3, ..Default::default() }).unwrap();
        let dest = g.populated_locations()[g.populated_locations().len() / 3];
        let d = one_class(&g, vec![dest]);
        let p = Policy::<f64>::astar_oracle();
        let nav = Navigator::new(&p, &g, &d, None, &cfg(0.0)).unwrap();
        let mut rng = rng::seeded(0, &[]);
        for node in g.nodes().filter(|n| bfs_oracle(&g, *n, dest).unwrap().cost == 3) {
            let a = nav.decide(node, |_| false, &mut rng).unwrap().unwrap();
            let next = g.apply_action(node, a).unwrap();
            assert_eq!(bfs_oracle(&g, next, dest).unwrap().cost, 2);
        }
    }

    #[test]
    fn oracle_episodes_stay_within_the_field() {
        let g = build_city(&GridSpec { width_bins: 30, height_bins: 30, seed: 8, ..Default::default() }).unwrap();
        let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        let d = place_destinations(&g, &classes, 2, 4).unwrap();
        let field = distance_field(&g, d.locations(0)).unwrap();
        let p = Policy::<f64>::astar_oracle();
        let nav = Navigator::new(&p, &g, &d, None, &EpisodeConfig::new("bank")).unwrap();
        for node in g.nodes().step_by(7) {
            let r = nav.run(node, 0).unwrap();
            assert!(r.success);
            assert!(r.steps <= field.value(node).unwrap());
            assert_eq!(r.respawns, 0);
            check_protocol(&g, &r, 1000);
        }
    }

    #[test]
    fn single_available_action_is_always_taken() {
        // One-way chain: only the eastbound arm exists at (1,0) in this graph document.
        let doc = r#"{
  "format": "citynav-graph",
  "version": 1,
  "config_hash": "t",
  "spec": {"width_bins": 4, "height_bins": 3, "bin_size_m": 25.0, "road_density": 1.0, "one_way_fraction": 0.0, "seed": 0},
  "origin": {"lat": 0.0, "lon": 0.0},
  "nodes": [
    [0,0,"E"],[1,0,"E"],[2,0,"E"],[3,0,"N"],[3,1,"N"],[3,2,"W"],[2,2,"W"],[1,2,"W"],[0,2,"S"],[0,1,"S"]
  ],
  "move_edges": [
    [0,0,"E",1,0],[1,0,"E",2,0],[2,0,"E",3,0],[3,0,"N",3,1],[3,1,"N",3,2],[3,2,"W",2,2],[2,2,"W",1,2],[1,2,"W",0,2],[0,2,"S",0,1],[0,1,"S",0,0]
  ]
}"#;
        let (g, _) = CityGraph::from_document(doc).unwrap();
        let d = one_class(&g, vec![Location::new(0, 2)]);
        let p = Policy::<f64>::random_walk(3);
        let nav = Navigator::new(&p, &g, &d, None, &cfg(0.0)).unwrap();
        for seed in 0..20 {
            let mut rng = rng::seeded(seed, &[]);
            let a = nav.decide(NodeId::new(1, 0, Heading::E), |_| false, &mut rng).unwrap();
            assert_eq!(a, Some(Action::Forward));
        }
        let r = nav.run(NodeId::new(1, 0, Heading::E), 0).unwrap();
        assert!(r.success);
        assert_eq!(r.steps, 7);
    }

    #[test]
    fn step_cap_ends_the_episode() {
        let g = full(30, 30);
        let d = one_class(&g, vec![Location::new(29, 29)]);
        let p = Policy::<f64>::random_walk(9);
        let mut c = cfg(0.0);
        c.max_steps = 25;
        let nav = Navigator::new(&p, &g, &d, None, &c).unwrap();
        let r = nav.run(NodeId::new(0, 0, Heading::N), 0).unwrap();
        assert!(!r.success);
        assert_eq!(r.steps, 25);
        check_protocol(&g, &r, 25);
    }

    #[test]
    fn random_walks_respect_the_protocol() {
        let g = build_city(&GridSpec { width_bins: 25, height_bins: 25, seed: 12, ..Default::default() }).unwrap();
        let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        let d = place_destinations(&g, &classes, 1, 2).unwrap();
        let p = Policy::<f64>::random_walk(5);
        let nav = Navigator::new(&p, &g, &d, None, &EpisodeConfig::new("church")).unwrap();
        let mut respawned = 0;
        for (i, node) in g.nodes().step_by(37).enumerate() {
            let r = nav.run(node, i as u64).unwrap();
            check_protocol(&g, &r, 1000);
            respawned += r.respawns;
            assert_eq!(r.success, nav.at_goal(r.final_node().location()));
            assert_eq!(r, nav.run(node, i as u64).unwrap());
        }
        assert!(respawned > 0);
    }

    #[test]
    fn exact_distance_model_heads_into_the_nearest_arc() {
        let g = build_city(&GridSpec { width_bins: 30, height_bins: 30, seed: 2, ..Default::default() }).unwrap();
        let classes: Vec<String> = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        let d = place_destinations(&g, &classes, 3, 6).unwrap();
        let dims = 10;
        let f: FeatureTable<f64> = gen_features(&g, &d, &FeatureSpec { dims, beta: 1.0, noise_sigma: 1.0, seed: 1 }).unwrap();
        // Label = t * sqrt(diagonal) on coordinate 0 of each class block.
        let scale = g.diagonal_m().sqrt();
        let mut w = vec![0.0; (dims + 1) * 5];
        for c in 0..5 {
            w[(c * 2) * 5 + c] = scale;
        }
        let model = ScorerModel::from_weights(Head::Distance, dims, 5, w, TrainConfig::for_head(Head::Distance)).unwrap();
        let p = Policy::learned(PolicyKind::DistanceGreedy, model).unwrap();
        let nav = Navigator::new(&p, &g, &d, Some(&f), &EpisodeConfig { success_radius_m: 0.0, ..EpisodeConfig::new("bank") }).unwrap();
        let mut rng = rng::seeded(0, &[]);
        for node in g.nodes() {
            let loc = node.location();
            let nearest = d.locations(0).iter().map(|&t| loc.dist2(t)).min().unwrap();
            if nearest == 0 {
                continue;
            }
            let a = nav.decide(node, |_| false, &mut rng).unwrap().unwrap();
            let facing = loc.with_heading(a.direction_from(node.heading));
            // Among open directions, the chosen arc holds the closest in-arc destination.
            let in_arc = |n: NodeId| d.locations(0).iter().filter(|&&t| arc_contains(n, t)).map(|&t| loc.dist2(t)).min();
            let chosen = in_arc(facing);
            for other in g.nodes_at(loc) {
                if let Some(o) = in_arc(other) {
                    assert!(chosen.is_some_and(|c| c <= o), "{node}: chose {facing}");
                }
            }
        }
    }

    #[test]
    fn respawn_search_matches_a_linear_scan() {
        let g = build_city(&GridSpec { width_bins: 18, height_bins: 14, seed: 21, ..Default::default() }).unwrap();
        let offsets = sorted_offsets(&g);
        let mut rng = rng::seeded(8, &[]);
        for _ in 0..200 {
            let used: Vec<u8> = (0..g.node_index_bound()).map(|_| if rng.gen_bool(0.9) { 0xF } else { rng.gen_range(0..16) }).collect();
            let from = g.populated_locations()[rng.gen_range(0..g.populated_locations().len())];
            let brute = g
                .nodes()
                .filter(|&n| Action::ALL.iter().any(|&a| g.is_available(n, a) && used[g.node_index(n)] & (1 << a.index()) == 0))
                .min_by_key(|&n| (n.location().dist2(from), n));
            assert_eq!(nearest_open(&g, &offsets, &used, from), brute);
        }
    }

    #[test]
    fn learned_policy_requires_matching_head() {
        let m = ScorerModel::<f64>::zeros(Head::Distance, 8, 5, TrainConfig::for_head(Head::Distance));
        assert!(matches!(Policy::learned(PolicyKind::PairArgmax, m.clone()), Err(NavError::HeadMismatch { .. })));
        assert!(Policy::learned(PolicyKind::DistanceGreedy, m).is_ok());
        assert_eq!(PolicyKind::parse("random-walk").unwrap(), PolicyKind::RandomWalk);
    }
}
