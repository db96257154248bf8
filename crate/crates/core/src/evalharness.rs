//! Start sampling, episode fan-out, metrics and report tables.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeResult, Navigator, PolicyKind, StepKind};
use crate::artifact;
use crate::citygraph::{CityGraph, Location, NodeId};
use crate::error::{NavError, Result};
use crate::learner::{Head, ScorerModel};
use crate::rng;
use crate::scalar::Scalar;
use crate::search::DistanceField;
use crate::synthfeat::FeatureTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSampleConfig {
    /// Target shortest-path length in meters.
    pub d_s_m: f64,
    #[serde(default = "default_per_dest")]
    pub per_dest: usize,
    /// Relative half-width of the accepted band around `d_s_m`.
    #[serde(default = "default_band")]
    pub band_frac: f64,
    #[serde(default)]
    pub seed: u64,
    /// Skip destinations whose band stays empty after widening instead of failing.
    #[serde(default)]
    pub skip_empty: bool,
}

fn default_per_dest() -> usize {
    10
}

fn default_band() -> f64 {
    0.1
}

impl StartSampleConfig {
    pub fn new(d_s_m: f64, seed: u64) -> Self {
        StartSampleConfig { d_s_m, per_dest: 10, band_frac: 0.1, seed, skip_empty: false }
    }

    /// The three target lengths used by default, meters.
    pub const DEFAULT_DS: [f64; 3] = [470.0, 690.0, 970.0];

    pub fn validate(&self) -> Result<()> {
        if !(self.d_s_m > 0.0 && self.d_s_m.is_finite()) {
            return Err(NavError::InvalidConfig(format!("d_s_m must be positive, got {}", self.d_s_m)));
        }
        if self.per_dest < 1 {
            return Err(NavError::InvalidConfig("per_dest must be >= 1".into()));
        }
        if !(self.band_frac >= 0.0 && self.band_frac < 1.0) {
            return Err(NavError::InvalidConfig(format!("band_frac must be in [0,1), got {}", self.band_frac)));
        }
        Ok(())
    }

    /// Accepted distance-field values (in steps) for a band half-width.
    pub fn step_band(&self, bin_size_m: f64, band_frac: f64) -> (f64, f64) {
        (self.d_s_m * (1.0 - band_frac) / bin_size_m, self.d_s_m * (1.0 + band_frac) / bin_size_m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Start {
    pub node: NodeId,
    /// Index of the destination the start was sampled around.
    pub dest: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartSet {
    pub starts: Vec<Start>,
    /// Destinations whose band had to be widened.
    pub widened: Vec<usize>,
    /// Destinations skipped because even the widened band was empty.
    pub skipped: Vec<usize>,
}

/// Samples starts around every destination of `field`: distinct locations
/// whose nearest destination is that one and whose path length falls in the
/// band, each with a random heading among the location's nodes.
pub fn sample_starts(graph: &CityGraph, field: &DistanceField, cfg: &StartSampleConfig) -> Result<StartSet> {
    cfg.validate()?;
    let mut out = StartSet::default();
    let mut empty = Vec::new();
    for (i, _) in field.dests().iter().enumerate() {
        let candidates = |frac: f64| -> Vec<Location> {
            let (lo, hi) = cfg.step_band(graph.bin_size_m(), frac);
            graph
                .populated_locations()
                .iter()
                .copied()
                .filter(|&loc| {
                    field.nearest_at(loc) == Some(i)
                        && field.value_at(loc).is_some_and(|v| (v as f64) >= lo && (v as f64) <= hi)
                })
                .collect()
        };
        let mut pool = candidates(cfg.band_frac);
        if pool.len() < cfg.per_dest {
            pool = candidates(cfg.band_frac * 2.0);
            out.widened.push(i);
        }
        if pool.is_empty() {
            empty.push(i);
            continue;
        }
        let mut rng = rng::seeded(cfg.seed, &[0x7374_6172, i as u64]);
        let take = cfg.per_dest.min(pool.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        for p in picked {
            let nodes: Vec<NodeId> = graph.nodes_at(pool[p]).collect();
            let node = *nodes.choose(&mut rng).expect("populated location");
            out.starts.push(Start { node, dest: i });
        }
    }
    if !empty.is_empty() {
        if !cfg.skip_empty || out.starts.is_empty() {
            return Err(NavError::EmptyBand(empty.iter().map(|&i| field.dests()[i]).collect()));
        }
        out.skipped = empty;
    }
    Ok(out)
}

/// `s * L + (1 - s) * L_max`; `L` is ignored when `s = 0`.
pub fn expected_steps(success_rate: f64, avg_steps: Option<f64>, max_steps: f64) -> f64 {
    match avg_steps {
        Some(l) if success_rate > 0.0 => success_rate * l + (1.0 - success_rate) * max_steps,
        _ => max_steps,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: u64,
    pub successes: u64,
    /// Total steps over successful episodes.
    pub success_steps: u64,
    pub respawns: u64,
    pub max_steps: u32,
    pub success_rate: f64,
    /// Mean steps over successful episodes; absent when none succeeded.
    pub avg_steps: Option<f64>,
    pub expected_steps: f64,
}

impl Metrics {
    pub fn from_counts(episodes: u64, successes: u64, success_steps: u64, respawns: u64, max_steps: u32) -> Self {
        let success_rate = if episodes == 0 { 0.0 } else { successes as f64 / episodes as f64 };
        let avg_steps = (successes > 0).then(|| success_steps as f64 / successes as f64);
        Metrics {
            episodes,
            successes,
            success_steps,
            respawns,
            max_steps,
            success_rate,
            avg_steps,
            expected_steps: expected_steps(success_rate, avg_steps, max_steps as f64),
        }
    }

    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a EpisodeResult>, max_steps: u32) -> Self {
        let (mut n, mut s, mut steps, mut resp) = (0, 0, 0, 0);
        for r in results {
            n += 1;
            resp += r.respawns as u64;
            if r.success {
                s += 1;
                steps += r.steps as u64;
            }
        }
        Metrics::from_counts(n, s, steps, resp, max_steps)
    }

    /// Metrics of the union of the underlying episodes.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Metrics>) -> Option<Metrics> {
        let mut acc: Option<(u64, u64, u64, u64, u32)> = None;
        for m in parts {
            let a = acc.get_or_insert((0, 0, 0, 0, m.max_steps));
            a.0 += m.episodes;
            a.1 += m.successes;
            a.2 += m.success_steps;
            a.3 += m.respawns;
        }
        acc.map(|(n, s, st, r, max)| Metrics::from_counts(n, s, st, r, max))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub start: Start,
    pub trial: u32,
    pub result: EpisodeResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub policy: PolicyKind,
    pub class: String,
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeRecord>,
}

/// Runs `trials` episodes from every start. `jobs = 1` runs serially, `0`
/// uses the global thread pool, anything else a pool of that size. Episode
/// seeds depend only on (policy seed, start, trial), so the result does not
/// depend on `jobs`.
pub fn evaluate<T: Scalar>(nav: &Navigator<'_, T>, starts: &[Start], trials: u32, jobs: usize) -> Result<Evaluation> {
    if starts.is_empty() {
        return Err(NavError::Empty("start list".into()));
    }
    if trials < 1 {
        return Err(NavError::InvalidConfig("trials must be >= 1".into()));
    }
    let work: Vec<(Start, u32)> = starts.iter().flat_map(|&s| (0..trials).map(move |t| (s, t))).collect();
    let run = |&(start, trial): &(Start, u32)| -> Result<EpisodeRecord> {
        Ok(EpisodeRecord { start, trial, result: nav.run(start.node, trial as u64)? })
    };
    let episodes: Vec<EpisodeRecord> = match jobs {
        1 => work.iter().map(run).collect::<Result<_>>()?,
        0 => work.par_iter().map(run).collect::<Result<_>>()?,
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| NavError::InvalidConfig(e.to_string()))?
            .install(|| work.par_iter().map(run).collect::<Result<_>>())?,
    };
    let max_steps = nav.config().max_steps;
    let metrics = Metrics::from_results(episodes.iter().map(|e| &e.result), max_steps);
    Ok(Evaluation { policy: nav.policy().kind(), class: nav.config().dest_class.clone(), metrics, episodes })
}

/// Trajectory export: one record per episode with the visited nodes in bin
/// units and origin-anchored meters.
pub fn trajectory_document(graph: &CityGraph, city: &str, eval: &Evaluation, config_hash: &str) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        format: &'static str,
        version: u32,
        config_hash: &'a str,
        city: &'a str,
        class: &'a str,
        policy: PolicyKind,
        episodes: Vec<Ep>,
    }
    #[derive(Serialize)]
    struct Ep {
        start: [u32; 2],
        start_heading: &'static str,
        trial: u32,
        success: bool,
        steps: u32,
        respawns: u32,
        /// `[x, y, heading, east_m, north_m, step]` where step is "start", an action, or "respawn".
        nodes: Vec<(u32, u32, &'static str, f64, f64, &'static str)>,
    }
    let episodes = eval
        .episodes
        .iter()
        .map(|e| Ep {
            start: [e.start.node.x, e.start.node.y],
            start_heading: e.start.node.heading.as_str(),
            trial: e.trial,
            success: e.result.success,
            steps: e.result.steps,
            respawns: e.result.respawns,
            nodes: e
                .result
                .trajectory
                .iter()
                .map(|s| {
                    let (east, north) = graph.meters(s.node.location());
                    let kind = match s.kind {
                        StepKind::Start => "start",
                        StepKind::Move(a) => a.as_str(),
                        StepKind::Respawn => "respawn",
                    };
                    (s.node.x, s.node.y, s.node.heading.as_str(), east, north, kind)
                })
                .collect(),
        })
        .collect();
    artifact::to_pretty_json(&Doc {
        format: "citynav-trajectories",
        version: 1,
        config_hash,
        city,
        class: &eval.class,
        policy: eval.policy,
        episodes,
    })
}

/// Per-location spread of a model's class scores across the location's headings.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap<T> {
    pub class: usize,
    pub head: Head,
    /// (location, population variance) in location order.
    pub cells: Vec<(Location, T)>,
}

impl<T: Scalar> ConfidenceMap<T> {
    pub fn variance_at(&self, loc: Location) -> Option<T> {
        self.cells.binary_search_by(|(l, _)| l.cmp(&loc)).ok().map(|i| self.cells[i].1)
    }

    pub fn to_document(&self, graph: &CityGraph, class_name: &str, config_hash: &str) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format: &'static str,
            version: u32,
            config_hash: &'a str,
            class: &'a str,
            head: Head,
            /// `[x, y, east_m, north_m, lat, lon, variance]`
            cells: Vec<[f64; 7]>,
        }
        let cells = self
            .cells
            .iter()
            .map(|&(loc, v)| {
                let (e, n) = graph.meters(loc);
                let (lat, lon) = graph.lat_lon(loc);
                [loc.x as f64, loc.y as f64, e, n, lat, lon, v.as_f64()]
            })
            .collect();
        artifact::to_pretty_json(&Doc {
            format: "citynav-confidence",
            version: 1,
            config_hash,
            class: class_name,
            head: self.head,
            cells,
        })
    }
}

/// Score a model assigns to the node facing one direction: the pair score,
/// the negated predicted distance, or the node's best action score.
pub fn heading_scores<T: Scalar>(
    model: &ScorerModel<T>,
    graph: &CityGraph,
    features: &FeatureTable<T>,
    class: usize,
) -> Result<Vec<T>> {
    let raw = crate::agent::node_scores(model, graph, features, class)?;
    Ok(match model.head() {
        Head::Pair => raw,
        Head::Distance => raw.into_iter().map(|v| -v).collect(),
        Head::Direction => raw.chunks(4).map(|c| c.iter().copied().fold(T::neg_infinity(), T::max)).collect(),
    })
}

pub fn confidence_map<T: Scalar>(
    model: &ScorerModel<T>,
    graph: &CityGraph,
    features: &FeatureTable<T>,
    class: usize,
) -> Result<ConfidenceMap<T>> {
    let scores = heading_scores(model, graph, features, class)?;
    let cells = graph
        .populated_locations()
        .iter()
        .map(|&loc| {
            let vals: Vec<T> = graph.nodes_at(loc).map(|n| scores[graph.node_index(n)]).collect();
            (loc, population_variance(&vals))
        })
        .collect();
    Ok(ConfidenceMap { class, head: model.head(), cells })
}

fn population_variance<T: Scalar>(vals: &[T]) -> T {
    let n = T::lit(vals.len() as f64);
    let mean = vals.iter().copied().sum::<T>() / n;
    vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n
}

/// One evaluated (city, class, policy, d_s) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub city: String,
    pub class: String,
    pub policy: PolicyKind,
    pub d_s_m: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn push(&mut self, city: &str, d_s_m: f64, eval: &Evaluation) {
        self.rows.push(MetricsRow {
            city: city.to_string(),
            class: eval.class.clone(),
            policy: eval.policy,
            d_s_m,
            metrics: eval.metrics,
        });
    }

    pub fn get(&self, city: &str, class: &str, policy: PolicyKind, d_s_m: f64) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.city == city && r.class == class && r.policy == policy && r.d_s_m == d_s_m)
            .map(|r| &r.metrics)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableKind {
    ExpectedSteps,
    /// Percent.
    SuccessRate,
    AvgSteps,
}

impl TableKind {
    pub const ALL: [TableKind; 3] = [TableKind::ExpectedSteps, TableKind::SuccessRate, TableKind::AvgSteps];

    pub fn file_stem(self) -> &'static str {
        match self {
            TableKind::ExpectedSteps => "expected_steps",
            TableKind::SuccessRate => "success_rate",
            TableKind::AvgSteps => "avg_steps",
        }
    }

    fn cell(self, m: &Metrics) -> Option<f64> {
        match self {
            TableKind::ExpectedSteps => Some(m.expected_steps),
            TableKind::SuccessRate => Some(m.success_rate * 100.0),
            TableKind::AvgSteps => m.avg_steps,
        }
    }
}

/// Row label for the unweighted mean over cities.
pub const MEAN_ROW: &str = "mean";
/// Row label for the metrics of all cities' episodes pooled together.
pub const POOLED_ROW: &str = "pooled";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub d_s_m: f64,
    pub policy: String,
    pub city: String,
    pub values: Vec<Option<f64>>,
    /// Unweighted mean of the defined class values.
    pub mean: Option<f64>,
}

/// A metric laid out as (d_s, policy, city) rows by class columns plus a mean column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub classes: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn mean_of(vals: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = vals.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

impl ReportTable {
    pub fn to_csv(&self, config_hash: &str) -> Result<String> {
        let mut buf = artifact::hash_comment(config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["d_s_m".to_string(), "policy".into(), "city".into()];
            header.extend(self.classes.iter().cloned());
            header.push("mean".into());
            w.write_record(&header)?;
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in &self.rows {
                let mut rec = vec![r.d_s_m.to_string(), r.policy.clone(), r.city.clone()];
                rec.extend(r.values.iter().map(|&v| fmt(v)));
                rec.push(fmt(r.mean));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| NavError::io("<memory>", e))?;
        }
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<(Self, String)> {
        let (hash, body) = artifact::split_hash_comment(text)?;
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let header = reader.headers()?.clone();
        if header.len() < 4 || &header[0] != "d_s_m" || &header[header.len() - 1] != "mean" {
            return Err(NavError::malformed("report table", "unexpected header"));
        }
        let classes: Vec<String> = header.iter().skip(3).take(header.len() - 4).map(str::to_string).collect();
        let num = |s: &str| -> Result<Option<f64>> {
            match s.trim() {
                "" => Ok(None),
                t => t.parse().map(Some).map_err(|e| NavError::malformed("report table", e)),
            }
        };
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let values = (0..classes.len()).map(|i| num(&rec[3 + i])).collect::<Result<Vec<_>>>()?;
            rows.push(TableRow {
                d_s_m: num(&rec[0])?.ok_or_else(|| NavError::malformed("report table", "missing d_s_m"))?,
                policy: rec[1].to_string(),
                city: rec[2].to_string(),
                values,
                mean: num(&rec[rec.len() - 1])?,
            });
        }
        Ok((ReportTable { classes, rows }, hash))
    }
}

fn first_seen<K: Clone + PartialEq>(items: impl Iterator<Item = K>) -> Vec<K> {
    let mut out: Vec<K> = Vec::new();
    for k in items {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Lays out one metric of a report. Rows run over d_s (ascending), policies
/// (in [`PolicyKind::ALL`] order) and cities (first-seen order), followed per
/// (d_s, policy) by a `mean` row (unweighted over cities) and a `pooled` row.
pub fn report_table(report: &MetricsReport, kind: TableKind) -> Result<ReportTable> {
    if report.rows.is_empty() {
        return Err(NavError::Empty("metrics report".into()));
    }
    let classes: Vec<String> = first_seen(report.rows.iter().map(|r| r.class.clone()));
    let cities: Vec<String> = first_seen(report.rows.iter().map(|r| r.city.clone()));
    let mut ds: Vec<f64> = first_seen(report.rows.iter().map(|r| r.d_s_m));
    ds.sort_by(f64::total_cmp);
    let mut policies: Vec<PolicyKind> = first_seen(report.rows.iter().map(|r| r.policy));
    policies.sort();

    let mut index: BTreeMap<(u64, PolicyKind, &str, &str), &Metrics> = BTreeMap::new();
    for r in &report.rows {
        index.insert((r.d_s_m.to_bits(), r.policy, r.city.as_str(), r.class.as_str()), &r.metrics);
    }

    let mut rows = Vec::new();
    for &d in &ds {
        for &p in &policies {
            let present: Vec<&String> =
                cities.iter().filter(|c| classes.iter().any(|k| index.contains_key(&(d.to_bits(), p, c, k)))).collect();
            if present.is_empty() {
                continue;
            }
            let mut city_rows = Vec::new();
            for city in &present {
                let values: Vec<Option<f64>> = classes
                    .iter()
                    .map(|k| index.get(&(d.to_bits(), p, city.as_str(), k.as_str())).and_then(|m| kind.cell(m)))
                    .collect();
                city_rows.push(TableRow { d_s_m: d, policy: p.to_string(), city: city.to_string(), mean: mean_of(&values), values });
            }
            let mean_values: Vec<Option<f64>> = (0..classes.len())
                .map(|k| mean_of(&city_rows.iter().map(|r| r.values[k]).collect::<Vec<_>>()))
                .collect();
            let pooled_values: Vec<Option<f64>> = classes
                .iter()
                .map(|k| {
                    let parts = present.iter().filter_map(|c| index.get(&(d.to_bits(), p, c.as_str(), k.as_str())).copied());
                    Metrics::pooled(parts).and_then(|m| kind.cell(&m))
                })
                .collect();
            rows.extend(city_rows);
            rows.push(TableRow {
                d_s_m: d,
                policy: p.to_string(),
                city: MEAN_ROW.into(),
                mean: mean_of(&mean_values),
                values: mean_values,
            });
            rows.push(TableRow {
                d_s_m: d,
                policy: p.to_string(),
                city: POOLED_ROW.into(),
                mean: mean_of(&pooled_values),
                values: pooled_values,
            });
        }
    }
    Ok(ReportTable { classes, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    pub expected_steps: ReportTable,
    pub success_rate: ReportTable,
    pub avg_steps: ReportTable,
}

impl ReportTables {
    pub fn get(&self, kind: TableKind) -> &ReportTable {
        match kind {
            TableKind::ExpectedSteps => &self.expected_steps,
            TableKind::SuccessRate => &self.success_rate,
            TableKind::AvgSteps => &self.avg_steps,
        }
    }
}

pub fn report_tables(report: &MetricsReport) -> Result<ReportTables> {
    Ok(ReportTables {
        expected_steps: report_table(report, TableKind::ExpectedSteps)?,
        success_rate: report_table(report, TableKind::SuccessRate)?,
        avg_steps: report_table(report, TableKind::AvgSteps)?,
    })
}

/// Machine-readable report: raw rows plus the three tables.
pub fn report_document(report: &MetricsReport, tables: &ReportTables, config_hash: &str) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        format: &'static str,
        version: u32,
        config_hash: &'a str,
        rows: &'a [MetricsRow],
        tables: &'a ReportTables,
    }
    artifact::to_pretty_json(&Doc { format: "citynav-report", version: 1, config_hash, rows: &report.rows, tables })
}

pub fn parse_report_document(text: &str) -> Result<(MetricsReport, ReportTables, String)> {
    #[derive(Deserialize)]
    struct Doc {
        format: String,
        config_hash: String,
        rows: Vec<MetricsRow>,
        tables: ReportTables,
    }
    let doc: Doc = serde_json::from_str(text)?;
    if doc.format != "citynav-report" {
        return Err(NavError::malformed("report", format!("unexpected format {}", doc.format)));
    }
    Ok((MetricsReport { rows: doc.rows }, doc.tables, doc.config_hash))
}
