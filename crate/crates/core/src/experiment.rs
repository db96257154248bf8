//! End-to-end pipeline driven by one TOML config, with persisted,
//! hash-stamped artifacts so interrupted runs resume where they stopped.
//!
//! Layout under the output directory:
//!
//! ```text
//! cities/<role>-<seed>/graph.json
//! cities/<role>-<seed>/destinations.json
//! cities/<role>-<seed>/labels_{distance,direction,pair}.csv   (training cities)
//! cities/<role>-<seed>/features.bin, features.index.csv
//! models/<head>.json, models/<head>.report.json
//! eval/test-<seed>.json
//! report/{expected_steps,success_rate,avg_steps}.csv, report/report.json
//! ```
//!
//! Every artifact carries the hash of the configuration that produced it,
//! chained through its inputs. An existing artifact with the expected hash is
//! reused; one with a different hash is an error.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{audit_episode, EpisodeConfig, Navigator, Policy, PolicyKind, ProtocolAudit};
use crate::artifact::{self, chained_hash, config_hash};
use crate::citygraph::{build_city, place_destinations, CityGraph, DestinationSet, GridSpec, DEFAULT_CLASSES};
use crate::error::{NavError, Result};
use crate::evalharness::{
    evaluate, report_document, report_tables, sample_starts, MetricsReport, MetricsRow, ReportTables, StartSampleConfig,
    TableKind,
};
use crate::labeling::{DirectionLabelTable, DistanceLabelTable, LabelSet, PairLabelTable};
use crate::learner::{train, Head, ScorerModel, TrainConfig, TrainReport, TrainingCity};
use crate::rng::derive_seed;
use crate::search::{distance_field, DistanceField};
use crate::synthfeat::{gen_features, FeatureSpec, FeatureTable};

/// Lattice parameters shared by every city; the seed comes from the seed lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTemplate {
    pub width_bins: u32,
    pub height_bins: u32,
    #[serde(default = "default_bin")]
    pub bin_size_m: f64,
    pub road_density: f64,
    pub one_way_fraction: f64,
}

fn default_bin() -> f64 {
    crate::citygraph::DEFAULT_BIN_SIZE_M
}

impl GridTemplate {
    pub fn spec(&self, seed: u64) -> GridSpec {
        GridSpec {
            width_bins: self.width_bins,
            height_bins: self.height_bins,
            bin_size_m: self.bin_size_m,
            road_density: self.road_density,
            one_way_fraction: self.one_way_fraction,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DestinationConfig {
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    pub per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> Vec<String> {
    DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// Optional per-head overrides of [`TrainConfig::for_head`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<u32>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    pub lr_drop_epochs: Option<Vec<u32>>,
    pub lr_drop_factor: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lambda_geo: Option<f64>,
    pub seed: Option<u64>,
}

impl TrainOverrides {
    pub fn resolve(&self, head: Head) -> TrainConfig {
        let mut c = TrainConfig::for_head(head);
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        take!(epochs, batch_size, lr0, lr_drop_epochs, lr_drop_factor, momentum, weight_decay, lambda_geo, seed);
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub distance: TrainOverrides,
    pub direction: TrainOverrides,
    pub pair: TrainOverrides,
}

impl TrainSection {
    pub fn resolve(&self, head: Head) -> TrainConfig {
        match head {
            Head::Distance => self.distance.resolve(head),
            Head::Direction => self.direction.resolve(head),
            Head::Pair => self.pair.resolve(head),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    #[serde(default = "default_ds")]
    pub d_s_m: Vec<f64>,
    #[serde(default = "default_per_dest")]
    pub per_dest: usize,
    #[serde(default = "default_band")]
    pub band_frac: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub skip_empty: bool,
}

fn default_ds() -> Vec<f64> {
    StartSampleConfig::DEFAULT_DS.to_vec()
}

fn default_per_dest() -> usize {
    10
}

fn default_band() -> f64 {
    0.1
}

impl Default for StartSection {
    fn default() -> Self {
        StartSection { d_s_m: default_ds(), per_dest: 10, band_frac: 0.1, seed: 0, skip_empty: false }
    }
}

impl StartSection {
    /// Sampling config for one (city, class, d_s) cell.
    pub fn config_for(&self, city_seed: u64, class: usize, d_s_m: f64) -> StartSampleConfig {
        StartSampleConfig {
            d_s_m,
            per_dest: self.per_dest,
            band_frac: self.band_frac,
            seed: derive_seed(self.seed, &[city_seed, class as u64, d_s_m.to_bits()]),
            skip_empty: self.skip_empty,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_radius")]
    pub success_radius_m: f64,
    /// Trials per start for the learned and oracle policies.
    #[serde(default = "one")]
    pub trials: u32,
    #[serde(default = "twenty")]
    pub random_walk_trials: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

fn default_max_steps() -> u32 {
    1000
}

fn default_radius() -> f64 {
    75.0
}

fn one() -> u32 {
    1
}

fn twenty() -> u32 {
    20
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            policies: default_policies(),
            max_steps: 1000,
            success_radius_m: 75.0,
            trials: 1,
            random_walk_trials: 20,
            seed: 0,
        }
    }
}

impl EvaluationSection {
    pub fn episode(&self, class: &str) -> EpisodeConfig {
        EpisodeConfig { max_steps: self.max_steps, success_radius_m: self.success_radius_m, dest_class: class.into() }
    }

    pub fn trials_for(&self, kind: PolicyKind) -> u32 {
        if kind == PolicyKind::RandomWalk {
            self.random_walk_trials
        } else {
            self.trials
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub train_seeds: Vec<u64>,
    pub test_seeds: Vec<u64>,
    pub grid: GridTemplate,
    pub destinations: DestinationConfig,
    pub features: FeatureSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub starts: StartSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// The built-in desk-scale configuration (also shipped as `configs/desk.toml`).
pub const DESK_CONFIG: &str = include_str!("../../../configs/desk.toml");

impl ExperimentConfig {
    pub fn desk() -> Self {
        ExperimentConfig::from_toml(DESK_CONFIG).expect("built-in config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| NavError::malformed("experiment config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_toml(&artifact::read_text(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NavError::malformed("experiment config", e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NavError::InvalidConfig(m));
        if self.train_seeds.is_empty() || self.test_seeds.is_empty() {
            return bad("train_seeds and test_seeds must be nonempty".into());
        }
        if let Some(s) = self.train_seeds.iter().find(|s| self.test_seeds.contains(s)) {
            return bad(format!("seed {s} is both a training and a test seed"));
        }
        for seeds in [&self.train_seeds, &self.test_seeds] {
            let mut sorted = seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != seeds.len() {
                return bad("duplicate city seed".into());
            }
        }
        self.grid.spec(0).validate()?;
        if self.destinations.classes.is_empty() || self.destinations.per_class < 1 {
            return bad("need at least one destination class and per_class >= 1".into());
        }
        self.features.validate(self.destinations.classes.len())?;
        for head in Head::ALL {
            self.train.resolve(head).validate()?;
        }
        if self.starts.d_s_m.is_empty() {
            return bad("starts.d_s_m must list at least one length".into());
        }
        for &d in &self.starts.d_s_m {
            self.starts.config_for(0, 0, d).validate()?;
        }
        if self.evaluation.policies.is_empty() {
            return bad("evaluation.policies is empty".into());
        }
        if self.evaluation.trials < 1 || self.evaluation.random_walk_trials < 1 {
            return bad("trials must be >= 1".into());
        }
        self.evaluation.episode("x").validate()
    }

    pub fn class_names(&self) -> &[String] {
        &self.destinations.classes
    }

    /// Feature spec for one city: the configured spec with a per-city seed.
    pub fn feature_spec(&self, city_seed: u64) -> FeatureSpec {
        FeatureSpec { seed: derive_seed(self.features.seed, &[city_seed]), ..self.features.clone() }
    }

    pub fn destination_seed(&self, city_seed: u64) -> u64 {
        derive_seed(self.destinations.seed, &[city_seed])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

pub fn city_name(role: Role, seed: u64) -> String {
    format!("{}-{seed}", role.as_str())
}

/// Everything persisted for one city.
pub struct CityArtifacts {
    pub name: String,
    pub seed: u64,
    pub graph: CityGraph,
    pub dests: DestinationSet,
    pub features: FeatureTable<f64>,
    pub labels: Option<LabelSet<f64>>,
    pub graph_hash: String,
    pub dest_hash: String,
    pub feature_hash: String,
    pub label_hash: Option<String>,
}

impl CityArtifacts {
    pub fn fields(&self) -> Result<Vec<DistanceField>> {
        (0..self.dests.class_count()).map(|c| distance_field(&self.graph, self.dests.locations(c))).collect()
    }
}

pub fn graph_hash(spec: &GridSpec) -> String {
    config_hash(&("graph", spec))
}

pub fn dest_hash(graph_hash: &str, classes: &[String], per_class: usize, seed: u64) -> String {
    chained_hash(&[graph_hash], &("destinations", classes, per_class, seed))
}

pub fn label_hash(dest_hash: &str) -> String {
    chained_hash(&[dest_hash], &"labels")
}

pub fn feature_hash(dest_hash: &str, spec: &FeatureSpec) -> String {
    chained_hash(&[dest_hash], &("features", spec))
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(NavError::HashMismatch { path: path.to_path_buf(), found: found.into(), expected: expected.into() });
    }
    Ok(())
}

/// Reads an artifact if present and current, otherwise builds and writes it.
fn cached<V>(
    path: &Path,
    expected: &str,
    load: impl FnOnce(&Path) -> Result<(V, String)>,
    build: impl FnOnce() -> Result<V>,
    save: impl FnOnce(&V, &Path) -> Result<()>,
) -> Result<(V, bool)> {
    if path.exists() {
        let (v, found) = load(path)?;
        check_hash(path, &found, expected)?;
        return Ok((v, true));
    }
    let v = build()?;
    save(&v, path)?;
    Ok((v, false))
}

pub type Logger<'a> = &'a (dyn Fn(&str) + Sync);

/// Resumable stage runner over one output directory.
pub struct Pipeline<'a> {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub jobs: usize,
    log: Logger<'a>,
}

fn quiet(_: &str) {}

impl<'a> Pipeline<'a> {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        Pipeline { config, out: out.into(), jobs: 0, log: &quiet }
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs;
        self
    }

    pub fn with_logger(mut self, log: Logger<'a>) -> Self {
        self.log = log;
        self
    }

    pub fn city_dir(&self, role: Role, seed: u64) -> PathBuf {
        self.out.join("cities").join(city_name(role, seed))
    }

    pub fn model_path(&self, head: Head) -> PathBuf {
        self.out.join("models").join(format!("{head}.json"))
    }

    pub fn eval_path(&self, seed: u64) -> PathBuf {
        self.out.join("eval").join(format!("{}.json", city_name(Role::Test, seed)))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    fn note(&self, reused: bool, what: &str) {
        (self.log)(&format!("{} {what}", if reused { "reuse" } else { "built" }));
    }

    /// Graph, destinations, features and (for training cities) labels of one city.
    pub fn city(&self, role: Role, seed: u64) -> Result<CityArtifacts> {
        let cfg = &self.config;
        let dir = self.city_dir(role, seed);
        let name = city_name(role, seed);
        let spec = cfg.grid.spec(seed);
        let g_hash = graph_hash(&spec);
        let (graph, reused) = cached(
            &dir.join("graph.json"),
            &g_hash,
            |p| CityGraph::from_document(&artifact::read_text(p)?),
            || build_city(&spec),
            |g, p| artifact::write_text(p, &g.to_document(&g_hash)),
        )?;
        self.note(reused, &format!("{name} graph ({} nodes)", graph.node_count()));

        let classes = cfg.class_names().to_vec();
        let d_seed = cfg.destination_seed(seed);
        let d_hash = dest_hash(&g_hash, &classes, cfg.destinations.per_class, d_seed);
        let (dests, reused) = cached(
            &dir.join("destinations.json"),
            &d_hash,
            |p| DestinationSet::from_document(&graph, &artifact::read_text(p)?),
            || place_destinations(&graph, &classes, cfg.destinations.per_class, d_seed),
            |d, p| artifact::write_text(p, &d.to_document(&d_hash)),
        )?;
        self.note(reused, &format!("{name} destinations"));

        let fspec = cfg.feature_spec(seed);
        let f_hash = feature_hash(&d_hash, &fspec);
        let index_path = dir.join("features.index.csv");
        let (features, reused) = cached(
            &dir.join("features.bin"),
            &f_hash,
            |p| FeatureTable::from_bytes(&graph, &artifact::read_bytes(p)?, &artifact::read_text(&index_path)?),
            || gen_features(&graph, &dests, &fspec),
            |f, p| {
                artifact::write_text(&index_path, &f.sidecar_csv(&f_hash))?;
                artifact::write_bytes(p, &f.to_bytes(&f_hash))
            },
        )?;
        self.note(reused, &format!("{name} features"));

        let (labels, l_hash) = if role == Role::Train {
            let l_hash = label_hash(&d_hash);
            let labels = self.labels(&dir, &graph, &dests, &l_hash)?;
            (Some(labels), Some(l_hash))
        } else {
            (None, None)
        };
        Ok(CityArtifacts {
            name,
            seed,
            graph,
            dests,
            features,
            labels,
            graph_hash: g_hash,
            dest_hash: d_hash,
            feature_hash: f_hash,
            label_hash: l_hash,
        })
    }

    fn labels(&self, dir: &Path, graph: &CityGraph, dests: &DestinationSet, hash: &str) -> Result<LabelSet<f64>> {
        let names = dests.classes();
        let paths = [dir.join("labels_distance.csv"), dir.join("labels_direction.csv"), dir.join("labels_pair.csv")];
        if paths.iter().all(|p| p.exists()) {
            let (distance, h1) = DistanceLabelTable::from_csv(graph, names, &artifact::read_text(&paths[0])?)?;
            check_hash(&paths[0], &h1, hash)?;
            let (direction, h2) = DirectionLabelTable::from_csv(graph, names, &artifact::read_text(&paths[1])?)?;
            check_hash(&paths[1], &h2, hash)?;
            let (pairs, h3) = PairLabelTable::from_csv(names, &artifact::read_text(&paths[2])?)?;
            check_hash(&paths[2], &h3, hash)?;
            self.note(true, "labels");
            return Ok(LabelSet { distance, direction, pairs });
        }
        let labels = LabelSet::generate(graph, dests)?;
        write_labels(&labels, graph, names, hash, dir)?;
        self.note(false, "labels");
        Ok(labels)
    }

    /// Loads every training city and fits one head.
    pub fn train_head(&self, head: Head, cities: &[CityArtifacts]) -> Result<(ScorerModel<f64>, String)> {
        let tcfg = self.config.train.resolve(head);
        let upstream: Vec<&str> = cities
            .iter()
            .flat_map(|c| [c.feature_hash.as_str(), c.label_hash.as_deref().unwrap_or("")])
            .collect();
        let m_hash = chained_hash(&upstream, &("model", head, &tcfg));
        let path = self.model_path(head);
        let report_path = self.out.join("models").join(format!("{head}.report.json"));
        let (model, reused) = cached(
            &path,
            &m_hash,
            |p| ScorerModel::from_document(&artifact::read_text(p)?),
            || {
                let fields: Vec<Vec<DistanceField>> = cities.iter().map(|c| c.fields()).collect::<Result<_>>()?;
                let inputs: Vec<TrainingCity<'_, f64>> = cities
                    .iter()
                    .zip(&fields)
                    .map(|(c, f)| {
                        let labels = c.labels.as_ref().ok_or_else(|| NavError::Empty(format!("{} has no labels", c.name)))?;
                        Ok(TrainingCity { graph: &c.graph, features: &c.features, labels, fields: f })
                    })
                    .collect::<Result<_>>()?;
                let (model, report) = train(head, &inputs, &tcfg, &upstream.join("+"))?;
                write_train_report(&report_path, &report, &m_hash)?;
                Ok(model)
            },
            |m, p| artifact::write_text(p, &m.to_document(&m_hash)?),
        )?;
        self.note(reused, &format!("{head} model"));
        Ok((model, m_hash))
    }

    /// Evaluates every configured policy on one test city.
    pub fn evaluate_city(&self, city: &CityArtifacts, models: &[(ScorerModel<f64>, String)]) -> Result<CityEvaluation> {
        let cfg = &self.config;
        let mut upstream: Vec<&str> = vec![city.feature_hash.as_str()];
        upstream.extend(models.iter().map(|(_, h)| h.as_str()));
        let e_hash = chained_hash(&upstream, &("evaluation", &cfg.starts, &cfg.evaluation));
        let path = self.eval_path(city.seed);
        let (eval, reused) = cached(
            &path,
            &e_hash,
            |p| {
                let doc: CityEvaluation = serde_json::from_str(&artifact::read_text(p)?)?;
                let h = doc.config_hash.clone();
                Ok((doc, h))
            },
            || self.run_city_evaluation(city, models, &e_hash),
            |e, p| artifact::write_text(p, &artifact::to_pretty_json(e)?),
        )?;
        self.note(reused, &format!("{} evaluation", city.name));
        Ok(eval)
    }

    fn run_city_evaluation(
        &self,
        city: &CityArtifacts,
        models: &[(ScorerModel<f64>, String)],
        hash: &str,
    ) -> Result<CityEvaluation> {
        let cfg = &self.config;
        let ev = &cfg.evaluation;
        let mut policies = Vec::new();
        for &kind in &ev.policies {
            let policy = match kind.head() {
                None if kind == PolicyKind::RandomWalk => Policy::random_walk(derive_seed(ev.seed, &[city.seed])),
                None => Policy::astar_oracle(),
                Some(head) => {
                    let (model, _) = models
                        .iter()
                        .find(|(m, _)| m.head() == head)
                        .ok_or_else(|| NavError::InvalidConfig(format!("no {head} model for {kind}")))?;
                    Policy::learned(kind, model.clone())?
                }
            };
            policies.push(policy);
        }
        let mut out = CityEvaluation { config_hash: hash.into(), city: city.name.clone(), ..Default::default() };
        for (c, class) in city.dests.classes().iter().enumerate() {
            let field = distance_field(&city.graph, city.dests.locations(c))?;
            let episode = ev.episode(class);
            let mut start_sets = Vec::new();
            for &d_s in &cfg.starts.d_s_m {
                let set = sample_starts(&city.graph, &field, &cfg.starts.config_for(city.seed, c, d_s))?;
                out.starts += set.starts.len() as u64;
                out.skipped_destinations += set.skipped.len() as u64;
                out.widened_destinations += set.widened.len() as u64;
                start_sets.push((d_s, set));
            }
            for policy in &policies {
                let nav = Navigator::new(policy, &city.graph, &city.dests, Some(&city.features), &episode)?;
                for (d_s, set) in &start_sets {
                    let eval = evaluate(&nav, &set.starts, ev.trials_for(policy.kind()), self.jobs)?;
                    for ep in &eval.episodes {
                        out.audit.merge(&audit_episode(&city.graph, &ep.result, ev.max_steps));
                        out.degenerate_episodes += ep.result.degenerate as u64;
                        if policy.kind() == PolicyKind::AstarOracle {
                            let bound = field.value(ep.start.node).unwrap_or(0);
                            if !ep.result.success || ep.result.steps > bound {
                                out.oracle_violations += 1;
                            }
                        }
                    }
                    out.rows.push(MetricsRow {
                        city: city.name.clone(),
                        class: class.clone(),
                        policy: policy.kind(),
                        d_s_m: *d_s,
                        metrics: eval.metrics,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Runs every stage and writes the report.
    pub fn run(&self) -> Result<ExperimentSummary> {
        let cfg = &self.config;
        artifact::write_text(&self.out.join("config.toml"), &cfg.to_toml()?)?;
        let train_cities: Vec<CityArtifacts> =
            cfg.train_seeds.iter().map(|&s| self.city(Role::Train, s)).collect::<Result<_>>()?;
        let needed: Vec<Head> = Head::ALL.into_iter().filter(|h| cfg.evaluation.policies.iter().any(|p| p.head() == Some(*h))).collect();
        let mut models = Vec::new();
        let mut train_reports = Vec::new();
        for head in needed {
            let m = self.train_head(head, &train_cities)?;
            let rp = self.out.join("models").join(format!("{head}.report.json"));
            if rp.exists() {
                let doc: TrainReportDoc = serde_json::from_str(&artifact::read_text(&rp)?)?;
                train_reports.push(doc.report);
            }
            models.push(m);
        }
        drop(train_cities);

        let mut evals = Vec::new();
        for &seed in &cfg.test_seeds {
            let city = self.city(Role::Test, seed)?;
            evals.push(self.evaluate_city(&city, &models)?);
        }
        let summary = ExperimentSummary::from_evaluations(evals, train_reports)?;
        let r_hash = chained_hash(&summary.evaluations.iter().map(|e| e.config_hash.as_str()).collect::<Vec<_>>(), &"report");
        write_report(&self.report_dir(), &summary, &r_hash)?;
        (self.log)(&format!("report written to {}", self.report_dir().display()));
        Ok(summary)
    }
}

pub fn write_labels(labels: &LabelSet<f64>, graph: &CityGraph, names: &[String], hash: &str, dir: &Path) -> Result<()> {
    artifact::write_text(&dir.join("labels_distance.csv"), &labels.distance.to_csv(graph, names, hash)?)?;
    artifact::write_text(&dir.join("labels_direction.csv"), &labels.direction.to_csv(graph, names, hash)?)?;
    artifact::write_text(&dir.join("labels_pair.csv"), &labels.pairs.to_csv(names, hash)?)
}

#[derive(Serialize, Deserialize)]
struct TrainReportDoc {
    config_hash: String,
    report: TrainReport,
}

fn write_train_report(path: &Path, report: &TrainReport, hash: &str) -> Result<()> {
    artifact::write_text(path, &artifact::to_pretty_json(&TrainReportDoc { config_hash: hash.into(), report: report.clone() })?)
}

/// Stored result of evaluating one test city.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CityEvaluation {
    pub config_hash: String,
    pub city: String,
    pub rows: Vec<MetricsRow>,
    pub audit: ProtocolAudit,
    pub starts: u64,
    pub skipped_destinations: u64,
    pub widened_destinations: u64,
    pub degenerate_episodes: u64,
    /// Oracle episodes that failed or took more steps than the start's distance field.
    pub oracle_violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub report: MetricsReport,
    pub tables: ReportTables,
    pub evaluations: Vec<CityEvaluation>,
    pub train_reports: Vec<TrainReport>,
}

impl ExperimentSummary {
    pub fn from_evaluations(evaluations: Vec<CityEvaluation>, train_reports: Vec<TrainReport>) -> Result<Self> {
        let report = MetricsReport { rows: evaluations.iter().flat_map(|e| e.rows.iter().cloned()).collect() };
        let tables = report_tables(&report)?;
        Ok(ExperimentSummary { report, tables, evaluations, train_reports })
    }

    pub fn audit(&self) -> ProtocolAudit {
        let mut a = ProtocolAudit::default();
        for e in &self.evaluations {
            a.merge(&e.audit);
        }
        a
    }
}

pub fn write_report(dir: &Path, summary: &ExperimentSummary, hash: &str) -> Result<()> {
    for kind in TableKind::ALL {
        artifact::write_text(&dir.join(format!("{}.csv", kind.file_stem())), &summary.tables.get(kind).to_csv(hash)?)?;
    }
    artifact::write_text(&dir.join("report.json"), &report_document(&summary.report, &summary.tables, hash)?)?;
    #[derive(Serialize)]
    struct Protocol<'a> {
        config_hash: &'a str,
        audit: ProtocolAudit,
        cities: Vec<ProtocolCity<'a>>,
    }
    #[derive(Serialize)]
    struct ProtocolCity<'a> {
        city: &'a str,
        starts: u64,
        skipped_destinations: u64,
        widened_destinations: u64,
        degenerate_episodes: u64,
        oracle_violations: u64,
    }
    let doc = Protocol {
        config_hash: hash,
        audit: summary.audit(),
        cities: summary
            .evaluations
            .iter()
            .map(|e| ProtocolCity {
                city: &e.city,
                starts: e.starts,
                skipped_destinations: e.skipped_destinations,
                widened_destinations: e.widened_destinations,
                degenerate_episodes: e.degenerate_episodes,
                oracle_violations: e.oracle_violations,
            })
            .collect(),
    };
    artifact::write_text(&dir.join("protocol.json"), &artifact::to_pretty_json(&doc)?)
}

/// Loads the per-city evaluation files of a finished (or partial) run.
pub fn load_evaluations(out: &Path, config: &ExperimentConfig) -> Result<Vec<CityEvaluation>> {
    let p = Pipeline::new(config.clone(), out);
    config
        .test_seeds
        .iter()
        .map(|&s| {
            let path = p.eval_path(s);
            Ok(serde_json::from_str(&artifact::read_text(&path)?)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
name = "tiny"
train_seeds = [1, 2]
test_seeds = [3]

[grid]
width_bins = 16
height_bins = 16
road_density = 0.6
one_way_fraction = 0.1

[destinations]
per_class = 2
seed = 4

[features]
dims = 10
beta = 0.9
seed = 5

[train.distance]
epochs = 2
[train.direction]
epochs = 2
[train.pair]
epochs = 2

[starts]
d_s_m = [150.0]
per_dest = 3
skip_empty = true

[evaluation]
random_walk_trials = 2
max_steps = 200
"#,
        )
        .unwrap()
    }

    #[test]
    fn desk_config_is_valid() {
        let c = ExperimentConfig::desk();
        assert_eq!(c.train_seeds.len(), 6);
        assert_eq!(c.test_seeds.len(), 4);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn overlapping_seeds_are_rejected() {
        let mut c = tiny();
        c.test_seeds = vec![2];
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("name = 1").is_err());
    }

    #[test]
    fn overrides_fall_back_to_head_defaults() {
        let c = tiny();
        let d = c.train.resolve(Head::Distance);
        assert_eq!(d.epochs, 2);
        assert_eq!(d.lr0, 1e-4);
        assert_eq!(c.train.resolve(Head::Pair).lambda_geo, 0.9);
    }

    #[test]
    fn pipeline_resumes_and_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let a = Pipeline::new(tiny(), dir.path().join("a")).with_jobs(1).run().unwrap();
        let report = std::fs::read(dir.path().join("a/report/report.json")).unwrap();
        // Second run reuses every artifact and writes the same bytes.
        let again = Pipeline::new(tiny(), dir.path().join("a")).with_jobs(2).run().unwrap();
        assert_eq!(a, again);
        assert_eq!(report, std::fs::read(dir.path().join("a/report/report.json")).unwrap());
        // A fresh directory reproduces the report byte for byte.
        Pipeline::new(tiny(), dir.path().join("b")).with_jobs(3).run().unwrap();
        assert_eq!(report, std::fs::read(dir.path().join("b/report/report.json")).unwrap());
        assert!(a.audit().is_clean());

        // Changing a stage config while its artifacts exist is a hash mismatch.
        let mut changed = tiny();
        changed.features.beta = 0.5;
        let err = Pipeline::new(changed, dir.path().join("a")).run().unwrap_err();
        assert!(matches!(err, NavError::HashMismatch { .. }), "{err}");
    }
}
