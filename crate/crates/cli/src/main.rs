use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use citynav::agent::{EpisodeConfig, Navigator, Policy, PolicyKind};
use citynav::artifact;
use citynav::citygraph::{build_city, place_destinations, CityGraph, DestinationSet};
use citynav::evalharness::{
    confidence_map, evaluate, report_document, report_tables, sample_starts, trajectory_document, MetricsReport,
    MetricsRow, TableKind,
};
use citynav::experiment::{
    dest_hash, feature_hash, graph_hash, label_hash, load_evaluations, write_labels, write_report, ExperimentConfig,
    ExperimentSummary, Pipeline, Role,
};
use citynav::labeling::LabelSet;
use citynav::learner::{Head, ScorerModel};
use citynav::search::distance_field;
use citynav::synthfeat::{gen_features, FeatureTable};
use citynav::NavError;

#[derive(Parser)]
#[command(name = "citynav", version, about = "Navigation workbench on synthetic lattice cities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults to the built-in desk config.
    #[arg(long, alias = "spec")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "CITYNAV_OUT", default_value = "citynav-out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(ExperimentConfig::desk()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build one city graph into <out>/graph.json.
    GenCity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Place destinations on <out>/graph.json into <out>/destinations.json.
    PlaceDests {
        #[command(flatten)]
        common: Common,
    },
    /// Write distance, direction and pair label tables for the city in <out>.
    GenLabels {
        #[command(flatten)]
        common: Common,
    },
    /// Write synthetic features for the city in <out>.
    GenFeatures {
        #[command(flatten)]
        common: Common,
    },
    /// Train one head on the configured training cities of the run in <out>.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        head: Head,
    },
    /// Evaluate policies on test cities and print expected-steps tables.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        /// Model file; defaults to <out>/models/<head>.json.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Rebuild report tables from the evaluation files in <out>.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Export episode trajectories for one (city, class, d_s, policy).
    ExportPaths {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sel: Selection,
        #[arg(long)]
        class: String,
    },
    /// Export a per-location score-variance map for one model and class.
    ExportConfidence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        head: Head,
        /// Test city seed.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        class: String,
    },
    /// Run the whole pipeline; existing artifacts with matching hashes are reused.
    RunExperiment {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

#[derive(Args, Clone)]
struct Selection {
    /// Policy to run; defaults to all configured policies.
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Expected model head; a model with another head is rejected.
    #[arg(long)]
    head: Option<Head>,
    /// Test city seed; defaults to every test seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Target path length in meters; defaults to the configured list.
    #[arg(long)]
    ds: Option<f64>,
    /// Trials per start; defaults to the configured value for the policy.
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn read_graph(dir: &Path) -> Result<(CityGraph, String)> {
    let path = dir.join("graph.json");
    let (g, hash) = CityGraph::from_document(&artifact::read_text(&path)?)?;
    let expected = graph_hash(g.spec());
    if hash != expected {
        return Err(NavError::HashMismatch { path, found: hash, expected }.into());
    }
    Ok((g, hash))
}

fn read_dests(dir: &Path, graph: &CityGraph, g_hash: &str, cfg: &ExperimentConfig) -> Result<(DestinationSet, String)> {
    let path = dir.join("destinations.json");
    let (d, hash) = DestinationSet::from_document(graph, &artifact::read_text(&path)?)?;
    let expected =
        dest_hash(g_hash, cfg.class_names(), cfg.destinations.per_class, cfg.destination_seed(graph.spec().seed));
    if hash != expected {
        return Err(NavError::HashMismatch { path, found: hash, expected }.into());
    }
    Ok((d, hash))
}

fn load_model(path: &Path) -> Result<ScorerModel<f64>> {
    let (m, _) = ScorerModel::from_document(&artifact::read_text(path)?)
        .with_context(|| format!("loading model {}", path.display()))?;
    Ok(m)
}

fn policy_for(
    kind: PolicyKind,
    sel: &Selection,
    model: Option<&Path>,
    out: &Path,
    cfg: &ExperimentConfig,
    city_seed: u64,
) -> Result<Policy<f64>> {
    Ok(match kind.head() {
        None if kind == PolicyKind::RandomWalk => {
            Policy::random_walk(citynav::rng::derive_seed(cfg.evaluation.seed, &[city_seed]))
        }
        None => Policy::astar_oracle(),
        Some(head) => {
            let path = model.map(Path::to_path_buf).unwrap_or_else(|| out.join("models").join(format!("{head}.json")));
            let m = load_model(&path)?;
            if let Some(want) = sel.head {
                if m.head() != want {
                    return Err(NavError::HeadMismatch { expected: want.to_string(), got: m.head().to_string() }.into());
                }
            }
            Policy::learned(kind, m)?
        }
    })
}

fn selected_policies(sel: &Selection, cfg: &ExperimentConfig, model: Option<&Path>) -> Result<Vec<PolicyKind>> {
    if let Some(p) = sel.policy {
        return Ok(vec![p]);
    }
    if let Some(h) = sel.head {
        return Ok(vec![PolicyKind::for_head(h)]);
    }
    if let Some(path) = model {
        return Ok(vec![PolicyKind::for_head(load_model(path)?.head())]);
    }
    Ok(cfg.evaluation.policies.clone())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCity { common, seed } => {
            let cfg = common.config()?;
            let spec = cfg.grid.spec(seed);
            let g = build_city(&spec)?;
            artifact::write_text(&common.out.join("graph.json"), &g.to_document(&graph_hash(&spec)))?;
            println!("{} nodes on {} locations", g.node_count(), g.populated_locations().len());
        }
        Command::PlaceDests { common } => {
            let cfg = common.config()?;
            let (g, g_hash) = read_graph(&common.out)?;
            let seed = cfg.destination_seed(g.spec().seed);
            let d = place_destinations(&g, cfg.class_names(), cfg.destinations.per_class, seed)?;
            let hash = dest_hash(&g_hash, cfg.class_names(), cfg.destinations.per_class, seed);
            artifact::write_text(&common.out.join("destinations.json"), &d.to_document(&hash))?;
        }
        Command::GenLabels { common } => {
            let cfg = common.config()?;
            let (g, g_hash) = read_graph(&common.out)?;
            let (d, d_hash) = read_dests(&common.out, &g, &g_hash, &cfg)?;
            let labels: LabelSet<f64> = LabelSet::generate(&g, &d)?;
            write_labels(&labels, &g, d.classes(), &label_hash(&d_hash), &common.out)?;
        }
        Command::GenFeatures { common } => {
            let cfg = common.config()?;
            let (g, g_hash) = read_graph(&common.out)?;
            let (d, d_hash) = read_dests(&common.out, &g, &g_hash, &cfg)?;
            let spec = cfg.feature_spec(g.spec().seed);
            let f: FeatureTable<f64> = gen_features(&g, &d, &spec)?;
            let hash = feature_hash(&d_hash, &spec);
            artifact::write_text(&common.out.join("features.index.csv"), &f.sidecar_csv(&hash))?;
            artifact::write_bytes(&common.out.join("features.bin"), &f.to_bytes(&hash))?;
        }
        Command::Train { common, head } => {
            let cfg = common.config()?;
            let pipe = Pipeline::new(cfg.clone(), &common.out).with_logger(&log);
            let cities = cfg.train_seeds.iter().map(|&s| pipe.city(Role::Train, s)).collect::<citynav::Result<Vec<_>>>()?;
            pipe.train_head(head, &cities)?;
            let report = common.out.join("models").join(format!("{head}.report.json"));
            if report.exists() {
                print!("{}", artifact::read_text(&report)?);
            }
        }
        Command::Evaluate { common, sel, model } => {
            let cfg = common.config()?;
            let kinds = selected_policies(&sel, &cfg, model.as_deref())?;
            let pipe = Pipeline::new(cfg.clone(), &common.out).with_logger(&log);
            let seeds = sel.seed.map_or(cfg.test_seeds.clone(), |s| vec![s]);
            let ds = sel.ds.map_or(cfg.starts.d_s_m.clone(), |d| vec![d]);
            let mut report = MetricsReport::default();
            for &seed in &seeds {
                let city = pipe.city(Role::Test, seed)?;
                let policies =
                    kinds.iter().map(|&k| policy_for(k, &sel, model.as_deref(), &common.out, &cfg, seed)).collect::<Result<Vec<_>>>()?;
                for (c, class) in city.dests.classes().iter().enumerate() {
                    let field = distance_field(&city.graph, city.dests.locations(c))?;
                    for &d in &ds {
                        let starts = sample_starts(&city.graph, &field, &cfg.starts.config_for(seed, c, d))?;
                        for p in &policies {
                            let nav = Navigator::new(p, &city.graph, &city.dests, Some(&city.features), &cfg.evaluation.episode(class))?;
                            let trials = sel.trials.unwrap_or(cfg.evaluation.trials_for(p.kind()));
                            let e = evaluate(&nav, &starts.starts, trials, sel.jobs)?;
                            report.rows.push(MetricsRow { city: city.name.clone(), class: class.clone(), policy: p.kind(), d_s_m: d, metrics: e.metrics });
                        }
                    }
                }
            }
            let tables = report_tables(&report)?;
            let hash = artifact::config_hash(&("adhoc-evaluation", &report));
            artifact::write_text(&common.out.join("adhoc").join("report.json"), &report_document(&report, &tables, &hash)?)?;
            print!("{}", tables.expected_steps.to_csv(&hash)?);
        }
        Command::Report { common } => {
            let cfg = common.config()?;
            let evals = load_evaluations(&common.out, &cfg)?;
            let hashes: Vec<&str> = evals.iter().map(|e| e.config_hash.as_str()).collect();
            let hash = artifact::chained_hash(&hashes, &"report");
            let summary = ExperimentSummary::from_evaluations(evals.clone(), Vec::new())?;
            write_report(&Pipeline::new(cfg.clone(), &common.out).report_dir(), &summary, &hash)?;
            print!("{}", summary.tables.get(TableKind::ExpectedSteps).to_csv(&hash)?);
        }
        Command::ExportPaths { common, sel, class } => {
            let cfg = common.config()?;
            let kind = sel.policy.or(sel.head.map(PolicyKind::for_head)).unwrap_or(PolicyKind::AstarOracle);
            let seed = sel.seed.unwrap_or(cfg.test_seeds[0]);
            let d = sel.ds.unwrap_or(cfg.starts.d_s_m[0]);
            let pipe = Pipeline::new(cfg.clone(), &common.out).with_logger(&log);
            let city = pipe.city(Role::Test, seed)?;
            let c = city.dests.class_index(&class).with_context(|| format!("unknown class {class}"))?;
            let field = distance_field(&city.graph, city.dests.locations(c))?;
            let starts = sample_starts(&city.graph, &field, &cfg.starts.config_for(seed, c, d))?;
            let p = policy_for(kind, &sel, None, &common.out, &cfg, seed)?;
            let episode: EpisodeConfig = cfg.evaluation.episode(&class);
            let nav = Navigator::new(&p, &city.graph, &city.dests, Some(&city.features), &episode)?;
            let e = evaluate(&nav, &starts.starts, sel.trials.unwrap_or(cfg.evaluation.trials_for(kind)), sel.jobs)?;
            let hash = artifact::chained_hash(&[city.feature_hash.as_str()], &("paths", kind, &class, d));
            let path = common.out.join("exports").join(format!("paths-{}-{kind}-{class}-{d}.json", city.name));
            artifact::write_text(&path, &trajectory_document(&city.graph, &city.name, &e, &hash)?)?;
            println!("{}", path.display());
        }
        Command::ExportConfidence { common, head, seed, class } => {
            let cfg = common.config()?;
            let pipe = Pipeline::new(cfg.clone(), &common.out).with_logger(&log);
            let city = pipe.city(Role::Test, seed)?;
            let c = city.dests.class_index(&class).with_context(|| format!("unknown class {class}"))?;
            let model = load_model(&pipe.model_path(head))?;
            if model.head() != head {
                return Err(NavError::HeadMismatch { expected: head.to_string(), got: model.head().to_string() }.into());
            }
            let map = confidence_map(&model, &city.graph, &city.features, c)?;
            let hash = artifact::chained_hash(&[city.feature_hash.as_str()], &("confidence", head, &class));
            let path = common.out.join("exports").join(format!("confidence-{}-{head}-{class}.json", city.name));
            artifact::write_text(&path, &map.to_document(&city.graph, &class, &hash)?)?;
            println!("{}", path.display());
        }
        Command::RunExperiment { common, jobs } => {
            let cfg = common.config()?;
            let t0 = Instant::now();
            let summary = Pipeline::new(cfg, &common.out).with_jobs(jobs).with_logger(&log).run()?;
            let audit = summary.audit();
            eprintln!("finished in {:.1}s; protocol audit clean: {}", t0.elapsed().as_secs_f64(), audit.is_clean());
            print!("{}", artifact::read_text(&common.out.join("report").join("expected_steps.csv"))?);
        }
    }
    Ok(())
}

fn log(msg: &str) {
    eprintln!("[citynav] {msg}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
