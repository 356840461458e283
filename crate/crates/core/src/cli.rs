//! Pipeline orchestration: one subcommand per stage, a flat `key = value`
//! config file whose entries are overridden by flags, and a JSON run
//! manifest recording inputs, seeds, outputs and timing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::asli::{
    cognacy_matrix, export_correspondences, induce_sound_laws, load_cognates,
    shared_innovation_matrix, write_laws_tsv, AccuracyMode, AsliConfig, ContextClass,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::graph::{
    build_graph, path_stats, write_paths_tsv, GraphConfig, IntermediatePath, PathRecord,
    PhoneGraph,
};
use crate::model::{
    load_sound_changes, train, write_loss_curve, FeatureEditModel, Hyperparams,
    DEFAULT_EXCLUDED_FAMILIES, SUPPORTED_DEPTHS,
};
use crate::parsimony::{
    genetic_search, read_binary_matrix, write_binary_matrix, CharacterData, SankoffCharacter,
    SearchParams,
};
use crate::phonology::{DiacriticPolicy, PhoneFeatureTable};
use crate::transition::{
    build_matrix, group_paths, load_correspondences, load_expert_paths, write_correspondences,
    write_matrix_tsv, Correspondence, MatrixMode, ReflexCell,
};
use crate::trees::{gqd, majority_consensus, RootedTree};

#[derive(Debug)]
enum CliError {
    /// Bad flag combinations and the like: exit code 2.
    Usage(String),
    /// Computation failures: exit code 1.
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "phylophon",
    version,
    about = "Sound-change-based phylogenetic inference over articulatory features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the directional feature-edit network on a sound-change database
    Train(TrainArgs),
    /// Predict intermediate sound-change paths for each correspondence
    Paths(PathsArgs),
    /// Build and dump per-correspondence transition matrices
    Matrix(MatrixArgs),
    /// Run directed-parsimony tree search over the correspondences
    Infer(InferArgs),
    /// Majority-rule consensus of Newick trees
    Consensus(ConsensusArgs),
    /// Generalized quartet distance of hypothesis trees against a gold tree
    Gqd(GqdArgs),
    /// Induce sound laws from cognate sets and export matrices
    Asli(AsliArgs),
    /// Parsimony search over a binary character matrix
    Baseline(BaselineArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat `key = value` config file; flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Paths(a) => cmd_paths(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Consensus(a) => cmd_consensus(a),
        Command::Gqd(a) => cmd_gqd(a),
        Command::Asli(a) => cmd_asli(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

// ---------------------------------------------------------------- config

struct Resolver {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    fn new(path: Option<&Path>) -> CliResult<Self> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::Usage(format!(
                        "{}:{}: expected key = value",
                        p.display(),
                        i + 1
                    )));
                };
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Resolver {
            file,
            resolved: BTreeMap::new(),
        })
    }

    // flag beats config file beats default
    fn get<T: std::str::FromStr + ToString>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> CliResult<T> {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw.parse().map_err(|_| {
                    CliError::Usage(format!("config key {key}: cannot parse {raw:?}"))
                })?,
                None => default,
            },
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }
}

// ---------------------------------------------------------------- manifest

#[derive(serde::Serialize)]
struct GqdStats {
    min: f64,
    mean: f64,
    sigma: f64,
}

#[derive(serde::Serialize)]
struct RunManifest {
    command: String,
    config: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<String>,
    timing_ms: u128,
    timestamp_unix_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    gqd: Option<GqdStats>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            timing_ms: 0,
            timestamp_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            gqd: None,
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn write(mut self, path: &Path, started: Instant, resolver: Resolver) -> Result<()> {
        self.config = resolver.resolved;
        self.timing_ms = started.elapsed().as_millis();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_table(path: &Path) -> Result<PhoneFeatureTable> {
    PhoneFeatureTable::load(path, DiacriticPolicy::Pruned)
}

// ---------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Articulatory feature table CSV
    #[arg(long)]
    features: PathBuf,
    /// Sound-change database TSV (source, target, family)
    #[arg(long)]
    changes: PathBuf,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    /// Optional TSV of per-epoch train/test BCE
    #[arg(long)]
    loss_curve: Option<PathBuf>,
    /// Network depth in linear layers
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["1", "4", "8", "16"]))]
    depth: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Families to drop from the database (repeatable)
    #[arg(long = "exclude-family")]
    exclude_family: Vec<String>,
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let depth: usize = resolver
        .get("depth", args.depth, "1".to_string())?
        .parse()
        .expect("validated by clap");
    if !SUPPORTED_DEPTHS.contains(&depth) {
        return Err(CliError::Usage(format!("unsupported depth {depth}")));
    }
    let hp = Hyperparams {
        depth,
        epochs: resolver.get("epochs", args.epochs, 25)?,
        batch_size: resolver.get("batch_size", args.batch_size, 5)?,
        learning_rate: resolver.get("learning_rate", args.learning_rate, 0.001)?,
        train_fraction: resolver.get("train_fraction", args.train_fraction, 0.9)?,
        seed: resolver.get("seed", args.seed, 411)?,
        ..Hyperparams::default()
    };
    let excluded: Vec<String> = if args.exclude_family.is_empty() {
        DEFAULT_EXCLUDED_FAMILIES
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        args.exclude_family.clone()
    };
    resolver.note("exclude_family", excluded.join(","));

    let mut manifest = RunManifest::new("train");
    manifest.input(&args.features)?;
    manifest.input(&args.changes)?;
    manifest.seeds.insert("train".into(), hp.seed);

    let table = load_table(&args.features)?;
    let loaded = load_sound_changes(&args.changes, &table, &excluded)?;
    eprintln!(
        "loaded {} sound changes ({} skipped for unknown phones, {} dropped by family, {} identity)",
        loaded.records.len(),
        loaded.skipped_unknown_phone,
        loaded.dropped_family,
        loaded.dropped_identity
    );
    let model = train(&loaded.records, &table, &hp)?;
    eprintln!(
        "trained depth-{} model: train BCE {:.6} -> {:.6}",
        depth,
        model.train_loss.first().unwrap_or(&f64::NAN),
        model.train_loss.last().unwrap_or(&f64::NAN)
    );
    model.write_file(&args.out)?;
    manifest.output(&args.out);
    if let Some(curve) = &args.loss_curve {
        write_loss_curve(&model, curve)?;
        manifest.output(curve);
    }
    manifest.write(&manifest_path(&args.out), started, resolver)?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

// ---------------------------------------------------------------- paths

#[derive(Args)]
struct PathsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    correspondences: PathBuf,
    /// Trained model file (DWFED weighting); omit with --fed for the ablation
    #[arg(long)]
    model: Option<PathBuf>,
    /// Weight the graph with plain FED instead of a model
    #[arg(long)]
    fed: bool,
    /// Paths to extract per proto/reflex pair
    #[arg(long)]
    k: Option<usize>,
    /// Keep only paths tied with the least-cost one
    #[arg(long)]
    all_min: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Expert path dump; reports how many of its intermediate phones the
    /// predicted paths recover
    #[arg(long)]
    expert: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn build_mode_graph(
    model_path: Option<&Path>,
    use_fed: bool,
    table: &PhoneFeatureTable,
    master_seed: u64,
) -> CliResult<(PhoneGraph, Option<FeatureEditModel>)> {
    let config = GraphConfig {
        base_seed: derive_seed(master_seed, "graph-base"),
        ..GraphConfig::default()
    };
    match (model_path, use_fed) {
        (Some(_), true) => Err(CliError::Usage(
            "--model and --fed are mutually exclusive".into(),
        )),
        (None, false) => Err(CliError::Usage(
            "need --model for DWFED weighting or --fed for the ablation".into(),
        )),
        (Some(p), false) => {
            let model = FeatureEditModel::read_file(p)?;
            let graph = build_graph(Some(&model), table, config)?;
            Ok((graph, Some(model)))
        }
        (None, true) => Ok((build_graph(None, table, config)?, None)),
    }
}

// Extract k (or all cost-tied) paths for every attested non-identity reflex.
fn extract_paths(
    graph: &PhoneGraph,
    corrs: &[Correspondence],
    k: usize,
    all_min: bool,
) -> Result<Vec<PathRecord>> {
    let mut records = Vec::new();
    for corr in corrs {
        let mut reflexes: Vec<&str> = corr
            .attested()
            .map(|(_, p)| p)
            .filter(|p| *p != corr.proto)
            .collect();
        reflexes.sort_unstable();
        reflexes.dedup();
        for reflex in reflexes {
            let cap = if all_min { k.max(8) } else { k };
            let mut paths = graph.shortest_paths(&corr.proto, reflex, cap)?;
            if all_min {
                let best = paths[0].total_cost;
                paths.retain(|p| (p.total_cost - best).abs() <= 1e-9 * best.max(1.0));
            }
            for p in paths {
                records.push(PathRecord {
                    corr_id: corr.id,
                    proto: corr.proto.clone(),
                    reflex: reflex.to_string(),
                    path: p,
                });
            }
        }
    }
    Ok(records)
}

fn report_path_stats(records: &[PathRecord]) {
    // unique (proto, reflex) pairs, unique paths per pair
    let mut groups: BTreeMap<(String, String), Vec<IntermediatePath>> = BTreeMap::new();
    for r in records {
        let bucket = groups
            .entry((r.proto.clone(), r.reflex.clone()))
            .or_default();
        if !bucket.iter().any(|p| p.phones == r.path.phones) {
            bucket.push(r.path.clone());
        }
    }
    if let Ok((avg_paths, avg_edges)) = path_stats(&groups) {
        eprintln!(
            "{} proto/reflex pairs: avg {:.2} paths/pair, avg {:.2} edges/path",
            groups.len(),
            avg_paths,
            avg_edges
        );
    }
}

fn cmd_paths(args: PathsArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let k = resolver.get("k", args.k, 1)?;
    let seed = resolver.get("seed", args.seed, 411)?;
    resolver.note("all_min", args.all_min);

    let mut manifest = RunManifest::new("paths");
    manifest.input(&args.features)?;
    manifest.input(&args.correspondences)?;
    if let Some(m) = &args.model {
        manifest.input(m)?;
    }
    manifest
        .seeds
        .insert("graph-base".into(), derive_seed(seed, "graph-base"));

    let table = load_table(&args.features)?;
    let (corrs, _langs) = load_correspondences(&args.correspondences, Some(&table))?;
    let (graph, _model) = build_mode_graph(args.model.as_deref(), args.fed, &table, seed)?;
    let records = extract_paths(&graph, &corrs, k, args.all_min)?;
    report_path_stats(&records);
    if let Some(expert_file) = &args.expert {
        manifest.input(expert_file)?;
        let expert = load_expert_paths(expert_file, &table)?;
        let predicted = group_paths(records.clone());
        let recall = crate::graph::expert_path_recall(&predicted, &expert)?;
        eprintln!("expert intermediate-phone recall: {recall:.3}");
    }
    write_paths_tsv(&args.out, &records)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out), started, resolver)?;
    Ok(())
}

// ---------------------------------------------------------------- matrix

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    correspondences: PathBuf,
    /// Path dump to build matrices from
    #[arg(long)]
    paths: PathBuf,
    /// Edge weighting: expert unit edges or weights recomputed from a graph
    #[arg(long, value_enum, default_value_t = MatrixModeArg::Unit)]
    mode: MatrixModeArg,
    /// Model for recomputing weighted edges
    #[arg(long)]
    model: Option<PathBuf>,
    /// Recompute weighted edges with plain FED
    #[arg(long)]
    fed: bool,
    /// Override the disconnected-pair penalty
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MatrixModeArg {
    Unit,
    Weighted,
}

// Loaded dumps carry only totals; recompute per-edge costs from the graph.
fn reweight(graph: &PhoneGraph, path: &IntermediatePath) -> Result<IntermediatePath> {
    let mut edge_costs = Vec::with_capacity(path.edges());
    for w in path.phones.windows(2) {
        edge_costs.push(graph.weight_by_name(&w[0], &w[1])?);
    }
    Ok(IntermediatePath {
        phones: path.phones.clone(),
        total_cost: edge_costs.iter().sum(),
        edge_costs,
    })
}

fn cmd_matrix(args: MatrixArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let seed = resolver.get("seed", args.seed, 411)?;
    resolver.note(
        "mode",
        match args.mode {
            MatrixModeArg::Unit => "unit",
            MatrixModeArg::Weighted => "weighted",
        },
    );

    let mut manifest = RunManifest::new("matrix");
    manifest.input(&args.features)?;
    manifest.input(&args.correspondences)?;
    manifest.input(&args.paths)?;

    let table = load_table(&args.features)?;
    let (corrs, _) = load_correspondences(&args.correspondences, Some(&table))?;
    let mut grouped = load_expert_paths(&args.paths, &table)?;

    let mode = match args.mode {
        MatrixModeArg::Unit => MatrixMode::ExpertUnitEdges,
        MatrixModeArg::Weighted => {
            let (graph, _) = build_mode_graph(args.model.as_deref(), args.fed, &table, seed)?;
            for paths in grouped.values_mut() {
                for p in paths.iter_mut() {
                    *p = reweight(&graph, p)?;
                }
            }
            MatrixMode::Weighted
        }
    };

    ensure_dir(&args.out_dir)?;
    let mut built = 0usize;
    for corr in &corrs {
        let Some(paths) = grouped.get(&corr.id) else {
            eprintln!("correspondence {}: no paths, skipped", corr.id);
            continue;
        };
        let matrix = build_matrix(corr, paths, mode, args.penalty)?;
        let out = args.out_dir.join(format!("matrix_{:03}.tsv", corr.id));
        write_matrix_tsv(&matrix, &out)?;
        manifest.output(&out);
        built += 1;
    }
    eprintln!("built {built} transition matrices in {}", args.out_dir.display());
    manifest.write(&args.out_dir.join("manifest.json"), started, resolver)?;
    Ok(())
}

// ---------------------------------------------------------------- infer

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InferMode {
    /// DWFED graph paths from a trained model
    Aiscp,
    /// Expert-provided paths with unit edge costs
    Expert,
    /// Unweighted FED graph paths
    FedAblation,
    /// Single proto-to-reflex edges weighted by FED
    Direct,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    correspondences: PathBuf,
    #[arg(long, value_enum)]
    mode: InferMode,
    /// Trained model (aiscp mode)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Expert path dump (expert mode)
    #[arg(long)]
    paths: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    all_min: bool,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    elite: Option<usize>,
    #[arg(long)]
    exploration: Option<f64>,
    /// Override the disconnected-pair penalty
    #[arg(long)]
    penalty: Option<f64>,
    /// Log each generation's best score to standard error
    #[arg(long)]
    log_search: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn characters_from_paths(
    corrs: &[Correspondence],
    grouped: &BTreeMap<u32, Vec<IntermediatePath>>,
    mode: MatrixMode,
    penalty: Option<f64>,
) -> Result<(Vec<CharacterData>, usize)> {
    let mut characters = Vec::new();
    let mut skipped = 0usize;
    for corr in corrs {
        let Some(paths) = grouped.get(&corr.id) else {
            // a correspondence where nothing changes has no paths and costs
            // zero on every tree; it cannot affect the search
            skipped += 1;
            continue;
        };
        let matrix = build_matrix(corr, paths, mode, penalty)?;
        let assignments: BTreeMap<String, Option<String>> = corr
            .reflexes
            .iter()
            .map(|(lang, cell)| {
                (
                    lang.clone(),
                    match cell {
                        ReflexCell::Phone(p) => Some(p.clone()),
                        ReflexCell::Missing => None,
                    },
                )
            })
            .collect();
        characters.push(CharacterData::Sankoff(SankoffCharacter {
            corr_id: corr.id,
            matrix,
            assignments,
            root_state: corr.proto.clone(),
        }));
    }
    if characters.is_empty() {
        return Err(Error::EmptyInput(
            "no scorable characters (every correspondence is constant)".into(),
        ));
    }
    Ok((characters, skipped))
}

fn consensus_of_archive(state: &crate::parsimony::SearchState) -> Result<RootedTree> {
    if state.archive.len() == 1 {
        Ok(state.archive[0].clone())
    } else {
        majority_consensus(&state.archive, 0.5)
    }
}

fn cmd_infer(args: InferArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let k = resolver.get("k", args.k, 1)?;
    let runs = resolver.get("runs", args.runs, 10)?;
    let budget = resolver.get("budget", args.budget, 10_000)?;
    let master_seed = resolver.get("seed", args.seed, 411)?;
    let population = resolver.get("population", args.population, 50)?;
    let elite = resolver.get("elite", args.elite, 10)?;
    let exploration = resolver.get("exploration", args.exploration, 0.2)?;
    resolver.note("all_min", args.all_min);
    resolver.note(
        "mode",
        match args.mode {
            InferMode::Aiscp => "aiscp",
            InferMode::Expert => "expert",
            InferMode::FedAblation => "fed-ablation",
            InferMode::Direct => "direct",
        },
    );
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }

    let mut manifest = RunManifest::new("infer");
    manifest.input(&args.features)?;
    manifest.input(&args.correspondences)?;

    let table = load_table(&args.features)?;
    let (corrs, languages) = load_correspondences(&args.correspondences, Some(&table))?;
    ensure_dir(&args.out_dir)?;

    // assemble per-correspondence paths according to the mode
    let (grouped, matrix_mode) = match args.mode {
        InferMode::Aiscp => {
            let model_path = args.model.as_deref().ok_or_else(|| {
                CliError::Usage("aiscp mode needs --model".into())
            })?;
            manifest.input(model_path)?;
            let (graph, _) = build_mode_graph(Some(model_path), false, &table, master_seed)?;
            let records = extract_paths(&graph, &corrs, k, args.all_min)?;
            report_path_stats(&records);
            let dump = args.out_dir.join("paths.tsv");
            write_paths_tsv(&dump, &records)?;
            manifest.output(&dump);
            (group_paths(records), MatrixMode::Weighted)
        }
        InferMode::FedAblation => {
            let (graph, _) = build_mode_graph(None, true, &table, master_seed)?;
            let records = extract_paths(&graph, &corrs, k, args.all_min)?;
            report_path_stats(&records);
            let dump = args.out_dir.join("paths.tsv");
            write_paths_tsv(&dump, &records)?;
            manifest.output(&dump);
            (group_paths(records), MatrixMode::Weighted)
        }
        InferMode::Expert => {
            let paths_file = args.paths.as_deref().ok_or_else(|| {
                CliError::Usage("expert mode needs --paths".into())
            })?;
            manifest.input(paths_file)?;
            (load_expert_paths(paths_file, &table)?, MatrixMode::ExpertUnitEdges)
        }
        InferMode::Direct => {
            // proto -> reflex single edges weighted by plain FED
            let mut records = Vec::new();
            for corr in &corrs {
                let mut reflexes: Vec<&str> = corr
                    .attested()
                    .map(|(_, p)| p)
                    .filter(|p| *p != corr.proto)
                    .collect();
                reflexes.sort_unstable();
                reflexes.dedup();
                for reflex in reflexes {
                    let cost = table.fed(&corr.proto, reflex)?;
                    records.push(PathRecord {
                        corr_id: corr.id,
                        proto: corr.proto.clone(),
                        reflex: reflex.to_string(),
                        path: IntermediatePath {
                            phones: vec![corr.proto.clone(), reflex.to_string()],
                            edge_costs: vec![cost],
                            total_cost: cost,
                        },
                    });
                }
            }
            let dump = args.out_dir.join("paths.tsv");
            write_paths_tsv(&dump, &records)?;
            manifest.output(&dump);
            (group_paths(records), MatrixMode::Weighted)
        }
    };

    let (characters, skipped) =
        characters_from_paths(&corrs, &grouped, matrix_mode, args.penalty)?;
    if skipped > 0 {
        eprintln!("{skipped} constant correspondences skipped");
    }

    // runs are independent searches with derived seeds
    let run_seeds: Vec<u64> = (1..=runs)
        .map(|i| derive_seed(master_seed, &format!("run-{i}")))
        .collect();
    for (i, s) in run_seeds.iter().enumerate() {
        manifest.seeds.insert(format!("run-{}", i + 1), *s);
    }
    let states: Vec<_> = run_seeds
        .par_iter()
        .map(|seed| {
            genetic_search(
                &characters,
                &languages,
                &SearchParams {
                    population,
                    elite,
                    exploration,
                    budget,
                    seed: *seed,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut scores = String::from("run\tbest_score\tevaluated\tarchive_size\n");
    for (i, state) in states.iter().enumerate() {
        let run_no = i + 1;
        if args.log_search {
            for (gen, best) in state.generation_best.iter().enumerate() {
                eprintln!("run {run_no} generation {gen}: best {best}");
            }
        }
        let tree = consensus_of_archive(state)?;
        let tree_path = args.out_dir.join(format!("run_{run_no:02}.nwk"));
        std::fs::write(&tree_path, tree.to_newick() + "\n")
            .map_err(|e| Error::io(&tree_path, e))?;
        manifest.output(&tree_path);
        let archive_path = args.out_dir.join(format!("run_{run_no:02}_archive.nwk"));
        let mut text = String::new();
        for t in &state.archive {
            text.push_str(&t.to_newick());
            text.push('\n');
        }
        std::fs::write(&archive_path, text).map_err(|e| Error::io(&archive_path, e))?;
        manifest.output(&archive_path);
        scores.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            run_no,
            state.best_score,
            state.evaluated,
            state.archive.len()
        ));
        eprintln!(
            "run {run_no}: best {} over {} trees ({} tied)",
            state.best_score,
            state.evaluated,
            state.archive.len()
        );
    }
    let scores_path = args.out_dir.join("scores.tsv");
    std::fs::write(&scores_path, scores).map_err(|e| Error::io(&scores_path, e))?;
    manifest.output(&scores_path);
    manifest.write(&args.out_dir.join("manifest.json"), started, resolver)?;
    Ok(())
}

// ---------------------------------------------------------------- consensus

#[derive(Args)]
struct ConsensusArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Newick files (one or more trees per file, one per line)
    #[arg(long, num_args = 1.., required = true)]
    trees: Vec<PathBuf>,
    /// Clades must appear in strictly more than this fraction of the trees
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also print the consensus as an ASCII outline
    #[arg(long)]
    ascii: bool,
}

fn read_trees(path: &Path) -> Result<Vec<RootedTree>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(RootedTree::parse_newick(line.trim())?);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("no trees in {}", path.display())));
    }
    Ok(out)
}

fn cmd_consensus(args: ConsensusArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let threshold = resolver.get("threshold", args.threshold, 0.5)?;

    let mut manifest = RunManifest::new("consensus");
    let mut trees = Vec::new();
    for path in &args.trees {
        manifest.input(path)?;
        trees.extend(read_trees(path)?);
    }
    let consensus = majority_consensus(&trees, threshold)?;
    std::fs::write(&args.out, consensus.to_newick() + "\n")
        .map_err(|e| Error::io(&args.out, e))?;
    if args.ascii {
        print!("{}", consensus.ascii());
    }
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out), started, resolver)?;
    Ok(())
}

// ---------------------------------------------------------------- gqd

#[derive(Args)]
struct GqdArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    gold: PathBuf,
    /// Hypothesis Newick files
    #[arg(long, num_args = 1.., required = true)]
    hyp: Vec<PathBuf>,
    /// Write the table here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sample_sigma(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

fn cmd_gqd(args: GqdArgs) -> CliResult<()> {
    let started = Instant::now();
    let resolver = Resolver::new(args.common.config.as_deref())?;
    let mut manifest = RunManifest::new("gqd");
    manifest.input(&args.gold)?;

    let gold_trees = read_trees(&args.gold)?;
    if gold_trees.len() != 1 {
        return Err(CliError::Usage(format!(
            "{} must contain exactly one gold tree",
            args.gold.display()
        )));
    }
    let gold = &gold_trees[0];

    let mut table = String::from("tree\tgqd\n");
    let mut values = Vec::new();
    for path in &args.hyp {
        manifest.input(path)?;
        for (i, tree) in read_trees(path)?.iter().enumerate() {
            let d = gqd(tree, gold)?;
            let label = if i == 0 {
                path.display().to_string()
            } else {
                format!("{}#{}", path.display(), i + 1)
            };
            table.push_str(&format!("{label}\t{d:.3}\n"));
            values.push(d);
        }
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let sigma = sample_sigma(&values, mean);
    table.push_str(&format!("min\t{min:.3}\n"));
    table.push_str(&format!("mean\t{mean:.3}\n"));
    table.push_str(&format!("sigma\t{sigma:.3}\n"));
    manifest.gqd = Some(GqdStats { min, mean, sigma });

    match &args.out {
        Some(path) => {
            std::fs::write(path, &table).map_err(|e| Error::io(path, e))?;
            manifest.output(path);
            manifest.write(&manifest_path(path), started, resolver)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

// ---------------------------------------------------------------- asli

#[derive(Args)]
struct AsliArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    cognates: PathBuf,
    /// Laws with raw accuracy <= threshold are filtered out
    #[arg(long)]
    threshold: Option<f64>,
    /// Generalize contexts to feature natural classes instead of pair sets
    #[arg(long)]
    feature_class: bool,
    /// Pool the accuracy threshold over all languages instead of judging it
    /// per language
    #[arg(long)]
    pooled_accuracy: bool,
    /// Cap on generalized rules per change
    #[arg(long)]
    max_generalized: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_asli(args: AsliArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let config = AsliConfig {
        threshold: resolver.get("threshold", args.threshold, 0.6)?,
        accuracy_mode: if args.pooled_accuracy {
            AccuracyMode::Pooled
        } else {
            AccuracyMode::PerLanguage
        },
        context_class: if args.feature_class {
            ContextClass::FeatureClass
        } else {
            ContextClass::PairSet
        },
        max_generalized_per_change: resolver.get(
            "max_generalized",
            args.max_generalized,
            AsliConfig::default().max_generalized_per_change,
        )?,
    };
    resolver.note("pooled_accuracy", args.pooled_accuracy);
    resolver.note("feature_class", args.feature_class);

    let mut manifest = RunManifest::new("asli");
    manifest.input(&args.features)?;
    manifest.input(&args.cognates)?;

    let table = load_table(&args.features)?;
    let data = load_cognates(&args.cognates, &table)?;
    if data.excluded > 0 {
        eprintln!("{} cognate entries excluded for unknown phones", data.excluded);
    }
    let output = induce_sound_laws(&data, &table, &config)?;
    eprintln!(
        "{} base rules, {} filtered out, {} laws after generalization",
        output.base_rule_count,
        output.filtered_out,
        output.laws.len()
    );

    ensure_dir(&args.out_dir)?;
    let laws_path = args.out_dir.join("laws.tsv");
    write_laws_tsv(&output.laws, &laws_path)?;
    manifest.output(&laws_path);

    let innovations = shared_innovation_matrix(&output.laws, &data.languages);
    let innov_path = args.out_dir.join("innovations.tsv");
    write_binary_matrix(&innovations, &data.languages, &innov_path)?;
    manifest.output(&innov_path);

    let cognacy = cognacy_matrix(&data)?;
    let cog_path = args.out_dir.join("cognacy.tsv");
    write_binary_matrix(&cognacy, &data.languages, &cog_path)?;
    manifest.output(&cog_path);

    let corrs = export_correspondences(&output.laws, &output.corpus, &data.languages);
    let corr_path = args.out_dir.join("correspondences.tsv");
    write_correspondences(&corrs, &data.languages, &corr_path)?;
    manifest.output(&corr_path);
    eprintln!(
        "exported {} correspondences, {} innovation columns, {} cognacy columns",
        corrs.len(),
        innovations.len(),
        cognacy.len()
    );

    manifest.write(&args.out_dir.join("manifest.json"), started, resolver)?;
    Ok(())
}

// ---------------------------------------------------------------- baseline

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Cognacy,
    Innovations,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Binary character matrix TSV
    #[arg(long)]
    matrix: PathBuf,
    /// Which baseline this matrix represents (recorded in the manifest)
    #[arg(long, value_enum)]
    kind: BaselineKind,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    elite: Option<usize>,
    #[arg(long)]
    exploration: Option<f64>,
    /// Log each generation's best score to standard error
    #[arg(long)]
    log_search: bool,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_baseline(args: BaselineArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut resolver = Resolver::new(args.common.config.as_deref())?;
    let budget = resolver.get("budget", args.budget, 10_000)?;
    let seed = resolver.get("seed", args.seed, 411)?;
    let population = resolver.get("population", args.population, 50)?;
    let elite = resolver.get("elite", args.elite, 10)?;
    let exploration = resolver.get("exploration", args.exploration, 0.2)?;
    resolver.note(
        "kind",
        match args.kind {
            BaselineKind::Cognacy => "cognacy",
            BaselineKind::Innovations => "innovations",
        },
    );

    let mut manifest = RunManifest::new("baseline");
    manifest.input(&args.matrix)?;
    manifest.seeds.insert("search".into(), seed);

    let (characters, languages) = read_binary_matrix(&args.matrix)?;
    let characters: Vec<CharacterData> =
        characters.into_iter().map(CharacterData::Binary).collect();
    let state = genetic_search(
        &characters,
        &languages,
        &SearchParams {
            population,
            elite,
            exploration,
            budget,
            seed,
        },
    )?;
    if args.log_search {
        for (gen, best) in state.generation_best.iter().enumerate() {
            eprintln!("generation {gen}: best {best}");
        }
    }
    eprintln!(
        "baseline search: best {} over {} trees ({} tied)",
        state.best_score,
        state.evaluated,
        state.archive.len()
    );
    let tree = consensus_of_archive(&state)?;
    std::fs::write(&args.out, tree.to_newick() + "\n").map_err(|e| Error::io(&args.out, e))?;
    manifest.output(&args.out);
    manifest.write(&manifest_path(&args.out), started, resolver)?;
    Ok(())
}
