use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use netoffload::appstats::{self, ObfuscationFilter};
use netoffload::control::StrategyKind;
use netoffload::decision::{self, NetworkConditions, SetMode};
use netoffload::partition::{self, CallGraph, DistanceMode, PartitionSet};
use netoffload::simulator::{self, ExportFormat, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "netoffload",
    version,
    about = "In-network function offloading toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a network simulation and export its metrics.
    Simulate(SimulateArgs),
    /// Cluster a call graph into candidate partition sets.
    Partition(PartitionArgs),
    /// Pick the partition set to offload under given network conditions.
    Decide(DecideArgs),
    /// Measure class overlap and storage savings over an app corpus.
    Appstats(AppstatsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_parser = ["fig3", "overload-line", "overload-grid"])]
    preset: Option<String>,
    /// Override the scenario's strategy.
    #[arg(long)]
    strategy: Option<StrategyArg>,
    /// Seed for a single run; overrides the scenario's seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range `a..b` for a batch run.
    #[arg(long, value_parser = parse_seed_range)]
    seeds: Option<SeedRange>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Print the resolved scenario as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    None,
    Passive,
    Proactive,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::None => StrategyKind::None,
            StrategyArg::Passive => StrategyKind::Passive,
            StrategyArg::Proactive => StrategyKind::Proactive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Hops,
    InverseWeight,
}

impl From<DistanceArg> for DistanceMode {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Hops => DistanceMode::Hops,
            DistanceArg::InverseWeight => DistanceMode::InverseWeight,
        }
    }
}

#[derive(Args)]
struct GraphArgs {
    /// Call graph (JSON).
    #[arg(long)]
    graph: PathBuf,
    /// Tag rules (JSON list of {prefix, tag}).
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Edge length used for betweenness.
    #[arg(long, value_enum, default_value_t = DistanceArg::Hops)]
    distance: DistanceArg,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Any,
    All,
}

#[derive(Args)]
struct DecideArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Round-trip time in milliseconds.
    #[arg(long)]
    rtt_ms: f64,
    /// Link rate in bits per second.
    #[arg(long)]
    bandwidth_bps: f64,
    /// Remote over local CPU speed.
    #[arg(long)]
    speedup: f64,
    /// Energy model (JSON); without it only the time rule applies.
    #[arg(long)]
    energy_model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Any)]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterArg {
    SingleChar,
    SingleCharOrAToP,
}

#[derive(Args)]
struct AppstatsArgs {
    /// Corpus file, one app per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Package-name depth used for matching.
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, value_enum, default_value_t = FilterArg::SingleChar)]
    filter: FilterArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

#[derive(Clone, Debug)]
struct SeedRange(Vec<u64>);

fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("range start: {e}"))?;
    let b: u64 = b
        .trim()
        .trim_start_matches('=')
        .parse()
        .map_err(|e| format!("range end: {e}"))?;
    if a > b {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok(SeedRange((a..=b).collect()))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
            }
            fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn sim_error(e: simulator::SimError) -> CliError {
    if e.is_validation() {
        CliError::Invalid(e.to_string())
    } else {
        CliError::Runtime(e.to_string())
    }
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut cfg: ScenarioConfig = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = read_input(path)?;
            ScenarioConfig::from_json(&text, path.parent()).map_err(sim_error)?
        }
        (None, Some(name)) => {
            simulator::preset(name).ok_or_else(|| invalid(format!("unknown preset `{name}`")))?
        }
        (None, None) => return Err(invalid("one of --config or --preset is required")),
    };
    if let Some(s) = args.strategy {
        cfg = cfg.with_strategy(s.into());
    }
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate().map_err(sim_error)?;
    if args.print_config {
        return emit(&(cfg.to_json() + "\n"), None);
    }
    let format = match args.format {
        FormatArg::Csv => ExportFormat::Csv,
        FormatArg::Json => ExportFormat::Json,
    };
    let out = args.out.as_deref();
    match args.seeds {
        None => {
            let m = simulator::run_scenario(&cfg).map_err(sim_error)?;
            if let Some(dir) = out {
                simulator::export_metrics(&m, format, dir).map_err(sim_error)?;
            }
            emit(&to_json(&m), None)
        }
        Some(SeedRange(seeds)) => {
            let runs = simulator::run_batch(&cfg, &seeds).map_err(sim_error)?;
            let summary = simulator::summarize_batch(&seeds, &runs);
            let text = to_json(&summary);
            if let Some(dir) = out {
                for (seed, m) in seeds.iter().zip(&runs) {
                    simulator::export_metrics(m, format, &dir.join(format!("seed-{seed}")))
                        .map_err(sim_error)?;
                }
                emit(&text, Some(&dir.join("batch.json")))?;
            }
            emit(&text, None)
        }
    }
}

fn load_graph(args: &GraphArgs) -> Result<CallGraph, CliError> {
    let g = partition::build_call_graph(&read_input(&args.graph)?).map_err(invalid)?;
    Ok(match &args.rules {
        Some(r) => {
            let rules = partition::parse_tag_rules(&read_input(r)?).map_err(invalid)?;
            partition::apply_tag_rules(&g, &rules)
        }
        None => g,
    })
}

#[derive(Serialize)]
struct SetReport {
    n_clusters: usize,
    modularity: f64,
    offloadable_fraction: f64,
    clusters: Vec<Vec<String>>,
    offloadable: Vec<bool>,
}

#[derive(Serialize)]
struct PartitionReport {
    classes: usize,
    edges: usize,
    n_opt: usize,
    louvain_modularity: f64,
    sets: Vec<SetReport>,
}

fn set_report(g: &CallGraph, s: &PartitionSet) -> SetReport {
    SetReport {
        n_clusters: s.n_clusters,
        modularity: s.modularity,
        offloadable_fraction: partition::offloadable_fraction(g, s),
        clusters: s
            .clusters
            .iter()
            .map(|c| c.iter().map(|&v| g.vertices()[v].name.clone()).collect())
            .collect(),
        offloadable: s.offloadable.clone(),
    }
}

fn partition_cmd(args: PartitionArgs) -> Result<(), CliError> {
    let g = load_graph(&args.graph)?;
    let louvain = partition::louvain_optimal(&g).map_err(invalid)?;
    let sets =
        partition::enumerate_partition_sets(&g, args.graph.distance.into()).map_err(invalid)?;
    let report = PartitionReport {
        classes: g.len(),
        edges: g.edges().len(),
        n_opt: louvain.n_clusters,
        louvain_modularity: louvain.modularity,
        sets: sets.iter().map(|s| set_report(&g, s)).collect(),
    };
    emit(&to_json(&report), args.out.as_deref())
}

#[derive(Serialize)]
struct DecideReport {
    conditions: NetworkConditions,
    mode: SetMode,
    energy_rule: bool,
    #[serde(flatten)]
    verdict: decision::Verdict,
}

fn decide(args: DecideArgs) -> Result<(), CliError> {
    let g = load_graph(&args.graph)?;
    let cond = NetworkConditions::new(args.rtt_ms / 1000.0, args.bandwidth_bps / 8.0, args.speedup)
        .map_err(invalid)?;
    let model = match &args.energy_model {
        Some(p) => Some(decision::parse_energy_model(&read_input(p)?).map_err(invalid)?),
        None => None,
    };
    let mode = match args.mode {
        ModeArg::Any => SetMode::Any,
        ModeArg::All => SetMode::All,
    };
    let sets =
        partition::enumerate_partition_sets(&g, args.graph.distance.into()).map_err(invalid)?;
    let verdict = decision::select_partition(&sets, &g, &cond, model.as_ref(), mode);
    let report = DecideReport {
        conditions: cond,
        mode,
        energy_rule: model.is_some(),
        verdict,
    };
    emit(&to_json(&report), args.out.as_deref())
}

fn appstats_cmd(args: AppstatsArgs) -> Result<(), CliError> {
    let corpus = appstats::parse_corpus(&read_input(&args.corpus)?).map_err(invalid)?;
    let filter = match args.filter {
        FilterArg::SingleChar => ObfuscationFilter::SingleChar,
        FilterArg::SingleCharOrAToP => ObfuscationFilter::SingleCharOrAtoP,
    };
    let report =
        appstats::unique_class_fraction_with(&corpus, args.depth, filter).map_err(invalid)?;
    emit(&to_json(&report), args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Partition(a) => partition_cmd(a),
        Command::Decide(a) => decide(a),
        Command::Appstats(a) => appstats_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netoffload: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
