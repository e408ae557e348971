use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod table;

use attrcom::pipeline::Mode;
use attrcom::refine::ThresholdRule;

/// Community detection on attributed networks.
#[derive(Parser, Debug)]
#[command(name = "attrcom", version, about, long_about = None)]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print machine-readable JSON instead of tables
    #[arg(long, global = true)]
    json: bool,

    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full detection pipeline and write results
    Detect(DetectArgs),
    /// Best of several Leiden runs on the graph
    Leiden(LeidenArgs),
    /// Split human labels into connected sub-communities
    Refine(RefineArgs),
    /// Evaluate an existing assignment
    Metrics(MetricsArgs),
    /// Generate a synthetic attributed network
    Gen(GenArgs),
    /// Compare the full pipeline with its ablations
    Ablate(AblateArgs),
    /// Convert a `.content`/`.cites` dataset into the plain input files
    Convert(ConvertArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Edge list, one `u v` pair per line
    #[arg(long)]
    edges: PathBuf,

    /// Node attributes (dense CSV or `id index value` triplets); adjacency
    /// rows are used when absent
    #[arg(long)]
    attrs: Option<PathBuf>,

    /// Human labels, one `id label` pair per line
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,

    /// Weight of the label loss term
    #[arg(long)]
    mu: Option<f64>,

    /// Take `mu` from the preset for a known network (cora, citeseer,
    /// amazon-photo, amazon-pc, coauthor-cs, coauthor-phy)
    #[arg(long)]
    network: Option<String>,

    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,

    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,

    /// Master seed
    #[arg(long)]
    seed: Option<u64>,

    /// Leiden runs on the whole graph
    #[arg(long)]
    leiden_runs: Option<usize>,

    /// Leiden runs per label during refinement
    #[arg(long)]
    refine_runs: Option<usize>,

    /// Merge-step stopping rule
    #[arg(long, value_enum)]
    threshold: Option<ThresholdArg>,

    /// Hidden layer sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,

    /// BIRCH subcluster radius threshold
    #[arg(long)]
    birch_threshold: Option<f64>,

    /// BIRCH branching factor
    #[arg(long)]
    birch_branching: Option<usize>,

    /// Relabel rows by nearest BIRCH subcluster centroid
    #[arg(long)]
    birch_reassign: bool,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory
    #[arg(long, env = "ATTRCOM_OUT_DIR", default_value = "attrcom-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    out: OutArgs,

    /// Pipeline variant
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Also write the trained model checkpoint to this file
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LeidenArgs {
    #[arg(long)]
    edges: PathBuf,

    /// Labels; when given, runs are ranked by NMI instead of modularity
    #[arg(long)]
    labels: Option<PathBuf>,

    #[arg(long, default_value_t = 30)]
    runs: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Refinement randomness
    #[arg(long, default_value_t = 0.01)]
    theta: f64,

    /// Write the winning assignment to this file
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    edges: PathBuf,

    #[arg(long)]
    labels: PathBuf,

    /// Leiden runs per label
    #[arg(long, default_value_t = 10)]
    runs: usize,

    #[arg(long, value_enum, default_value_t = ThresholdArg::Half)]
    threshold: ThresholdArg,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write the refined assignment to this file
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    edges: PathBuf,

    /// Assignment to evaluate (`id community` per line)
    #[arg(long)]
    assignment: PathBuf,

    /// Reference labels for NMI and F1
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 300)]
    n: usize,

    /// Planted blocks
    #[arg(long, default_value_t = 6)]
    k: usize,

    #[arg(long, default_value_t = 0.3)]
    p_in: f64,

    #[arg(long, default_value_t = 0.01)]
    p_out: f64,

    /// Attribute columns
    #[arg(long, default_value_t = 60)]
    attributes: usize,

    /// Attribute signal in [0, 1]
    #[arg(long, default_value_t = 0.8)]
    signal: f64,

    /// Fraction of labels uniting two blocks with no edges between them
    #[arg(long, default_value_t = 0.0)]
    disconnected_fraction: f64,

    /// Fraction of labels uniting two linked blocks
    #[arg(long, default_value_t = 0.0)]
    coarse_fraction: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    out: OutArgs,

    /// Variants to compare with the full pipeline
    #[arg(long, value_enum, value_delimiter = ',', default_value = "lm-only,lr-only,unrefined-labels")]
    modes: Vec<ModeArg>,

    /// Seeds per variant, counting up from the master seed
    #[arg(long, default_value_t = 1)]
    repeats: u64,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// `<name>.content` file: `id features... label` per line
    #[arg(long)]
    content: PathBuf,

    /// `<name>.cites` file: `cited citing` per line
    #[arg(long)]
    cites: PathBuf,

    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Full,
    LmOnly,
    LrOnly,
    UnrefinedLabels,
    ModifiedSplit,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::LmOnly => Mode::LmOnly,
            ModeArg::LrOnly => Mode::LrOnly,
            ModeArg::UnrefinedLabels => Mode::UnrefinedLabels,
            ModeArg::ModifiedSplit => Mode::ModifiedSplit,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ThresholdArg {
    /// Half the label's connected components
    Half,
    /// All of the label's connected components
    All,
}

impl From<ThresholdArg> for ThresholdRule {
    fn from(t: ThresholdArg) -> ThresholdRule {
        match t {
            ThresholdArg::Half => ThresholdRule::HalfComponents,
            ThresholdArg::All => ThresholdRule::AllComponents,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
