use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use steer_core::datasets::SyntheticConfig;
use steer_core::experiment::{self, ExperimentConfig, ModelSource};
use steer_core::model::ToyModel;
use steer_core::retrieval::{HashProjectionEmbedder, RetrievalConfig};
use steer_core::steering::CalibrationMode;
use steer_core::{Error, ErrorKind};

/// Steering-vector calibration and evaluation for decoder-only language models.
#[derive(Parser, Debug)]
#[command(name = "steer", version, about)]
struct Cli {
    /// TOML experiment config; command-line flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Master seed for splitting and fitting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a toy model, a labeled relevance corpus and a user cohort.
    GenSynthetic(SynthArgs),
    /// Compute and calibrate one steering vector per questionnaire item.
    Calibrate(RunArgs),
    /// Classify the test split at several steering strengths.
    EvalRelevance(RelevanceArgs),
    /// Fill the questionnaire for each user, with and without steering.
    EvalQuestionnaire(QuestionnaireArgs),
    /// Summarize the results found in the output directory.
    Report,
    /// Answer wire-protocol requests for a toy model on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Relevance records across all items.
    #[arg(long)]
    n_records: Option<usize>,
    #[arg(long)]
    relevant_fraction: Option<f64>,
    #[arg(long)]
    signal_strength: Option<f64>,
    #[arg(long)]
    cautious_bias: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    n_users: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    HyperplaneProxy,
    FullModel,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Toy model JSON, as written by gen-synthetic.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Relevance corpus (NDJSON).
    #[arg(long)]
    relevance: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_step: Option<f64>,
    /// Intervention layer (1-based); defaults to half the depth.
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Args, Debug)]
struct RelevanceArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated strengths; `*` is each item's calibrated strength.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    lambdas: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct QuestionnaireArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// User histories (NDJSON).
    #[arg(long)]
    users: Option<PathBuf>,
    /// Bounds of the largest-gap evidence cut.
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Width of the hashed bag-of-words embedder used for `embed` requests.
    #[arg(long, default_value_t = 256)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

/// Parsed config file: the experiment plus an optional `[synthetic]` table.
struct FileConfig {
    experiment: ExperimentConfig,
    synthetic: SyntheticConfig,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig, Error> {
    let Some(path) = path else {
        return Ok(FileConfig {
            experiment: ExperimentConfig::default(),
            synthetic: SyntheticConfig::default(),
        });
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let synthetic = match table.remove("synthetic") {
        Some(v) => v
            .try_into()
            .map_err(|e| Error::InvalidConfig(format!("[synthetic]: {e}")))?,
        None => SyntheticConfig::default(),
    };
    let experiment = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok(FileConfig { experiment, synthetic })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_run_args(c: &mut ExperimentConfig, a: RunArgs) {
    if let Some(path) = a.model {
        c.model = Some(ModelSource::Toy { path });
    }
    if a.relevance.is_some() {
        c.data.relevance = a.relevance;
    }
    set(&mut c.calibration.alpha, a.alpha);
    set(
        &mut c.calibration.mode,
        a.mode.map(|m| match m {
            ModeArg::HyperplaneProxy => CalibrationMode::HyperplaneProxy,
            ModeArg::FullModel => CalibrationMode::FullModel,
        }),
    );
    set(&mut c.calibration.grid.min, a.lambda_min);
    set(&mut c.calibration.grid.max, a.lambda_max);
    set(&mut c.calibration.grid.step, a.lambda_step);
    if a.layer.is_some() {
        c.calibration.layer = a.layer;
    }
}

fn apply_retrieval(c: &mut ExperimentConfig, k_min: Option<usize>, k_max: Option<usize>) -> Result<(), Error> {
    if k_min.is_none() && k_max.is_none() {
        return Ok(());
    }
    match &mut c.retrieval {
        RetrievalConfig::LargestGap { k_min: lo, k_max: hi } => {
            set(lo, k_min);
            set(hi, k_max);
            Ok(())
        }
        _ => Err(Error::InvalidConfig(
            "--k-min/--k-max apply to the largest_gap strategy only".into(),
        )),
    }
}

fn configure_workers() -> Result<(), Error> {
    let Ok(raw) = std::env::var("STEER_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("STEER_WORKERS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("cannot size worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_workers()?;
    let file = read_config(cli.config.as_deref())?;
    let mut exp = file.experiment;
    set(&mut exp.output_dir, cli.out.clone());
    set(&mut exp.seed, cli.seed);

    match cli.command {
        Command::GenSynthetic(a) => {
            let mut s = file.synthetic;
            set(&mut s.seed, cli.seed);
            set(&mut s.n_records, a.n_records);
            set(&mut s.relevant_fraction, a.relevant_fraction);
            set(&mut s.signal_strength, a.signal_strength);
            set(&mut s.cautious_bias, a.cautious_bias);
            set(&mut s.noise_std, a.noise_std);
            set(&mut s.n_users, a.n_users);
            let paths = experiment::run_gen_synthetic(&s, &exp.output_dir)?;
            println!("model      {}", paths.model.display());
            println!("relevance  {}", paths.relevance.display());
            println!("users      {}", paths.users.display());
        }
        Command::Calibrate(a) => {
            apply_run_args(&mut exp, a);
            let cals = experiment::run_calibration(&exp)?;
            print!("{}", experiment::calibration_summary_csv(&cals));
        }
        Command::EvalRelevance(a) => {
            apply_run_args(&mut exp, a.run);
            if let Some(l) = a.lambdas {
                exp.relevance_eval.lambdas = l;
            }
            let evals = experiment::run_relevance_eval(&exp)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&experiment::relevance_summary(&evals))?
            );
        }
        Command::EvalQuestionnaire(a) => {
            if let Some(path) = a.model {
                exp.model = Some(ModelSource::Toy { path });
            }
            if a.users.is_some() {
                exp.data.users = a.users;
            }
            apply_retrieval(&mut exp, a.k_min, a.k_max)?;
            let o = experiment::run_questionnaire_eval(&exp)?;
            print!("{}", o.table());
        }
        Command::Report => print!("{}", experiment::report(&exp.output_dir)?),
        Command::Serve(a) => {
            let text = std::fs::read_to_string(&a.model)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", a.model.display())))?;
            let model = ToyModel::from_json(&text)?;
            let embedder = HashProjectionEmbedder::new(a.embed_dim, a.embed_seed);
            let stdin = std::io::stdin();
            let n = steer_core::protocol::serve(&model, Some(&embedder), stdin.lock(), std::io::stdout().lock())?;
            log::info!("served {n} requests");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Calibration => 4,
        ErrorKind::Other => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
