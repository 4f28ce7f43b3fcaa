use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tabsyn::bench::{fit_model, run_suite, FitOptions, ModelKind, Suite};
use tabsyn::clbn::BinValue;
use tabsyn::ctgan::LossKind;
use tabsyn::data::{Schema, TaskKind};
use tabsyn::eval::{likelihood_fitness, ml_efficacy, EfficacyConfig, PredictorKind};
use tabsyn::io::{load_csv, load_model, save_model, write_csv};
use tabsyn::oracle::Oracle;
use tabsyn::sampler::CondMode;
use tabsyn::transform::Normalization;
use tabsyn::Error;

#[derive(Parser)]
#[command(name = "tabsyn", version, about = "Synthesize mixed-type tables and benchmark synthesizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a synthesizer on a CSV table and save it.
    Fit(FitArgs),
    /// Draw rows from a saved model.
    Sample(SampleArgs),
    /// Draw rows from a known oracle distribution.
    Simulate(SimulateArgs),
    /// Score a synthetic table.
    Evaluate(EvaluateArgs),
    /// Run a dataset x method x seed grid from a suite file.
    Benchmark(BenchmarkArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ctgan,
    Tvae,
    Clbn,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Vgm,
    Gmm5,
    Gmm10,
    Minmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum CondArg {
    Logfreq,
    Rawfreq,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Wgangp,
    Vanilla,
}

#[derive(Clone, Copy, ValueEnum)]
enum BinValueArg {
    Center,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Likelihood,
    Efficacy,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long, value_enum)]
    cond: Option<CondArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    pac: Option<usize>,
    /// Bins per continuous column (clbn).
    #[arg(long)]
    bins: Option<usize>,
    /// How clbn turns a sampled bin back into a number.
    #[arg(long, value_enum)]
    bin_value: Option<BinValueArg>,
    /// Also write the per-step training losses as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Generate every row under `column=category`.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// grid, gridr, ring or bif:PATH
    #[arg(long)]
    oracle: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Seed for drawing rows.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed that fixes the oracle itself (only gridr uses it).
    #[arg(long, default_value_t = 0)]
    oracle_seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long, default_value_t = 0)]
    oracle_seed: u64,
    #[arg(long)]
    syn: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Schema of both tables; defaults to the oracle's schema.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Comma-separated, e.g. `tree(20),logistic,mlp(50)`.
    #[arg(long)]
    predictors: Option<String>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the worker count of the suite file.
    #[arg(long)]
    workers: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) | Error::Schema(_) | Error::ModelFile(_) => 4,
        Error::NonFinite(_) => 5,
        _ => 1,
    }
}

fn fit(a: FitArgs) -> tabsyn::Result<()> {
    let schema = Schema::load(&a.schema)?;
    let table = load_csv(&a.data, &schema)?;
    let options = FitOptions {
        epochs: a.epochs,
        batch_size: a.batch,
        normalization: a.norm.map(|n| match n {
            NormArg::Vgm => Normalization::Vgm,
            NormArg::Gmm5 => Normalization::Gmm5,
            NormArg::Gmm10 => Normalization::Gmm10,
            NormArg::Minmax => Normalization::MinMax,
        }),
        cond: a.cond.map(|c| match c {
            CondArg::Logfreq => CondMode::LogFreq,
            CondArg::Rawfreq => CondMode::RawFreq,
            CondArg::None => CondMode::None,
        }),
        loss: a.loss.map(|l| match l {
            LossArg::Wgangp => LossKind::WganGp,
            LossArg::Vanilla => LossKind::Vanilla,
        }),
        pac: a.pac,
        bins: a.bins,
        bin_value: a.bin_value.map(|b| match b {
            BinValueArg::Center => BinValue::Center,
            BinValueArg::Uniform => BinValue::Uniform,
        }),
    };
    let kind = match a.model {
        ModelArg::Ctgan => ModelKind::Ctgan,
        ModelArg::Tvae => ModelKind::Tvae,
        ModelArg::Clbn => ModelKind::Clbn,
    };
    let model = fit_model(kind, &table, &options, a.seed)?;
    save_model(&model, &a.out)?;
    if let Some(h) = a.history {
        let text = match &model {
            tabsyn::model::Model::Ctgan(m) => m.history_csv(),
            tabsyn::model::Model::Tvae(m) => m.history_csv(),
            tabsyn::model::Model::Clbn(_) => String::from("step\n"),
        };
        std::fs::write(h, text)?;
    }
    eprintln!("fitted {} on {} rows -> {}", model.kind(), table.n_rows(), a.out.display());
    Ok(())
}

fn sample(a: SampleArgs) -> tabsyn::Result<()> {
    let model = load_model(&a.model)?;
    let condition = match &a.condition {
        Some(c) => {
            let (col, cat) = c
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("condition `{c}` is not of the form column=value")))?;
            Some((col.trim(), cat.trim()))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let table = model.sample(a.n, condition, &mut rng)?;
    write_csv(&table, &a.out)?;
    Ok(())
}

/// `data.csv` -> `data.schema.json`.
fn sibling_schema(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.schema.json"))
}

fn simulate(a: SimulateArgs) -> tabsyn::Result<()> {
    let oracle = Oracle::from_spec(&a.oracle, a.oracle_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let table = oracle.sample(a.n, &mut rng);
    write_csv(&table, &a.out)?;
    table.schema().save(sibling_schema(&a.out))?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> tabsyn::Result<()> {
    let oracle = a
        .oracle
        .as_deref()
        .map(|o| Oracle::from_spec(o, a.oracle_seed))
        .transpose()?;
    let schema = match (&a.schema, &oracle) {
        (Some(p), _) => Schema::load(p)?,
        (None, Some(o)) => o.schema(),
        (None, None) => return Err(Error::InvalidArgument("--schema is required without --oracle".into())),
    };
    let syn = load_csv(&a.syn, &schema)?;
    let test = load_csv(&a.test, &schema)?;
    let json = match a.mode {
        ModeArg::Likelihood => {
            let oracle = oracle.ok_or_else(|| Error::InvalidArgument("likelihood mode needs --oracle".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let r = likelihood_fitness(&oracle, &syn, &test, &mut rng)?;
            println!("l_syn {:.4}\nl_test {:.4}", r.l_syn, r.l_test);
            serde_json::to_string_pretty(&r)?
        }
        ModeArg::Efficacy => {
            let task = schema
                .target()
                .and_then(|t| schema.columns[t].task)
                .unwrap_or(TaskKind::Classification);
            let predictors = match &a.predictors {
                Some(list) => list
                    .split(',')
                    .map(|p| p.parse::<PredictorKind>())
                    .collect::<tabsyn::Result<Vec<_>>>()?,
                None => PredictorKind::defaults(task),
            };
            let r = ml_efficacy(&syn, &test, &EfficacyConfig::new(predictors, a.seed))?;
            print!("{}", r.to_csv());
            serde_json::to_string_pretty(&r)?
        }
    };
    std::fs::write(&a.report, json)?;
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> tabsyn::Result<()> {
    let mut suite = Suite::load(&a.suite)?;
    if let Some(w) = a.workers {
        suite.workers = w;
    }
    let rows = run_suite(&suite, &a.out)?;
    eprintln!("{} result rows -> {}", rows.len(), a.out.join("results.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Sample(a) => sample(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
