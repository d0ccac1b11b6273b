//! Command-line driver for the incremental learning benchmark.
//!
//! Exit codes: 0 on success, 1 for usage or configuration mistakes, 2 for
//! malformed or unreadable data files, 3 when training diverges.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use incrlearn_bench::{
    beta_rows_to_csv, emit_report, lambda_rows_to_csv, load_report_json, report_to_csv,
    run_protocol, sweep_beta, sweep_lambda, BetaMode, CifarVariant, DatasetSpec, Method,
    MixtureSpec, ProtocolConfig, ReportFormat, Selection,
};
use incrlearn_core::{gan_train, save_generator, Error, LabeledBatch, Result, RngState};

#[derive(Parser)]
#[command(
    name = "incrlearn",
    version,
    about = "Class-incremental learning benchmark: distillation, exemplar replay, generated replay, and bias correction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the incremental protocol with one method and report every increment.
    Run(RunArgs),
    /// Rerun the protocol across the mixing-weight grid, ranked on validation.
    SweepLambda(SweepArgs),
    /// Score the bias-scalar grid on the final model of one protocol run.
    SweepBeta(SweepArgs),
    /// Train a generator adversarially on one dataset and save its checkpoint.
    GanTrain(GanTrainArgs),
    /// Sample a Gaussian-mixture dataset and write it as CSV files.
    DatasetGen(DatasetGenArgs),
    /// Validate a JSON report and print its summary CSV.
    Report(ReportArgs),
}

/// Shared protocol options. Every flag may also appear in the config file as
/// `key = value` (underscores or dashes); flags override the file.
#[derive(Args, Clone)]
struct ProtocolArgs {
    /// Config file with one `key = value` per line; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Data source: `gaussian`, `csv:DIR`, `cifar10:DIR`, or `cifar100:DIR`.
    #[arg(long)]
    dataset: Option<String>,
    /// Total number of classes in the protocol.
    #[arg(long)]
    classes: Option<usize>,
    /// Number of equal class increments.
    #[arg(long)]
    parts: Option<usize>,
    /// finetune, lwf, ours-real, or ours-gan.
    #[arg(long)]
    method: Option<String>,
    /// Distillation weight in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// `auto` (estimate on a holdout) or a fixed value in [0, 1].
    #[arg(long)]
    beta: Option<String>,
    /// Total exemplar budget, re-divided over all seen classes.
    #[arg(long)]
    memory_size: Option<usize>,
    /// Exemplar selection: random or herding.
    #[arg(long)]
    selection: Option<String>,
    /// Replay confidence threshold in [0, 1).
    #[arg(long)]
    theta: Option<f64>,
    /// Per-class cap on retained replay samples.
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// SGD learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Hidden layer widths, comma separated, e.g. `64,64`.
    #[arg(long)]
    hidden: Option<String>,
    /// Distillation temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Master seed for training, holdouts, selection, and replay.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed for the class presentation order (defaults to the master seed).
    #[arg(long)]
    class_order_seed: Option<u64>,
    /// Mixture noise scale (gaussian dataset only).
    #[arg(long)]
    sigma: Option<f64>,
    /// Distance between neighbouring class means, in sigmas (gaussian only).
    #[arg(long)]
    separation: Option<f64>,
    /// Training samples per class (gaussian dataset only).
    #[arg(long)]
    train_per_class: Option<usize>,
    /// Test samples per class (gaussian dataset only).
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Adversarial training iterations per generator.
    #[arg(long)]
    gan_iterations: Option<usize>,
    /// Critic weight-clipping bound.
    #[arg(long)]
    gan_clip: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Sweep table destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GanTrainArgs {
    /// Data source, as for `run`.
    #[arg(long, default_value = "gaussian")]
    dataset: String,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Model only this class instead of the whole training set.
    #[arg(long)]
    label: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    noise_dim: Option<usize>,
    #[arg(long)]
    critic_iters: Option<usize>,
    #[arg(long)]
    generator_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Checkpoint stem; writes `<stem>.json` and `<stem>.bin`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetGenArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Chord distance between neighbouring class means, in sigmas.
    #[arg(long, default_value_t = 4.5)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `train.csv` and `test.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report to validate and summarize.
    #[arg(long)]
    input: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Contract(_) => 1,
                Error::Format(_) | Error::Io(_) | Error::Json(_) => 2,
                Error::Diverged { .. } => 3,
            })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::SweepLambda(args) => cmd_sweep_lambda(args),
        Command::SweepBeta(args) => cmd_sweep_beta(args),
        Command::GanTrain(args) => cmd_gan_train(args),
        Command::DatasetGen(args) => cmd_dataset_gen(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Flat `key = value` config file; unknown keys are rejected so typos fail
/// loudly instead of silently using defaults.
fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    const KNOWN: &[&str] = &[
        "dataset",
        "classes",
        "parts",
        "method",
        "lambda",
        "beta",
        "memory_size",
        "selection",
        "theta",
        "topk",
        "epochs",
        "batch_size",
        "learning_rate",
        "hidden",
        "temperature",
        "seed",
        "class_order_seed",
        "sigma",
        "separation",
        "train_per_class",
        "test_per_class",
        "gan_iterations",
        "gan_clip",
    ];
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(format!(
                "{}:{}: expected `key = value`, got `{raw}`",
                path.display(),
                lineno + 1
            ))
        })?;
        let key = key.trim().replace('-', "_");
        if !KNOWN.contains(&key.as_str()) {
            return Err(Error::format(format!(
                "{}:{}: unknown config key `{key}`",
                path.display(),
                lineno + 1
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Flag wins, then the config file, then the caller's default.
fn pick<T>(flag: Option<T>, cfg: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    cfg.get(key)
        .map(|raw| {
            raw.parse::<T>()
                .map_err(|e| Error::contract(format!("config key `{key}`: {e}")))
        })
        .transpose()
}

fn parse_hidden(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::contract(format!("bad hidden width `{s}` in `{raw}`")))
        })
        .collect()
}

fn dataset_spec(
    kind: &str,
    classes: usize,
    seed: u64,
    sigma: Option<f64>,
    separation: Option<f64>,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
) -> Result<DatasetSpec> {
    if kind == "gaussian" {
        let mut spec = MixtureSpec::new(classes, seed);
        if let Some(s) = sigma {
            spec.sigma = s;
        }
        if let Some(d) = separation {
            spec.placement = incrlearn_bench::Placement::Circle { separation: d };
        }
        if let Some(n) = train_per_class {
            spec.train_per_class = n;
        }
        if let Some(n) = test_per_class {
            spec.test_per_class = n;
        }
        return Ok(DatasetSpec::GaussianMixture(spec));
    }
    if let Some(dir) = kind.strip_prefix("csv:") {
        return Ok(DatasetSpec::CsvVectors {
            dir: PathBuf::from(dir),
        });
    }
    if let Some(dir) = kind.strip_prefix("cifar10:") {
        return Ok(DatasetSpec::CifarBinary {
            dir: PathBuf::from(dir),
            variant: CifarVariant::Cifar10,
        });
    }
    if let Some(dir) = kind.strip_prefix("cifar100:") {
        return Ok(DatasetSpec::CifarBinary {
            dir: PathBuf::from(dir),
            variant: CifarVariant::Cifar100Fine,
        });
    }
    Err(Error::contract(format!(
        "unknown dataset `{kind}` (expected gaussian, csv:DIR, cifar10:DIR, or cifar100:DIR)"
    )))
}

/// Resolves flags, config file, and defaults into a protocol setup plus the
/// dataset it runs on.
fn resolve_protocol(args: &ProtocolArgs) -> Result<(ProtocolConfig, DatasetSpec)> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => BTreeMap::new(),
    };
    let method: Method = pick(args.method.clone(), &cfg, "method")?
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(Method::OursReal);
    let classes = pick(args.classes, &cfg, "classes")?.unwrap_or(8);
    let parts = pick(args.parts, &cfg, "parts")?.unwrap_or(2);
    let seed = pick(args.seed, &cfg, "seed")?.unwrap_or(0);

    let mut pc = ProtocolConfig::new(method, classes, parts, seed);
    if let Some(v) = pick(args.class_order_seed, &cfg, "class_order_seed")? {
        pc.class_order_seed = v;
    }
    if let Some(v) = pick(args.lambda, &cfg, "lambda")? {
        pc.lambda = v;
    }
    if let Some(raw) = pick(args.beta.clone(), &cfg, "beta")? {
        pc.beta = raw.parse::<BetaMode>()?;
    }
    if let Some(v) = pick(args.memory_size, &cfg, "memory_size")? {
        pc.memory_size = v;
    }
    if let Some(raw) = pick(args.selection.clone(), &cfg, "selection")? {
        pc.selection = raw.parse::<Selection>()?;
    }
    if let Some(v) = pick(args.theta, &cfg, "theta")? {
        pc.theta = v;
    }
    if let Some(v) = pick(args.topk, &cfg, "topk")? {
        pc.top_k = v;
    }
    if let Some(v) = pick(args.epochs, &cfg, "epochs")? {
        pc.epochs = v;
    }
    if let Some(v) = pick(args.batch_size, &cfg, "batch_size")? {
        pc.batch_size = v;
    }
    if let Some(v) = pick(args.learning_rate, &cfg, "learning_rate")? {
        pc.opt.learning_rate = v;
    }
    if let Some(raw) = pick(args.hidden.clone(), &cfg, "hidden")? {
        pc.hidden = parse_hidden(&raw)?;
    }
    if let Some(v) = pick(args.temperature, &cfg, "temperature")? {
        pc.temperature = v;
    }
    if let Some(v) = pick(args.gan_iterations, &cfg, "gan_iterations")? {
        pc.gan.iterations = v;
    }
    if let Some(v) = pick(args.gan_clip, &cfg, "gan_clip")? {
        pc.gan.clip = v;
    }

    let kind = pick(args.dataset.clone(), &cfg, "dataset")?.unwrap_or_else(|| "gaussian".into());
    let sigma = pick(args.sigma, &cfg, "sigma")?;
    let separation = pick(args.separation, &cfg, "separation")?;
    let train_pc = pick(args.train_per_class, &cfg, "train_per_class")?;
    let test_pc = pick(args.test_per_class, &cfg, "test_per_class")?;
    let data = dataset_spec(&kind, classes, seed, sigma, separation, train_pc, test_pc)?;
    Ok((pc, data))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    fs::create_dir_all(dir)?;
                }
            }
            fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (pc, data) = resolve_protocol(&args.protocol)?;
    let format: ReportFormat = args.format.parse()?;
    let outcome = run_protocol(&pc, &data)?;
    match &args.out {
        Some(path) => {
            emit_report(&outcome.report, format, path)?;
            for rec in &outcome.report.increments {
                println!(
                    "increment {}: classes {}, top1 {:.4}, beta {:.1}, lambda {:.1} ({:.1}s)",
                    rec.increment, rec.classes_seen, rec.top1, rec.beta, rec.lambda, rec.seconds
                );
            }
            println!("report written to {}", path.display());
        }
        None => {
            let text = match format {
                ReportFormat::Csv => report_to_csv(&outcome.report),
                ReportFormat::Json => {
                    let mut s = serde_json::to_string_pretty(&outcome.report)?;
                    s.push('\n');
                    s
                }
            };
            print!("{text}");
        }
    }
    Ok(())
}

fn cmd_sweep_lambda(args: SweepArgs) -> Result<()> {
    let (pc, data) = resolve_protocol(&args.protocol)?;
    let rows = sweep_lambda(&pc, &data)?;
    write_or_print(args.out.as_deref(), &lambda_rows_to_csv(&rows))
}

fn cmd_sweep_beta(args: SweepArgs) -> Result<()> {
    let (mut pc, data) = resolve_protocol(&args.protocol)?;
    // The sweep needs the validation holdout only auto mode draws.
    pc.beta = BetaMode::Auto;
    let outcome = run_protocol(&pc, &data)?;
    let rows = sweep_beta(&outcome.final_state)?;
    write_or_print(args.out.as_deref(), &beta_rows_to_csv(&rows))
}

fn cmd_gan_train(args: GanTrainArgs) -> Result<()> {
    let data = dataset_spec(
        &args.dataset,
        args.classes,
        args.seed,
        args.sigma,
        None,
        args.train_per_class,
        args.test_per_class,
    )?;
    let (train, _test) = incrlearn_bench::load_dataset(&data)?;
    let subject: LabeledBatch = match args.label {
        Some(label) => {
            let filtered = train.filter_label_range(label, label);
            if filtered.is_empty() {
                return Err(Error::contract(format!(
                    "no training samples with label {label}"
                )));
            }
            filtered
        }
        None => train,
    };
    let mut gan = incrlearn_bench::desk_gan_config();
    if let Some(v) = args.iterations {
        gan.iterations = v;
    }
    if let Some(v) = args.clip {
        gan.clip = v;
    }
    if let Some(v) = args.noise_dim {
        gan.noise_dim = v;
    }
    if let Some(v) = args.critic_iters {
        gan.critic_iters = v;
    }
    if let Some(v) = args.generator_lr {
        gan.generator_lr = v;
    }
    if let Some(v) = args.critic_lr {
        gan.critic_lr = v;
    }
    if let Some(v) = args.batch_size {
        gan.batch_size = v;
    }
    let mut rng = RngState::new(args.seed);
    let (generator, _critic) = gan_train(&subject, &gan, &mut rng)?;
    save_generator(&generator, &args.out)?;
    println!(
        "generator trained on {} samples for {} iterations; checkpoint at {}.json/.bin",
        subject.len(),
        gan.iterations,
        args.out.display()
    );
    Ok(())
}

fn cmd_dataset_gen(args: DatasetGenArgs) -> Result<()> {
    let spec = MixtureSpec {
        classes: args.classes,
        dim: args.dim,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        sigma: args.sigma,
        placement: incrlearn_bench::Placement::Circle {
            separation: args.separation,
        },
        seed: args.seed,
    };
    let (train, test) = incrlearn_bench::make_gaussian_mixture(&spec)?;
    fs::create_dir_all(&args.out)?;
    incrlearn_bench::write_csv_vectors(&train, &args.out.join("train.csv"))?;
    incrlearn_bench::write_csv_vectors(&test, &args.out.join("test.csv"))?;
    println!(
        "wrote {} train / {} test rows across {} classes to {}",
        train.len(),
        test.len(),
        args.classes,
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let report = load_report_json(&args.input)?;
    write_or_print(args.out.as_deref(), &report_to_csv(&report))
}
