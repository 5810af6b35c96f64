//! Command-line front end. `cli_main` returns the process exit status:
//! 0 on success, 1 for configuration or runtime failures, 2 for usage errors.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Scheme, SimConfig};
use crate::experiment::{self, DataSource};
use crate::output::{self, OutputFormat};
use crate::trainer::data::{self, SynthSpec};

const DEFAULT_SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Parser)]
#[command(name = "mafl", about = "Mobility-aware asynchronous federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scheme and write per-round metrics.
    Run(CommonArgs),
    /// Run MAFL and AFL on the same seeds; --out names a directory.
    Compare(CommonArgs),
    /// Final-round accuracy for each --beta.
    SweepBeta(CommonArgs),
    /// Write a synthetic dataset as MNIST-style IDX files into --out.
    GenSynth(CommonArgs),
    /// Parse and validate --config.
    ValidateConfig(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable; defaults to experiment.rng_seed.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Aggregation proportion; repeatable for sweep-beta.
    #[arg(long = "beta")]
    betas: Vec<f64>,
    #[arg(long)]
    scheme: Option<String>,
    /// `synth`, `mnist` (uses MAFL_DATA_DIR) or `mnist:PATH`.
    #[arg(long, default_value = "synth")]
    data: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    /// Worker threads for independent seed runs; outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

/// Failure with its exit status.
struct Failure {
    code: i32,
    message: String,
}

fn fail(e: impl Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn usage(message: impl Display) -> Failure {
    Failure {
        code: 2,
        message: message.to_string(),
    }
}

pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("mafl: {}", f.message.lines().next().unwrap_or_default());
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => with_pool(&args, || cmd_run(&args)),
        Command::Compare(args) => with_pool(&args, || cmd_compare(&args)),
        Command::SweepBeta(args) => with_pool(&args, || cmd_sweep(&args)),
        Command::GenSynth(args) => cmd_gen_synth(&args),
        Command::ValidateConfig(args) => cmd_validate(&args),
    }
}

fn with_pool(args: &CommonArgs, job: impl FnOnce() -> Result<(), Failure> + Send) -> Result<(), Failure> {
    match args.threads {
        None => job(),
        Some(0) => Err(usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(fail)?
            .install(job),
    }
}

/// Config file, then flag overrides, then validation.
fn load_config(args: &CommonArgs, single_beta: bool) -> Result<SimConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::from_file(path).map_err(fail)?,
        None => SimConfig::default(),
    };
    if let Some(m) = args.rounds {
        cfg.num_rounds = m;
    }
    if single_beta {
        match args.betas.as_slice() {
            [] => {}
            [beta] => cfg.agg_proportion = *beta,
            _ => return Err(usage("--beta may be given once for this command")),
        }
    }
    if let Some(scheme) = &args.scheme {
        cfg.scheme = scheme.parse::<Scheme>().map_err(usage)?;
    }
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

fn seeds(args: &CommonArgs, cfg: &SimConfig) -> Vec<u64> {
    if args.seeds.is_empty() {
        vec![cfg.rng_seed]
    } else {
        args.seeds.clone()
    }
}

fn format_for(args: &CommonArgs, path: Option<&Path>) -> Result<OutputFormat, Failure> {
    match (&args.format, path) {
        (Some(f), _) => f.parse().map_err(usage),
        (None, Some(p)) => Ok(OutputFormat::from_path(p)),
        (None, None) => Ok(OutputFormat::Csv),
    }
}

fn load_data(args: &CommonArgs) -> Result<(data::Dataset, data::Dataset), Failure> {
    let source: DataSource = args.data.parse().map_err(usage)?;
    source.load().map_err(fail)
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| fail(format!("{}: {e}", parent.display())))?;
            }
            std::fs::write(path, bytes).map_err(|e| fail(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout().write_all(bytes).map_err(fail),
    }
}

fn cmd_run(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load_config(args, true)?;
    let (train, test) = load_data(args)?;
    let result = experiment::run_experiment(&cfg, &seeds(args, &cfg), &train, &test).map_err(fail)?;
    let out = args.out.as_deref();
    emit(&output::render_results(&result, format_for(args, out)?), out)
}

fn cmd_compare(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load_config(args, true)?;
    let (train, test) = load_data(args)?;
    let (mafl, afl) = experiment::compare(&cfg, &seeds(args, &cfg), &train, &test).map_err(fail)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let format = format_for(args, None)?;
    for result in [&mafl, &afl] {
        let path = dir.join(format!("{}.{format}", result.scheme));
        output::write_results(result, &path, format).map_err(fail)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load_config(args, false)?;
    let betas = if args.betas.is_empty() {
        DEFAULT_SWEEP.to_vec()
    } else {
        args.betas.clone()
    };
    let (train, test) = load_data(args)?;
    let rows = experiment::sweep_beta(&cfg, &betas, &seeds(args, &cfg), &train, &test).map_err(fail)?;
    let out = args.out.as_deref();
    emit(&output::render_sweep(&rows, format_for(args, out)?), out)
}

fn cmd_gen_synth(args: &CommonArgs) -> Result<(), Failure> {
    let dir = args.out.as_ref().ok_or_else(|| usage("gen-synth needs --out DIR"))?;
    let spec = SynthSpec {
        seed: args.seeds.first().copied().unwrap_or(0),
        ..SynthSpec::default()
    };
    let (train, test) = data::synth_split(&spec);
    std::fs::create_dir_all(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))?;
    data::write_idx(&train, &dir.join(data::TRAIN_IMAGES), &dir.join(data::TRAIN_LABELS)).map_err(fail)?;
    data::write_idx(&test, &dir.join(data::TEST_IMAGES), &dir.join(data::TEST_LABELS)).map_err(fail)?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_validate(args: &CommonArgs) -> Result<(), Failure> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| usage("validate-config needs --config PATH"))?;
    let cfg = SimConfig::from_file(path).map_err(fail)?;
    println!("ok {}", cfg.fingerprint());
    Ok(())
}
