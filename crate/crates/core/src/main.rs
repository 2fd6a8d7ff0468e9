use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metagrad_lab::harness::{
    export_plot_data, read_jsonl, run_bias_variance_sweep, run_mrp, run_snake, write_outputs, Command, ExperimentConfig,
    RunLog,
};
use metagrad_lab::Error;

#[derive(Parser)]
#[command(name = "metagrad-lab", version, about = "Multi-step and mixed meta-gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Value prediction on the 10-state chain with meta-learned discounts.
    Mrp(RunArgs),
    /// A2C on Snake with meta-learned return and loss weights.
    Snake(RunArgs),
    /// Bias and variance of n-step and mixed meta-gradients along a prediction run.
    BiasVariance(RunArgs),
    /// Rebuild plots/*.csv from a metrics log.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `key=value`, applied after the configuration file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory; plots are written to `<out>/plots`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Metrics log to read (default `<out>/metrics.jsonl`).
    #[arg(long)]
    log: Option<PathBuf>,
}

fn resolve(command: Command, args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let text = match &args.config {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    ExperimentConfig::resolve(command, text.as_deref(), &overrides)
}

fn summarize(log: &RunLog) {
    if let Some(last) = log.train_rows().last() {
        let meta: Vec<String> = last.meta.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        let progress = match (last.loss, last.mean_return) {
            (Some(l), _) => format!("loss {l:.5}"),
            (None, Some(r)) => format!("mean return {r:.3}"),
            _ => "no finished episodes".into(),
        };
        println!("iteration {}: {progress}; {}", last.iteration, meta.join(" "));
    }
    for r in log.records() {
        println!(
            "iteration {:>6} {:>5}-{:<3} std {:.4e} (x{:.2} of 1-step) bias {}",
            r.iteration,
            r.estimator,
            r.n,
            r.std_norm,
            r.std_norm_rel_1step,
            r.bias_norm.map_or("-".into(), |b| format!("{b:.4e}"))
        );
    }
}

type Runner = fn(&ExperimentConfig) -> Result<RunLog, Error>;

fn run(cli: Cli) -> Result<(), Error> {
    let (command, args, runner): (Command, RunArgs, Runner) = match cli.command {
        Cmd::Mrp(a) => (Command::Mrp, a, run_mrp),
        Cmd::Snake(a) => (Command::Snake, a, run_snake),
        Cmd::BiasVariance(a) => (Command::BiasVariance, a, run_bias_variance_sweep),
        Cmd::Export(a) => {
            let log = a.log.unwrap_or_else(|| a.out.join("metrics.jsonl"));
            let rows = read_jsonl(&log)?;
            export_plot_data(&rows, &a.out)?;
            println!("wrote {}", a.out.join("plots").display());
            return Ok(());
        }
    };
    let cfg = resolve(command, &args)?;
    let log = runner(&cfg)?;
    write_outputs(&log, Path::new(&args.out))?;
    summarize(&log);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Usage(_) => 2,
                Error::Numeric { .. } => 3,
                Error::Io(_) => 1,
            })
        }
    }
}
