use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtl_core::experiment::{cmd_features, cmd_report, cmd_synth, cmd_train_eval, ExperimentConfig, REPORT_FILE};
use rtl_core::Error;

#[derive(Parser)]
#[command(name = "rtl", version, about = "RTL seismic features and earthquake prediction experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the experiment and synthetic catalog seeds.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the [synth] catalog and write catalog.csv.
    Synth,
    /// Build lagged RTL features and write features.csv.
    Features,
    /// Train and evaluate every model on every grid cell.
    TrainEval,
    /// Print a report.csv as a table, best t0 per r0 and model.
    Report {
        /// Defaults to report.csv in the output directory.
        report: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Toml(_) => 2,
        Error::Degenerate(_) | Error::Numerical(_) => 4,
        Error::Parse { .. }
        | Error::Validation { .. }
        | Error::Data(_)
        | Error::DimensionMismatch { .. }
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 3,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli.config.as_deref().ok_or_else(|| Error::Config("this command needs --config PATH".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn report_path(cli: &Cli, explicit: Option<&Path>) -> Result<PathBuf, Error> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let dir = match (&cli.out, &cli.config) {
        (Some(out), _) => out.clone(),
        (None, Some(_)) => load_config(cli)?.output_dir,
        (None, None) => ExperimentConfig::default().output_dir,
    };
    Ok(dir.join(REPORT_FILE))
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Synth => {
            let (path, n) = cmd_synth(&load_config(cli)?)?;
            println!("{n} events written to {}", path.display());
        }
        Command::Features => {
            let (path, built) = cmd_features(&load_config(cli)?)?;
            println!(
                "{} rows x {} features written to {} (dropped {} early, {} late)",
                built.dataset.n_samples(),
                built.dataset.n_features(),
                path.display(),
                built.dropped_feature_window,
                built.dropped_label_window
            );
        }
        Command::TrainEval => {
            let cfg = load_config(cli)?;
            let outcome = cmd_train_eval(&cfg)?;
            let scored = outcome.scored().count();
            let failed = outcome.rows.len() - scored;
            println!(
                "{scored} scored rows, {failed} error rows written to {}",
                cfg.output_dir.join(REPORT_FILE).display()
            );
            if scored == 0 {
                return Err(Error::Degenerate("no grid cell could be evaluated; see audit.csv".into()));
            }
        }
        Command::Report { report } => {
            print!("{}", cmd_report(&report_path(cli, report.as_deref())?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
