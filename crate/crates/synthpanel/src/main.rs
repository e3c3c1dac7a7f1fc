use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synthpanel::error::{read_file, Result, Stage, StudyError};
use synthpanel::runner::{placebo_files, plot_files, report_files, validation_summary, write_files};
use synthpanel::simulation::{simulation_files, summary_csv};
use synthpanel::{run_simulation, run_study, validate_study, SimulationConfig, StudyConfig, StudyReport, ThreadPool};

/// Synthetic control and synthetic difference-in-differences studies.
#[derive(Parser)]
#[command(name = "synthpanel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the data and print diagnostics without estimating.
    Validate(Common),
    /// Run the full study and write the report, series tables and charts.
    Run(Common),
    /// Run the study and dump the placebo and jackknife replicates.
    Placebo(Common),
    /// Run the Monte-Carlo coverage harness from a simulation config.
    Simulate(Common),
    /// Re-emit series tables and charts from a saved report.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Study (or simulation) config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// Saved `report.json`.
    #[arg(long, required_unless_present = "config")]
    report: Option<PathBuf>,
    /// Study config whose output directory holds `report.json`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the SVG charts.
    #[arg(long)]
    no_svg: bool,
}

fn load_study(args: &Common) -> Result<(StudyConfig, Vec<u8>)> {
    let (mut cfg, bytes) = StudyConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.estimation.seed = seed;
    }
    Ok((cfg, bytes))
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Validate(args) => {
            let (cfg, _) = load_study(&args)?;
            print!("{}", validation_summary(&validate_study(&cfg)?));
        }
        Command::Run(args) => {
            let (cfg, bytes) = load_study(&args)?;
            let report = run_study(&cfg, &bytes, &ThreadPool::new(args.threads)?)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            report_written(&write_files(&cfg.output.dir, &report_files(&report, cfg.output.svg), Stage::Report)?);
        }
        Command::Placebo(args) => {
            let (cfg, bytes) = load_study(&args)?;
            let report = run_study(&cfg, &bytes, &ThreadPool::new(args.threads)?)?;
            report_written(&write_files(&cfg.output.dir, &placebo_files(&report), Stage::Report)?);
        }
        Command::Simulate(args) => {
            let (mut cfg, _) = SimulationConfig::load(&args.config)?;
            if let Some(out) = args.out {
                cfg.output.dir = out;
            }
            if let Some(seed) = args.seed {
                cfg.simulation.first_seed = seed;
            }
            let out = run_simulation(&cfg, &ThreadPool::new(args.threads)?)?;
            print!("{}", summary_csv(&out.summary));
            report_written(&write_files(&cfg.output.dir, &simulation_files(&out), Stage::Simulate)?);
        }
        Command::Plot(args) => {
            let (report_path, default_dir, svg) = match (&args.report, &args.config) {
                (Some(r), _) => (r.clone(), r.parent().map(PathBuf::from).unwrap_or_default(), !args.no_svg),
                (None, Some(c)) => {
                    let (cfg, _) = StudyConfig::load(c)?;
                    (cfg.output.dir.join("report.json"), cfg.output.dir.clone(), cfg.output.svg && !args.no_svg)
                }
                (None, None) => return Err(StudyError::validation(Stage::Config, "plot needs --report or --config")),
            };
            let bytes = read_file(Stage::Plot, &report_path)?;
            let text = String::from_utf8(bytes)
                .map_err(|e| StudyError::validation(Stage::Plot, format!("{}: {e}", report_path.display())))?;
            let report = StudyReport::from_json(&text)?;
            let dir = args.out.unwrap_or(default_dir);
            report_written(&write_files(&dir, &plot_files(&report, svg), Stage::Plot)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
