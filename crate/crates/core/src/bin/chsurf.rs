use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chsurf::config::ExperimentConfig;
use chsurf::experiment::{cmd_converge, cmd_energy, cmd_mesh_info, cmd_run, cmd_theta, Outputs, Report};
use chsurf::{Error, Result};

/// Cahn–Hilliard equations on evolving surfaces.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single simulation.
    Run(Common),
    /// Sweep over mesh levels and step sizes with convergence orders.
    Converge(Common),
    /// Ginzburg–Landau energy and mass traces.
    Energy(Common),
    /// Runs without and with the ϑ correction side by side.
    Theta(Common),
    /// Statistics of the configured meshes.
    MeshInfo(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Write a VTK frame every K time levels.
    #[arg(long, value_name = "K")]
    vtk_every: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Run(c) | Command::Converge(c) | Command::Energy(c) | Command::Theta(c) | Command::MeshInfo(c) => c,
        }
    }
}

fn execute(command: &Command) -> Result<Report> {
    let common = command.common();
    env_logger::Builder::new()
        .filter_level(if common.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .parse_env("CHSURF_LOG")
        .init();
    if common.threads == 0 {
        return Err(Error::config("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let config = ExperimentConfig::load(&common.config)?;
    let mut outputs = Outputs::from_config(&config);
    if let Some(dir) = &common.output {
        outputs.directory = dir.clone();
    }
    outputs.vtk_every = common.vtk_every;
    match command {
        Command::Run(_) => cmd_run(&config, &outputs),
        Command::Converge(_) => cmd_converge(&config, &outputs),
        Command::Energy(_) => cmd_energy(&config, &outputs),
        Command::Theta(_) => cmd_theta(&config, &outputs),
        Command::MeshInfo(_) => cmd_mesh_info(&config, &outputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(report) => {
            if !cli.command.common().quiet {
                println!("{}", report.to_json());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
