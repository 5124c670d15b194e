use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marginscope_cli::{cmd_calibrate, cmd_characterize, cmd_control, cmd_energy, cmd_report, CampaignConfig, CliError};

#[derive(Parser)]
#[command(name = "marginscope", version, about = "Guardband-violation characterization against a calibrated device model")]
struct Cli {
    /// Campaign configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Campaign seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the device model and write calibration.toml.
    Calibrate,
    /// Run the characterization sweep; writes records.csv and summary.csv.
    Characterize,
    /// Run the energy sweep; writes energy.csv and savings.csv.
    Energy,
    /// Run controller episodes; writes episodes.csv and controller_trace.csv.
    Control {
        /// Number of seeded episodes; overrides the config.
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Summarize existing CSVs in the output directory into report.txt.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => CampaignConfig::load(path)?,
        None => CampaignConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.campaign_seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(marginscope_cli::ConfigError::new("--workers", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    match cli.command {
        Command::Calibrate => {
            let cal = cmd_calibrate(&cfg)?;
            println!(
                "calibrated: max residual {:.3}%, predicted savings {:.2}%",
                100.0 * cal.max_relative_residual,
                100.0 * cal.predicted_savings
            );
        }
        Command::Characterize => {
            let out = cmd_characterize(&cfg)?;
            println!("{} records written to {}", out.records.len(), cfg.output_dir.display());
        }
        Command::Energy => {
            let out = cmd_energy(&cfg)?;
            println!("max iso-performance savings: {:.2}%", 100.0 * out.max_savings());
        }
        Command::Control { episodes } => {
            if let Some(n) = episodes {
                if n == 0 {
                    return Err(marginscope_cli::ConfigError::new("--episodes", "must be at least 1").into());
                }
                cfg.control.episodes = n;
            }
            let reports = cmd_control(&cfg)?;
            println!("{} episodes written to {}", reports.len(), cfg.output_dir.display());
        }
        Command::Report => print!("{}", cmd_report(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(c) => eprintln!("error: config error at {c}"),
                CliError::Runtime(r) => eprintln!("error: {r:#}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
