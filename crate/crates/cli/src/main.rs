use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use freqfed::harness::{run_to_dir, sweep_to_dir, FederationConfig, ReportFormat, SweepAxis};
use freqfed::Error;

#[derive(Parser)]
#[command(name = "freqfed", version, about = "Federated learning poisoning testbed with frequency-domain filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one federation and write its per-round report.
    Run(Common),
    /// Run one federation per value of a parameter and tabulate the final rounds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values, e.g. 0.1,0.3,0.49
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides out_dir from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides master_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Pmr,
    Pdr,
    #[value(name = "iid_rate", alias = "iid-rate")]
    IidRate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Common {
    fn load(&self) -> Result<FederationConfig, Error> {
        let mut cfg = FederationConfig::load(&self.config)?;
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(f) = self.format {
            cfg.format = match f {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.load()?;
            let (outcome, path) = run_to_dir(&cfg)?;
            if let Some(last) = outcome.reports.last() {
                println!(
                    "{} rounds, final ma {:.4}, ba {:.4}; report written to {}",
                    last.round,
                    last.ma,
                    last.ba,
                    path.display()
                );
            }
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.load()?;
            let axis = match axis {
                Axis::Pmr => SweepAxis::Pmr,
                Axis::Pdr => SweepAxis::Pdr,
                Axis::IidRate => SweepAxis::IidRate,
            };
            let (rows, path) = sweep_to_dir(&cfg, axis, &values)?;
            for r in &rows {
                println!("{}={}: ma {:.4}, ba {:.4}", axis.name(), r.value, r.ma, r.ba);
            }
            println!("sweep written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FREQFED_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
