use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aspp::estimator::{gamma_grid, C0Policy};
use aspp::io::export::OutputSet;
use aspp::io::{estimate, simulate, simulate_estimate, CommandError, CsvColumns, EstimateParams, RunConfig};

const WORKERS_ENV: &str = "ASPP_WORKERS";

#[derive(Parser)]
#[command(name = "aspp", version, about = "Heterogeneous asynchronous stochastic price pump")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ensembles for each trait correlation level and export statistics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override a config value, e.g. `simulation.n_paths=100`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Estimate equivalent homogeneous traits from a daily price CSV.
    Estimate {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "date-column", default_value = "Date")]
        date_column: String,
        #[arg(long = "close-column", default_value = "Close")]
        close_column: String,
        #[arg(long, value_delimiter = ',', default_value = "7,14,21")]
        tau: Vec<usize>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Simulate one path per level and estimate each price series.
    SimulateEstimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "21")]
        tau: Vec<usize>,
        #[command(flatten)]
        grid: GridArgs,
    },
}

#[derive(Args)]
struct GridArgs {
    /// `FROM:TO:STEP` or a comma-separated list.
    #[arg(long, default_value = "20:220:20")]
    gammas: String,
    /// Use this c0 for every grid point.
    #[arg(long, group = "c0_policy")]
    c0: Option<f64>,
    /// Calibrate c0 once at this gamma (default: middle of the grid).
    #[arg(long = "c0-reference-gamma", group = "c0_policy")]
    c0_reference_gamma: Option<f64>,
    /// Calibrate c0 separately at every grid point.
    #[arg(long = "c0-per-gamma", group = "c0_policy")]
    c0_per_gamma: bool,
}

impl GridArgs {
    fn params(&self, taus: Vec<usize>) -> Result<EstimateParams, CommandError> {
        let gammas = parse_grid(&self.gammas)?;
        let policy = if let Some(c0) = self.c0 {
            Some(C0Policy::Fixed(c0))
        } else if let Some(gamma) = self.c0_reference_gamma {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(CommandError::Invalid(format!("c0-reference-gamma: {gamma} is not positive")));
            }
            Some(C0Policy::ReferenceGamma { gamma, saturate: true })
        } else if self.c0_per_gamma {
            Some(C0Policy::PerGamma)
        } else {
            None
        };
        EstimateParams::new(taus, gammas, policy)
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CommandError> {
    let bad = || CommandError::Invalid(format!("gammas: cannot parse `{text}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [from, to, step] => {
            let (from, to, step) = (num(from)?, num(to)?, num(step)?);
            if !(step > 0.0) || to < from {
                return Err(bad());
            }
            Ok(gamma_grid(from, to, step))
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn workers() -> Result<Option<usize>, CommandError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CommandError::Invalid(format!("{WORKERS_ENV}: `{v}` is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn write(outputs: &OutputSet, dir: &std::path::Path) -> Result<(), ExitCode> {
    outputs.write_to(dir).map_err(|e| {
        log::error!("{e}");
        ExitCode::from(3)
    })
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    let fail = |e: CommandError| {
        log::error!("{e}");
        ExitCode::from(e.exit_code() as u8)
    };
    match cli.command {
        Command::Simulate {
            config,
            out,
            overrides,
        } => {
            let config = RunConfig::load(&config, &overrides).map_err(|e| fail(e.into()))?;
            let workers = workers().map_err(fail)?;
            if let Some(n) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| fail(CommandError::Invalid(e.to_string())))?;
            }
            let run = simulate(&config, None).map_err(fail)?;
            write(&run.outputs, &out)
        }
        Command::Estimate {
            prices,
            out,
            date_column,
            close_column,
            tau,
            grid,
        } => {
            let params = grid.params(tau).map_err(fail)?;
            let columns = CsvColumns {
                date: date_column,
                close: close_column,
            };
            let run = estimate(&prices, &columns, &params).map_err(fail)?;
            write(&run.outputs, &out)?;
            if run.ok_rows == 0 {
                log::error!("all {} estimate rows failed", run.total_rows);
                return Err(ExitCode::from(3));
            }
            Ok(())
        }
        Command::SimulateEstimate {
            config,
            out,
            overrides,
            tau,
            grid,
        } => {
            let config = RunConfig::load(&config, &overrides).map_err(|e| fail(e.into()))?;
            let params = grid.params(tau).map_err(fail)?;
            workers().map_err(fail)?;
            let run = simulate_estimate(&config, &params).map_err(fail)?;
            write(&run.outputs, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
