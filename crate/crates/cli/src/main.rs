use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use micromano_cli::commands::{self, CliError, RunArgs, ServeArgs, EXIT_INPUT};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "micromano", version, about = "Deterministic mini NFV MANO simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario script and emit a JSON report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the CSV metric export here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Serve the control and telemetry API over a paced simulation.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Virtual seconds per wall second; 0 freezes the clock.
        #[arg(long, default_value_t = 1.0)]
        pace: f64,
        /// Start with the clock paused.
        #[arg(long)]
        paused: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Require this value in the x-micromano-secret header.
        #[arg(long, env = "MICROMANO_SECRET", hide_env_values = true)]
        secret: Option<String>,
        /// Directory for the telemetry journal.
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long, requires = "tls_key")]
        tls_cert: Option<PathBuf>,
        #[arg(long, requires = "tls_cert")]
        tls_key: Option<PathBuf>,
    },
    /// Inspect descriptor catalogues.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Parse and validate descriptor files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// List network services in a catalogue directory.
    List {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn init_logging() {
    let filter = EnvFilter::try_from_env("MICROMANO_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_INPUT as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            report,
            metrics,
        } => {
            let args = RunArgs {
                scenario: &scenario,
                seed,
                report: report.as_deref(),
                metrics: metrics.as_deref(),
            };
            match commands::run(&args, &mut std::io::stdout().lock()) {
                Ok(code) => ExitCode::from(code as u8),
                Err(e) => fail(e),
            }
        }
        Command::Serve {
            scenario,
            bind,
            pace,
            paused,
            seed,
            secret,
            journal,
            tls_cert,
            tls_key,
        } => {
            if !pace.is_finite() || pace < 0.0 {
                return fail(CliError::Other("--pace must be a finite non-negative number".into()));
            }
            let rt = match tokio::runtime::Runtime::new() {
                Ok(rt) => rt,
                Err(e) => return fail(CliError::Other(e.to_string())),
            };
            let args = ServeArgs {
                scenario: &scenario,
                bind,
                pace,
                paused,
                seed,
                secret,
                journal: journal.as_deref(),
                tls: tls_cert.zip(tls_key),
            };
            match rt.block_on(commands::serve(args)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Command::Catalog { command } => match command {
            CatalogCommand::Validate { files } => {
                let (code, out) = commands::catalog_validate(&files);
                print!("{out}");
                ExitCode::from(code as u8)
            }
            CatalogCommand::List { dir, json } => match commands::catalog_list(&dir, json) {
                Ok(out) => {
                    print!("{out}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            },
        },
    }
}
