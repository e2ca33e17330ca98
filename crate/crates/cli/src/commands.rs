use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use micromano::catalog::{parse_descriptor, Catalogue, Descriptor};
use micromano::scenario::{self, load_scenario};
use tracing::info;

use crate::api;
use crate::engine::Engine;

/// Exit status for unusable input, as opposed to failed assertions.
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot bind {addr}: {source}")]
    BindFailed {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub struct RunArgs<'a> {
    pub scenario: &'a Path,
    pub seed: Option<u64>,
    pub report: Option<&'a Path>,
    pub metrics: Option<&'a Path>,
}

/// Run a scenario script. Returns the process exit code.
pub fn run(args: &RunArgs, stdout: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let s = load_scenario(args.scenario)?;
    let out = scenario::run(&s, args.seed)?;
    let json = out.report.to_json();
    match args.report {
        Some(p) => write(p, &json)?,
        None => stdout
            .write_all(json.as_bytes())
            .map_err(|e| CliError::Other(e.to_string()))?,
    }
    if let Some(p) = args.metrics {
        write(p, &out.metrics_csv)?;
    }
    let a = out.report.assertions;
    info!(
        scenario = %out.report.scenario,
        seed = out.report.seed,
        passed = a.passed,
        failed = a.failed,
        "run finished"
    );
    eprintln!(
        "{}: {}/{} steps passed{}",
        out.report.scenario,
        a.passed,
        a.total,
        if out.report.halted { " (halted)" } else { "" }
    );
    Ok(out.report.exit_code())
}

pub fn catalog_validate(files: &[PathBuf]) -> (i32, String) {
    let mut out = String::new();
    let mut code = 0;
    for f in files {
        let parsed = fs::read(f)
            .map_err(|e| e.to_string())
            .and_then(|b| parse_descriptor(&b).map_err(|e| e.to_string()));
        match parsed {
            Ok(d) => {
                let kind = match d {
                    Descriptor::Vnfd(_) => "vnfd",
                    Descriptor::Nsd(_) => "nsd",
                };
                let _ = writeln!(out, "ok {} {kind} {}", f.display(), d.id());
            }
            Err(e) => {
                code = 1;
                let _ = writeln!(out, "invalid {}: {e}", f.display());
            }
        }
    }
    (code, out)
}

pub fn catalog_list(dir: &Path, json: bool) -> Result<String, CliError> {
    let cat = Catalogue::load_dir(dir).map_err(|e| CliError::Other(e.to_string()))?;
    let services = cat.list_services();
    if json {
        let mut s = serde_json::to_string_pretty(&services).expect("summaries serialize");
        s.push('\n');
        return Ok(s);
    }
    let mut out = format!("{:<20} {:>5} {:>6} {:>10} {:>10}\n", "NSD", "VNFS", "VCPU", "MEMORY_MB", "STORAGE_GB");
    for s in services {
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>6} {:>10} {:>10}",
            s.id, s.vnf_count, s.demand.vcpu, s.demand.memory_mb, s.demand.storage_gb
        );
    }
    Ok(out)
}

pub struct ServeArgs<'a> {
    pub scenario: &'a Path,
    pub bind: SocketAddr,
    pub pace: f64,
    pub paused: bool,
    pub seed: Option<u64>,
    pub secret: Option<String>,
    pub journal: Option<&'a Path>,
    pub tls: Option<(PathBuf, PathBuf)>,
}

pub async fn serve(args: ServeArgs<'_>) -> Result<(), CliError> {
    let mut s = load_scenario(args.scenario)?;
    if let Some(seed) = args.seed {
        s.config.seed = seed;
    }
    let mut world = s.world()?;
    if let Some(dir) = args.journal {
        world = world.with_journal(dir).map_err(|e| CliError::Other(e.to_string()))?;
    }
    let engine = Engine::spawn(world, args.pace, args.paused);
    let app = api::router(engine, args.secret);
    let addr = args.bind;
    let handle = axum_server::Handle::new();
    let shutdown = handle.clone();
    tokio::spawn(async move {
        let _ = tokio::signal::ctrl_c().await;
        shutdown.graceful_shutdown(Some(std::time::Duration::from_secs(2)));
    });
    let listener = std::net::TcpListener::bind(addr).map_err(|source| CliError::BindFailed { addr, source })?;
    listener
        .set_nonblocking(true)
        .map_err(|source| CliError::BindFailed { addr, source })?;
    let local = listener.local_addr().unwrap_or(addr);
    let served = match args.tls {
        Some((cert, key)) => {
            let tls = axum_server::tls_rustls::RustlsConfig::from_pem_file(&cert, &key)
                .await
                .map_err(|e| CliError::Other(format!("loading TLS material: {e}")))?;
            info!(%local, scenario = %s.config.id, pace = args.pace, "serving https");
            axum_server::from_tcp_rustls(listener, tls)
                .map_err(|source| CliError::BindFailed { addr, source })?
                .handle(handle)
                .serve(app.into_make_service())
                .await
        }
        None => {
            info!(%local, scenario = %s.config.id, pace = args.pace, "serving http");
            axum_server::from_tcp(listener)
                .map_err(|source| CliError::BindFailed { addr, source })?
                .handle(handle)
                .serve(app.into_make_service())
                .await
        }
    };
    served.map_err(|e| CliError::Other(e.to_string()))
}
