//! `cogload` command line: calibration, weights, replay, simulation, live service and linting.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cogload_core::config::{validate_config, ConfigDocument, Factor, SessionConfig};
use cogload_core::factors::task_workstation_factors;
use cogload_core::par::Execution;
use cogload_core::scoring::{pairwise_tallies, weights_from_pairwise};
use cogload_core::types::WorkstationLayout;
use cogload_replay::csvio::{read_catalogue, read_pairwise};
use cogload_replay::replay::calibrate;
use cogload_replay::{
    parse_log, replay_with_config, serialize_log, synthesize, Scenario, SessionLog,
};
use cogload_service::ServiceConfig;

#[derive(Debug, Parser)]
#[command(
    name = "cogload",
    version,
    about = "Cognitive-load assessment for assembly sessions"
)]
struct Cli {
    /// Config file (TOML), or `default` for the built-in defaults.
    #[arg(long, global = true, value_name = "FILE|default")]
    config: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides the random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Activity baseline and normalization thresholds from calibration logs.
    Calibrate {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Mental-effort weights from a pairwise questionnaire CSV.
    Weights { choices: PathBuf },
    /// Replays a session log into a score trace.
    Replay(ReplayArgs),
    /// Generates a session log from a scenario file.
    Simulate { scenario: PathBuf },
    /// Runs the live service.
    Serve(ServeArgs),
    /// Checks config, log, scenario and CSV files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Writes the end-of-session report as JSON.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
    /// Object catalogue CSV for the workstation factors.
    #[arg(long, requires = "objects")]
    catalogue: Option<PathBuf>,
    /// Comma-separated object ids assembled in the session.
    #[arg(long, value_delimiter = ',', requires = "catalogue")]
    objects: Vec<String>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Static token required on API requests.
    #[arg(long)]
    token: Option<String>,
    /// Dashboard directory served at `/`.
    #[arg(long)]
    assets: Option<PathBuf>,
    #[arg(long)]
    multi_session: bool,
    #[arg(long, default_value_t = cogload_service::feedback::BROADCAST_HZ)]
    broadcast_hz: f64,
    /// Reorder tolerance for late records, seconds.
    #[arg(long, default_value_t = cogload_service::session::REORDER_WINDOW)]
    reorder_window: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Calibrate { logs } => {
            let logs = logs
                .iter()
                .map(|p| read_log(p))
                .collect::<Result<Vec<_>>>()?;
            let result = calibrate(&logs, exec)?;
            let mut doc = base_document(cli.config.as_deref())?;
            doc.thresholds = result.thresholds;
            if result.baseline.is_some() {
                doc.baseline = result.baseline;
            } else {
                eprintln!("warning: no log has a calibration segment; baseline left unchanged");
            }
            eprintln!("calibrated from {} session(s)", result.sessions);
            emit(cli.out.as_deref(), &doc.to_toml_string()?)?;
        }
        Command::Weights { choices } => {
            let file = fs::File::open(choices)
                .with_context(|| format!("opening {}", choices.display()))?;
            let choices_read =
                read_pairwise(file).with_context(|| format!("reading {}", choices.display()))?;
            for (subject, tally) in pairwise_tallies(&choices_read)? {
                let counts: Vec<String> = tally.iter().map(|(f, n)| format!("{f}={n}")).collect();
                eprintln!("{subject}: {}", counts.join(" "));
            }
            let weights = weights_from_pairwise(&choices_read)?;
            let mut doc = base_document(cli.config.as_deref())?;
            for f in Factor::MENTAL_EFFORT {
                doc.weights
                    .insert(f, weights.get(&f).copied().unwrap_or(0.0));
            }
            emit(cli.out.as_deref(), &doc.to_toml_string()?)?;
        }
        Command::Replay(args) => {
            let log = read_log(&args.log)?;
            let mut config = match &cli.config {
                Some(spec) => load_config(spec)?,
                None => log.header.config.to_session_config(),
            };
            if let Some(path) = &args.catalogue {
                let file =
                    fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let rows =
                    read_catalogue(file).with_context(|| format!("reading {}", path.display()))?;
                config.workstation_factors =
                    task_workstation_factors(&rows, &args.objects, &config.workstation_factors)?;
            }
            let output = replay_with_config(&log, config)?;
            emit(cli.out.as_deref(), &output.trace())?;
            let r = &output.report;
            eprintln!(
                "{}: {} records, {} scored frames, mean mental effort {:.3} (instantaneous {:.3}), mean stress {:.3}, peak band {}",
                r.session_id,
                r.records,
                r.scored_frames,
                r.mean_mental_effort_overall,
                r.mean_mental_effort_instantaneous,
                r.mean_stress_level,
                r.peak_band.map_or("none".to_string(), |b| b.to_string()),
            );
            if let Some(path) = &args.report {
                let json = serde_json::to_string_pretty(r)?;
                fs::write(path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Simulate { scenario } => {
            let text = fs::read_to_string(scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let mut s = Scenario::from_yaml(&text)
                .with_context(|| format!("parsing {}", scenario.display()))?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let config = match &cli.config {
                Some(spec) => load_config(spec)?,
                None => SessionConfig::default(),
            };
            let log = synthesize(&s, &WorkstationLayout::desk(), &config)?;
            emit(cli.out.as_deref(), &serialize_log(&log))?;
        }
        Command::Serve(args) => {
            let session = match &cli.config {
                Some(spec) => load_config(spec)?,
                None => SessionConfig::default(),
            };
            let config = ServiceConfig {
                session,
                layout: WorkstationLayout::desk(),
                broadcast_hz: args.broadcast_hz,
                reorder_window: args.reorder_window,
                token: args.token.clone(),
                multi_session: args.multi_session,
                assets: args.assets.clone(),
                ..ServiceConfig::default()
            };
            if !(config.broadcast_hz > 0.0) || !(config.reorder_window >= 0.0) {
                bail!("broadcast rate must be positive and the reorder window non-negative");
            }
            serve(config, args.addr)?;
        }
        Command::Validate { files } => {
            let mut failed = false;
            for path in files {
                match validate(path) {
                    Ok(what) => println!("ok {} ({what})", path.display()),
                    Err(e) => {
                        failed = true;
                        println!("invalid {}: {e:#}", path.display());
                    }
                }
            }
            if failed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_log(path: &Path) -> Result<SessionLog> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_log(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn base_document(spec: Option<&str>) -> Result<ConfigDocument> {
    match spec {
        None | Some("default") => Ok(ConfigDocument::default()),
        Some(path) => ConfigDocument::load(path).with_context(|| format!("loading config {path}")),
    }
}

fn load_config(spec: &str) -> Result<SessionConfig> {
    let config = base_document(Some(spec))?.to_session_config();
    let violations = validate_config(&config);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        bail!("config {spec}: {}", text.join("; "));
    }
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing to stdout"),
    }
}

fn validate(path: &Path) -> Result<&'static str> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "toml" => {
            load_config(&path.to_string_lossy())?;
            Ok("config")
        }
        "yaml" | "yml" => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Scenario::from_yaml(&text)?.validate(&WorkstationLayout::desk())?;
            Ok("scenario")
        }
        "csv" => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            if text.trim_start().starts_with("object_id") {
                read_catalogue(text.as_bytes())?;
                Ok("catalogue")
            } else {
                pairwise_tallies(&read_pairwise(text.as_bytes())?)?;
                Ok("pairwise choices")
            }
        }
        _ => {
            let log = read_log(path)?;
            if !log.skipped.is_empty() {
                eprintln!(
                    "{}: skipped unknown record kinds {:?}",
                    path.display(),
                    log.skipped
                );
            }
            Ok("session log")
        }
    }
}

fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        cogload_service::serve(config, listener, shutdown).await?;
        Ok(())
    })
}
