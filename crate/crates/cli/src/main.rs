//! `twinsim`: run, validate and inspect microgrid twin scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use twinsim::historian::ScadaClient;
use twinsim::runner::{self, Endpoints, RunError, RunOptions, Transport, ENDPOINTS};
use twinsim::scenario::Scenario;
use twinsim::sim::{sun, write_radiance_csv};
use twinsim::{web, Scalar};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "twinsim", version, about = "Lightweight digital twin of a campus microgrid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransportArg {
    Tcp,
    Local,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Simulated seconds per real second.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TransportArg::Tcp)]
        transport: TransportArg,
        /// Bind services to OS-assigned ports (see endpoints.json).
        #[arg(long)]
        ephemeral_ports: bool,
        /// Run events back to back instead of following the clock.
        #[arg(long)]
        no_pace: bool,
    },
    /// Parse and cross-check a scenario.
    Validate { scenario: PathBuf },
    /// Send an operator command to a live run's historian.
    Inject {
        /// `thing/feature/property` or `modbus:<host>/coil/<addr>`.
        #[arg(long)]
        target: String,
        /// JSON scalar; bare words are sent as text.
        #[arg(long)]
        value: String,
        /// Historian base URL.
        #[arg(long, conflicts_with = "run")]
        scada: Option<String>,
        /// Run directory whose endpoints.json names the historian.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Node identity presented to the network checkpoint.
        #[arg(long)]
        node: Option<String>,
    },
    /// Rebuild datapoints.csv and summary.csv from a run's artifacts.
    Export {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic hourly radiance table for the campus site.
    Radiance {
        #[arg(long, default_value_t = 2016)]
        year: i32,
        #[arg(long, default_value_t = 2016)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_value(raw: &str) -> Scalar {
    serde_json::from_str::<serde_json::Value>(raw)
        .ok()
        .and_then(|v| Scalar::try_from(v).ok())
        .unwrap_or_else(|| Scalar::Text(raw.to_string()))
}

fn load(path: &Path) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_VALIDATION)
    })
}

async fn cmd_run(scenario: &Path, opts: RunOptions) -> ExitCode {
    let sc = match load(scenario) {
        Ok(sc) => sc,
        Err(code) => return code,
    };
    match runner::run(sc, &opts).await {
        Ok(r) => {
            println!(
                "completed {} s simulated in {:.1} s: {} events, {} EMS ticks, {} trips, {} delivered, {} blocked; artifacts in {}",
                r.sim_end,
                r.wall.as_secs_f64(),
                r.events,
                r.ems_ticks,
                r.trips,
                r.delivered,
                r.blocked,
                r.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(RunError::Scenario(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn historian_url(scada: Option<String>, run: Option<PathBuf>) -> Result<(String, Option<String>), String> {
    if let Some(url) = scada {
        return Ok((url, None));
    }
    let dir = run.ok_or("one of --scada or --run is required")?;
    let path = dir.join(ENDPOINTS);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let ep: Endpoints = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if ep.transport != Transport::Tcp {
        return Err("the run uses in-process links and cannot be reached".into());
    }
    let url = ep.historian.ok_or("the run exposes no historian endpoint")?;
    Ok((url, Some(ep.operator)))
}

async fn cmd_inject(
    target: String,
    value: String,
    scada: Option<String>,
    run: Option<PathBuf>,
    node: Option<String>,
) -> ExitCode {
    let (url, default_node) = match historian_url(scada, run) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let node = node.or(default_node).unwrap_or_else(|| "operator-ws".to_string());
    let client = ScadaClient::http(&url, &node, web::http_client());
    let value = parse_value(&value);
    match client.command(&target, value.clone()).await {
        Ok(rev) => {
            match rev {
                Some(r) => println!("{target} = {value} accepted (broker revision {r})"),
                None => println!("{target} = {value} accepted"),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {target} = {value}: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, duration, scale, seed, out, transport, ephemeral_ports, no_pace } => {
            let opts = RunOptions {
                out,
                duration,
                scale,
                seed,
                transport: match transport {
                    TransportArg::Tcp => Transport::Tcp,
                    TransportArg::Local => Transport::Local,
                },
                ephemeral_ports,
                paced: !no_pace,
            };
            cmd_run(&scenario, opts).await
        }
        Command::Validate { scenario } => match load(&scenario) {
            Ok(sc) => {
                println!(
                    "{}: valid ({} things, {} cabinets, {} controllers, {} datapoints)",
                    scenario.display(),
                    sc.things.len(),
                    sc.devices.cabinets.len(),
                    sc.devices.controllers.len(),
                    sc.historian.datapoints.len()
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Inject { target, value, scada, run, node } => cmd_inject(target, value, scada, run, node).await,
        Command::Export { run, out } => {
            let out = out.unwrap_or_else(|| run.clone());
            match runner::export(&run, &out) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Command::Radiance { year, seed, out } => {
            let records = sun::synthetic_year(&sun::Site::CAMPUS, year, seed);
            match std::fs::write(&out, write_radiance_csv(&records)) {
                Ok(()) => {
                    println!("{} hourly records written to {}", records.len(), out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", out.display());
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
    }
}
