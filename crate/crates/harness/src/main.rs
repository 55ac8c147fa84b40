use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use parking_lot::Mutex;
use serde_json::{json, Value};

use chpc_api::{Client, ClientError, Listen, Server};
use chpc_core::model::ApplicationSpec;
use chpc_core::platform::Mode;
use chpc_core::telemetry::BusMessage;
use chpc_harness::runner::{platform_for, Replay};
use chpc_harness::{generate, run_scenario, GenParams, HarnessError, Scenario};

#[derive(Parser)]
#[command(name = "chpc", version, about = "Symmetric HPC platform simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Symmetric,
    Asymmetric,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Symmetric => Mode::Symmetric,
            ModeArg::Asymmetric => Mode::Asymmetric,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct Conn {
    /// Server address (tcp:HOST:PORT or unix:PATH); defaults to $CHPC_LISTEN.
    #[arg(long, global = true)]
    listen: Option<String>,
    /// Tenant to authenticate as.
    #[arg(long, global = true, default_value = "cli")]
    tenant: String,
    /// Authenticate with operator rights.
    #[arg(long, global = true)]
    operator: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and print its report.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a scenario without running it.
    Validate { scenario: PathBuf },
    /// Serve the wire API over a live simulation of a scenario.
    Serve {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Virtual seconds per real second.
        #[arg(long, default_value_t = 1)]
        speedup: u32,
        #[arg(long)]
        listen: Option<String>,
    },
    /// Print a random scenario as YAML.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        max_nodes: usize,
        #[arg(long, default_value_t = 64)]
        max_apps: usize,
        #[arg(long, default_value_t = 600)]
        duration_s: u64,
    },
    /// Submit an application spec (YAML or JSON file).
    Submit {
        spec: PathBuf,
        #[command(flatten)]
        conn: Conn,
    },
    /// Show an application's reservation and logical state.
    Status {
        app_id: String,
        #[command(flatten)]
        conn: Conn,
    },
    /// Ask for more or fewer resources or a longer walltime.
    Adjust {
        app_id: String,
        /// Per-task core change; negative releases.
        #[arg(long, allow_hyphen_values = true)]
        cores: Option<i64>,
        /// Full per-task delta as JSON, e.g. '{"fs_bps": 100000000}'.
        #[arg(long)]
        delta: Option<String>,
        /// Extra walltime in seconds.
        #[arg(long, default_value_t = 0)]
        extend_s: u64,
        #[command(flatten)]
        conn: Conn,
    },
    /// Freeze (or thaw) an application. Operator only.
    Freeze {
        app_id: String,
        #[arg(long)]
        thaw: bool,
        #[command(flatten)]
        conn: Conn,
    },
    /// Stop placing work on a node and notify its applications. Operator only.
    Drain {
        node_id: String,
        #[command(flatten)]
        conn: Conn,
    },
    /// Print metric points, or with --follow stream samples and alarms.
    Metrics {
        #[arg(long, conflicts_with = "node")]
        app: Option<String>,
        #[arg(long)]
        node: Option<String>,
        #[arg(long, default_value = "cpu_cores_used")]
        metric: String,
        #[arg(long)]
        follow: bool,
        /// With --follow, raise an alarm when the metric exceeds this value.
        #[arg(long)]
        max: Option<f64>,
        /// With --follow, raise an alarm when the metric drops below this value.
        #[arg(long)]
        min: Option<f64>,
        #[arg(long, default_value_t = 1)]
        window_s: u64,
        #[command(flatten)]
        conn: Conn,
    },
    /// Print the live server's utilization report.
    Report {
        #[arg(long, default_value_t = 0)]
        t0: u64,
        #[arg(long)]
        t1: Option<u64>,
        #[command(flatten)]
        conn: Conn,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Harness(e) => e.exit_code() as u8,
            CliError::Usage(_) => 2,
            CliError::Client(_) | CliError::Runtime(_) => 1,
        }
    }
}

type CliResult = Result<(), CliError>;

fn print_json(v: &Value) -> CliResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Runtime(e.to_string()))
}

fn connect(conn: &Conn) -> Result<Client, CliError> {
    let addr = match &conn.listen {
        Some(s) => s.parse::<Listen>(),
        None => Listen::from_env(),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut c = Client::connect(&addr)
        .map_err(|e| CliError::Runtime(format!("cannot connect to {addr}: {e}")))?;
    c.hello(&conn.tenant, conn.operator)?;
    Ok(c)
}

fn call(conn: &Conn, op: &str, payload: Value) -> CliResult {
    let mut c = connect(conn)?;
    print_json(&c.call(op, payload)?)
}

fn run(scenario: &Path, mode: Option<ModeArg>, format: Format, out: Option<&Path>) -> CliResult {
    let sc = Scenario::load(scenario)?;
    let report = run_scenario(&sc, mode.map(Mode::from))?;
    let json = report.to_json();
    if let Some(path) = out {
        std::fs::write(path, &json)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    let text = match format {
        Format::Json => json,
        Format::Text => report.render_text(),
    };
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn validate(scenario: &Path) -> CliResult {
    let sc = Scenario::load(scenario)?;
    println!(
        "{}: ok ({} nodes, {} images, {} apps, {} script steps)",
        scenario.display(),
        sc.cluster.len(),
        sc.images.len(),
        sc.apps.len(),
        sc.script.len()
    );
    Ok(())
}

fn serve(scenario: &Path, mode: Option<ModeArg>, speedup: u32, listen: Option<&str>) -> CliResult {
    if speedup == 0 {
        return Err(CliError::Usage("--speedup must be at least 1".into()));
    }
    let sc = Scenario::load(scenario)?;
    let listen: Listen = match listen {
        Some(s) => s.parse(),
        None => Listen::from_env(),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let mode = mode.map(Mode::from).unwrap_or(sc.mode);
    let platform = Arc::new(Mutex::new(platform_for(&sc, mode)?));
    let mut replay = Replay::new(&sc, &mut platform.lock());

    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    let server = runtime
        .block_on(Server::bind(&listen, platform.clone()))
        .map_err(|e| CliError::Runtime(format!("cannot listen on {listen}: {e}")))?;
    let addr = server
        .local_addr()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!(
        "serving {} on {addr} ({speedup}x)",
        if sc.name.is_empty() {
            "scenario"
        } else {
            &sc.name
        }
    );
    runtime.spawn(server.run());

    // Scenario actions and ticks share one loop so submissions land on the
    // tick boundary they name.
    let period = Duration::from_secs(1) / speedup;
    let mut next = Instant::now();
    loop {
        {
            let mut p = platform.lock();
            replay.apply_due(&mut p);
            if let Err(e) = p.tick() {
                return Err(CliError::Runtime(format!("tick failed: {e}")));
            }
        }
        next += period;
        std::thread::sleep(next.saturating_duration_since(Instant::now()));
    }
}

fn metrics(
    conn: &Conn,
    app: Option<String>,
    node: Option<String>,
    metric: &str,
    follow: bool,
    bounds: (Option<f64>, Option<f64>, u64),
) -> CliResult {
    let subject = match (app, node) {
        (Some(a), _) => Some(json!({ "app": a })),
        (None, Some(n)) => Some(json!({ "node": n })),
        (None, None) => None,
    };
    let mut c = connect(conn)?;
    if !follow {
        let subject = subject.ok_or_else(|| {
            CliError::Usage("--app or --node is required without --follow".into())
        })?;
        return print_json(&c.call(
            "query_metrics",
            json!({"subject": subject, "metric": metric}),
        )?);
    }
    let (max, min, window_s) = bounds;
    c.call("subscribe_metrics", json!({ "subject": subject }))?;
    for (bound, threshold) in [("max", max), ("min", min)] {
        let Some(threshold) = threshold else { continue };
        let subject = subject
            .clone()
            .ok_or_else(|| CliError::Usage("alarms need --app or --node".into()))?;
        c.call(
            "register_boundary",
            json!({
                "bc_id": format!("cli-{}-{bound}", conn.tenant),
                "subject": subject,
                "metric": metric,
                "bound": bound,
                "threshold": threshold,
                "window_s": window_s,
            }),
        )?;
    }
    let mut out = std::io::stdout().lock();
    loop {
        let Some(msg) = c.next_push(None)? else {
            continue;
        };
        if matches!(msg, BusMessage::Event(_)) {
            continue;
        }
        let line = serde_json::to_string(&msg).expect("bus messages serialize");
        if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
            return Ok(());
        }
    }
}

fn read_spec(path: &Path) -> Result<ApplicationSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_yaml::from_str(&text).map_err(|e| {
        let (line, column) = e
            .location()
            .map(|l| (l.line(), l.column()))
            .unwrap_or((0, 0));
        CliError::Harness(HarnessError::Parse {
            path: path.to_owned(),
            line,
            column,
            message: e.to_string(),
        })
    })
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            format,
            out,
        } => run(&scenario, mode, format, out.as_deref()),
        Command::Validate { scenario } => validate(&scenario),
        Command::Serve {
            scenario,
            mode,
            speedup,
            listen,
        } => serve(&scenario, mode, speedup, listen.as_deref()),
        Command::Generate {
            seed,
            max_nodes,
            max_apps,
            duration_s,
        } => {
            let params = GenParams {
                max_nodes,
                max_apps,
                duration_s,
                ..GenParams::default()
            };
            print!("{}", generate(seed, params).to_yaml());
            Ok(())
        }
        Command::Submit { spec, conn } => {
            let spec = read_spec(&spec)?;
            call(
                &conn,
                "submit",
                serde_json::to_value(spec).expect("specs serialize"),
            )
        }
        Command::Status { app_id, conn } => call(&conn, "status", json!({ "app_id": app_id })),
        Command::Adjust {
            app_id,
            cores,
            delta,
            extend_s,
            conn,
        } => {
            let mut delta: Value = match delta {
                Some(d) => serde_json::from_str(&d)
                    .map_err(|e| CliError::Usage(format!("--delta: {e}")))?,
                None => json!({}),
            };
            if let Some(c) = cores {
                delta["cpu_cores"] = json!(c);
            }
            call(
                &conn,
                "adjust",
                json!({"app_id": app_id, "delta_per_task": delta, "walltime_extension_s": extend_s}),
            )
        }
        Command::Freeze { app_id, thaw, conn } => {
            let op = if thaw { "thaw_app" } else { "freeze_app" };
            call(&conn, op, json!({ "app_id": app_id }))
        }
        Command::Drain { node_id, conn } => {
            call(&conn, "drain_node", json!({ "node_id": node_id }))
        }
        Command::Metrics {
            app,
            node,
            metric,
            follow,
            max,
            min,
            window_s,
            conn,
        } => metrics(&conn, app, node, &metric, follow, (max, min, window_s)),
        Command::Report { t0, t1, conn } => {
            let mut payload = json!({ "t0": t0 * 1000 });
            if let Some(t1) = t1 {
                payload["t1"] = json!(t1 * 1000);
            }
            call(&conn, "utilization_report", payload)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chpc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
