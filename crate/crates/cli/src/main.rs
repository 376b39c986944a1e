//! `coopt`: headless experiment runner and server launcher.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 input failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coopt_core::advisor::AdvisorEndpointConfig;
use coopt_core::domain::DisplayScale;
use coopt_core::experiment::{alternating_request, mean_sd, run_automated, steering_run, REQUEST_OBJECTIVE_1, REQUEST_OBJECTIVE_2};
use coopt_core::metrics::{grid_oracle_hypervolume, MetricsRow};
use coopt_core::session::{AdvisorConfig, AdvisorPolicy, Mode, Session, SessionConfig};
use coopt_core::testbed::{builtin_apps, SimulatorConfig, SyntheticApp};
use coopt_core::Error;
use coopt_service::{Profile, ServiceConfig};

/// Grid size for the reference hypervolume that normalizes relative HV.
const ORACLE_POINTS: usize = 1_000_000;

#[derive(Parser)]
#[command(name = "coopt", version, about = "Cooperative multi-objective design optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed, then run proposal/evaluation iterations without a human.
    Run(RunArgs),
    /// Steering experiment: alternating objective requests on every app.
    TechEval(TechEvalArgs),
    /// Metrics table for one or more session logs.
    Metrics(MetricsArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "designer_led")]
    DesignerLed,
    #[value(name = "bo_led")]
    BoLed,
    Cooperative,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DesignerLed => Mode::DesignerLed,
            ModeArg::BoLed => Mode::BoLed,
            ModeArg::Cooperative => Mode::Cooperative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Scripted,
    Argmax,
    Llm,
}

impl From<PolicyArg> for AdvisorPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Scripted => AdvisorPolicy::Scripted,
            PolicyArg::Argmax => AdvisorPolicy::Argmax,
            PolicyArg::Llm => AdvisorPolicy::Llm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Standard,
    Test,
}

#[derive(Args)]
struct AdvisorArgs {
    /// TOML file with the chat endpoint (base_url, model_name, api_key_env_var, ...).
    #[arg(long)]
    advisor_config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in app id or path to an app TOML file.
    #[arg(long, default_value = "app1")]
    app: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Cooperative)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = PolicyArg::Scripted)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 15)]
    iterations: usize,
    /// RNG seed of the session.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seed designs evaluated before the first proposal.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Fixed request text for every proposal; default alternates Objective 1 / Objective 2.
    #[arg(long)]
    request: Option<String>,
    /// Session log path; default `<app>-<mode>-seed<seed>.log`.
    #[arg(long)]
    out_log: Option<PathBuf>,
    #[command(flatten)]
    advisor: AdvisorArgs,
}

#[derive(Args)]
struct TechEvalArgs {
    /// Seed designs per session.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 15)]
    iterations: usize,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, value_enum, default_value_t = PolicyArg::Scripted)]
    policy: PolicyArg,
    /// Apps to run (built-in ids or TOML paths); default all built-in apps.
    #[arg(long = "app")]
    apps: Vec<String>,
    /// Repetition r uses RNG seed `base_seed + r`.
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Directory for per-app scatter CSV files; without it the scatter data goes to stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    advisor: AdvisorArgs,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Service TOML (host, port, profile, [advisor]); environment overrides it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    host: Option<String>,
}

enum Failure {
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Argument(_)
            | Error::Dimension { .. }
            | Error::Range { .. }
            | Error::Data(_)
            | Error::Load { .. }
            | Error::ModeForbids { .. }
            | Error::UnsupportedDimension(_)
            | Error::Reference { .. } => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::TechEval(a) => tech_eval(a),
        Command::Metrics(a) => metrics(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn resolve_app(name: &str) -> CliResult<SyntheticApp> {
    if let Some(app) = builtin_apps().into_iter().find(|a| a.id == name) {
        return Ok(app);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(Failure::Input(format!("'{name}' is neither a built-in app nor an app file")));
    }
    SyntheticApp::from_toml_file(path).map_err(|e| Failure::Input(format!("{name}: {e}")))
}

fn advisor_config(policy: PolicyArg, args: &AdvisorArgs) -> CliResult<AdvisorConfig> {
    let mut service = ServiceConfig::default();
    if let Some(path) = &args.advisor_config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let endpoint: AdvisorEndpointConfig =
            toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        service.advisor = Some(endpoint);
    }
    service.apply_env(|k| std::env::var(k).ok())?;
    Ok(AdvisorConfig {
        policy: policy.into(),
        endpoint: match policy {
            PolicyArg::Llm => service.advisor,
            _ => None,
        },
    })
}

/// Headless sessions run on a simulated clock, so configured delays only
/// shape timestamps; the CLI keeps them at zero.
fn session_config(app: SyntheticApp, mode: Mode, seed: u64, n_seed: usize, advisor: AdvisorConfig) -> SessionConfig {
    SessionConfig {
        app_id: app.id.clone(),
        app: Some(app),
        mode,
        n_seed,
        rng_seed: seed,
        simulator: SimulatorConfig::test_profile(seed),
        advisor,
        ..Default::default()
    }
}

fn metrics_row(session: &Session) -> CliResult<MetricsRow> {
    let reference_hv = grid_oracle_hypervolume(session.app(), session.reference(), ORACLE_POINTS)?;
    Ok(MetricsRow::compute(session.history(), session.reference(), reference_hv)?)
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(a: RunArgs) -> CliResult {
    let mode = Mode::from(a.mode);
    if mode == Mode::DesignerLed {
        return Err(Failure::Input(
            "designer_led sessions need a designer; run has nothing to automate (use serve)".into(),
        ));
    }
    let app = resolve_app(&a.app)?;
    let out_log = a
        .out_log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}-{}-seed{}.log", app.id, mode, a.seed)));
    let config = session_config(app, mode, a.seed, a.seeds, advisor_config(a.policy, &a.advisor)?);
    let mut session = Session::create(config)?;
    let outcome = match &a.request {
        Some(r) => run_automated(&mut session, a.iterations, |_| r.clone()),
        None => run_automated(&mut session, a.iterations, |i| alternating_request(i).to_string()),
    };
    // Keep whatever was recorded, even when the run stopped early.
    write_file(&out_log, &session.to_log_string())?;
    outcome?;
    let row = metrics_row(&session)?;
    println!("{}", MetricsRow::HEADER);
    println!("{}", row.to_csv());
    eprintln!("log written to {}", out_log.display());
    Ok(())
}

fn tech_eval(a: TechEvalArgs) -> CliResult {
    let apps = if a.apps.is_empty() {
        builtin_apps()
    } else {
        a.apps.iter().map(|s| resolve_app(s)).collect::<CliResult<_>>()?
    };
    if a.repetitions == 0 {
        return Err(Failure::Input("need at least one repetition".into()));
    }
    let advisor = advisor_config(a.policy, &a.advisor)?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }

    let mut summary = String::new();
    let mut scatter_out = String::new();
    for app in apps {
        let objs = &app.objective_space;
        let names: Vec<String> = objs.objectives().iter().map(|o| o.name.replace(',', " ")).collect();
        let mut scatter = format!("app,repetition,rng_seed,iteration,requested_objective,{}\n", names.join(","));
        let mut separations = Vec::new();
        for rep in 0..a.repetitions {
            let seed = a.base_seed + rep as u64;
            let config = session_config(app.clone(), Mode::Cooperative, seed, a.seeds, advisor.clone());
            let (_, result) = steering_run(config, a.iterations, [REQUEST_OBJECTIVE_1, REQUEST_OBJECTIVE_2])?;
            for (i, (group, y)) in result.outcomes.iter().enumerate() {
                let display = objs.to_display(y.values())?;
                let cols: Vec<String> = display.iter().map(|v| format!("{v:.6}")).collect();
                writeln!(scatter, "{},{rep},{seed},{},{},{}", app.id, i + 1, group + 1, cols.join(",")).unwrap();
            }
            separations.push(result.separation);
        }
        let (mean, sd) = mean_sd(&separations);
        let reps: Vec<String> = separations.iter().map(|s| format!("{s:.4}")).collect();
        writeln!(
            summary,
            "{}: centroid separation {mean:.3} ± {sd:.3} over {} repetitions ({})",
            app.id,
            a.repetitions,
            reps.join(", ")
        )
        .unwrap();
        match &a.out_dir {
            Some(dir) => write_file(&dir.join(format!("{}-scatter.csv", app.id)), &scatter)?,
            None => scatter_out.push_str(&scatter),
        }
    }
    let mut out = std::io::stdout().lock();
    let _ = write!(out, "{summary}");
    if !scatter_out.is_empty() {
        let _ = write!(out, "\n{scatter_out}");
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    let mut table = format!("log,{}\n", MetricsRow::HEADER);
    for path in &a.logs {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let session = Session::load(&text).map_err(|e| match Failure::from(e) {
            Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let row = metrics_row(&session)?;
        writeln!(table, "{},{}", path.display(), row.to_csv()).unwrap();
    }
    print!("{table}");
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let mut config = ServiceConfig::load(a.config.as_deref())?;
    if let Some(p) = a.profile {
        config.profile = match p {
            ProfileArg::Standard => Profile::Standard,
            ProfileArg::Test => Profile::Test,
        };
    }
    if let Some(port) = a.port {
        config.port = port;
    }
    if let Some(host) = a.host {
        config.host = host;
    }
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(config.bind_addr())
            .await
            .map_err(|e| Failure::Runtime(format!("cannot bind {}: {e}", config.bind_addr())))?;
        let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("listening on http://{addr} (profile {})", config.profile);
        let _ = std::io::stdout().flush();
        coopt_service::serve(listener, config).await.map_err(|e| Failure::Runtime(e.to_string()))
    })
}
