//! `cosr` command-line front end.
//!
//! Parameter precedence, lowest first: built-in defaults, `--config` file,
//! `--d-ap-ap`, `--set key=value`. The output root comes from `--out`, then
//! `COSR_OUTPUT_ROOT`, then `./results`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use cosr::deployment::generate_deployment;
use cosr::experiment::{self, Access, ExperimentSpec, Layout, Load};
use cosr::grouping::{optimize_plan, Policy};
use cosr::params::{parse_override, Overrides, SimParams};
use cosr::phy::McsTable;
use cosr::seed::derive_seed;
use cosr::traffic::calibrate_load;

const EXIT_FAILURE: u8 = 1;
const EXIT_UNSUPPORTED: u8 = 3;
const EXIT_CHECKS_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "cosr", version, about = "Coordinated spatial reuse vs DCF simulator")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment batch and write CSVs and a manifest.
    Run(RunArgs),
    /// Check the event logs of a finished batch.
    Verify {
        #[arg(long, env = "COSR_OUTPUT_ROOT", default_value = "results")]
        out: PathBuf,
    },
    /// Print the load calibration of one deployment as JSON.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the group plan of one deployment.
    Plan {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "UNC")]
        policy: Policy,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// TOML file with [topology], [phy], [mac], [traffic], [simulation].
    #[arg(long)]
    config: Option<PathBuf>,
    /// MCS table file (`index bits rate min_snr_db` per line).
    #[arg(long)]
    mcs_table: Option<PathBuf>,
    #[arg(long)]
    d_ap_ap: Option<f64>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Symmetric layout: AP 0's STA offsets as `x,y;x,y`.
    #[arg(long, allow_hyphen_values = true)]
    symmetric: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Number of deployments, seeded 0..N.
    #[arg(long, default_value_t = 1, conflicts_with = "seed_list")]
    seeds: u64,
    /// Explicit deployment seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "DCF,MAX2,UNC")]
    policies: Vec<Access>,
    /// poisson, bursty and/or saturated.
    #[arg(long, value_delimiter = ',', default_value = "poisson,bursty")]
    traffic: Vec<Load>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Also write one JSONL event log per run.
    #[arg(long)]
    event_log: bool,
    #[arg(long, env = "COSR_OUTPUT_ROOT", default_value = "results")]
    out: PathBuf,
}

fn fail(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

fn load_params(args: &ScenarioArgs) -> Result<SimParams, String> {
    let mut params = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            SimParams::from_toml_str(&text).map_err(fail)?
        }
        None => SimParams::default(),
    };
    if let Some(path) = &args.mcs_table {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        params.mcs_table = McsTable::parse(&text).map_err(fail)?;
    }
    let mut overrides = Overrides::new();
    if let Some(d) = args.d_ap_ap {
        overrides.insert("inter_ap_distance".into(), toml::Value::Float(d));
    }
    for o in &args.overrides {
        let (k, v) = parse_override(o).map_err(fail)?;
        overrides.insert(k, v);
    }
    params.with_overrides(&overrides).map_err(fail)
}

fn parse_offsets(text: &str) -> Result<Vec<(f64, f64)>, String> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (x, y) = pair.split_once(',').ok_or_else(|| format!("bad offset `{pair}`"))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad offset `{pair}`: {e}"));
            Ok((num(x)?, num(y)?))
        })
        .collect()
}

fn layout(args: &ScenarioArgs) -> Result<Layout, String> {
    Ok(match &args.symmetric {
        Some(text) => Layout::Symmetric(parse_offsets(text)?),
        None => Layout::Random,
    })
}

enum Failure {
    Plain(String),
    Unsupported(String),
    Checks,
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Plain(s)
    }
}

fn scenario(args: &ScenarioArgs, seed: u64) -> Result<(SimParams, cosr::Deployment), Failure> {
    let params = load_params(args)?;
    let dep = match layout(args)? {
        Layout::Random => generate_deployment(&params, derive_seed(seed, "deployment", 0)),
        Layout::Symmetric(o) => cosr::make_symmetric_deployment(&params, &o),
    }
    .map_err(|e| Failure::Unsupported(e.to_string()))?;
    Ok((params, dep))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let params = load_params(&args.scenario)?;
            let seeds = if args.seed_list.is_empty() { (0..args.seeds).collect() } else { args.seed_list.clone() };
            let spec = ExperimentSpec {
                params,
                policies: args.policies.clone(),
                loads: args.traffic.clone(),
                seeds,
                layout: layout(&args.scenario)?,
                out_dir: Some(args.out.clone()),
                workers: args.workers,
                event_logs: args.event_log,
                keep_records: false,
            };
            info!("{} deployments x {} loads x {} policies", spec.seeds.len(), spec.loads.len(), spec.policies.len());
            let results = experiment::run_experiment(&spec).map_err(|e| {
                if e.is_unsupported_scenario() {
                    Failure::Unsupported(e.to_string())
                } else {
                    Failure::Plain(e.to_string())
                }
            })?;
            for row in experiment::aggregate(&spec, &results) {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{:<10} {:<5} runs={:<4} thr={} Mbps p50={} ms p99={} ms p99_red={}",
                    row.traffic,
                    row.policy,
                    row.runs,
                    fmt(row.median_throughput_mbps),
                    fmt(row.median_p50_ms),
                    fmt(row.median_p99_ms),
                    fmt(row.median_p99_reduction)
                );
            }
            info!("results written to {}", args.out.display());
        }
        Command::Verify { out } => {
            let reports = experiment::verify(&out).map_err(|e| Failure::Plain(e.to_string()))?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!("{status} {}", r.run);
                for (name, err) in &r.checks {
                    if let Some(e) = err {
                        println!("  {name}: {e}");
                    }
                }
                failed += usize::from(!r.passed());
            }
            println!("{} runs, {failed} failed", reports.len());
            if failed > 0 {
                return Err(Failure::Checks);
            }
        }
        Command::Calibrate { scenario: s, seed } => {
            let (params, dep) = scenario(&s, seed)?;
            let seeds = experiment::RunSeeds::of(seed);
            let c = calibrate_load(&dep, &params, seeds.calibration).map_err(|e| Failure::Unsupported(e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&c).map_err(fail)?);
        }
        Command::Plan { scenario: s, seed, policy } => {
            let (params, dep) = scenario(&s, seed)?;
            let plan = optimize_plan(&dep, &params, policy).map_err(|e| Failure::Unsupported(e.to_string()))?;
            print!("{}", plan.export());
            println!("# digest={}", plan.digest());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Plain(msg)) => {
            error!("{msg}");
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Unsupported(msg)) => {
            eprintln!("unsupported scenario: {msg}");
            ExitCode::from(EXIT_UNSUPPORTED)
        }
        Err(Failure::Checks) => ExitCode::from(EXIT_CHECKS_FAILED),
    }
}
