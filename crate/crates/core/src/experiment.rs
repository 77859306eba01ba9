//! Batch experiments: deployments × offered load × access policy.
//!
//! Every deployment seed fans out into independent streams (placement,
//! calibration, arrivals, MAC). Arrival and MAC streams do not depend on the
//! policy, so the policies of one deployment see identical packets.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deployment::{generate_deployment, make_symmetric_deployment, Deployment};
use crate::error::{CalibrationError, ConfigError, DeploymentError, GroupingError, MacError};
use crate::grouping::{optimize_plan, GroupPlan, Policy};
use crate::mac::{self, EngineOptions, EventLog, RunOutput, Workload};
use crate::metrics::{self, Summary};
use crate::params::SimParams;
use crate::seed::derive_seed;
use crate::traffic::{calibrate_load, ArrivalTrace, Calibration, TrafficModel, TrafficSpec};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("deployment {seed}: {source}")]
    Deployment { seed: u64, source: DeploymentError },
    #[error("deployment {seed}: {source}")]
    Calibration { seed: u64, source: CalibrationError },
    #[error("deployment {seed}: {source}")]
    Grouping { seed: u64, source: GroupingError },
    #[error("deployment {seed}: {source}")]
    Mac { seed: u64, source: MacError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Manifest(String),
}

impl ExperimentError {
    /// Scenarios the model does not cover (topology, hidden APs, dead links).
    pub fn is_unsupported_scenario(&self) -> bool {
        matches!(
            self,
            ExperimentError::Deployment { .. }
                | ExperimentError::Calibration { .. }
                | ExperimentError::Grouping { .. }
                | ExperimentError::Mac { .. }
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Channel access scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Access {
    Dcf,
    Cosr(Policy),
}

impl Access {
    pub const ALL: [Access; 3] = [Access::Dcf, Access::Cosr(Policy::Max2), Access::Cosr(Policy::Unc)];
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Access::Dcf => f.write_str("DCF"),
            Access::Cosr(p) => p.fmt(f),
        }
    }
}

impl FromStr for Access {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("dcf") {
            return Ok(Access::Dcf);
        }
        s.parse().map(Access::Cosr)
    }
}

/// Offered load: an arrival process calibrated per deployment, or
/// permanently backlogged queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Load {
    Traffic(TrafficModel),
    Saturated,
}

impl Load {
    fn stream(self) -> u64 {
        match self {
            Load::Traffic(TrafficModel::Poisson) => 0,
            Load::Traffic(TrafficModel::Bursty) => 1,
            Load::Saturated => 2,
        }
    }
}

impl fmt::Display for Load {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Load::Traffic(m) => m.fmt(f),
            Load::Saturated => f.write_str("saturated"),
        }
    }
}

impl FromStr for Load {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("saturated") {
            return Ok(Load::Saturated);
        }
        s.parse().map(Load::Traffic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layout {
    Random,
    /// STA offsets for AP 0, rotated onto the other APs.
    Symmetric(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub params: SimParams,
    pub policies: Vec<Access>,
    pub loads: Vec<Load>,
    pub seeds: Vec<u64>,
    pub layout: Layout,
    pub out_dir: Option<PathBuf>,
    pub workers: usize,
    pub event_logs: bool,
    /// Keep per-packet records in the results (memory heavy).
    pub keep_records: bool,
}

impl ExperimentSpec {
    pub fn new(params: SimParams, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            params,
            policies: Access::ALL.to_vec(),
            loads: vec![Load::Traffic(TrafficModel::Poisson), Load::Traffic(TrafficModel::Bursty)],
            seeds,
            layout: Layout::Random,
            out_dir: None,
            workers: 0,
            event_logs: false,
            keep_records: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let empty = |what: &str| Err(ConfigError::Invalid(format!("at least one {what} is required")));
        if self.policies.is_empty() {
            return empty("policy");
        }
        if self.loads.is_empty() {
            return empty("traffic model");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        self.params.validate()
    }

    fn deployment(&self, seed: u64) -> Result<Deployment, DeploymentError> {
        match &self.layout {
            Layout::Random => generate_deployment(&self.params, derive_seed(seed, "deployment", 0)),
            Layout::Symmetric(offsets) => make_symmetric_deployment(&self.params, offsets),
        }
    }
}

/// Seeds for one deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub calibration: u64,
    pub mac: u64,
}

impl RunSeeds {
    pub fn of(seed: u64) -> Self {
        RunSeeds { calibration: derive_seed(seed, "calibration", 0), mac: derive_seed(seed, "mac", 0) }
    }

    pub fn traffic(seed: u64, load: Load) -> u64 {
        derive_seed(seed, "traffic", load.stream())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub load: Load,
    pub access: Access,
    pub per_sta_rate: f64,
    pub summary: Summary,
    pub output: RunOutput,
    pub plan_digest: Option<String>,
}

/// Everything produced for one deployment.
#[derive(Debug, Clone)]
pub struct DeploymentResult {
    pub seed: u64,
    pub deployment: Deployment,
    pub calibration: Option<Calibration>,
    pub plans: Vec<GroupPlan>,
    pub runs: Vec<RunResult>,
}

/// One CSV row per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub d_ap_ap: f64,
    pub traffic: String,
    pub policy: String,
    pub per_sta_rate: f64,
    pub generated: u64,
    pub delivered: u64,
    pub residual: u64,
    pub throughput_mbps: f64,
    pub p50_ms: Option<f64>,
    pub p99_ms: Option<f64>,
    pub mean_ms: Option<f64>,
    pub txops: u64,
    pub collisions: u64,
    pub plan_digest: String,
}

/// One CSV row per (traffic, policy) cell, reduced over deployments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub traffic: String,
    pub policy: String,
    pub runs: usize,
    pub median_throughput_mbps: Option<f64>,
    pub median_p50_ms: Option<f64>,
    pub median_p99_ms: Option<f64>,
    /// Median over deployments of the paired reduction against DCF.
    pub median_p50_reduction: Option<f64>,
    pub median_p99_reduction: Option<f64>,
    pub median_throughput_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDeployment {
    pub seed: u64,
    pub deployment: Deployment,
    pub calibration: Option<Calibration>,
    pub seeds: RunSeeds,
    pub traffic_seeds: Vec<(Load, u64)>,
    pub plans: Vec<GroupPlan>,
    pub plan_digests: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: SimParams,
    pub mcs_table: String,
    pub policies: Vec<Access>,
    pub loads: Vec<Load>,
    pub layout: Layout,
    pub event_logs: bool,
    pub deployments: Vec<ManifestDeployment>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join("manifest.json");
        let f = File::open(&path).map_err(io_err(&path))?;
        serde_json::from_reader(BufReader::new(f)).map_err(|e| ExperimentError::Manifest(format!("{}: {e}", path.display())))
    }
}

fn workload_for(spec: &ExperimentSpec, seed: u64, load: Load, rate: f64, n: usize) -> Workload {
    match load {
        Load::Saturated => Workload::Saturated,
        Load::Traffic(model) => {
            let p = &spec.params;
            let t = TrafficSpec::new(model, rate, p);
            Workload::Trace(ArrivalTrace::generate(&t, n, p.sim_duration, p.frame_length, RunSeeds::traffic(seed, load)))
        }
    }
}

/// Runs every (load, policy) combination on the deployment of `seed`.
pub fn run_deployment(spec: &ExperimentSpec, seed: u64) -> Result<DeploymentResult, ExperimentError> {
    let p = &spec.params;
    let deployment = spec.deployment(seed).map_err(|source| ExperimentError::Deployment { seed, source })?;
    let seeds = RunSeeds::of(seed);
    let needs_rate = spec.loads.iter().any(|l| matches!(l, Load::Traffic(_)));
    let calibration = if needs_rate {
        Some(calibrate_load(&deployment, p, seeds.calibration).map_err(|source| ExperimentError::Calibration { seed, source })?)
    } else {
        None
    };
    let mut plans = Vec::new();
    for access in &spec.policies {
        if let Access::Cosr(policy) = access {
            plans.push(optimize_plan(&deployment, p, *policy).map_err(|source| ExperimentError::Grouping { seed, source })?);
        }
    }
    let options = EngineOptions { record_log: spec.event_logs };
    let mut runs = Vec::new();
    for &load in &spec.loads {
        let rate = match load {
            Load::Traffic(_) => calibration.as_ref().map_or(0.0, |c| c.per_sta_rate),
            Load::Saturated => 0.0,
        };
        let workload = workload_for(spec, seed, load, rate, deployment.num_stas());
        for &access in &spec.policies {
            let (output, digest) = match access {
                Access::Dcf => (mac::run_dcf_with(&deployment, p, &workload, seeds.mac, options), None),
                Access::Cosr(policy) => {
                    let plan = plans.iter().find(|g| g.policy == policy).expect("plan computed above");
                    (mac::run_cosr_with(&deployment, p, &workload, plan, seeds.mac, options), Some(plan.digest()))
                }
            };
            let mut output = output.map_err(|source| ExperimentError::Mac { seed, source })?;
            let mut summary = metrics::summarize(&output.records, &deployment, p);
            if !spec.keep_records {
                output.records = Vec::new();
            }
            if matches!(load, Load::Saturated) {
                saturated_throughput(&mut summary, &output, p);
            }
            log::debug!("seed {seed} {load} {access}: {} delivered", summary.network.delivered);
            runs.push(RunResult { seed, load, access, per_sta_rate: rate, summary, output, plan_digest: digest });
        }
    }
    Ok(DeploymentResult { seed, deployment, calibration, plans, runs })
}

/// Saturated runs keep no packet records; throughput comes from the counters.
fn saturated_throughput(summary: &mut Summary, output: &RunOutput, p: &SimParams) {
    let bits = f64::from(p.frame_length);
    for s in &mut summary.stas {
        s.delivered = output.delivered[s.sta];
        s.throughput = s.delivered as f64 * bits / p.sim_duration;
    }
    summary.network.delivered = summary.stas.iter().map(|s| s.delivered).sum();
    summary.network.aggregate_throughput = summary.stas.iter().map(|s| s.throughput).sum();
}

/// Runs the whole matrix on a worker pool. Results come back in seed order.
pub fn run_batch(spec: &ExperimentSpec) -> Result<Vec<DeploymentResult>, ExperimentError> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| ExperimentError::Manifest(format!("worker pool: {e}")))?;
    pool.install(|| spec.seeds.par_iter().map(|&s| run_deployment(spec, s)).collect())
}

/// Runs the batch and writes `runs.csv`, `stas.csv`, `aggregate.csv`,
/// `manifest.json` and, when enabled, `logs/*.jsonl` under `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<DeploymentResult>, ExperimentError> {
    spec.validate()?;
    let out = spec.out_dir.as_deref().ok_or_else(|| ConfigError::Invalid("no output directory".into()))?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let results = run_batch(spec)?;
    write_results(spec, &results, out)?;
    Ok(results)
}

pub fn run_rows(spec: &ExperimentSpec, results: &[DeploymentResult]) -> Vec<RunRow> {
    let mut rows = Vec::new();
    for r in results.iter().flat_map(|d| &d.runs) {
        let n = &r.summary.network;
        rows.push(RunRow {
            seed: r.seed,
            d_ap_ap: spec.params.inter_ap_distance,
            traffic: r.load.to_string(),
            policy: r.access.to_string(),
            per_sta_rate: r.per_sta_rate,
            generated: r.output.generated.iter().sum(),
            delivered: n.delivered,
            residual: n.residual_queue,
            throughput_mbps: n.aggregate_throughput / 1e6,
            p50_ms: n.pooled_p50,
            p99_ms: n.pooled_p99,
            mean_ms: n.pooled_mean,
            txops: r.output.txops,
            collisions: r.output.collisions,
            plan_digest: r.plan_digest.clone().unwrap_or_default(),
        });
    }
    rows
}

/// Per (traffic, policy) medians, with reductions paired by deployment.
fn find_run(d: &DeploymentResult, load: Load, access: Access) -> Option<&metrics::NetworkSummary> {
    d.runs.iter().find(|r| r.load == load && r.access == access).map(|r| &r.summary.network)
}

pub fn aggregate(spec: &ExperimentSpec, results: &[DeploymentResult]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for &load in &spec.loads {
        for &access in &spec.policies {
            let mut thr = Vec::new();
            let (mut p50, mut p99) = (Vec::new(), Vec::new());
            let (mut red50, mut red99, mut gains) = (Vec::new(), Vec::new(), Vec::new());
            for d in results {
                let Some(n) = find_run(d, load, access) else { continue };
                thr.push(n.aggregate_throughput / 1e6);
                p50.extend(n.pooled_p50);
                p99.extend(n.pooled_p99);
                if let Some(base) = find_run(d, load, Access::Dcf) {
                    if let (Some(a), Some(b)) = (n.pooled_p50, base.pooled_p50) {
                        red50.push(metrics::reduction(a, b));
                    }
                    if let (Some(a), Some(b)) = (n.pooled_p99, base.pooled_p99) {
                        red99.push(metrics::reduction(a, b));
                    }
                    if base.aggregate_throughput > 0.0 {
                        gains.push(metrics::gain(n.aggregate_throughput, base.aggregate_throughput));
                    }
                }
            }
            rows.push(AggregateRow {
                traffic: load.to_string(),
                policy: access.to_string(),
                runs: thr.len(),
                median_throughput_mbps: metrics::median(&thr),
                median_p50_ms: metrics::median(&p50),
                median_p99_ms: metrics::median(&p99),
                median_p50_reduction: metrics::median(&red50),
                median_p99_reduction: metrics::median(&red99),
                median_throughput_gain: metrics::median(&gains),
            });
        }
    }
    rows
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::Manifest(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Manifest(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn log_name(seed: u64, load: Load, access: Access) -> String {
    format!("{seed}_{load}_{access}.jsonl")
}

fn write_results(spec: &ExperimentSpec, results: &[DeploymentResult], out: &Path) -> Result<(), ExperimentError> {
    write_csv(&out.join("runs.csv"), &run_rows(spec, results))?;
    write_csv(&out.join("aggregate.csv"), &aggregate(spec, results))?;
    struct StaRow<'a> {
        seed: u64,
        traffic: String,
        policy: String,
        sta: &'a metrics::StaSummary,
    }
    let mut sta_rows = Vec::new();
    for r in results.iter().flat_map(|d| &d.runs) {
        for s in &r.summary.stas {
            sta_rows.push(StaRow { seed: r.seed, traffic: r.load.to_string(), policy: r.access.to_string(), sta: s });
        }
    }
    let path = out.join("stas.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| ExperimentError::Manifest(e.to_string()))?;
    w.write_record([
        "seed", "traffic", "policy", "sta", "ap", "delivered", "throughput", "delay_p50", "delay_p99", "mean_delay",
        "residual_queue",
    ])
    .map_err(|e| ExperimentError::Manifest(e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &sta_rows {
        let s = r.sta;
        w.write_record([
            r.seed.to_string(),
            r.traffic.clone(),
            r.policy.clone(),
            s.sta.to_string(),
            s.ap.to_string(),
            s.delivered.to_string(),
            s.throughput.to_string(),
            opt(s.delay_p50),
            opt(s.delay_p99),
            opt(s.mean_delay),
            s.residual_queue.to_string(),
        ])
        .map_err(|e| ExperimentError::Manifest(e.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;

    let manifest = Manifest {
        params: spec.params.clone(),
        mcs_table: spec.params.mcs_table.to_text(),
        policies: spec.policies.clone(),
        loads: spec.loads.clone(),
        layout: spec.layout.clone(),
        event_logs: spec.event_logs,
        deployments: results
            .iter()
            .map(|d| ManifestDeployment {
                seed: d.seed,
                deployment: d.deployment.clone(),
                calibration: d.calibration.clone(),
                seeds: RunSeeds::of(d.seed),
                traffic_seeds: spec.loads.iter().map(|&l| (l, RunSeeds::traffic(d.seed, l))).collect(),
                plans: d.plans.clone(),
                plan_digests: d.plans.iter().map(GroupPlan::digest).collect(),
            })
            .collect(),
    };
    let path = out.join("manifest.json");
    let f = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| ExperimentError::Manifest(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(&path))?;

    if spec.event_logs {
        let dir = out.join("logs");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for r in results.iter().flat_map(|d| &d.runs) {
            let Some(log) = &r.output.log else { continue };
            let path = dir.join(log_name(r.seed, r.load, r.access));
            let f = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(f);
            log.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// Outcome of the post-hoc checks for one logged run.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub run: String,
    /// (check name, error if it failed).
    pub checks: Vec<(&'static str, Option<String>)>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, e)| e.is_none())
    }
}

/// Re-reads every event log of a finished batch and runs the invariant
/// checkers on it.
pub fn verify(out_dir: &Path) -> Result<Vec<CheckReport>, ExperimentError> {
    let manifest = Manifest::read(out_dir)?;
    let mut params = manifest.params.clone();
    params.mcs_table = crate::phy::McsTable::parse(&manifest.mcs_table)
        .map_err(|e| ExperimentError::Manifest(format!("MCS table: {e}")))?;
    let mut reports = Vec::new();
    for d in &manifest.deployments {
        for &load in &manifest.loads {
            for &access in &manifest.policies {
                let name = log_name(d.seed, load, access);
                let path = out_dir.join("logs").join(&name);
                let f = File::open(&path).map_err(io_err(&path))?;
                let log = EventLog::read_jsonl(BufReader::new(f)).map_err(io_err(&path))?;
                let groups: Option<Vec<Vec<usize>>> = match access {
                    Access::Dcf => None,
                    Access::Cosr(policy) => {
                        let plan = d
                            .plans
                            .iter()
                            .find(|p| p.policy == policy)
                            .ok_or_else(|| ExperimentError::Manifest(format!("{name}: no {policy} plan")))?;
                        Some(plan.groups.iter().map(|g| g.stas()).collect())
                    }
                };
                let k = d.deployment.num_aps();
                let checks = vec![
                    ("nav", mac::check_nav(&log, k, groups.as_deref()).err()),
                    ("capture", mac::check_capture(&log, &d.deployment, &params).err()),
                    ("conservation", mac::check_conservation(&log).err()),
                    ("time", mac::check_time_accounting(&log).err()),
                    ("backoff", mac::check_backoff(&log, &params).err()),
                ];
                reports.push(CheckReport { run: name, checks });
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Access::ALL {
            assert_eq!(a.to_string().parse::<Access>().unwrap(), a);
        }
        for l in [Load::Saturated, Load::Traffic(TrafficModel::Poisson), Load::Traffic(TrafficModel::Bursty)] {
            assert_eq!(l.to_string().parse::<Load>().unwrap(), l);
        }
        assert!("foo".parse::<Access>().is_err());
    }

    #[test]
    fn spec_needs_everything() {
        let mut s = ExperimentSpec::new(SimParams::default(), vec![]);
        assert!(s.validate().is_err());
        s.seeds = vec![1];
        assert!(s.validate().is_ok());
        s.policies.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn policies_share_arrivals() {
        let p = SimParams { sim_duration: 0.2, ..SimParams::default() };
        let spec = ExperimentSpec {
            loads: vec![Load::Traffic(TrafficModel::Poisson)],
            keep_records: true,
            ..ExperimentSpec::new(p, vec![3])
        };
        let d = run_deployment(&spec, 3).unwrap();
        let arrivals = |r: &RunResult| {
            let mut v: Vec<_> = r.output.records.iter().map(|x| (x.sta, x.arrival_time)).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(d.runs.len(), 3);
        assert_eq!(arrivals(&d.runs[0]), arrivals(&d.runs[1]));
        assert_eq!(arrivals(&d.runs[0]), arrivals(&d.runs[2]));
    }
}
