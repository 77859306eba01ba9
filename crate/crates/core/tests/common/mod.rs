//! Shared reference computations and fuzz cases for the integration tests.
#![allow(dead_code)]

use cosr::deployment::{generate_deployment, Deployment, Point};
use cosr::grouping::{optimize_plan, GroupPlan, Policy};
use cosr::mac::{self, EngineOptions, RunOutput, Workload};
use cosr::params::SimParams;
use cosr::seed::derive_seed;
use cosr::traffic::{calibrate_load, ArrivalTrace, TrafficModel, TrafficSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const K: usize = 4;
pub const PAIRS: usize = 8;

pub fn oracle_path_loss(d: f64) -> f64 {
    let walls = ((d / 10.0).floor()).min(2.0);
    let far = if d > 10.0 { 35.0 * (d / 10.0).log10() } else { 0.0 };
    40.05 + 20.0 * (6.0f64 / 2.4).log10() + 20.0 * d.min(10.0).log10() + far + 7.0 * walls
}

pub fn oracle_sinr(dep: &Deployment, sta: usize, serving: usize, others: &[usize]) -> f64 {
    let mw = |ap: usize| 10f64.powf((10.0 * 200f64.log10() - oracle_path_loss(dep.ap_positions[ap].distance(dep.sta_positions[sta]))) / 10.0);
    let noise_mw = 3.2e-13 * 1e3;
    10.0 * (mw(serving) / (noise_mw + others.iter().map(|&a| mw(a)).sum::<f64>())).log10()
}

/// Largest A-MPDU fitting a coordinated 5 ms TXOP, by direct search.
pub fn oracle_packets(p: &SimParams, sinr: f64) -> Option<u32> {
    let m = p.mcs_table.entries().iter().rev().find(|m| m.min_snr <= sinr)?;
    let bits_per_symbol = 980.0 * 2.0 * f64::from(m.modulation_bits) * m.coding_rate.value();
    let mut n = 0u32;
    while 286.0 + 16.0 + 100.0 + ((f64::from(n + 1) * 12000.0) / bits_per_symbol).ceil() * 13.6 <= 5000.0 {
        n += 1;
    }
    (n > 0).then_some(n)
}

/// Sum over pairs of ln(p_tx * packets) for a valid block, or None.
pub fn oracle_block(dep: &Deployment, p: &SimParams, block: &[usize], cap: usize) -> Option<f64> {
    if block.len() > cap {
        return None;
    }
    let aps: Vec<usize> = block.iter().map(|&s| dep.association[s]).collect();
    let mut uniq = aps.clone();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != aps.len() {
        return None;
    }
    // Every AP has two pairs, so it sits in two groups of any cover.
    let p_tx = block.len() as f64 / (K as f64 * 2.0);
    let mut total = 0.0;
    for (&s, &ap) in block.iter().zip(&aps) {
        let others: Vec<usize> = aps.iter().copied().filter(|&a| a != ap).collect();
        let v = oracle_sinr(dep, s, ap, &others);
        if v < 15.0 {
            return None;
        }
        total += (p_tx * f64::from(oracle_packets(p, v)?)).ln();
    }
    Some(total)
}

/// Every set partition of 0..n via restricted growth strings.
pub fn partitions(n: usize) -> Vec<Vec<Vec<usize>>> {
    fn go(i: usize, n: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<Vec<usize>>>) {
        if i == n {
            let blocks = a.iter().max().map_or(0, |m| m + 1);
            let mut parts = vec![Vec::new(); blocks];
            for (x, &b) in a.iter().enumerate() {
                parts[b].push(x);
            }
            out.push(parts);
            return;
        }
        let limit = a.iter().max().map_or(0, |m| m + 1);
        for b in 0..=limit {
            a.push(b);
            go(i + 1, n, a, out);
            a.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, &mut Vec::new(), &mut out);
    out
}

pub fn brute_force(dep: &Deployment, p: &SimParams, cap: usize, all: &[Vec<Vec<usize>>]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    'outer: for part in all {
        let mut total = 0.0;
        for block in part {
            match oracle_block(dep, p, block, cap) {
                Some(v) => total += v,
                None => continue 'outer,
            }
        }
        best = best.max(total);
    }
    best
}

pub fn plan_value(dep: &Deployment, p: &SimParams, plan: &GroupPlan) -> f64 {
    plan.groups.iter().map(|g| oracle_block(dep, p, &g.stas(), PAIRS).expect("plan group invalid")).sum()
}


pub fn line_deployment(k: usize) -> Deployment {
    Deployment {
        ap_positions: (0..k).map(|i| Point::new(i as f64 * 10.0, 0.0)).collect(),
        sta_positions: (0..k).map(|i| Point::new(i as f64 * 10.0, 2.0)).collect(),
        association: (0..k).collect(),
        rng_seed: None,
    }
}

pub struct Case {
    pub params: SimParams,
    pub seed: u64,
    pub policy: Option<Policy>,
    pub workload: Workload,
}

pub fn case(i: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(99, "fuzz", i));
    let d = [10.0, 15.0, 20.0][rng.gen_range(0..3)];
    let params = SimParams { inter_ap_distance: d, sim_duration: 1.0, ..SimParams::default() };
    let policy = [None, Some(Policy::Max2), Some(Policy::Unc)][rng.gen_range(0..3)];
    let seed = rng.gen();
    let dep = generate_deployment(&params, seed).unwrap();
    let workload = match rng.gen_range(0..4) {
        0 => Workload::Saturated,
        k => {
            let rate = calibrate_load(&dep, &params, seed).unwrap().per_sta_rate * rng.gen_range(0.3..1.6);
            let model = if k == 1 { TrafficModel::Poisson } else { TrafficModel::Bursty };
            let spec = TrafficSpec::new(model, rate, &params);
            Workload::Trace(ArrivalTrace::generate(&spec, 8, params.sim_duration, params.frame_length, seed))
        }
    };
    Case { params, seed, policy, workload }
}

pub fn run(c: &Case) -> (RunOutput, Option<Vec<Vec<usize>>>) {
    let dep = generate_deployment(&c.params, c.seed).unwrap();
    let opts = EngineOptions { record_log: true };
    match c.policy {
        None => (mac::run_dcf_with(&dep, &c.params, &c.workload, c.seed, opts).unwrap(), None),
        Some(policy) => {
            let plan = optimize_plan(&dep, &c.params, policy).unwrap();
            let groups = plan.groups.iter().map(|g| g.stas()).collect();
            (mac::run_cosr_with(&dep, &c.params, &c.workload, &plan, c.seed, opts).unwrap(), Some(groups))
        }
    }
}


/// Runs fuzz case `i` twice and applies every engine invariant check.
pub fn check_case(i: u64) -> Result<(), String> {
    let c = case(i);
    let dep = generate_deployment(&c.params, c.seed).unwrap();
    let (out, groups) = run(&c);
    let log = out.log.as_ref().unwrap();
    let ctx = format!("case {i} ({:?}, d={})", c.policy, c.params.inter_ap_distance);
    let fail = |what: &str, e: String| format!("{ctx}: {what}: {e}");
    mac::check_time_accounting(log).map_err(|e| fail("time", e.to_string()))?;
    mac::check_conservation(log).map_err(|e| fail("conservation", e.to_string()))?;
    mac::check_nav(log, 4, groups.as_deref()).map_err(|e| fail("nav", e.to_string()))?;
    mac::check_capture(log, &dep, &c.params).map_err(|e| fail("capture", e.to_string()))?;
    mac::check_backoff(log, &c.params).map_err(|e| fail("backoff", e.to_string()))?;
    let a = &out.accounting;
    if a.idle + a.collision + a.txop != a.end {
        return Err(fail("accounting", format!("{a:?}")));
    }
    if matches!(c.workload, Workload::Trace(_)) {
        for sta in 0..8 {
            if out.generated[sta] != out.delivered[sta] + out.residual[sta] {
                return Err(fail("per-STA conservation", format!("STA {sta}")));
            }
        }
    }
    if out.records.iter().any(|r| r.delivered && r.delivery_time < r.arrival_time) {
        return Err(fail("causality", "delivery before arrival".into()));
    }
    let (again, _) = run(&c);
    if out.records != again.records || out.log != again.log {
        return Err(fail("determinism", "rerun differs".into()));
    }
    Ok(())
}
