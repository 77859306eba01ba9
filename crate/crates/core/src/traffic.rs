//! Downlink arrival processes and load calibration.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::deployment::Deployment;
use crate::error::CalibrationError;
use crate::mac::{self, Workload};
use crate::params::SimParams;
use crate::phy::{self, LinkMap};
use crate::seed::derive_seed;

/// Fraction of the weakest STA's saturated DCF throughput offered to every STA.
pub const LOAD_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficModel {
    Poisson,
    Bursty,
}

impl fmt::Display for TrafficModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficModel::Poisson => "poisson",
            TrafficModel::Bursty => "bursty",
        })
    }
}

impl FromStr for TrafficModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(TrafficModel::Poisson),
            "bursty" => Ok(TrafficModel::Bursty),
            other => Err(format!("unknown traffic model `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub model: TrafficModel,
    /// Long-run arrivals per second per STA.
    pub per_sta_rate: f64,
    /// ms.
    pub t_on_mean: f64,
    /// ms.
    pub t_off_mean: f64,
}

impl TrafficSpec {
    pub fn new(model: TrafficModel, per_sta_rate: f64, params: &SimParams) -> Self {
        TrafficSpec { model, per_sta_rate, t_on_mean: params.t_on, t_off_mean: params.t_off }
    }

    /// Arrival rate while ON, chosen so that the long-run mean is `per_sta_rate`.
    pub fn on_rate(&self) -> f64 {
        self.per_sta_rate * (self.t_on_mean + self.t_off_mean) / self.t_on_mean
    }

    pub fn is_valid(&self) -> bool {
        self.per_sta_rate > 0.0
            && self.per_sta_rate.is_finite()
            && match self.model {
                TrafficModel::Poisson => true,
                TrafficModel::Bursty => self.t_on_mean > 0.0 && self.t_off_mean >= 0.0 && self.on_rate().is_finite(),
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub sta: usize,
    /// Seconds.
    pub time: f64,
    /// Bits.
    pub size: u32,
}

/// Arrival instants (seconds) of a Poisson process of rate `rate` on `[0, horizon)`.
pub fn poisson_arrivals(rate: f64, horizon: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if !(rate > 0.0) || !(horizon > 0.0) {
        return out;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = gap.sample(&mut rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(&mut rng);
    }
    out
}

/// ON/OFF source: exponential ON and OFF periods, Poisson arrivals at
/// [`TrafficSpec::on_rate`] during ON periods only. The first period is ON
/// with its stationary probability.
pub fn bursty_arrivals(spec: &TrafficSpec, horizon: f64, seed: u64) -> Vec<f64> {
    bursty_with_periods(spec, horizon, seed).0
}

/// Like [`bursty_arrivals`] but also returns the ON intervals.
pub fn bursty_with_periods(spec: &TrafficSpec, horizon: f64, seed: u64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let mut out = Vec::new();
    let mut periods = Vec::new();
    if !(horizon > 0.0) || !spec.is_valid() {
        return (out, periods);
    }
    if spec.t_off_mean == 0.0 {
        periods.push((0.0, horizon));
        return (poisson_arrivals(spec.per_sta_rate, horizon, seed), periods);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let on = Exp::new(1e3 / spec.t_on_mean).expect("positive ON mean");
    let off = Exp::new(1e3 / spec.t_off_mean).expect("positive OFF mean");
    let gap = Exp::new(spec.on_rate()).expect("positive rate");
    let duty = spec.t_on_mean / (spec.t_on_mean + spec.t_off_mean);
    let mut t = 0.0;
    let mut is_on = rng.gen_bool(duty);
    while t < horizon {
        if is_on {
            let end = (t + on.sample(&mut rng)).min(horizon);
            periods.push((t, end));
            let mut a = t + gap.sample(&mut rng);
            while a < end {
                out.push(a);
                a += gap.sample(&mut rng);
            }
            t = end;
        } else {
            t += off.sample(&mut rng);
        }
        is_on = !is_on;
    }
    (out, periods)
}

/// Per-STA arrival instants in integer microseconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrivalTrace {
    pub per_sta: Vec<Vec<u64>>,
    pub frame_length: u32,
}

impl ArrivalTrace {
    /// One independent stream per STA, each seeded from `seed`.
    pub fn generate(spec: &TrafficSpec, num_stas: usize, horizon: f64, frame_length: u32, seed: u64) -> Self {
        let per_sta = (0..num_stas)
            .map(|sta| {
                let s = derive_seed(seed, "arrivals", sta as u64);
                let times = match spec.model {
                    TrafficModel::Poisson => poisson_arrivals(spec.per_sta_rate, horizon, s),
                    TrafficModel::Bursty => bursty_arrivals(spec, horizon, s),
                };
                times.into_iter().map(|t| (t * 1e6).floor() as u64).collect()
            })
            .collect();
        ArrivalTrace { per_sta, frame_length }
    }

    pub fn total(&self) -> usize {
        self.per_sta.iter().map(Vec::len).sum()
    }

    pub fn arrivals(&self) -> impl Iterator<Item = Arrival> + '_ {
        self.per_sta.iter().enumerate().flat_map(move |(sta, ts)| {
            ts.iter().map(move |&t| Arrival { sta, time: t as f64 * 1e-6, size: self.frame_length })
        })
    }

    /// Writes `sta time_us size_bits` lines, merged by time.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut all: Vec<(u64, usize)> =
            self.per_sta.iter().enumerate().flat_map(|(s, ts)| ts.iter().map(move |&t| (t, s))).collect();
        all.sort_unstable();
        for (t, s) in all {
            writeln!(w, "{s} {t} {}", self.frame_length)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R, num_stas: usize) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut per_sta = vec![Vec::new(); num_stas];
        let mut frame_length = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(format!("line {}: expected `sta time_us size_bits`", i + 1)));
            }
            let sta: usize = f[0].parse().map_err(|_| bad(format!("line {}: bad sta", i + 1)))?;
            let t: u64 = f[1].parse().map_err(|_| bad(format!("line {}: bad time", i + 1)))?;
            let size: u32 = f[2].parse().map_err(|_| bad(format!("line {}: bad size", i + 1)))?;
            if sta >= num_stas {
                return Err(bad(format!("line {}: sta {sta} out of range", i + 1)));
            }
            if *frame_length.get_or_insert(size) != size {
                return Err(bad(format!("line {}: mixed frame sizes", i + 1)));
            }
            per_sta[sta].push(t);
        }
        for ts in &mut per_sta {
            ts.sort_unstable();
        }
        Ok(ArrivalTrace { per_sta, frame_length: frame_length.unwrap_or(0) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Arrivals per second applied to every STA.
    pub per_sta_rate: f64,
    /// Saturated DCF throughput of the reference STA, bits/s.
    pub s_min: f64,
    pub reference_sta: usize,
    pub reference_mcs: u8,
    pub saturated_throughput: Vec<f64>,
    pub seed: u64,
}

/// Measures saturated DCF throughput for `sim_duration` and offers every
/// STA [`LOAD_FRACTION`] of the throughput of the STA with the lowest solo
/// MCS (lowest throughput among ties).
pub fn calibrate_load(deployment: &Deployment, params: &SimParams, seed: u64) -> Result<Calibration, CalibrationError> {
    let links = LinkMap::new(deployment, params).expect("deployment distances are positive");
    let mut mcs = Vec::with_capacity(deployment.num_stas());
    for sta in 0..deployment.num_stas() {
        let ap = deployment.association[sta];
        match phy::select_mcs(links.snr_db(sta, ap), &params.mcs_table) {
            Some(m) if phy::max_aggregation(&m, params, false) > 0 => mcs.push(m.index),
            _ => return Err(CalibrationError::UnusableLink { ap, sta }),
        }
    }
    let out = mac::run_dcf(deployment, params, &Workload::Saturated, seed)?;
    let duration = params.sim_duration;
    let throughput: Vec<f64> =
        out.delivered.iter().map(|&d| d as f64 * f64::from(params.frame_length) / duration).collect();
    let reference_sta = (0..deployment.num_stas())
        .min_by(|&a, &b| mcs[a].cmp(&mcs[b]).then(throughput[a].total_cmp(&throughput[b])).then(a.cmp(&b)))
        .expect("at least one STA");
    let s_min = throughput[reference_sta];
    Ok(Calibration {
        per_sta_rate: LOAD_FRACTION * s_min / f64::from(params.frame_length),
        s_min,
        reference_sta,
        reference_mcs: mcs[reference_sta],
        saturated_throughput: throughput,
        seed,
    })
}
