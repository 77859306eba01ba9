//! Delay percentiles, throughput and policy gains.

use serde::{Deserialize, Serialize};

use crate::deployment::Deployment;
use crate::error::MetricsError;
use crate::mac::PacketRecord;
use crate::params::SimParams;

/// Nearest-rank quantile: the `ceil(q * n)`-th smallest value.
pub fn nearest_rank(sorted: &[u64], q: f64) -> Result<u64, MetricsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MetricsError::BadQuantile(q));
    }
    if sorted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

fn sorted_delays<'a>(records: impl IntoIterator<Item = &'a PacketRecord>) -> Vec<u64> {
    let mut d: Vec<u64> = records.into_iter().filter_map(PacketRecord::delay_us).collect();
    d.sort_unstable();
    d
}

/// Delay quantile over delivered packets, in milliseconds.
pub fn delay_percentile(records: &[PacketRecord], q: f64) -> Result<f64, MetricsError> {
    nearest_rank(&sorted_delays(records), q).map(us_to_ms)
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaSummary {
    pub sta: usize,
    pub ap: usize,
    pub delivered: u64,
    /// bits/s over the simulated duration.
    pub throughput: f64,
    /// Delay fields are `None` when nothing was delivered.
    pub delay_p50: Option<f64>,
    pub delay_p99: Option<f64>,
    pub mean_delay: Option<f64>,
    /// Packets still queued when the run ended.
    pub residual_queue: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub delivered: u64,
    pub residual_queue: u64,
    pub aggregate_throughput: f64,
    /// Percentiles over all delivered packets pooled across STAs, ms.
    pub pooled_p50: Option<f64>,
    pub pooled_p99: Option<f64>,
    pub pooled_mean: Option<f64>,
    /// Mean over STAs of each STA's own percentile, ms.
    pub mean_sta_p50: Option<f64>,
    pub mean_sta_p99: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub stas: Vec<StaSummary>,
    pub network: NetworkSummary,
}

fn describe(sorted: &[u64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if sorted.is_empty() {
        return (None, None, None);
    }
    let mean = sorted.iter().map(|&d| d as f64).sum::<f64>() / sorted.len() as f64 / 1000.0;
    (
        nearest_rank(sorted, 0.5).ok().map(us_to_ms),
        nearest_rank(sorted, 0.99).ok().map(us_to_ms),
        Some(mean),
    )
}

/// Per-STA and network reductions. Undelivered packets count toward
/// `residual_queue` only; they never enter the delay statistics.
pub fn summarize(records: &[PacketRecord], deployment: &Deployment, params: &SimParams) -> Summary {
    let n = deployment.num_stas();
    let mut per_sta: Vec<Vec<u64>> = vec![Vec::new(); n];
    let mut residual = vec![0u64; n];
    for r in records {
        match r.delay_us() {
            Some(d) => per_sta[r.sta].push(d),
            None => residual[r.sta] += 1,
        }
    }
    let bits = f64::from(params.frame_length);
    let stas: Vec<StaSummary> = per_sta
        .iter_mut()
        .enumerate()
        .map(|(sta, delays)| {
            delays.sort_unstable();
            let (p50, p99, mean) = describe(delays);
            StaSummary {
                sta,
                ap: deployment.association[sta],
                delivered: delays.len() as u64,
                throughput: delays.len() as f64 * bits / params.sim_duration,
                delay_p50: p50,
                delay_p99: p99,
                mean_delay: mean,
                residual_queue: residual[sta],
            }
        })
        .collect();
    let pooled = sorted_delays(records);
    let (p50, p99, mean) = describe(&pooled);
    let avg = |f: fn(&StaSummary) -> Option<f64>| {
        let v: Vec<f64> = stas.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let network = NetworkSummary {
        delivered: stas.iter().map(|s| s.delivered).sum(),
        residual_queue: residual.iter().sum(),
        aggregate_throughput: stas.iter().map(|s| s.throughput).sum(),
        pooled_p50: p50,
        pooled_p99: p99,
        pooled_mean: mean,
        mean_sta_p50: avg(|s| s.delay_p50),
        mean_sta_p99: avg(|s| s.delay_p99),
    };
    Summary { stas, network }
}

/// Relative change `(new - base) / base`, e.g. 2.84 for a 284% gain.
pub fn gain(new: f64, base: f64) -> f64 {
    (new - base) / base
}

/// Fractional reduction `1 - new / base`.
pub fn reduction(new: f64, base: f64) -> f64 {
    1.0 - new / base
}

/// Median by nearest rank over an unsorted sample.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deployment::generate_deployment;

    fn rec(sta: usize, arrival: u64, delay: Option<u64>) -> PacketRecord {
        PacketRecord {
            sta,
            arrival_time: arrival,
            delivery_time: arrival + delay.unwrap_or(0),
            txop_id: 1,
            delivered: delay.is_some(),
        }
    }

    #[test]
    fn nearest_rank_examples() {
        let records: Vec<_> = (1..=100).map(|ms| rec(0, 0, Some(ms * 1000))).collect();
        assert_eq!(delay_percentile(&records, 0.5).unwrap(), 50.0);
        assert_eq!(delay_percentile(&records, 0.99).unwrap(), 99.0);
        let one = [rec(0, 5, Some(2500))];
        for q in [0.01, 0.5, 0.99] {
            assert_eq!(delay_percentile(&one, q).unwrap(), 2.5);
        }
        assert_eq!(delay_percentile(&[], 0.5), Err(MetricsError::Empty));
        assert_eq!(delay_percentile(&one, 1.0), Err(MetricsError::BadQuantile(1.0)));
        assert_eq!(delay_percentile(&[rec(0, 0, None)], 0.5), Err(MetricsError::Empty));
    }

    #[test]
    fn summary_handles_idle_stas_and_adds_up() {
        let p = SimParams::default();
        let dep = generate_deployment(&p, 0).unwrap();
        let records = vec![rec(1, 0, Some(1000)), rec(1, 10, Some(3000)), rec(2, 0, Some(500)), rec(2, 0, None)];
        let s = summarize(&records, &dep, &p);
        assert_eq!(s.stas[0].delivered, 0);
        assert_eq!(s.stas[0].throughput, 0.0);
        assert_eq!(s.stas[0].delay_p99, None);
        assert_eq!(s.stas[2].residual_queue, 1);
        assert_eq!(s.stas[1].delay_p50, Some(1.0));
        assert_eq!(s.stas[1].delay_p99, Some(3.0));
        let total: f64 = s.stas.iter().map(|x| x.throughput).sum();
        assert_eq!(s.network.aggregate_throughput, total);
        assert_eq!(s.network.delivered, 3);
        assert_eq!(s.network.pooled_p99, Some(3.0));
        assert!(s.stas.iter().all(|x| x.delay_p50 <= x.delay_p99));
    }

    #[test]
    fn gains() {
        assert!((gain(3.84, 1.0) - 2.84).abs() < 1e-12);
        assert!((reduction(5.0, 100.0) - 0.95).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
