//! Propagation, link budget, MCS selection and airtime.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::deployment::Deployment;
use crate::error::PhyError;
use crate::params::SimParams;

/// Path loss of the enterprise indoor model with a 10 m breakpoint, in dB.
///
/// `PL = 40.05 + 20 log10(fc / 2.4) + 20 log10(min(d, 10)) + [d > 10] 35 log10(d / 10) + 7 W`
pub fn path_loss(distance: f64, carrier_freq_ghz: f64, walls: u32) -> Result<f64, PhyError> {
    if !(distance > 0.0) {
        return Err(PhyError::NonPositiveDistance(distance));
    }
    let mut pl = 40.05 + 20.0 * (carrier_freq_ghz / 2.4).log10() + 20.0 * distance.min(10.0).log10();
    if distance > 10.0 {
        pl += 35.0 * (distance / 10.0).log10();
    }
    Ok(pl + 7.0 * f64::from(walls))
}

/// Walls between two points `distance` meters apart.
pub fn walls_for_distance(distance: f64, params: &SimParams) -> u32 {
    let tens = (distance / 10.0).floor().max(0.0) as u32;
    (tens * params.walls_per_10m).min(params.max_walls)
}

/// Path loss with the wall count derived from the distance.
pub fn path_loss_auto(distance: f64, params: &SimParams) -> Result<f64, PhyError> {
    path_loss(distance, params.carrier_freq, walls_for_distance(distance, params))
}

pub fn rssi(tx_power_dbm: f64, path_loss_db: f64) -> f64 {
    tx_power_dbm - path_loss_db
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Received power from every AP at every STA, plus AP-to-AP levels.
#[derive(Debug, Clone)]
pub struct LinkMap {
    /// `rx_dbm[ap][sta]`.
    rx_dbm: Vec<Vec<f64>>,
    ap_ap_dbm: Vec<Vec<f64>>,
    noise_w: f64,
}

impl LinkMap {
    pub fn new(deployment: &Deployment, params: &SimParams) -> Result<Self, PhyError> {
        let tx = params.tx_power_dbm();
        let level = |d: f64| path_loss_auto(d, params).map(|pl| rssi(tx, pl));
        let rx_dbm = (0..deployment.num_aps())
            .map(|ap| (0..deployment.num_stas()).map(|s| level(deployment.ap_sta_distance(ap, s))).collect())
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        let k = deployment.num_aps();
        let mut ap_ap_dbm = vec![vec![f64::INFINITY; k]; k];
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    ap_ap_dbm[a][b] = level(deployment.ap_ap_distance(a, b))?;
                }
            }
        }
        Ok(LinkMap { rx_dbm, ap_ap_dbm, noise_w: params.noise_power })
    }

    pub fn rssi_dbm(&self, ap: usize, sta: usize) -> f64 {
        self.rx_dbm[ap][sta]
    }

    pub fn ap_ap_rssi_dbm(&self, a: usize, b: usize) -> f64 {
        self.ap_ap_dbm[a][b]
    }

    /// SINR in dB at `sta` served by `serving`, with `interferers` active.
    /// Summed in watts.
    pub fn sinr_db(&self, sta: usize, serving: usize, interferers: &[usize]) -> f64 {
        let signal = dbm_to_watts(self.rx_dbm[serving][sta]);
        let interference: f64 = interferers
            .iter()
            .filter(|&&a| a != serving)
            .map(|&a| dbm_to_watts(self.rx_dbm[a][sta]))
            .sum();
        10.0 * (signal / (self.noise_w + interference)).log10()
    }

    pub fn snr_db(&self, sta: usize, serving: usize) -> f64 {
        self.sinr_db(sta, serving, &[])
    }

    pub fn link_budget(&self, deployment: &Deployment, params: &SimParams, sta: usize, serving: usize, interferers: &[usize]) -> LinkBudget {
        let distance = deployment.ap_sta_distance(serving, sta);
        LinkBudget {
            rssi: self.rssi_dbm(serving, sta),
            snr: self.snr_db(sta, serving),
            sinr_under_interference: self.sinr_db(sta, serving, interferers),
            distance,
            walls: walls_for_distance(distance, params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkBudget {
    pub rssi: f64,
    pub snr: f64,
    pub sinr_under_interference: f64,
    pub distance: f64,
    pub walls: u32,
}

/// SINR (dB) at `receiver` served by `serving_ap` while every AP in
/// `interferer_aps` transmits. With no interferers this is the SNR.
pub fn sinr(receiver: usize, serving_ap: usize, interferer_aps: &[usize], deployment: &Deployment, params: &SimParams) -> Result<f64, PhyError> {
    let tx = params.tx_power_dbm();
    let rx_w = |ap: usize| -> Result<f64, PhyError> {
        let pl = path_loss_auto(deployment.ap_sta_distance(ap, receiver), params)?;
        Ok(dbm_to_watts(rssi(tx, pl)))
    };
    let signal = rx_w(serving_ap)?;
    let mut interference = 0.0;
    for &ap in interferer_aps {
        debug_assert_ne!(ap, serving_ap);
        interference += rx_w(ap)?;
    }
    Ok(10.0 * (signal / (params.noise_power + interference)).log10())
}

/// Code rate as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingRate {
    pub num: u32,
    pub den: u32,
}

impl CodingRate {
    pub fn value(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl fmt::Display for CodingRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CodingRate {
    type Err = PhyError;

    /// Accepts `n/d` or a terminating decimal such as `0.75`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PhyError::Table(format!("bad coding rate `{s}`"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let num: u32 = n.trim().parse().map_err(|_| bad())?;
            let den: u32 = d.trim().parse().map_err(|_| bad())?;
            if den == 0 || num == 0 || num > den {
                return Err(bad());
            }
            return Ok(CodingRate { num, den });
        }
        // Exact decimal: digits after the point become a power-of-ten denominator.
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int != "0" && !(int == "1" && frac.chars().all(|c| c == '0')) {
            return Err(bad());
        }
        if frac.len() > 9 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u32.pow(frac.len() as u32);
        let num = if int == "1" { den } else { frac.parse::<u32>().unwrap_or(0) };
        if num == 0 {
            return Err(bad());
        }
        let g = gcd(num, den);
        Ok(CodingRate { num: num / g, den: den / g })
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: u8,
    /// Bits per constellation symbol.
    pub modulation_bits: u32,
    pub coding_rate: CodingRate,
    /// Lowest SNR/SINR (dB) at which this MCS is selected.
    pub min_snr: f64,
}

impl McsEntry {
    /// Data bits carried by one OFDM symbol across all subcarriers and streams.
    pub fn bits_per_symbol(&self, params: &SimParams) -> f64 {
        f64::from(params.num_subcarriers)
            * f64::from(params.num_spatial_streams)
            * f64::from(self.modulation_bits)
            * self.coding_rate.value()
    }
}

/// 802.11be MCS 0-13 with their selection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable(Vec<McsEntry>);

/// (bits, coding rate, min SNR dB) for MCS 0..=13.
const DEFAULT_MCS: [(u32, u32, u32, f64); 14] = [
    (1, 1, 2, 2.0),
    (2, 1, 2, 5.0),
    (2, 3, 4, 9.0),
    (4, 1, 2, 11.0),
    (4, 3, 4, 15.0),
    (6, 2, 3, 18.0),
    (6, 3, 4, 20.0),
    (6, 5, 6, 25.0),
    (8, 3, 4, 29.0),
    (8, 5, 6, 31.0),
    (10, 3, 4, 33.0),
    (10, 5, 6, 35.0),
    (12, 3, 4, 37.0),
    (12, 5, 6, 38.0),
];

impl Default for McsTable {
    fn default() -> Self {
        let entries = DEFAULT_MCS
            .iter()
            .enumerate()
            .map(|(i, &(bits, num, den, snr))| McsEntry {
                index: i as u8,
                modulation_bits: bits,
                coding_rate: CodingRate { num, den },
                min_snr: snr,
            })
            .collect();
        McsTable(entries)
    }
}

impl McsTable {
    pub fn new(mut entries: Vec<McsEntry>) -> Result<Self, PhyError> {
        entries.sort_by_key(|e| e.index);
        if entries.len() != 14 || entries.iter().enumerate().any(|(i, e)| usize::from(e.index) != i) {
            return Err(PhyError::Table("indices 0..=13 must each appear exactly once".into()));
        }
        for w in entries.windows(2) {
            if !(w[1].min_snr > w[0].min_snr) {
                return Err(PhyError::Table(format!("min SNR not increasing at MCS {}", w[1].index)));
            }
            let rate = |e: &McsEntry| f64::from(e.modulation_bits) * e.coding_rate.value();
            if !(rate(&w[1]) > rate(&w[0])) {
                return Err(PhyError::Table(format!("data rate not increasing at MCS {}", w[1].index)));
            }
        }
        if entries.iter().any(|e| !e.min_snr.is_finite() || e.modulation_bits == 0) {
            return Err(PhyError::Table("non-finite threshold or zero modulation bits".into()));
        }
        Ok(McsTable(entries))
    }

    /// Parses whitespace- or comma-separated rows of
    /// `index modulation_bits coding_rate min_snr_db`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PhyError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
            let bad = |what: &str| PhyError::Table(format!("line {}: {what}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            entries.push(McsEntry {
                index: fields[0].parse().map_err(|_| bad("bad index"))?,
                modulation_bits: fields[1].parse().map_err(|_| bad("bad modulation bits"))?,
                coding_rate: fields[2].parse()?,
                min_snr: fields[3].parse().map_err(|_| bad("bad min SNR"))?,
            });
        }
        McsTable::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# index modulation_bits coding_rate min_snr_db\n");
        for e in &self.0 {
            out.push_str(&format!("{} {} {} {}\n", e.index, e.modulation_bits, e.coding_rate, e.min_snr));
        }
        out
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.0
    }

    pub fn get(&self, index: u8) -> Option<&McsEntry> {
        self.0.get(usize::from(index))
    }
}

/// Highest MCS whose threshold does not exceed `sinr`; `None` when even
/// MCS 0 is out of reach.
pub fn select_mcs(sinr: f64, table: &McsTable) -> Option<McsEntry> {
    table.entries().iter().rev().find(|e| e.min_snr <= sinr).copied()
}

/// PHY data rate in bits per second.
pub fn data_rate(mcs: &McsEntry, params: &SimParams) -> f64 {
    mcs.bits_per_symbol(params) / (params.symbol_us() * 1e-6)
}

/// Largest A-MPDU (in frames) whose data fits in the TXOP after overheads.
///
/// The data budget is counted in whole OFDM symbols, so the resulting TXOP
/// never exceeds the limit.
pub fn max_aggregation(mcs: &McsEntry, params: &SimParams, coordinated: bool) -> u32 {
    let budget = params.txop_max_us().saturating_sub(params.txop_overhead_us(coordinated)) as f64;
    let symbols = (budget / params.symbol_us()).floor();
    (symbols * mcs.bits_per_symbol(params) / f64::from(params.frame_length)).floor() as u32
}

/// Number of OFDM symbols needed for `n_packets` frames.
pub fn data_symbols(n_packets: u32, mcs: &McsEntry, params: &SimParams) -> u64 {
    let bits = f64::from(n_packets) * f64::from(params.frame_length);
    (bits / mcs.bits_per_symbol(params)).ceil() as u64
}

/// Airtime of a TXOP carrying `n_packets`, in whole microseconds.
pub fn txop_duration(n_packets: u32, mcs: &McsEntry, params: &SimParams, coordinated: bool) -> Result<u64, PhyError> {
    let max = max_aggregation(mcs, params, coordinated);
    if n_packets == 0 || n_packets > max {
        return Err(PhyError::PacketCountOutOfRange { n: n_packets, max });
    }
    let data = (data_symbols(n_packets, mcs, params) as f64 * params.symbol_us()).ceil() as u64;
    Ok(params.txop_overhead_us(coordinated) + data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mcs(i: u8) -> McsEntry {
        *McsTable::default().get(i).unwrap()
    }

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss(1.0, 6.0, 0).unwrap() - 48.01).abs() < 0.01);
        assert!((path_loss(10.0, 6.0, 0).unwrap() - 68.01).abs() < 0.01);
        assert!((path_loss(20.0, 6.0, 1).unwrap() - 85.55).abs() < 0.01);
        assert!(path_loss(0.0, 6.0, 0).is_err());
        assert!(path_loss(-1.0, 6.0, 0).is_err());
    }

    #[test]
    fn wall_rule() {
        let p = SimParams::default();
        assert_eq!(walls_for_distance(9.99, &p), 0);
        assert_eq!(walls_for_distance(10.0, &p), 1);
        assert_eq!(walls_for_distance(19.0, &p), 1);
        assert_eq!(walls_for_distance(28.3, &p), 2);
        assert_eq!(walls_for_distance(95.0, &p), 2);
    }

    #[test]
    fn rssi_examples() {
        assert!((rssi(23.01, 68.01) + 45.0).abs() < 1e-9);
        assert_eq!(rssi(23.01, 0.0), 23.01);
        assert!((rssi(23.01, 48.01) + 25.0).abs() < 1e-9);
    }

    #[test]
    fn rates() {
        let p = SimParams::default();
        assert!((data_rate(&mcs(0), &p) / 72.06e6 - 1.0).abs() < 1e-3);
        assert!((data_rate(&mcs(13), &p) / 1441.2e6 - 1.0).abs() < 1e-3);
        let doubled = SimParams { num_spatial_streams: 4, ..p.clone() };
        assert!((data_rate(&mcs(5), &doubled) - 2.0 * data_rate(&mcs(5), &p)).abs() < 1e-3);
    }

    #[test]
    fn aggregation_limits() {
        let p = SimParams::default();
        assert_eq!(max_aggregation(&mcs(0), &p, true), 27);
        assert_eq!(max_aggregation(&mcs(13), &p, true), 552);
        assert_eq!(max_aggregation(&mcs(13), &p, false), 586);
        let huge = SimParams { frame_length: u32::MAX, ..p };
        assert_eq!(max_aggregation(&mcs(0), &huge, true), 0);
    }

    #[test]
    fn txop_durations() {
        let p = SimParams::default();
        assert!(txop_duration(27, &mcs(0), &p, true).unwrap() <= 5000);
        // 402 µs overhead + one 13.6 µs symbol rounded up.
        assert_eq!(txop_duration(1, &mcs(13), &p, true).unwrap(), 416);
        assert_eq!(txop_duration(1, &mcs(13), &p, false).unwrap(), 130);
        assert!(txop_duration(0, &mcs(13), &p, true).is_err());
        assert!(txop_duration(553, &mcs(13), &p, true).is_err());
    }

    #[test]
    fn mcs_selection_boundaries() {
        let t = McsTable::default();
        let top = t.get(13).unwrap();
        assert_eq!(select_mcs(top.min_snr, &t).unwrap().index, 13);
        assert_eq!(select_mcs(t.get(0).unwrap().min_snr - 1e-9, &t), None);
        assert_eq!(select_mcs(49.9, &t).unwrap().index, 13);
        assert_eq!(select_mcs(t.get(4).unwrap().min_snr + 0.5, &t).unwrap().index, 4);
    }

    #[test]
    fn sinr_examples() {
        let p = SimParams { num_bss: 2, stas_per_bss: 1, inter_ap_distance: 20.0, ..SimParams::default() };
        // STA at the midpoint: equal power from both APs.
        let dep = Deployment {
            ap_positions: vec![crate::deployment::Point::new(0.0, 0.0), crate::deployment::Point::new(20.0, 0.0)],
            sta_positions: vec![crate::deployment::Point::new(10.0, 0.0), crate::deployment::Point::new(19.0, 0.0)],
            association: vec![0, 1],
            rng_seed: None,
        };
        let snr = sinr(0, 0, &[], &dep, &p).unwrap();
        let rx = rssi(p.tx_power_dbm(), path_loss_auto(10.0, &p).unwrap());
        assert!((snr - (rx - watts_to_dbm(p.noise_power))).abs() < 1e-9);
        let s = sinr(0, 0, &[1], &dep, &p).unwrap();
        assert!(s.abs() < 1e-3, "{s}");
        assert!(s < snr);
        let map = LinkMap::new(&dep, &p).unwrap();
        assert!((map.sinr_db(0, 0, &[1]) - s).abs() < 1e-12);
    }

    #[test]
    fn snr_at_minus_45_dbm() {
        // -45 dBm over 3.2e-13 W of noise.
        let snr = -45.0 - watts_to_dbm(3.2e-13);
        assert!((snr - 49.95).abs() < 0.01, "{snr}");
    }

    #[test]
    fn table_text_round_trip_and_validation() {
        let t = McsTable::default();
        assert_eq!(McsTable::parse(&t.to_text()).unwrap(), t);
        let mut text = t.to_text();
        text = text.replace("13 12 5/6 38", "13 12 5/6 1");
        assert!(McsTable::parse(&text).is_err());
        assert!(McsTable::parse("0 1 1/2 2\n").is_err());
        assert_eq!("0.75".parse::<CodingRate>().unwrap(), CodingRate { num: 3, den: 4 });
        assert_eq!("5/6".parse::<CodingRate>().unwrap(), CodingRate { num: 5, den: 6 });
        assert!("1,5".parse::<CodingRate>().is_err());
        assert!("7/6".parse::<CodingRate>().is_err());
    }
}
