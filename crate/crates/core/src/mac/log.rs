//! Event log export and the post-hoc invariant checks run over it.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Tick;
use crate::deployment::Deployment;
use crate::params::SimParams;
use crate::phy::LinkMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEntry {
    pub ap: usize,
    pub sta: usize,
    pub mcs: u8,
    pub packets: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Backoff {
        t: Tick,
        ap: usize,
        value: u32,
        cw: u32,
    },
    Collision {
        start: Tick,
        end: Tick,
        aps: Vec<usize>,
    },
    Txop {
        id: u64,
        start: Tick,
        end: Tick,
        sharing_ap: usize,
        /// Plan group index; absent for DCF.
        group: Option<usize>,
        tx: Vec<TxEntry>,
        /// APs holding NAV until `end`.
        nav: Vec<usize>,
    },
    Summary {
        end: Tick,
        idle: Tick,
        collision: Tick,
        txop: Tick,
        generated: Vec<u64>,
        delivered: Vec<u64>,
        residual: Vec<u64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
        }
        Ok(EventLog { entries })
    }

    fn summary(&self) -> Result<(&Tick, &Tick, &Tick, &Tick, &[u64], &[u64], &[u64]), String> {
        self.entries
            .iter()
            .rev()
            .find_map(|e| match e {
                LogEntry::Summary { end, idle, collision, txop, generated, delivered, residual } => {
                    Some((end, idle, collision, txop, &generated[..], &delivered[..], &residual[..]))
                }
                _ => None,
            })
            .ok_or_else(|| "log has no summary".to_string())
    }

    fn busy_intervals(&self) -> impl Iterator<Item = (Tick, Tick)> + '_ {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Collision { start, end, .. } | LogEntry::Txop { start, end, .. } => Some((*start, *end)),
            _ => None,
        })
    }
}

/// No two busy periods overlap, and every TXOP's transmitters belong to the
/// group it triggered with every other AP under NAV. `groups` lists each
/// plan group's member STAs; pass `None` for DCF runs, where each TXOP must
/// have exactly one transmitter.
pub fn check_nav(log: &EventLog, num_aps: usize, groups: Option<&[Vec<usize>]>) -> Result<(), String> {
    let mut last_end = 0;
    for (start, end) in log.busy_intervals() {
        if start < last_end {
            return Err(format!("busy period at {start} overlaps one ending at {last_end}"));
        }
        if end < start {
            return Err(format!("busy period ends before it starts at {start}"));
        }
        last_end = end;
    }
    for e in &log.entries {
        let LogEntry::Txop { id, sharing_ap, group, tx, nav, .. } = e else { continue };
        let mut aps: Vec<usize> = tx.iter().map(|x| x.ap).collect();
        aps.sort_unstable();
        aps.dedup();
        if aps.len() != tx.len() {
            return Err(format!("TXOP {id}: an AP transmits twice"));
        }
        if !aps.contains(sharing_ap) {
            return Err(format!("TXOP {id}: sharing AP {sharing_ap} does not transmit"));
        }
        match (groups, group) {
            (None, _) => {
                if tx.len() != 1 {
                    return Err(format!("TXOP {id}: {} simultaneous DCF transmitters", tx.len()));
                }
            }
            (Some(groups), Some(g)) => {
                let members = groups.get(*g).ok_or_else(|| format!("TXOP {id}: unknown group {g}"))?;
                if let Some(x) = tx.iter().find(|x| !members.contains(&x.sta)) {
                    return Err(format!("TXOP {id}: AP {} (STA {}) transmits outside group {g}", x.ap, x.sta));
                }
            }
            (Some(_), None) => return Err(format!("TXOP {id}: coordinated TXOP without a group")),
        }
        for a in 0..num_aps {
            if aps.contains(&a) == nav.contains(&a) {
                return Err(format!("TXOP {id}: AP {a} neither transmits nor holds NAV (or both)"));
            }
        }
    }
    Ok(())
}

/// Every transmitter's SINR, recomputed with the other transmitters of its
/// TXOP as interference, clears the capture threshold and its MCS threshold.
pub fn check_capture(log: &EventLog, deployment: &Deployment, params: &SimParams) -> Result<(), String> {
    let links = LinkMap::new(deployment, params).map_err(|e| e.to_string())?;
    for e in &log.entries {
        let LogEntry::Txop { id, tx, .. } = e else { continue };
        for x in tx {
            let others: Vec<usize> = tx.iter().map(|o| o.ap).filter(|&a| a != x.ap).collect();
            let sinr = links.sinr_db(x.sta, x.ap, &others);
            let mcs = params.mcs_table.get(x.mcs).ok_or_else(|| format!("TXOP {id}: unknown MCS {}", x.mcs))?;
            if sinr < params.capture_threshold || sinr < mcs.min_snr {
                return Err(format!("TXOP {id}: STA {} at {sinr:.2} dB cannot decode MCS {}", x.sta, x.mcs));
            }
        }
    }
    Ok(())
}

/// Generated packets equal delivered plus still queued, per STA, and the
/// logged TXOP payloads add up to the delivered counts.
pub fn check_conservation(log: &EventLog) -> Result<(), String> {
    let (_, _, _, _, generated, delivered, residual) = log.summary()?;
    let mut sent = vec![0u64; delivered.len()];
    for e in &log.entries {
        if let LogEntry::Txop { tx, .. } = e {
            for x in tx {
                *sent.get_mut(x.sta).ok_or("TXOP for unknown STA")? += u64::from(x.packets);
            }
        }
    }
    if sent != delivered {
        return Err(format!("logged payloads {sent:?} != delivered {delivered:?}"));
    }
    // Saturated runs generate nothing and leave nothing queued.
    if generated.iter().all(|&g| g == 0) && residual.iter().all(|&r| r == 0) {
        return Ok(());
    }
    for sta in 0..generated.len() {
        if generated[sta] != delivered[sta] + residual[sta] {
            return Err(format!(
                "STA {sta}: generated {} != delivered {} + queued {}",
                generated[sta], delivered[sta], residual[sta]
            ));
        }
    }
    Ok(())
}

/// Idle, collision and TXOP time add up to the elapsed time, and the logged
/// busy periods add up to the reported totals.
pub fn check_time_accounting(log: &EventLog) -> Result<(), String> {
    let (&end, &idle, &collision, &txop, ..) = log.summary()?;
    if idle + collision + txop != end {
        return Err(format!("idle {idle} + collision {collision} + txop {txop} != elapsed {end}"));
    }
    let (mut c, mut t) = (0, 0);
    for e in &log.entries {
        match e {
            LogEntry::Collision { start, end, .. } => c += end - start,
            LogEntry::Txop { start, end, .. } => t += end - start,
            _ => {}
        }
    }
    if c != collision || t != txop {
        return Err(format!("logged busy time ({c}, {t}) != reported ({collision}, {txop})"));
    }
    if log.busy_intervals().any(|(_, e)| e > end) {
        return Err("busy period beyond the end of the run".into());
    }
    Ok(())
}

/// Every drawn backoff lies in `[0, CW]`, and CW doubles (up to the cap) on
/// each collision and resets after each won TXOP.
pub fn check_backoff(log: &EventLog, params: &SimParams) -> Result<(), String> {
    let mut cw: Vec<u32> = Vec::new();
    let at = |ap: usize, cw: &mut Vec<u32>| -> usize {
        if cw.len() <= ap {
            cw.resize(ap + 1, params.cw_min);
        }
        ap
    };
    for e in &log.entries {
        match e {
            LogEntry::Backoff { t, ap, value, cw: drawn_cw } => {
                let i = at(*ap, &mut cw);
                if *drawn_cw != cw[i] {
                    return Err(format!("AP {ap} at {t}: drew with CW {drawn_cw}, expected {}", cw[i]));
                }
                if value > drawn_cw {
                    return Err(format!("AP {ap} at {t}: backoff {value} exceeds CW {drawn_cw}"));
                }
            }
            LogEntry::Collision { aps, .. } => {
                for &ap in aps {
                    let i = at(ap, &mut cw);
                    cw[i] = (2 * cw[i] + 1).min(params.cw_max);
                }
            }
            LogEntry::Txop { sharing_ap, .. } => {
                let i = at(*sharing_ap, &mut cw);
                cw[i] = params.cw_min;
            }
            LogEntry::Summary { .. } => {}
        }
    }
    Ok(())
}
