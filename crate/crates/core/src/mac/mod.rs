//! Slotted CSMA/CA with optional coordinated spatial-reuse TXOPs.
//!
//! Time is kept in integer microseconds. Every AP contends with a binary
//! exponential backoff; after any busy period the channel must stay idle for
//! DIFS before counters resume, and a counter reaching zero at a slot
//! boundary starts a transmission. Counters reaching zero in the same slot
//! collide.
//!
//! Under DCF the winner serves one of its STAs. Under Co-SR the winner (the
//! sharing AP) picks a STA the same way, then triggers every other pair of
//! that STA's plan group with queued traffic; the rest of the APs hold their
//! NAV and keep their counters frozen until the TXOP ends.

mod log;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deployment::Deployment;
use crate::error::MacError;
use crate::grouping::GroupPlan;
use crate::params::SimParams;
use crate::phy::{self, LinkMap, McsEntry};
use crate::traffic::ArrivalTrace;

pub use self::log::{
    check_backoff, check_capture, check_conservation, check_nav, check_time_accounting, EventLog, LogEntry, TxEntry,
};

/// Microsecond tick.
pub type Tick = u64;

#[derive(Debug, Clone)]
pub enum Workload {
    /// Every queue is permanently backlogged.
    Saturated,
    Trace(ArrivalTrace),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Arrival { sta: usize },
    BackoffExpiry { generation: u64 },
    TxopEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Tick,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (time, sequence).
        (other.time, other.sequence).cmp(&(self.time, self.sequence))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    next_sequence: u64,
}

impl EventQueue {
    fn push(&mut self, time: Tick, kind: EventKind) {
        self.heap.push(Event { time, sequence: self.next_sequence, kind });
        self.next_sequence += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub sta: usize,
    pub arrival_time: Tick,
    pub delivery_time: Tick,
    pub txop_id: u64,
    pub delivered: bool,
}

impl PacketRecord {
    pub fn delay_us(&self) -> Option<Tick> {
        self.delivered.then(|| self.delivery_time - self.arrival_time)
    }
}

/// Where simulated time went. `idle + collision + txop == end` exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAccounting {
    pub idle: Tick,
    pub collision: Tick,
    pub txop: Tick,
    pub end: Tick,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<PacketRecord>,
    pub generated: Vec<u64>,
    pub delivered: Vec<u64>,
    pub residual: Vec<u64>,
    pub accounting: TimeAccounting,
    pub txops: u64,
    pub collisions: u64,
    pub log: Option<EventLog>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EngineOptions {
    pub record_log: bool,
}

/// Per-AP contention state.
#[derive(Debug, Clone)]
pub struct MacState {
    pub stas: Vec<usize>,
    pub backoff_counter: Option<u32>,
    /// Slot boundary from which the counter is being decremented.
    pub count_from: Tick,
    pub contention_window: u32,
    pub retry_count: u32,
    pub nav_until: Tick,
    pub rr_cursor: usize,
    /// STA chosen for a TXOP that collided; retried first.
    pub pending_sta: Option<usize>,
}

/// How one pair is served.
#[derive(Debug, Clone, Copy)]
struct PairAccess {
    group: usize,
    mcs: McsEntry,
    max_packets: u32,
}

/// APs that hear each other above CCA. Errors unless every pair does.
pub fn contention_domain(deployment: &Deployment, params: &SimParams) -> Result<Vec<Vec<bool>>, MacError> {
    let links = LinkMap::new(deployment, params).expect("deployment distances are positive");
    let k = deployment.num_aps();
    let mut adj = vec![vec![false; k]; k];
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let rssi = links.ap_ap_rssi_dbm(a, b);
            adj[a][b] = rssi >= params.cca_threshold;
            if !adj[a][b] {
                return Err(MacError::NotAClique { a, b, rssi });
            }
        }
    }
    Ok(adj)
}

/// DCF baseline: each TXOP serves one pair at its solo MCS.
pub fn run_dcf(deployment: &Deployment, params: &SimParams, workload: &Workload, seed: u64) -> Result<RunOutput, MacError> {
    run_dcf_with(deployment, params, workload, seed, EngineOptions::default())
}

pub fn run_dcf_with(
    deployment: &Deployment,
    params: &SimParams,
    workload: &Workload,
    seed: u64,
    options: EngineOptions,
) -> Result<RunOutput, MacError> {
    contention_domain(deployment, params)?;
    let links = LinkMap::new(deployment, params).expect("deployment distances are positive");
    let mut access = Vec::with_capacity(deployment.num_stas());
    for sta in 0..deployment.num_stas() {
        let ap = deployment.association[sta];
        let mcs = phy::select_mcs(links.snr_db(sta, ap), &params.mcs_table).ok_or(MacError::UnusableLink(sta))?;
        let max_packets = phy::max_aggregation(&mcs, params, false);
        if max_packets == 0 {
            return Err(MacError::UnusableLink(sta));
        }
        access.push(PairAccess { group: sta, mcs, max_packets });
    }
    let groups: Vec<Vec<usize>> = (0..deployment.num_stas()).map(|s| vec![s]).collect();
    Engine::new(deployment, params, workload, seed, options, access, groups, false)?.run()
}

/// Co-SR: contention as in DCF, but a win triggers the plan group of the
/// selected pair.
pub fn run_cosr(
    deployment: &Deployment,
    params: &SimParams,
    workload: &Workload,
    plan: &GroupPlan,
    seed: u64,
) -> Result<RunOutput, MacError> {
    run_cosr_with(deployment, params, workload, plan, seed, EngineOptions::default())
}

pub fn run_cosr_with(
    deployment: &Deployment,
    params: &SimParams,
    workload: &Workload,
    plan: &GroupPlan,
    seed: u64,
    options: EngineOptions,
) -> Result<RunOutput, MacError> {
    contention_domain(deployment, params)?;
    if !plan.covers(deployment) {
        return Err(MacError::PlanMismatch("groups do not partition the deployment's AP-STA pairs".into()));
    }
    let mut access: Vec<Option<PairAccess>> = vec![None; deployment.num_stas()];
    let mut groups = Vec::with_capacity(plan.groups.len());
    for (gi, g) in plan.groups.iter().enumerate() {
        if g.per_member_mcs.len() != g.members.len() {
            return Err(MacError::PlanMismatch(format!("group {gi} lacks per-member MCS")));
        }
        for (m, mcs) in g.members.iter().zip(&g.per_member_mcs) {
            let max_packets = phy::max_aggregation(mcs, params, true);
            if max_packets == 0 {
                return Err(MacError::UnusableLink(m.sta));
            }
            access[m.sta] = Some(PairAccess { group: gi, mcs: *mcs, max_packets });
        }
        groups.push(g.stas());
    }
    let access = access.into_iter().collect::<Option<Vec<_>>>().expect("plan covers every STA");
    Engine::new(deployment, params, workload, seed, options, access, groups, true)?.run()
}

struct InFlight {
    sta: usize,
    packets: Vec<u32>,
    count: u64,
}

struct Engine<'a> {
    params: &'a SimParams,
    association: &'a [usize],
    access: Vec<PairAccess>,
    groups: Vec<Vec<usize>>,
    coordinated: bool,
    saturated: bool,
    trace: Option<&'a ArrivalTrace>,
    next_arrival: Vec<usize>,
    rng: ChaCha8Rng,
    events: EventQueue,
    aps: Vec<MacState>,
    /// Record indices waiting per STA.
    queues: Vec<VecDeque<u32>>,
    records: Vec<PacketRecord>,
    generated: Vec<u64>,
    delivered: Vec<u64>,
    in_flight: Vec<InFlight>,
    busy: bool,
    /// End of DIFS after the last busy period.
    idle_start: Tick,
    last_busy_end: Tick,
    generation: u64,
    txop_id: u64,
    accounting: TimeAccounting,
    txops: u64,
    collisions: u64,
    slot: Tick,
    horizon: Tick,
    log: Option<EventLog>,
}

impl<'a> Engine<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        deployment: &'a Deployment,
        params: &'a SimParams,
        workload: &'a Workload,
        seed: u64,
        options: EngineOptions,
        access: Vec<PairAccess>,
        groups: Vec<Vec<usize>>,
        coordinated: bool,
    ) -> Result<Self, MacError> {
        let n = deployment.num_stas();
        let trace = match workload {
            Workload::Saturated => None,
            Workload::Trace(t) => {
                if t.per_sta.len() != n {
                    return Err(MacError::WorkloadMismatch(format!("trace has {} STAs, deployment {n}", t.per_sta.len())));
                }
                Some(t)
            }
        };
        let aps = (0..deployment.num_aps())
            .map(|ap| MacState {
                stas: deployment.stas_of(ap).collect(),
                backoff_counter: None,
                count_from: 0,
                contention_window: params.cw_min,
                retry_count: 0,
                nav_until: 0,
                rr_cursor: 0,
                pending_sta: None,
            })
            .collect();
        let capacity = trace.map_or(0, |t| t.total());
        Ok(Engine {
            params,
            association: &deployment.association,
            access,
            groups,
            coordinated,
            saturated: trace.is_none(),
            trace,
            next_arrival: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: EventQueue::default(),
            aps,
            queues: vec![VecDeque::new(); n],
            records: Vec::with_capacity(capacity),
            generated: vec![0; n],
            delivered: vec![0; n],
            in_flight: Vec::new(),
            busy: false,
            idle_start: params.difs_us(),
            last_busy_end: 0,
            generation: 0,
            txop_id: 0,
            accounting: TimeAccounting::default(),
            txops: 0,
            collisions: 0,
            slot: params.slot_us(),
            horizon: params.sim_duration_us(),
            log: options.record_log.then(EventLog::default),
        })
    }

    fn run(mut self) -> Result<RunOutput, MacError> {
        if self.saturated {
            for ap in 0..self.aps.len() {
                self.join(ap, 0);
            }
            self.schedule_expiry();
        } else {
            for sta in 0..self.queues.len() {
                self.push_next_arrival(sta);
            }
        }
        while let Some(ev) = self.events.pop() {
            match ev.kind {
                EventKind::Arrival { sta } => self.on_arrival(sta, ev.time),
                EventKind::BackoffExpiry { generation } => {
                    if generation == self.generation && ev.time < self.horizon {
                        self.on_expiry(ev.time);
                    }
                }
                EventKind::TxopEnd => self.on_busy_end(ev.time),
            }
        }
        let end = self.horizon.max(self.last_busy_end);
        self.accounting.idle += end - self.last_busy_end;
        self.accounting.end = end;
        let residual: Vec<u64> = self.queues.iter().map(|q| q.len() as u64).collect();
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry::Summary {
                end,
                idle: self.accounting.idle,
                collision: self.accounting.collision,
                txop: self.accounting.txop,
                generated: self.generated.clone(),
                delivered: self.delivered.clone(),
                residual: residual.clone(),
            });
        }
        Ok(RunOutput {
            records: self.records,
            generated: self.generated,
            delivered: self.delivered,
            residual,
            accounting: self.accounting,
            txops: self.txops,
            collisions: self.collisions,
            log: self.log,
        })
    }

    fn push_next_arrival(&mut self, sta: usize) {
        let Some(trace) = self.trace else { return };
        let i = self.next_arrival[sta];
        if let Some(&t) = trace.per_sta[sta].get(i) {
            if t < self.horizon {
                self.events.push(t, EventKind::Arrival { sta });
            }
        }
    }

    fn backlogged(&self, ap: usize) -> bool {
        self.saturated || self.aps[ap].stas.iter().any(|&s| !self.queues[s].is_empty())
    }

    fn has_traffic(&self, sta: usize) -> bool {
        self.saturated || !self.queues[sta].is_empty()
    }

    fn draw_backoff(&mut self, ap: usize, at: Tick) {
        let cw = self.aps[ap].contention_window;
        let value = self.rng.gen_range(0..=cw);
        self.aps[ap].backoff_counter = Some(value);
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry::Backoff { t: at, ap, value, cw });
        }
    }

    /// `ap` became backlogged at `t`.
    fn join(&mut self, ap: usize, t: Tick) {
        if self.aps[ap].backoff_counter.is_none() {
            self.draw_backoff(ap, t);
        }
        self.aps[ap].count_from = if t <= self.idle_start {
            self.idle_start
        } else {
            self.idle_start + (t - self.idle_start).div_ceil(self.slot) * self.slot
        };
    }

    fn expiry_of(&self, ap: usize) -> Tick {
        let s = &self.aps[ap];
        s.count_from + Tick::from(s.backoff_counter.unwrap_or(0)) * self.slot
    }

    fn schedule_expiry(&mut self) {
        if self.busy {
            return;
        }
        let next = (0..self.aps.len()).filter(|&a| self.backlogged(a)).map(|a| self.expiry_of(a)).min();
        if let Some(t) = next {
            self.generation += 1;
            self.events.push(t, EventKind::BackoffExpiry { generation: self.generation });
        }
    }

    fn on_arrival(&mut self, sta: usize, t: Tick) {
        let ap = self.association[sta];
        let was_backlogged = self.backlogged(ap);
        self.records.push(PacketRecord { sta, arrival_time: t, delivery_time: 0, txop_id: 0, delivered: false });
        self.queues[sta].push_back((self.records.len() - 1) as u32);
        self.generated[sta] += 1;
        self.next_arrival[sta] += 1;
        self.push_next_arrival(sta);
        if !was_backlogged && !self.busy {
            self.join(ap, t);
            self.schedule_expiry();
        }
    }

    /// Round-robin over the AP's STAs with queued traffic.
    fn select_sta(&mut self, ap: usize) -> usize {
        if let Some(sta) = self.aps[ap].pending_sta.take() {
            if self.has_traffic(sta) {
                return sta;
            }
        }
        let n = self.aps[ap].stas.len();
        let start = self.aps[ap].rr_cursor;
        for k in 0..n {
            let idx = (start + k) % n;
            let sta = self.aps[ap].stas[idx];
            if self.has_traffic(sta) {
                self.aps[ap].rr_cursor = (idx + 1) % n;
                return sta;
            }
        }
        unreachable!("selected AP {ap} has no traffic")
    }

    fn on_expiry(&mut self, t: Tick) {
        let contenders: Vec<usize> = (0..self.aps.len()).filter(|&a| self.backlogged(a)).collect();
        let winners: Vec<usize> = contenders.iter().copied().filter(|&a| self.expiry_of(a) == t).collect();
        debug_assert!(!winners.is_empty());
        // Freeze everyone else at the slots they have counted down.
        for &a in &contenders {
            if winners.contains(&a) {
                continue;
            }
            let s = &mut self.aps[a];
            if t > s.count_from {
                let elapsed = ((t - s.count_from) / self.slot) as u32;
                let c = s.backoff_counter.expect("contender has a counter");
                s.backoff_counter = Some(c - elapsed);
            }
        }
        self.accounting.idle += t - self.last_busy_end;
        self.busy = true;
        if winners.len() > 1 {
            self.collide(&winners, t);
        } else {
            self.transmit(winners[0], t);
        }
    }

    fn collide(&mut self, winners: &[usize], t: Tick) {
        let end = t + self.params.collision_us();
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry::Collision { start: t, end, aps: winners.to_vec() });
        }
        for &ap in winners {
            let sta = self.select_sta(ap);
            let s = &mut self.aps[ap];
            s.pending_sta = Some(sta);
            s.retry_count += 1;
            s.contention_window = (2 * s.contention_window + 1).min(self.params.cw_max);
            self.draw_backoff(ap, t);
        }
        self.collisions += 1;
        self.accounting.collision += end - t;
        self.events.push(end, EventKind::TxopEnd);
    }

    fn take_packets(&mut self, sta: usize, max: u32) -> (Vec<u32>, u64) {
        if self.saturated {
            return (Vec::new(), u64::from(max));
        }
        let n = (max as usize).min(self.queues[sta].len());
        let packets: Vec<u32> = self.queues[sta].drain(..n).collect();
        let count = packets.len() as u64;
        (packets, count)
    }

    fn transmit(&mut self, sharing_ap: usize, t: Tick) {
        let sta = self.select_sta(sharing_ap);
        let group = self.access[sta].group;
        let mut members: Vec<usize> = vec![sta];
        for &other in &self.groups[group] {
            if other != sta && self.has_traffic(other) {
                members.push(other);
            }
        }
        members.sort_unstable();
        self.txop_id += 1;
        let mut duration = 0;
        let mut txs = Vec::with_capacity(members.len());
        for &m in &members {
            let acc = self.access[m];
            let (packets, count) = self.take_packets(m, acc.max_packets);
            let d = phy::txop_duration(count as u32, &acc.mcs, self.params, self.coordinated)
                .expect("packet count within aggregation limit");
            duration = duration.max(d);
            txs.push(TxEntry { ap: self.association[m], sta: m, mcs: acc.mcs.index, packets: count as u32 });
            self.in_flight.push(InFlight { sta: m, packets, count });
        }
        let end = t + duration;
        let participants: Vec<usize> = txs.iter().map(|x| x.ap).collect();
        let nav: Vec<usize> = (0..self.aps.len()).filter(|a| !participants.contains(a)).collect();
        for &a in &nav {
            self.aps[a].nav_until = end;
        }
        let s = &mut self.aps[sharing_ap];
        s.contention_window = self.params.cw_min;
        s.retry_count = 0;
        s.backoff_counter = None;
        self.txops += 1;
        self.accounting.txop += duration;
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry::Txop {
                id: self.txop_id,
                start: t,
                end,
                sharing_ap,
                group: self.coordinated.then_some(group),
                tx: txs,
                nav,
            });
        }
        self.events.push(end, EventKind::TxopEnd);
    }

    fn on_busy_end(&mut self, t: Tick) {
        for f in std::mem::take(&mut self.in_flight) {
            for idx in f.packets {
                let r = &mut self.records[idx as usize];
                r.delivery_time = t;
                r.txop_id = self.txop_id;
                r.delivered = true;
            }
            self.delivered[f.sta] += f.count;
        }
        self.busy = false;
        self.last_busy_end = t;
        self.idle_start = t + self.params.difs_us();
        for ap in 0..self.aps.len() {
            if self.backlogged(ap) {
                if self.aps[ap].backoff_counter.is_none() {
                    self.draw_backoff(ap, t);
                }
                self.aps[ap].count_from = self.idle_start;
            }
        }
        self.schedule_expiry();
    }
}
