//! Memory controller: request queues, RoRaBaCoCh decoding, FR-FCFS command
//! scheduling, adaptive page policies, refresh and the staggered power-down
//! manager.
//!
//! Power-down decisions are taken only when a check event fires (refresh
//! start/end, data response, precharge end, rank queue drained). If no request
//! for the rank is queued and nothing is in flight, the rank is powered down
//! immediately: PDNA with a bank open, PDNP otherwise. Refresh deadlines then
//! walk the rank deeper: a due refresh in PDNA wakes the rank, precharges all
//! banks and refreshes, after which the rank drops to PDNP; a due refresh in
//! an idle PDNP rank becomes a self-refresh entry.

use std::fmt;

use crate::device::{Applied, Command, DeviceConfig, Geometry, PowerState, ProtocolViolation, RankState};
use crate::engine::{EventQueue, SimTime};
use crate::error::{ConfigError, InputError};
use crate::power::{CommandRecord, RankMeter, Residency, EnergyBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PagePolicy {
    OpenAdaptive,
    ClosedAdaptive,
}

impl PagePolicy {
    pub fn name(self) -> &'static str {
        match self {
            PagePolicy::OpenAdaptive => "open_adaptive",
            PagePolicy::ClosedAdaptive => "closed_adaptive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open_adaptive" | "open-adaptive" => Some(PagePolicy::OpenAdaptive),
            "closed_adaptive" | "closed-adaptive" => Some(PagePolicy::ClosedAdaptive),
            _ => None,
        }
    }
}

impl fmt::Display for PagePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerConfig {
    pub read_queue_depth: usize,
    pub write_queue_depth: usize,
    pub page_policy: PagePolicy,
    pub powerdown_enabled: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            read_queue_depth: 64,
            write_queue_depth: 64,
            page_policy: PagePolicy::OpenAdaptive,
            powerdown_enabled: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.read_queue_depth == 0 {
            return Err(ConfigError::invalid("read_queue_depth", "must be >= 1"));
        }
        if self.write_queue_depth == 0 {
            return Err(ConfigError::invalid("write_queue_depth", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Decoded {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub row: u32,
    pub column: u32,
}

fn bits(n: u32) -> u32 {
    n.trailing_zeros()
}

/// Split a byte address into channel/rank/bank/row/column with the
/// Row-Rank-Bank-Column-Channel layout (row most significant), above the
/// burst offset.
pub fn decode(address: u64, g: &Geometry) -> Result<Decoded, InputError> {
    let capacity = g.capacity_bytes();
    if address >= capacity {
        return Err(InputError::AddressOutOfRange { address, capacity });
    }
    let mut a = address >> bits(g.burst_bytes);
    let mut take = |n: u32| {
        let v = (a & ((1u64 << bits(n)) - 1)) as u32;
        a >>= bits(n);
        v
    };
    let channel = take(g.channels);
    let column = take(g.columns_per_row());
    let bank = take(g.banks_per_rank);
    let rank = take(g.ranks);
    let row = take(g.rows_per_bank);
    Ok(Decoded {
        channel,
        rank,
        bank,
        row,
        column,
    })
}

/// Inverse of [`decode`] for the first byte of a burst.
pub fn encode(d: &Decoded, g: &Geometry) -> u64 {
    let mut a = d.row as u64;
    a = (a << bits(g.ranks)) | d.rank as u64;
    a = (a << bits(g.banks_per_rank)) | d.bank as u64;
    a = (a << bits(g.columns_per_row())) | d.column as u64;
    a = (a << bits(g.channels)) | d.channel as u64;
    a << bits(g.burst_bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub id: u64,
    pub arrive_at: SimTime,
    pub op: Op,
    pub address: u64,
    pub size: u32,
    pub decoded: Decoded,
}

impl Request {
    pub fn new(id: u64, arrive_at: SimTime, op: Op, address: u64, size: u32, g: &Geometry) -> Result<Self, InputError> {
        Ok(Request {
            id,
            arrive_at,
            op,
            address,
            size,
            decoded: decode(address, g)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageDecision {
    KeepOpen,
    Close,
}

/// Whether a bank should be closed after serving an access to `open_row`,
/// given the rows of the other requests still queued for that bank.
pub fn page_policy_decide<I>(policy: PagePolicy, open_row: u32, queued_rows: I) -> PageDecision
where
    I: IntoIterator<Item = u32>,
{
    let mut any = false;
    let mut hit = false;
    for row in queued_rows {
        any = true;
        hit |= row == open_row;
    }
    let close = match policy {
        PagePolicy::OpenAdaptive => any && !hit,
        PagePolicy::ClosedAdaptive => !hit,
    };
    if close {
        PageDecision::Close
    } else {
        PageDecision::KeepOpen
    }
}

/// FR-FCFS choice over `(is_row_hit, ready)` entries listed oldest first:
/// the oldest ready row hit, else the oldest ready request.
pub fn fr_fcfs_choose<I>(entries: I) -> Option<usize>
where
    I: IntoIterator<Item = (bool, bool)>,
{
    let mut first_ready = None;
    for (i, (hit, ready)) in entries.into_iter().enumerate() {
        if !ready {
            continue;
        }
        if hit {
            return Some(i);
        }
        if first_ready.is_none() {
            first_ready = Some(i);
        }
    }
    first_ready
}

/// Next DRAM command needed to serve `req`, or `None` while it must wait for
/// queued row hits on the bank's open row.
fn next_command(req: &Request, rank: &RankState, hits_on_open_row: usize) -> Option<Command> {
    let d = &req.decoded;
    let bank = d.bank as u8;
    let bs = &rank.banks[d.bank as usize];
    match bs.accessible_row() {
        Some(row) if row == d.row => Some(match req.op {
            Op::Read => Command::Rd { bank, col: d.column },
            Op::Write => Command::Wr { bank, col: d.column },
        }),
        Some(_) if hits_on_open_row > 0 => None,
        Some(_) => Some(Command::Pre { bank }),
        None => Some(Command::Act { bank, row: d.row }),
    }
}

/// FR-FCFS selection over `queue` (oldest first) against the ranks' bank
/// state, considering only device legality at `now`.
pub fn fr_fcfs_pick(queue: &[Request], ranks: &[RankState], now: SimTime) -> Option<usize> {
    let entries: Vec<(bool, bool)> = queue
        .iter()
        .map(|req| {
            let rank = &ranks[req.decoded.rank as usize];
            let open = rank.banks[req.decoded.bank as usize].accessible_row();
            let hits = queue
                .iter()
                .filter(|o| {
                    o.decoded.rank == req.decoded.rank
                        && o.decoded.bank == req.decoded.bank
                        && Some(o.decoded.row) == open
                })
                .count();
            match next_command(req, rank, hits) {
                Some(cmd) => (cmd.is_column(), rank.legal(&cmd, now)),
                None => (false, false),
            }
        })
        .collect();
    fr_fcfs_choose(entries)
}

/// Commands that service a due refresh, starting from `state`. `idle` is the
/// power-down entry condition (no queued requests, no pending events).
pub fn refresh_sequence(state: PowerState, idle: bool) -> Vec<Command> {
    match state {
        PowerState::Act => vec![Command::PreA, Command::RefA],
        PowerState::Idle => vec![Command::RefA],
        PowerState::Pdna => vec![Command::Pdx, Command::PreA, Command::RefA],
        PowerState::Pdnp if idle => vec![Command::SrefEn],
        PowerState::Pdnp => vec![Command::Pdx, Command::RefA],
        PowerState::Ref | PowerState::Sref => Vec::new(),
    }
}

/// Exit command needed before a request can be served on a rank in `state`.
pub fn wake_for_request(state: PowerState) -> Vec<Command> {
    match state {
        PowerState::Pdna | PowerState::Pdnp => vec![Command::Pdx],
        PowerState::Sref => vec![Command::SrefEx],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trigger {
    RefreshStart,
    RefreshEnd,
    DataResponded,
    PrechargeEnd,
    QueueEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Traffic source injection; `epoch` discards arrivals from a finished phase.
    Arrival { epoch: u64 },
    /// A full queue gained a free slot.
    QueueVacancy,
    IssueWindow,
    RefreshDue { rank: u32 },
    PrechargeComplete { rank: u32 },
    ReadDataReturned { rank: u32, arrive_at: SimTime },
    WriteDone { rank: u32 },
    RefreshComplete { rank: u32 },
    PowerdownCheck { rank: u32, trigger: Trigger },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intent {
    None,
    Pdna,
    Pdnp,
    Sref,
}

#[derive(Debug, Clone)]
pub struct LowPowerManagerState {
    pub intent: Intent,
    pub reads_in_flight: u32,
    pub writes_in_flight: u32,
    /// End of the precharge in progress per bank.
    pub precharge_end: Vec<SimTime>,
    pub refresh_due: bool,
}

/// Breakdown of the events that block power-down entry for a rank.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PendingEvents {
    pub precharges: u32,
    pub refresh: u32,
    pub data: u32,
}

impl PendingEvents {
    pub fn total(&self) -> u32 {
        self.precharges + self.refresh + self.data
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerStats {
    pub reads_accepted: u64,
    pub writes_accepted: u64,
    pub rejected: u64,
    pub row_hits: u64,
    pub row_misses: u64,
    pub column_commands: u64,
    pub refa: Vec<u64>,
    pub sref_entries: Vec<u64>,
    pub sref_exits: Vec<u64>,
    pub powerdown_entries: Vec<u64>,
    pub responses: u64,
    pub last_response_at: SimTime,
    pub read_latency_ps: u128,
    /// Integral of read-queue length over time (entries x ps).
    pub read_queue_area: u128,
    pub write_queue_area: u128,
    /// Power-down checks that found the rank's queues empty and exactly one
    /// pending event, and how many of those were a precharge.
    pub idle_one_event: u64,
    pub idle_one_precharge: u64,
    pub max_refresh_lateness: SimTime,
}

impl ControllerStats {
    fn new(ranks: usize) -> Self {
        ControllerStats {
            refa: vec![0; ranks],
            sref_entries: vec![0; ranks],
            sref_exits: vec![0; ranks],
            powerdown_entries: vec![0; ranks],
            ..Default::default()
        }
    }
}

/// Snapshot of cumulative counters, residency and energy at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub at: SimTime,
    pub stats: ControllerStats,
    pub residency: Vec<Residency>,
    pub energy: Vec<EnergyBreakdown>,
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    req: Request,
    activated: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    rank: u32,
    cmd: Command,
    req: Option<usize>,
}

pub struct Controller {
    dev: DeviceConfig,
    cfg: ControllerConfig,
    ranks: Vec<RankState>,
    queue: Vec<Queued>,
    reads_queued: usize,
    writes_queued: usize,
    lpm: Vec<LowPowerManagerState>,
    cmd_bus_ok: SimTime,
    data_bus_ok: SimTime,
    next_check: Option<SimTime>,
    meters: Vec<RankMeter>,
    trace: Option<Vec<CommandRecord>>,
    history: Option<Vec<Vec<(SimTime, PowerState)>>>,
    recent: Vec<CommandRecord>,
    stats: ControllerStats,
    occupancy_since: SimTime,
}

const RECENT_COMMANDS: usize = 16;

impl Controller {
    pub fn new(dev: DeviceConfig, cfg: ControllerConfig) -> Self {
        let n = dev.geometry.ranks as usize;
        let refi = dev.timing.t_refi;
        let ranks: Vec<RankState> = (0..n)
            .map(|r| RankState::new(r as u32, &dev, refi + SimTime(refi.0 * r as u64 / n as u64)))
            .collect();
        let banks = dev.geometry.banks_per_rank as usize;
        let lpm = (0..n)
            .map(|_| LowPowerManagerState {
                intent: Intent::None,
                reads_in_flight: 0,
                writes_in_flight: 0,
                precharge_end: vec![SimTime::ZERO; banks],
                refresh_due: false,
            })
            .collect();
        let meters = (0..n)
            .map(|_| RankMeter::new(&dev, SimTime::ZERO, PowerState::Idle))
            .collect();
        Controller {
            dev,
            cfg,
            ranks,
            queue: Vec::new(),
            reads_queued: 0,
            writes_queued: 0,
            lpm,
            cmd_bus_ok: SimTime::ZERO,
            data_bus_ok: SimTime::ZERO,
            next_check: None,
            meters,
            trace: None,
            history: None,
            recent: Vec::with_capacity(RECENT_COMMANDS),
            stats: ControllerStats::new(n),
            occupancy_since: SimTime::ZERO,
        }
    }

    /// Retain every issued command for export.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Retain the full per-rank power-state history.
    pub fn with_history(mut self) -> Self {
        self.history = Some(vec![Vec::new(); self.ranks.len()]);
        self
    }

    pub fn device(&self) -> &DeviceConfig {
        &self.dev
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn ranks(&self) -> &[RankState] {
        &self.ranks
    }

    pub fn lpm(&self) -> &[LowPowerManagerState] {
        &self.lpm
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    pub fn trace(&self) -> Option<&[CommandRecord]> {
        self.trace.as_deref()
    }

    pub fn history(&self) -> Option<&[Vec<(SimTime, PowerState)>]> {
        self.history.as_deref()
    }

    pub fn recent_commands(&self) -> &[CommandRecord] {
        &self.recent
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn queued_reads(&self) -> usize {
        self.reads_queued
    }

    /// No queued or in-flight requests.
    pub fn drained(&self) -> bool {
        self.queue.is_empty()
            && self
                .lpm
                .iter()
                .all(|l| l.reads_in_flight == 0 && l.writes_in_flight == 0)
    }

    /// Schedule the first refresh deadlines and initial power-down checks.
    pub fn start(&mut self, q: &mut EventQueue<Event>) {
        let now = q.now();
        for r in 0..self.ranks.len() {
            let rank = r as u32;
            q.schedule(self.ranks[r].refresh_deadline, Event::RefreshDue { rank });
            q.schedule(
                now,
                Event::PowerdownCheck {
                    rank,
                    trigger: Trigger::QueueEmpty,
                },
            );
        }
    }

    /// Open `row` in `bank` of `rank` at the current time, outside the normal
    /// request flow. Used to set up scenarios that start with an active rank.
    pub fn activate(
        &mut self,
        q: &mut EventQueue<Event>,
        rank: u32,
        bank: u8,
        row: u32,
    ) -> Result<(), ProtocolViolation> {
        let now = q.now().max(self.cmd_bus_ok);
        self.execute(q, now, Candidate {
            rank,
            cmd: Command::Act { bank, row },
            req: None,
        })
    }

    fn kick(&mut self, q: &mut EventQueue<Event>, at: SimTime) {
        if self.next_check.is_none_or(|t| at < t) {
            self.next_check = Some(at);
            q.schedule(at, Event::IssueWindow);
        }
    }

    fn account_occupancy(&mut self, now: SimTime) {
        let dt = (now - self.occupancy_since).0 as u128;
        self.stats.read_queue_area += self.reads_queued as u128 * dt;
        self.stats.write_queue_area += self.writes_queued as u128 * dt;
        self.occupancy_since = now;
    }

    fn drain_transitions(&mut self, r: usize) {
        let tr = self.ranks[r].drain_transitions();
        if tr.is_empty() {
            return;
        }
        for &(at, s) in &tr {
            self.meters[r].transition(at, s);
        }
        if let Some(h) = self.history.as_mut() {
            h[r].extend_from_slice(&tr);
        }
    }

    fn settle(&mut self, now: SimTime) {
        for r in 0..self.ranks.len() {
            self.ranks[r].settle(now);
            self.drain_transitions(r);
        }
    }

    /// Bring residency, energy and occupancy accounting up to `now`.
    pub fn flush(&mut self, now: SimTime) {
        self.settle(now);
        for m in &mut self.meters {
            m.flush(now);
        }
        self.account_occupancy(now);
    }

    pub fn checkpoint(&mut self, now: SimTime) -> Checkpoint {
        self.flush(now);
        Checkpoint {
            at: now,
            stats: self.stats.clone(),
            residency: self.meters.iter().map(|m| m.residency()).collect(),
            energy: self.meters.iter().map(|m| m.energy()).collect(),
        }
    }

    fn queued_for_rank(&self, rank: u32) -> bool {
        self.queue.iter().any(|e| e.req.decoded.rank == rank)
    }

    fn queued_for_bank(&self, rank: u32, bank: u32) -> bool {
        self.queue
            .iter()
            .any(|e| e.req.decoded.rank == rank && e.req.decoded.bank == bank)
    }

    /// Events that currently block power-down of `rank`.
    pub fn pending_events(&self, rank: u32, now: SimTime) -> PendingEvents {
        let r = rank as usize;
        let l = &self.lpm[r];
        let rs = &self.ranks[r];
        let mut p = PendingEvents {
            data: l.reads_in_flight + l.writes_in_flight,
            ..Default::default()
        };
        if rs.power_at(now) == PowerState::Ref {
            p.refresh = 1;
        }
        for (b, bs) in rs.banks.iter().enumerate() {
            let closing = bs.closes_at.is_some_and(|c| c > now);
            if closing || l.precharge_end[b] > now {
                p.precharges += 1;
            } else if self.cfg.page_policy == PagePolicy::ClosedAdaptive
                && bs.accessible_row().is_some()
                && !self.queued_for_bank(rank, b as u32)
            {
                // Close already decided but the PRE is not issued yet.
                p.precharges += 1;
            }
        }
        p
    }

    /// Power-down entry condition: no queued request for the rank and no
    /// pending event.
    pub fn can_power_down(&self, rank: u32, now: SimTime) -> bool {
        self.cfg.powerdown_enabled
            && !self.queued_for_rank(rank)
            && self.pending_events(rank, now).total() == 0
    }

    /// Try to accept a request. `false` signals back-pressure.
    pub fn enqueue(&mut self, q: &mut EventQueue<Event>, req: Request) -> bool {
        let now = q.now();
        let full = match req.op {
            Op::Read => self.reads_queued >= self.cfg.read_queue_depth,
            Op::Write => self.writes_queued >= self.cfg.write_queue_depth,
        };
        if full {
            self.stats.rejected += 1;
            return false;
        }
        debug_assert!(req.decoded.rank < self.ranks.len() as u32);
        self.account_occupancy(now);
        match req.op {
            Op::Read => {
                self.reads_queued += 1;
                self.stats.reads_accepted += 1;
            }
            Op::Write => {
                self.reads_queued += 0;
                self.writes_queued += 1;
                self.stats.writes_accepted += 1;
            }
        }
        self.lpm[req.decoded.rank as usize].intent = Intent::None;
        self.queue.push(Queued {
            req,
            activated: false,
        });
        self.kick(q, now);
        true
    }

    /// Evaluate the power-down entry conditions for `rank` after `trigger`.
    /// Returns the entry command the controller will issue, if any.
    pub fn powerdown_check(
        &mut self,
        q: &mut EventQueue<Event>,
        rank: u32,
        _trigger: Trigger,
    ) -> Option<Command> {
        let now = q.now();
        if !self.cfg.powerdown_enabled {
            return None;
        }
        self.settle(now);
        let r = rank as usize;
        if self.ranks[r].power().is_low_power() || self.lpm[r].refresh_due {
            return None;
        }
        let queued = self.queued_for_rank(rank);
        let pending = self.pending_events(rank, now);
        if !queued && pending.total() == 1 {
            self.stats.idle_one_event += 1;
            if pending.precharges == 1 {
                self.stats.idle_one_precharge += 1;
            }
        }
        if queued || pending.total() != 0 {
            // A closed-policy precharge still waiting for its PRE has no
            // event of its own to wake the scheduler.
            if !queued && pending.precharges > 0 {
                self.kick(q, now);
            }
            return None;
        }
        self.lpm[r].intent = if self.ranks[r].any_bank_open(now) {
            Intent::Pdna
        } else {
            Intent::Pdnp
        };
        self.kick(q, now);
        Some(Command::Pde)
    }

    /// Handle a controller event. Arrivals and vacancies belong to the
    /// traffic source and are ignored here.
    pub fn handle(
        &mut self,
        q: &mut EventQueue<Event>,
        at: SimTime,
        ev: Event,
    ) -> Result<(), ProtocolViolation> {
        match ev {
            Event::Arrival { .. } | Event::QueueVacancy => {}
            Event::IssueWindow => {
                if self.next_check == Some(at) {
                    self.next_check = None;
                    self.issue(q, at)?;
                }
            }
            Event::RefreshDue { rank } => self.on_refresh_due(q, at, rank),
            Event::PrechargeComplete { rank } => {
                self.settle(at);
                q.schedule(at, Event::PowerdownCheck {
                    rank,
                    trigger: Trigger::PrechargeEnd,
                });
                self.kick(q, at);
            }
            Event::ReadDataReturned { rank, arrive_at } => {
                self.lpm[rank as usize].reads_in_flight -= 1;
                self.stats.responses += 1;
                self.stats.last_response_at = at;
                self.stats.read_latency_ps += (at - arrive_at).0 as u128;
                q.schedule(at, Event::PowerdownCheck {
                    rank,
                    trigger: Trigger::DataResponded,
                });
            }
            Event::WriteDone { rank } => {
                self.lpm[rank as usize].writes_in_flight -= 1;
                self.stats.responses += 1;
                self.stats.last_response_at = at;
                q.schedule(at, Event::PowerdownCheck {
                    rank,
                    trigger: Trigger::DataResponded,
                });
            }
            Event::RefreshComplete { rank } => {
                self.settle(at);
                q.schedule(at, Event::PowerdownCheck {
                    rank,
                    trigger: Trigger::RefreshEnd,
                });
                self.kick(q, at);
            }
            Event::PowerdownCheck { rank, trigger } => {
                self.powerdown_check(q, rank, trigger);
            }
        }
        Ok(())
    }

    fn on_refresh_due(&mut self, q: &mut EventQueue<Event>, at: SimTime, rank: u32) {
        let r = rank as usize;
        if self.ranks[r].refresh_deadline != at {
            return;
        }
        self.settle(at);
        if self.ranks[r].power() == PowerState::Sref {
            // Internal self-timed refresh; keep the deadline grid running.
            let next = at + self.dev.timing.t_refi;
            self.ranks[r].refresh_deadline = next;
            q.schedule(next, Event::RefreshDue { rank });
            return;
        }
        self.lpm[r].refresh_due = true;
        self.lpm[r].intent = Intent::None;
        self.kick(q, at);
    }

    fn issue(&mut self, q: &mut EventQueue<Event>, now: SimTime) -> Result<(), ProtocolViolation> {
        if now < self.cmd_bus_ok {
            let at = self.cmd_bus_ok;
            self.kick(q, at);
            return Ok(());
        }
        self.settle(now);
        let mut wake: Option<SimTime> = None;
        let choice = self
            .refresh_candidate(now, &mut wake)
            .or_else(|| self.wake_candidate(now, &mut wake))
            .or_else(|| self.data_candidate(now, &mut wake))
            .or_else(|| self.policy_precharge_candidate(now, &mut wake))
            .or_else(|| self.powerdown_candidate(now, &mut wake));
        match choice {
            Some(c) => {
                self.execute(q, now, c)?;
                let next = now + self.dev.timing.t_ck;
                self.kick(q, next);
            }
            None => {
                if let Some(w) = wake {
                    self.kick(q, w.max(now));
                }
            }
        }
        Ok(())
    }

    fn consider(&self, rank: u32, cmd: Command, now: SimTime, wake: &mut Option<SimTime>) -> bool {
        match self.ranks[rank as usize].earliest_issue(&cmd, now) {
            Some(at) if at <= now => true,
            Some(at) => {
                *wake = Some(wake.map_or(at, |w| w.min(at)));
                false
            }
            None => false,
        }
    }

    fn refresh_candidate(&self, now: SimTime, wake: &mut Option<SimTime>) -> Option<Candidate> {
        for r in 0..self.ranks.len() {
            if !self.lpm[r].refresh_due {
                continue;
            }
            let rank = r as u32;
            let idle = self.can_power_down(rank, now);
            let plan = refresh_sequence(self.ranks[r].power(), idle);
            if let Some(&cmd) = plan.first() {
                if self.consider(rank, cmd, now, wake) {
                    return Some(Candidate { rank, cmd, req: None });
                }
            }
        }
        None
    }

    fn wake_candidate(&self, now: SimTime, wake: &mut Option<SimTime>) -> Option<Candidate> {
        for r in 0..self.ranks.len() {
            let rank = r as u32;
            if self.lpm[r].refresh_due || !self.ranks[r].power().is_low_power() {
                continue;
            }
            if !self.queued_for_rank(rank) {
                continue;
            }
            if let Some(&cmd) = wake_for_request(self.ranks[r].power()).first() {
                if self.consider(rank, cmd, now, wake) {
                    return Some(Candidate { rank, cmd, req: None });
                }
            }
        }
        None
    }

    fn data_candidate(&self, now: SimTime, wake: &mut Option<SimTime>) -> Option<Candidate> {
        if self.queue.is_empty() {
            return None;
        }
        let banks = self.dev.geometry.banks_per_rank as usize;
        let mut hits = vec![0usize; self.ranks.len() * banks];
        for e in &self.queue {
            let d = &e.req.decoded;
            let open = self.ranks[d.rank as usize].banks[d.bank as usize].accessible_row();
            if open == Some(d.row) {
                hits[d.rank as usize * banks + d.bank as usize] += 1;
            }
        }
        let mut cmds: Vec<Option<Command>> = Vec::with_capacity(self.queue.len());
        let entries: Vec<(bool, bool)> = self
            .queue
            .iter()
            .map(|e| {
                let d = &e.req.decoded;
                let r = d.rank as usize;
                let rank = &self.ranks[r];
                if self.lpm[r].refresh_due || rank.power().is_low_power() {
                    cmds.push(None);
                    return (false, false);
                }
                let cmd = next_command(&e.req, rank, hits[r * banks + d.bank as usize]);
                cmds.push(cmd);
                let Some(cmd) = cmd else { return (false, false) };
                let Some(mut at) = rank.earliest_issue(&cmd, now) else {
                    return (false, false);
                };
                if cmd.is_column() {
                    at = at.max(self.data_bus_ok);
                }
                if at > now {
                    *wake = Some(wake.map_or(at, |w| w.min(at)));
                }
                (cmd.is_column(), at <= now)
            })
            .collect();
        let i = fr_fcfs_choose(entries)?;
        Some(Candidate {
            rank: self.queue[i].req.decoded.rank,
            cmd: cmds[i].expect("chosen entry has a command"),
            req: Some(i),
        })
    }

    fn policy_precharge_candidate(&self, now: SimTime, wake: &mut Option<SimTime>) -> Option<Candidate> {
        if self.cfg.page_policy != PagePolicy::ClosedAdaptive {
            return None;
        }
        for r in 0..self.ranks.len() {
            let rank = r as u32;
            if self.lpm[r].refresh_due || self.ranks[r].power().is_low_power() {
                continue;
            }
            for (b, bs) in self.ranks[r].banks.iter().enumerate() {
                if bs.accessible_row().is_none() || self.queued_for_bank(rank, b as u32) {
                    continue;
                }
                let cmd = Command::Pre { bank: b as u8 };
                if self.consider(rank, cmd, now, wake) {
                    return Some(Candidate { rank, cmd, req: None });
                }
            }
        }
        None
    }

    fn powerdown_candidate(&self, now: SimTime, wake: &mut Option<SimTime>) -> Option<Candidate> {
        for r in 0..self.ranks.len() {
            let rank = r as u32;
            if self.lpm[r].intent == Intent::None
                || self.lpm[r].refresh_due
                || self.ranks[r].power().is_low_power()
                || !self.can_power_down(rank, now)
            {
                continue;
            }
            if self.consider(rank, Command::Pde, now, wake) {
                return Some(Candidate {
                    rank,
                    cmd: Command::Pde,
                    req: None,
                });
            }
        }
        None
    }

    fn execute(&mut self, q: &mut EventQueue<Event>, now: SimTime, c: Candidate) -> Result<(), ProtocolViolation> {
        let r = c.rank as usize;
        let t = self.dev.timing;
        let mut cmd = c.cmd;
        if cmd.is_column() {
            let i = c.req.expect("column command without request");
            let d = self.queue[i].req.decoded;
            let rows = self
                .queue
                .iter()
                .enumerate()
                .filter(|(j, e)| *j != i && e.req.decoded.rank == d.rank && e.req.decoded.bank == d.bank)
                .map(|(_, e)| e.req.decoded.row);
            if page_policy_decide(self.cfg.page_policy, d.row, rows) == PageDecision::Close {
                cmd = match cmd {
                    Command::Rd { bank, col } => Command::Rda { bank, col },
                    Command::Wr { bank, col } => Command::Wra { bank, col },
                    other => other,
                };
            }
        }
        self.ranks[r].settle(now);
        let open_before: Vec<usize> = self.ranks[r]
            .banks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.open_row.is_some())
            .map(|(i, _)| i)
            .collect();
        let refresh_deadline = self.ranks[r].refresh_deadline;
        let applied: Applied = match self.ranks[r].apply(cmd, now) {
            Ok(a) => a,
            Err(v) => return Err(v),
        };
        self.cmd_bus_ok = now + t.t_ck;
        self.drain_transitions(r);
        let rec = CommandRecord {
            issue_at: now,
            rank: c.rank,
            cmd,
            prior: applied.state_before.unwrap_or(PowerState::Idle),
            banks_closed: applied.banks_closed,
        };
        self.meters[r].command(&rec);
        if let Some(tr) = self.trace.as_mut() {
            tr.push(rec);
        }
        if self.recent.len() == RECENT_COMMANDS {
            self.recent.remove(0);
        }
        self.recent.push(rec);

        match cmd {
            Command::Act { .. } => {
                if let Some(i) = c.req {
                    self.queue[i].activated = true;
                }
            }
            Command::Rd { bank, .. } | Command::Rda { bank, .. } | Command::Wr { bank, .. } | Command::Wra { bank, .. } => {
                let i = c.req.expect("column command without request");
                self.account_occupancy(now);
                let entry = self.queue.remove(i);
                let was_full = match entry.req.op {
                    Op::Read => {
                        let full = self.reads_queued == self.cfg.read_queue_depth;
                        self.reads_queued -= 1;
                        full
                    }
                    Op::Write => {
                        let full = self.writes_queued == self.cfg.write_queue_depth;
                        self.writes_queued -= 1;
                        full
                    }
                };
                if entry.activated {
                    self.stats.row_misses += 1;
                } else {
                    self.stats.row_hits += 1;
                }
                self.stats.column_commands += 1;
                self.data_bus_ok = now + t.t_burst;
                if cmd.is_read() {
                    self.lpm[r].reads_in_flight += 1;
                    q.schedule(now + t.t_rl + t.t_burst, Event::ReadDataReturned {
                        rank: c.rank,
                        arrive_at: entry.req.arrive_at,
                    });
                } else {
                    self.lpm[r].writes_in_flight += 1;
                    q.schedule(now + t.t_wl + t.t_burst, Event::WriteDone { rank: c.rank });
                }
                if let Some(pre_at) = applied.auto_precharge_at {
                    let end = pre_at + t.t_rp;
                    self.lpm[r].precharge_end[bank as usize] = end;
                    q.schedule(end, Event::PrechargeComplete { rank: c.rank });
                }
                if was_full {
                    q.schedule(now, Event::QueueVacancy);
                }
                if !self.queued_for_rank(c.rank) {
                    q.schedule(now, Event::PowerdownCheck {
                        rank: c.rank,
                        trigger: Trigger::QueueEmpty,
                    });
                }
            }
            Command::Pre { .. } | Command::PreA => {
                let end = now + t.t_rp;
                for b in open_before {
                    if self.ranks[r].banks[b].open_row.is_none() {
                        self.lpm[r].precharge_end[b] = end;
                    }
                }
                q.schedule(end, Event::PrechargeComplete { rank: c.rank });
            }
            Command::RefA => {
                self.lpm[r].refresh_due = false;
                self.stats.refa[r] += 1;
                let late = now.saturating_sub(refresh_deadline);
                self.stats.max_refresh_lateness = self.stats.max_refresh_lateness.max(late);
                q.schedule(now + t.t_rfc, Event::RefreshComplete { rank: c.rank });
                q.schedule(self.ranks[r].refresh_deadline, Event::RefreshDue { rank: c.rank });
                q.schedule(now, Event::PowerdownCheck {
                    rank: c.rank,
                    trigger: Trigger::RefreshStart,
                });
            }
            Command::SrefEn => {
                self.lpm[r].refresh_due = false;
                self.lpm[r].intent = Intent::None;
                self.stats.sref_entries[r] += 1;
                let late = now.saturating_sub(refresh_deadline);
                self.stats.max_refresh_lateness = self.stats.max_refresh_lateness.max(late);
                let next = refresh_deadline + t.t_refi;
                self.ranks[r].refresh_deadline = next;
                q.schedule(next, Event::RefreshDue { rank: c.rank });
            }
            Command::SrefEx => {
                self.stats.sref_exits[r] += 1;
                q.schedule(self.ranks[r].refresh_deadline, Event::RefreshDue { rank: c.rank });
            }
            Command::Pde => {
                self.lpm[r].intent = Intent::None;
                self.stats.powerdown_entries[r] += 1;
            }
            Command::Pdx => {}
        }
        Ok(())
    }
}
