//! Simulation driver: couples a traffic source to the controller on one event
//! queue and collects per-phase statistics.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::controller::{Checkpoint, Controller, ControllerConfig, ControllerStats, Event, Request};
use crate::device::{DeviceConfig, PowerState, ProtocolViolation};
use crate::engine::{EventQueue, SimTime};
use crate::error::Error;
use crate::power::{CommandRecord, EnergyBreakdown, Residency};
use crate::workload::{Generator, PhaseSpec, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// Synthetic phases run back to back.
    Phases(Vec<PhaseSpec>),
    /// Timestamped requests; back-pressure delays every later record.
    Trace(Vec<TraceRecord>),
    /// No traffic at all.
    Idle { duration: SimTime },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub record_trace: bool,
    pub record_history: bool,
    /// Open row 0 of bank 0 in every rank at t=0.
    pub start_active: bool,
    /// Keep `(injection time, address)` of every accepted request.
    pub record_injections: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    pub index: usize,
    pub label: String,
    pub start: SimTime,
    pub end: SimTime,
    pub stats: ControllerStats,
    pub residency: Vec<Residency>,
    pub energy: Vec<EnergyBreakdown>,
    pub generated: u64,
    pub injected: u64,
}

impl PhaseResult {
    pub fn duration(&self) -> SimTime {
        self.end - self.start
    }

    /// Refresh intervals covered for `rank`, in units of tREFI. Each REFA
    /// covers one interval. A self-refresh episode covers its own duration
    /// plus the tREFI window after exit, since the exit restarts the refresh
    /// deadline from the exit time.
    pub fn refresh_epochs(&self, rank: usize, t_refi: SimTime) -> f64 {
        let sref = self.residency[rank].get(PowerState::Sref);
        (self.stats.refa[rank] + self.stats.sref_exits[rank]) as f64 + sref.0 as f64 / t_refi.0 as f64
    }

    pub fn residency_total(&self) -> Residency {
        let mut r = Residency::default();
        for x in &self.residency {
            for i in 0..6 {
                r.0[i] += x.0[i];
            }
        }
        r
    }

    pub fn energy_total(&self) -> EnergyBreakdown {
        self.energy.iter().fold(EnergyBreakdown::default(), |a, &b| a + b)
    }

    pub fn row_hit_rate(&self) -> f64 {
        let n = self.stats.row_hits + self.stats.row_misses;
        if n == 0 {
            0.0
        } else {
            self.stats.row_hits as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub phases: Vec<PhaseResult>,
    pub end: SimTime,
    /// Time of the last data response (trace replay), else the end time.
    pub execution_time: SimTime,
    pub stats: ControllerStats,
    pub residency: Vec<Residency>,
    pub energy: Vec<EnergyBreakdown>,
    pub trace: Option<Vec<CommandRecord>>,
    pub history: Option<Vec<Vec<(SimTime, PowerState)>>>,
    /// Hash over the injected request stream (op, address, size), independent
    /// of when back-pressure let each request in.
    pub request_hash: u64,
    pub injected: u64,
    pub injections: Option<Vec<(SimTime, u64)>>,
}

impl RunResult {
    pub fn total_energy(&self) -> f64 {
        self.energy.iter().map(|e| e.total()).sum()
    }

    pub fn energy_total(&self) -> EnergyBreakdown {
        self.energy.iter().fold(EnergyBreakdown::default(), |a, &b| a + b)
    }
}

fn stats_delta(now: &ControllerStats, then: &ControllerStats) -> ControllerStats {
    let sub = |a: &[u64], b: &[u64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
    ControllerStats {
        reads_accepted: now.reads_accepted - then.reads_accepted,
        writes_accepted: now.writes_accepted - then.writes_accepted,
        rejected: now.rejected - then.rejected,
        row_hits: now.row_hits - then.row_hits,
        row_misses: now.row_misses - then.row_misses,
        column_commands: now.column_commands - then.column_commands,
        refa: sub(&now.refa, &then.refa),
        sref_entries: sub(&now.sref_entries, &then.sref_entries),
        sref_exits: sub(&now.sref_exits, &then.sref_exits),
        powerdown_entries: sub(&now.powerdown_entries, &then.powerdown_entries),
        responses: now.responses - then.responses,
        last_response_at: now.last_response_at,
        read_latency_ps: now.read_latency_ps - then.read_latency_ps,
        read_queue_area: now.read_queue_area - then.read_queue_area,
        write_queue_area: now.write_queue_area - then.write_queue_area,
        idle_one_event: now.idle_one_event - then.idle_one_event,
        idle_one_precharge: now.idle_one_precharge - then.idle_one_precharge,
        max_refresh_lateness: now.max_refresh_lateness,
    }
}

fn phase_result(index: usize, label: String, from: &Checkpoint, to: &Checkpoint, generated: u64, injected: u64) -> PhaseResult {
    PhaseResult {
        index,
        label,
        start: from.at,
        end: to.at,
        stats: stats_delta(&to.stats, &from.stats),
        residency: to.residency.iter().zip(&from.residency).map(|(&a, &b)| a - b).collect(),
        energy: to.energy.iter().zip(&from.energy).map(|(&a, &b)| a - b).collect(),
        generated,
        injected,
    }
}

struct Driver {
    q: EventQueue<Event>,
    ctrl: Controller,
    hasher: DefaultHasher,
    injected: u64,
    injections: Option<Vec<(SimTime, u64)>>,
}

impl Driver {
    fn protocol(&self, v: ProtocolViolation) -> Error {
        let history = self
            .ctrl
            .recent_commands()
            .iter()
            .map(|r| format!("  {:>14} ps  rank {}  {}  (from {})", r.issue_at.0, r.rank, r.cmd, r.prior))
            .collect::<Vec<_>>()
            .join("\n");
        Error::Protocol { violation: v, history }
    }

    fn handle(&mut self, at: SimTime, ev: Event) -> Result<(), Error> {
        self.ctrl.handle(&mut self.q, at, ev).map_err(|v| self.protocol(v))
    }

    fn inject(&mut self, req: Request) -> bool {
        let ok = self.ctrl.enqueue(&mut self.q, req);
        if ok {
            self.injected += 1;
            if let Some(v) = self.injections.as_mut() {
                v.push((self.q.now(), req.address));
            }
            (req.op == crate::controller::Op::Write, req.address, req.size).hash(&mut self.hasher);
        }
        ok
    }
}

/// Run one simulation to completion.
pub fn simulate(
    dev: &DeviceConfig,
    cfg: &ControllerConfig,
    workload: &Workload,
    opts: SimOptions,
) -> Result<RunResult, Error> {
    dev.validate()?;
    cfg.validate()?;
    let mut ctrl = Controller::new(*dev, *cfg);
    if opts.record_trace {
        ctrl = ctrl.with_trace();
    }
    if opts.record_history {
        ctrl = ctrl.with_history();
    }
    let mut d = Driver {
        q: EventQueue::new(),
        ctrl,
        hasher: DefaultHasher::new(),
        injected: 0,
        injections: opts.record_injections.then(Vec::new),
    };
    // Taken before the start-up activations: with several ranks they occupy
    // successive command-bus slots, so accounting may already be past t=0.
    let origin = d.ctrl.checkpoint(SimTime::ZERO);
    if opts.start_active {
        for r in 0..dev.geometry.ranks {
            d.ctrl.activate(&mut d.q, r, 0, 0).map_err(|v| d.protocol(v))?;
        }
    }
    d.ctrl.start(&mut d.q);

    let mut phases = Vec::new();
    let mut execution_time = None;
    match workload {
        Workload::Phases(specs) => {
            for spec in specs {
                spec.config.validate(&dev.geometry)?;
            }
            let mut prev = origin;
            let mut next_id = 0;
            for (i, spec) in specs.iter().enumerate() {
                let epoch = i as u64;
                let end = d.q.now() + spec.config.duration;
                let mut gen = Generator::new(spec.config, dev.geometry, next_id);
                let mut held: Option<Request> = None;
                let (mut generated, injected_before) = (0u64, d.injected);
                d.q.schedule(d.q.now(), Event::Arrival { epoch });
                while let Some((at, ev)) = d.q.pop_until(end) {
                    match ev {
                        Event::Arrival { epoch: e } if e == epoch => {
                            let req = gen.next_request(at);
                            generated += 1;
                            if d.inject(req) {
                                let gap = gen.next_gap();
                                d.q.schedule(at + gap, Event::Arrival { epoch });
                            } else {
                                held = Some(req);
                            }
                        }
                        Event::Arrival { .. } => {}
                        Event::QueueVacancy => {
                            if let Some(req) = held.take() {
                                if d.inject(req) {
                                    let gap = gen.next_gap();
                                    d.q.schedule(at + gap, Event::Arrival { epoch });
                                } else {
                                    held = Some(req);
                                }
                            }
                        }
                        other => d.handle(at, other)?,
                    }
                }
                d.q.advance_to(end);
                next_id = gen.next_id();
                let cp = d.ctrl.checkpoint(end);
                phases.push(phase_result(i, spec.label.clone(), &prev, &cp, generated, d.injected - injected_before));
                prev = cp;
            }
        }
        Workload::Trace(records) => {
            let start = origin;
            let mut idx = 0usize;
            let mut stall = SimTime::ZERO;
            let mut held = false;
            if let Some(r) = records.first() {
                d.q.schedule(r.at, Event::Arrival { epoch: 0 });
            }
            let try_next = |d: &mut Driver, at: SimTime, idx: &mut usize, stall: &mut SimTime| -> Result<bool, Error> {
                let rec = records[*idx];
                let req = Request::new(*idx as u64, at, rec.op, rec.address, rec.size, &dev.geometry)?;
                if !d.inject(req) {
                    return Ok(false);
                }
                *stall = at - rec.at;
                *idx += 1;
                if let Some(next) = records.get(*idx) {
                    d.q.schedule((next.at + *stall).max(at), Event::Arrival { epoch: 0 });
                }
                Ok(true)
            };
            while !(idx == records.len() && d.ctrl.drained()) {
                let Some((at, ev)) = d.q.pop_until(SimTime(u64::MAX)) else {
                    break;
                };
                match ev {
                    Event::Arrival { .. } => held = !try_next(&mut d, at, &mut idx, &mut stall)?,
                    Event::QueueVacancy if held => held = !try_next(&mut d, at, &mut idx, &mut stall)?,
                    Event::QueueVacancy => {}
                    other => d.handle(at, other)?,
                }
            }
            let end = d.q.now();
            let cp = d.ctrl.checkpoint(end);
            execution_time = Some(cp.stats.last_response_at);
            phases.push(phase_result(0, "trace".into(), &start, &cp, records.len() as u64, d.injected));
        }
        Workload::Idle { duration } => {
            let start = origin;
            while let Some((at, ev)) = d.q.pop_until(*duration) {
                d.handle(at, ev)?;
            }
            d.q.advance_to(*duration);
            let cp = d.ctrl.checkpoint(*duration);
            phases.push(phase_result(0, "idle".into(), &start, &cp, 0, 0));
        }
    }

    let end = d.q.now();
    let fin = d.ctrl.checkpoint(end);
    Ok(RunResult {
        phases,
        end,
        execution_time: execution_time.unwrap_or(end),
        stats: fin.stats,
        residency: fin.residency,
        energy: fin.energy,
        trace: d.ctrl.trace().map(|t| t.to_vec()),
        history: d.ctrl.history().map(|h| h.to_vec()),
        request_hash: d.hasher.finish(),
        injected: d.injected,
        injections: d.injections,
    })
}
