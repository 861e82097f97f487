//! Per-rank DRAM device model: power-state machine, command legality and
//! timing bookkeeping.

use std::fmt;

use crate::engine::SimTime;
use crate::error::ConfigError;

/// JEDEC timing parameters, all in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub t_ck: SimTime,
    pub t_ccd: SimTime,
    pub t_rp: SimTime,
    pub t_ras: SimTime,
    pub t_rcd: SimTime,
    pub t_rl: SimTime,
    pub t_wl: SimTime,
    pub t_burst: SimTime,
    pub t_rtp: SimTime,
    pub t_wr: SimTime,
    pub t_rrd: SimTime,
    pub t_rfc: SimTime,
    pub t_refi: SimTime,
    pub t_xp: SimTime,
    pub t_xs: SimTime,
    pub t_cke: SimTime,
}

impl Timing {
    /// Earliest power-down entry after an activate whose row is then closed:
    /// `tRAS + tRP + tCK`.
    pub fn t_pde(&self) -> SimTime {
        compute_t_pde(self)
    }
}

pub fn compute_t_pde(t: &Timing) -> SimTime {
    t.t_ras + t.t_rp + t.t_ck
}

/// Supply currents in milliamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Currents {
    pub idd0: f64,
    pub ipp0: f64,
    pub idd2n: f64,
    pub idd3n: f64,
    pub ipp3n: f64,
    pub idd2p: f64,
    pub idd3p: f64,
    pub idd5: f64,
    pub idd6: f64,
    pub idd4r: f64,
    pub idd4w: f64,
    pub ipp2n: f64,
    pub ipp3p: f64,
    pub ipp5: f64,
    pub ipp6: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voltages {
    pub vdd: f64,
    pub vpp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: u32,
    pub ranks: u32,
    pub banks_per_rank: u32,
    pub rows_per_bank: u32,
    pub row_buffer_bytes: u32,
    pub burst_bytes: u32,
}

impl Geometry {
    pub fn columns_per_row(&self) -> u32 {
        self.row_buffer_bytes / self.burst_bytes
    }

    /// Addressable bytes across the channel.
    pub fn capacity_bytes(&self) -> u64 {
        self.channels as u64
            * self.ranks as u64
            * self.banks_per_rank as u64
            * self.rows_per_bank as u64
            * self.row_buffer_bytes as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub timing: Timing,
    pub currents: Currents,
    pub voltages: Voltages,
    pub geometry: Geometry,
}

pub const DDR4_2400_PRESET: &str = "ddr4-2400-8gb-x4";

impl DeviceConfig {
    /// Micron DDR4-2400 8 Gbit x4, one x64 rank built from 16 devices.
    pub fn ddr4_2400_8gb_x4() -> Self {
        let t_ck = SimTime::ps(833);
        DeviceConfig {
            timing: Timing {
                t_ck,
                t_ccd: SimTime::ps(3_332),
                t_rp: SimTime::ps(14_160),
                t_ras: SimTime::ps(32_000),
                t_rcd: SimTime::ps(14_160),
                t_rl: SimTime::ps(14_160),
                t_wl: SimTime::ps(12_000),
                t_burst: t_ck * 4,
                t_rtp: SimTime::ps(7_500),
                t_wr: SimTime::ps(15_000),
                t_rrd: SimTime::ps(4_900),
                t_rfc: SimTime::ns(350),
                t_refi: SimTime::ns(7_800),
                t_xp: t_ck * 6,
                t_xs: t_ck * 408,
                t_cke: t_ck * 5,
            },
            currents: Currents {
                idd0: 43.0,
                ipp0: 3.0,
                idd2n: 34.0,
                idd3n: 38.0,
                ipp3n: 3.0,
                idd2p: 25.0,
                idd3p: 32.0,
                idd5: 250.0,
                idd6: 30.0,
                idd4r: 110.0,
                idd4w: 103.0,
                ipp2n: 0.0,
                ipp3p: 0.0,
                ipp5: 0.0,
                ipp6: 0.0,
            },
            voltages: Voltages { vdd: 1.2, vpp: 2.5 },
            geometry: Geometry {
                channels: 1,
                ranks: 1,
                banks_per_rank: 16,
                rows_per_bank: 1 << 17,
                row_buffer_bytes: 2048,
                burst_bytes: 64,
            },
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            DDR4_2400_PRESET => Some(Self::ddr4_2400_8gb_x4()),
            _ => None,
        }
    }

    pub fn t_pde(&self) -> SimTime {
        self.timing.t_pde()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.timing;
        let positive = [
            ("tCK", t.t_ck),
            ("tCCD", t.t_ccd),
            ("tRP", t.t_rp),
            ("tRAS", t.t_ras),
            ("tRCD", t.t_rcd),
            ("tRL", t.t_rl),
            ("tWL", t.t_wl),
            ("tBURST", t.t_burst),
            ("tRTP", t.t_rtp),
            ("tWR", t.t_wr),
            ("tRRD", t.t_rrd),
            ("tRFC", t.t_rfc),
            ("tREFI", t.t_refi),
            ("tXP", t.t_xp),
            ("tXS", t.t_xs),
        ];
        for (name, v) in positive {
            if v == SimTime::ZERO {
                return Err(ConfigError::invalid(name, "must be > 0"));
            }
        }
        if t.t_ras < t.t_rcd {
            return Err(ConfigError::invalid("tRAS", "must be >= tRCD"));
        }
        if t.t_rfc >= t.t_refi {
            return Err(ConfigError::invalid("tRFC", "must be < tREFI"));
        }
        let c = &self.currents;
        for (name, v) in [
            ("IDD0", c.idd0),
            ("IPP0", c.ipp0),
            ("IDD2N", c.idd2n),
            ("IDD3N", c.idd3n),
            ("IPP3N", c.ipp3n),
            ("IDD2P", c.idd2p),
            ("IDD3P", c.idd3p),
            ("IDD5", c.idd5),
            ("IDD6", c.idd6),
            ("IDD4R", c.idd4r),
            ("IDD4W", c.idd4w),
            ("IPP2N", c.ipp2n),
            ("IPP3P", c.ipp3p),
            ("IPP5", c.ipp5),
            ("IPP6", c.ipp6),
            ("VDD", self.voltages.vdd),
            ("VPP", self.voltages.vpp),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(name, "must be finite and >= 0"));
            }
        }
        let g = &self.geometry;
        if g.channels != 1 {
            return Err(ConfigError::invalid("channels", "only 1 channel is modeled"));
        }
        if !(1..=2).contains(&g.ranks) {
            return Err(ConfigError::invalid("ranks", "must be 1 or 2"));
        }
        if !g.banks_per_rank.is_power_of_two() || g.banks_per_rank > 256 {
            return Err(ConfigError::invalid("banks_per_rank", "must be a power of two <= 256"));
        }
        if !g.rows_per_bank.is_power_of_two() {
            return Err(ConfigError::invalid("rows_per_bank", "must be a power of two"));
        }
        if !g.burst_bytes.is_power_of_two() {
            return Err(ConfigError::invalid("burst_bytes", "must be a power of two"));
        }
        if !g.row_buffer_bytes.is_power_of_two() || g.row_buffer_bytes % g.burst_bytes != 0 {
            return Err(ConfigError::invalid(
                "row_buffer_bytes",
                "must be a power of two and a multiple of burst_bytes",
            ));
        }
        Ok(())
    }
}

/// Rank power state. `Ref` is the refresh-in-progress accounting state that
/// lasts tRFC after REFA; legality-wise it behaves like IDLE with a blackout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PowerState {
    Act,
    Idle,
    Ref,
    Pdna,
    Pdnp,
    Sref,
}

impl PowerState {
    pub const ALL: [PowerState; 6] = [
        PowerState::Act,
        PowerState::Idle,
        PowerState::Ref,
        PowerState::Pdna,
        PowerState::Pdnp,
        PowerState::Sref,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn cke(self) -> bool {
        !self.is_low_power()
    }

    pub fn is_low_power(self) -> bool {
        matches!(self, PowerState::Pdna | PowerState::Pdnp | PowerState::Sref)
    }

    pub fn name(self) -> &'static str {
        match self {
            PowerState::Act => "ACT",
            PowerState::Idle => "IDLE",
            PowerState::Ref => "REF",
            PowerState::Pdna => "PDNA",
            PowerState::Pdnp => "PDNP",
            PowerState::Sref => "SREF",
        }
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Act { bank: u8, row: u32 },
    Pre { bank: u8 },
    PreA,
    Rd { bank: u8, col: u32 },
    Wr { bank: u8, col: u32 },
    Rda { bank: u8, col: u32 },
    Wra { bank: u8, col: u32 },
    RefA,
    Pde,
    Pdx,
    SrefEn,
    SrefEx,
}

impl Command {
    pub fn bank(&self) -> Option<u8> {
        match *self {
            Command::Act { bank, .. }
            | Command::Pre { bank }
            | Command::Rd { bank, .. }
            | Command::Wr { bank, .. }
            | Command::Rda { bank, .. }
            | Command::Wra { bank, .. } => Some(bank),
            _ => None,
        }
    }

    pub fn is_column(&self) -> bool {
        matches!(
            self,
            Command::Rd { .. } | Command::Wr { .. } | Command::Rda { .. } | Command::Wra { .. }
        )
    }

    pub fn is_read(&self) -> bool {
        matches!(self, Command::Rd { .. } | Command::Rda { .. })
    }

    pub fn auto_precharge(&self) -> bool {
        matches!(self, Command::Rda { .. } | Command::Wra { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Act { .. } => "ACT",
            Command::Pre { .. } => "PRE",
            Command::PreA => "PREA",
            Command::Rd { .. } => "RD",
            Command::Wr { .. } => "WR",
            Command::Rda { .. } => "RDA",
            Command::Wra { .. } => "WRA",
            Command::RefA => "REFA",
            Command::Pde => "PDE",
            Command::Pdx => "PDX",
            Command::SrefEn => "SREFEN",
            Command::SrefEx => "SREFEX",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Command::Act { bank, row } => write!(f, "ACT(bank={bank},row={row})"),
            Command::Pre { bank } => write!(f, "PRE(bank={bank})"),
            Command::Rd { bank, col }
            | Command::Wr { bank, col }
            | Command::Rda { bank, col }
            | Command::Wra { bank, col } => write!(f, "{}(bank={bank},col={col})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("protocol violation at {at}: {cmd} on rank {rank} in state {state}: {reason}")]
pub struct ProtocolViolation {
    pub rank: u32,
    pub cmd: Command,
    pub at: SimTime,
    pub state: PowerState,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankState {
    pub open_row: Option<u32>,
    /// Internal auto-precharge time when a RDA/WRA is closing the row.
    pub closes_at: Option<SimTime>,
    pub last_act_at: SimTime,
    pub activate_ok_at: SimTime,
    pub precharge_ok_at: SimTime,
    pub column_ok_at: SimTime,
}

impl BankState {
    fn new() -> Self {
        BankState {
            open_row: None,
            closes_at: None,
            last_act_at: SimTime::ZERO,
            activate_ok_at: SimTime::ZERO,
            precharge_ok_at: SimTime::ZERO,
            column_ok_at: SimTime::ZERO,
        }
    }

    /// Row open at `now`, counting a pending auto-precharge as done once due.
    pub fn row_at(&self, now: SimTime) -> Option<u32> {
        match self.closes_at {
            Some(c) if c <= now => None,
            _ => self.open_row,
        }
    }

    /// Open and accepting column commands (no auto-precharge in flight).
    pub fn accessible_row(&self) -> Option<u32> {
        if self.closes_at.is_some() {
            None
        } else {
            self.open_row
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Awake,
    Pdna,
    Pdnp,
    Sref,
}

/// What `apply` did, for the controller's event scheduling and energy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Applied {
    /// Banks closed by an explicit PRE/PREA.
    pub banks_closed: u32,
    /// Internal precharge time scheduled by RDA/WRA.
    pub auto_precharge_at: Option<SimTime>,
    pub state_before: Option<PowerState>,
}

#[derive(Debug, Clone)]
pub struct RankState {
    pub id: u32,
    timing: Timing,
    mode: Mode,
    in_ref: bool,
    pub banks: Vec<BankState>,
    pub ref_until: SimTime,
    pub refresh_deadline: SimTime,
    pub pd_entered_at: SimTime,
    pub wake_ok_at: SimTime,
    /// Rank-wide blackout after PDX (tXP) and SREFEX (tXS).
    pub command_ok_at: SimTime,
    pub activate_ok_at: SimTime,
    pub column_ok_at: SimTime,
    pub powerdown_ok_at: SimTime,
    power: PowerState,
    last_change: SimTime,
    transitions: Vec<(SimTime, PowerState)>,
}

impl RankState {
    pub fn new(id: u32, cfg: &DeviceConfig, refresh_deadline: SimTime) -> Self {
        RankState {
            id,
            timing: cfg.timing,
            mode: Mode::Awake,
            in_ref: false,
            banks: vec![BankState::new(); cfg.geometry.banks_per_rank as usize],
            ref_until: SimTime::ZERO,
            refresh_deadline,
            pd_entered_at: SimTime::ZERO,
            wake_ok_at: SimTime::ZERO,
            command_ok_at: SimTime::ZERO,
            activate_ok_at: SimTime::ZERO,
            column_ok_at: SimTime::ZERO,
            powerdown_ok_at: SimTime::ZERO,
            power: PowerState::Idle,
            last_change: SimTime::ZERO,
            transitions: vec![(SimTime::ZERO, PowerState::Idle)],
        }
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    /// Power state as of the last `settle`/`apply`.
    pub fn power(&self) -> PowerState {
        self.power
    }

    pub fn cke(&self) -> bool {
        self.power.cke()
    }

    /// Power state at `now` without mutating, accounting for auto-precharges
    /// and refresh completions that have come due.
    pub fn power_at(&self, now: SimTime) -> PowerState {
        match self.mode {
            Mode::Pdna => PowerState::Pdna,
            Mode::Pdnp => PowerState::Pdnp,
            Mode::Sref => PowerState::Sref,
            Mode::Awake => {
                if self.in_ref && self.ref_until > now {
                    PowerState::Ref
                } else if self.banks.iter().any(|b| b.row_at(now).is_some()) {
                    PowerState::Act
                } else {
                    PowerState::Idle
                }
            }
        }
    }

    pub fn any_bank_open(&self, now: SimTime) -> bool {
        self.banks.iter().any(|b| b.row_at(now).is_some())
    }

    pub fn open_banks(&self, now: SimTime) -> usize {
        self.banks.iter().filter(|b| b.row_at(now).is_some()).count()
    }

    /// Time of the most recent recorded state change.
    pub fn last_change(&self) -> SimTime {
        self.last_change
    }

    /// Take the recorded `(enter_at, state)` transitions accumulated since the
    /// last call. The current state stays the open-ended tail.
    pub fn drain_transitions(&mut self) -> Vec<(SimTime, PowerState)> {
        std::mem::take(&mut self.transitions)
    }

    fn record(&mut self, at: SimTime) {
        let s = self.power_at(at);
        if s != self.power {
            debug_assert!(at >= self.last_change);
            self.power = s;
            self.last_change = at;
            self.transitions.push((at, s));
        }
        self.check_invariants(at);
    }

    fn check_invariants(&self, at: SimTime) {
        let open = self.banks.iter().filter(|b| b.row_at(at).is_some()).count();
        match self.power {
            PowerState::Pdna => debug_assert!(open > 0, "PDNA with all banks closed"),
            PowerState::Pdnp | PowerState::Sref => {
                debug_assert!(open == 0, "{} with an open bank", self.power)
            }
            _ => {}
        }
        debug_assert_eq!(self.cke(), self.mode == Mode::Awake);
    }

    /// Complete internal auto-precharges and refreshes due at or before `now`,
    /// recording each resulting state change at its own timestamp.
    pub fn settle(&mut self, now: SimTime) {
        loop {
            let mut next: Option<SimTime> = None;
            for b in &self.banks {
                if let Some(c) = b.closes_at {
                    if c <= now && next.is_none_or(|n| c < n) {
                        next = Some(c);
                    }
                }
            }
            if self.in_ref && self.ref_until <= now && next.is_none_or(|n| self.ref_until < n) {
                next = Some(self.ref_until);
            }
            let Some(at) = next else { break };
            for b in &mut self.banks {
                if b.closes_at == Some(at) {
                    b.open_row = None;
                    b.closes_at = None;
                }
            }
            if self.in_ref && self.ref_until == at {
                self.in_ref = false;
            }
            self.record(at);
        }
    }

    /// Smallest time at which `cmd` becomes legal, given the rank as it stands
    /// at `now`. `None` if the state machine forbids the command outright.
    pub fn earliest_issue(&self, cmd: &Command, now: SimTime) -> Option<SimTime> {
        match self.mode {
            Mode::Pdna => {
                return matches!(cmd, Command::Pdx).then_some(self.wake_ok_at);
            }
            // Self-refresh may be entered straight from precharge power-down.
            Mode::Pdnp => {
                return matches!(cmd, Command::Pdx | Command::SrefEn).then_some(self.wake_ok_at);
            }
            Mode::Sref => {
                return matches!(cmd, Command::SrefEx).then_some(self.wake_ok_at);
            }
            Mode::Awake => {}
        }
        let base = self.command_ok_at.max(self.ref_until);
        let bank = |b: u8| self.banks.get(b as usize);
        match *cmd {
            Command::Act { bank: b, .. } => {
                let bs = bank(b)?;
                if bs.row_at(now).is_some() && bs.closes_at.is_none() {
                    return None;
                }
                Some(base.max(bs.activate_ok_at).max(self.activate_ok_at))
            }
            Command::Pre { bank: b } => {
                let bs = bank(b)?;
                bs.accessible_row()?;
                Some(base.max(bs.precharge_ok_at))
            }
            Command::PreA => {
                let mut at = base;
                for bs in &self.banks {
                    if bs.row_at(now).is_some() {
                        at = at.max(bs.precharge_ok_at);
                    }
                }
                Some(at)
            }
            Command::Rd { bank: b, .. }
            | Command::Wr { bank: b, .. }
            | Command::Rda { bank: b, .. }
            | Command::Wra { bank: b, .. } => {
                let bs = bank(b)?;
                bs.accessible_row()?;
                Some(base.max(bs.column_ok_at).max(self.column_ok_at))
            }
            Command::RefA | Command::SrefEn => {
                if self.banks.iter().any(|b| b.accessible_row().is_some()) {
                    return None;
                }
                let mut at = base;
                for bs in &self.banks {
                    at = at.max(bs.activate_ok_at);
                }
                Some(at)
            }
            Command::Pde => {
                let mut at = base.max(self.powerdown_ok_at);
                for bs in &self.banks {
                    if let Some(c) = bs.closes_at {
                        at = at.max(c);
                    }
                }
                Some(at)
            }
            Command::Pdx | Command::SrefEx => None,
        }
    }

    pub fn legal(&self, cmd: &Command, now: SimTime) -> bool {
        self.earliest_issue(cmd, now).is_some_and(|at| at <= now)
    }

    /// Apply a command at `now`, updating state and timing windows.
    pub fn apply(&mut self, cmd: Command, now: SimTime) -> Result<Applied, ProtocolViolation> {
        self.settle(now);
        if !self.legal(&cmd, now) {
            let reason = match self.earliest_issue(&cmd, now) {
                None => "not permitted in this state".to_string(),
                Some(at) => format!("timing constraint not met before {at}"),
            };
            return Err(ProtocolViolation {
                rank: self.id,
                cmd,
                at: now,
                state: self.power,
                reason,
            });
        }
        let t = self.timing;
        let mut out = Applied {
            state_before: Some(self.power),
            ..Applied::default()
        };
        match cmd {
            Command::Act { bank, row } => {
                let b = &mut self.banks[bank as usize];
                b.open_row = Some(row);
                b.closes_at = None;
                b.last_act_at = now;
                b.column_ok_at = now + t.t_rcd;
                b.precharge_ok_at = now + t.t_ras;
                self.activate_ok_at = now + t.t_rrd;
            }
            Command::Pre { bank } => {
                let b = &mut self.banks[bank as usize];
                b.open_row = None;
                b.activate_ok_at = b.activate_ok_at.max(now + t.t_rp);
                out.banks_closed = 1;
            }
            Command::PreA => {
                for b in &mut self.banks {
                    if b.open_row.is_some() {
                        b.open_row = None;
                        b.activate_ok_at = b.activate_ok_at.max(now + t.t_rp);
                        out.banks_closed += 1;
                    }
                }
            }
            Command::Rd { bank, .. } | Command::Rda { bank, .. } => {
                self.column_ok_at = now + t.t_ccd;
                self.powerdown_ok_at = self.powerdown_ok_at.max(now + t.t_rl + t.t_burst + t.t_ck);
                let b = &mut self.banks[bank as usize];
                b.precharge_ok_at = b.precharge_ok_at.max(now + t.t_rtp);
                if cmd.auto_precharge() {
                    let pre_at = (now + t.t_rtp).max(b.last_act_at + t.t_ras);
                    b.closes_at = Some(pre_at);
                    b.precharge_ok_at = pre_at;
                    b.activate_ok_at = b.activate_ok_at.max(pre_at + t.t_rp);
                    out.auto_precharge_at = Some(pre_at);
                }
            }
            Command::Wr { bank, .. } | Command::Wra { bank, .. } => {
                let recovered = now + t.t_wl + t.t_burst + t.t_wr;
                self.column_ok_at = now + t.t_ccd;
                self.powerdown_ok_at = self.powerdown_ok_at.max(recovered);
                let b = &mut self.banks[bank as usize];
                b.precharge_ok_at = b.precharge_ok_at.max(recovered);
                if cmd.auto_precharge() {
                    let pre_at = recovered.max(b.last_act_at + t.t_ras);
                    b.closes_at = Some(pre_at);
                    b.precharge_ok_at = pre_at;
                    b.activate_ok_at = b.activate_ok_at.max(pre_at + t.t_rp);
                    out.auto_precharge_at = Some(pre_at);
                }
            }
            Command::RefA => {
                self.in_ref = true;
                self.ref_until = now + t.t_rfc;
                self.refresh_deadline += t.t_refi;
            }
            Command::Pde => {
                self.mode = if self.any_bank_open(now) {
                    Mode::Pdna
                } else {
                    Mode::Pdnp
                };
                self.pd_entered_at = now;
                self.wake_ok_at = now + t.t_cke;
            }
            Command::Pdx => {
                self.mode = Mode::Awake;
                self.command_ok_at = now + t.t_xp;
            }
            Command::SrefEn => {
                if self.mode == Mode::Awake {
                    self.pd_entered_at = now;
                    self.wake_ok_at = now + t.t_cke;
                }
                self.mode = Mode::Sref;
            }
            Command::SrefEx => {
                self.mode = Mode::Awake;
                self.command_ok_at = now + t.t_xs;
                self.refresh_deadline = now + t.t_refi;
            }
        }
        self.record(now);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DeviceConfig {
        DeviceConfig::ddr4_2400_8gb_x4()
    }

    fn rank() -> RankState {
        RankState::new(0, &cfg(), cfg().timing.t_refi)
    }

    #[test]
    fn preset_values_load_exactly() {
        let c = cfg();
        assert_eq!(c.timing.t_ck, SimTime(833));
        assert_eq!(c.timing.t_ccd, SimTime(3332));
        assert_eq!(c.timing.t_rp, SimTime(14160));
        assert_eq!(c.timing.t_ras, SimTime(32000));
        assert_eq!(c.timing.t_rfc, SimTime(350_000));
        assert_eq!(c.timing.t_refi, SimTime(7_800_000));
        assert_eq!(c.timing.t_xs, SimTime(339_864));
        assert_eq!(
            [c.currents.idd0, c.currents.ipp0, c.currents.idd2n, c.currents.idd3n],
            [43.0, 3.0, 34.0, 38.0]
        );
        assert_eq!(
            [c.currents.ipp3n, c.currents.idd2p, c.currents.idd3p, c.currents.idd5],
            [3.0, 25.0, 32.0, 250.0]
        );
        assert_eq!(
            [c.currents.idd6, c.currents.idd4r, c.currents.idd4w],
            [30.0, 110.0, 103.0]
        );
        assert_eq!(c.voltages, Voltages { vdd: 1.2, vpp: 2.5 });
        c.validate().unwrap();
        assert_eq!(DeviceConfig::preset(DDR4_2400_PRESET), Some(c));
        assert_eq!(DeviceConfig::preset("ddr3"), None);
    }

    #[test]
    fn t_pde_table_values() {
        assert_eq!(cfg().t_pde(), SimTime(46_993));
    }

    #[test]
    fn t_pde_zero_and_linear() {
        let mut t = cfg().timing;
        t.t_ras = SimTime::ZERO;
        t.t_rp = SimTime::ZERO;
        t.t_ck = SimTime::ZERO;
        assert_eq!(compute_t_pde(&t), SimTime::ZERO);
        let base = cfg().timing;
        let mut doubled = base;
        doubled.t_ras = base.t_ras * 2;
        doubled.t_rp = base.t_rp * 2;
        doubled.t_ck = base.t_ck * 2;
        assert_eq!(compute_t_pde(&doubled), compute_t_pde(&base) * 2);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut c = cfg();
        c.timing.t_rfc = c.timing.t_refi;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.timing.t_rcd = SimTime(40_000);
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.geometry.row_buffer_bytes = 3000;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.geometry.ranks = 3;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.timing.t_cke = SimTime::ZERO;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn read_needs_activated_row() {
        let mut r = rank();
        let rd = Command::Rd { bank: 0, col: 0 };
        assert!(!r.legal(&rd, SimTime(0)));
        r.apply(Command::Act { bank: 0, row: 5 }, SimTime(0)).unwrap();
        assert!(!r.legal(&rd, SimTime(14_159)));
        assert!(r.legal(&rd, SimTime(14_160)));
    }

    #[test]
    fn activate_on_open_bank_is_illegal() {
        let mut r = rank();
        r.apply(Command::Act { bank: 0, row: 5 }, SimTime(0)).unwrap();
        assert!(!r.legal(&Command::Act { bank: 0, row: 6 }, SimTime::us(1)));
        assert_eq!(r.earliest_issue(&Command::Act { bank: 0, row: 6 }, SimTime::us(1)), None);
    }

    #[test]
    fn sref_admits_only_exit() {
        let mut r = rank();
        r.apply(Command::SrefEn, SimTime(0)).unwrap();
        assert_eq!(r.power(), PowerState::Sref);
        assert!(!r.cke());
        let later = SimTime::us(1);
        assert!(!r.legal(&Command::Act { bank: 0, row: 0 }, later));
        assert!(!r.legal(&Command::RefA, later));
        assert!(!r.legal(&Command::Pdx, later));
        assert!(r.legal(&Command::SrefEx, later));
    }

    #[test]
    fn idle_pde_is_pdnp_and_active_pde_is_pdna() {
        let mut r = rank();
        r.apply(Command::Pde, SimTime(0)).unwrap();
        assert_eq!(r.power(), PowerState::Pdnp);

        let mut r = rank();
        r.apply(Command::Act { bank: 3, row: 1 }, SimTime(0)).unwrap();
        r.apply(Command::Pde, SimTime(833)).unwrap();
        assert_eq!(r.power(), PowerState::Pdna);
        assert!(!r.cke());
    }

    #[test]
    fn sref_exit_blocks_for_408_cycles() {
        let mut r = rank();
        r.apply(Command::SrefEn, SimTime(0)).unwrap();
        let exit = SimTime::us(10);
        r.apply(Command::SrefEx, exit).unwrap();
        assert_eq!(r.power(), PowerState::Idle);
        let act = Command::Act { bank: 0, row: 0 };
        assert_eq!(r.earliest_issue(&act, exit), Some(exit + SimTime(339_864)));
        assert_eq!(r.refresh_deadline, exit + SimTime::ns(7_800));
    }

    #[test]
    fn act_to_pre_honors_tras_and_pre_to_act_honors_trp() {
        let mut r = rank();
        let t = SimTime(1_000);
        r.apply(Command::Act { bank: 2, row: 9 }, t).unwrap();
        assert_eq!(r.earliest_issue(&Command::Pre { bank: 2 }, t), Some(t + SimTime(32_000)));
        let p = t + SimTime(32_000);
        r.apply(Command::Pre { bank: 2 }, p).unwrap();
        assert_eq!(
            r.earliest_issue(&Command::Act { bank: 2, row: 1 }, p),
            Some(p + SimTime(14_160))
        );
    }

    #[test]
    fn back_to_back_reads_spaced_by_tccd() {
        let mut r = rank();
        r.apply(Command::Act { bank: 0, row: 0 }, SimTime(0)).unwrap();
        r.apply(Command::Act { bank: 1, row: 0 }, SimTime(5_000)).unwrap();
        let t = SimTime(20_000);
        r.apply(Command::Rd { bank: 0, col: 0 }, t).unwrap();
        assert_eq!(
            r.earliest_issue(&Command::Rd { bank: 1, col: 0 }, t),
            Some(t + SimTime(3_332))
        );
    }

    #[test]
    fn activates_to_other_banks_spaced_by_trrd() {
        let mut r = rank();
        r.apply(Command::Act { bank: 0, row: 0 }, SimTime(0)).unwrap();
        assert_eq!(
            r.earliest_issue(&Command::Act { bank: 1, row: 0 }, SimTime(0)),
            Some(SimTime(4_900))
        );
    }

    #[test]
    fn refresh_blackout_and_deadline() {
        let mut r = rank();
        let d0 = r.refresh_deadline;
        r.apply(Command::RefA, SimTime(100)).unwrap();
        assert_eq!(r.power(), PowerState::Ref);
        assert_eq!(r.refresh_deadline, d0 + SimTime::ns(7_800));
        let act = Command::Act { bank: 0, row: 0 };
        assert_eq!(r.earliest_issue(&act, SimTime(100)), Some(SimTime(350_100)));
        r.settle(SimTime(350_100));
        assert_eq!(r.power(), PowerState::Idle);
    }

    #[test]
    fn refresh_requires_closed_banks() {
        let mut r = rank();
        r.apply(Command::Act { bank: 0, row: 0 }, SimTime(0)).unwrap();
        assert!(!r.legal(&Command::RefA, SimTime::us(1)));
        r.apply(Command::PreA, SimTime::us(1)).unwrap();
        assert!(!r.legal(&Command::RefA, SimTime::us(1)));
        assert!(r.legal(&Command::RefA, SimTime::us(1) + SimTime(14_160)));
    }

    #[test]
    fn auto_precharge_closes_row_later() {
        let mut r = rank();
        r.apply(Command::Act { bank: 0, row: 7 }, SimTime(0)).unwrap();
        let out = r.apply(Command::Rda { bank: 0, col: 1 }, SimTime(14_160)).unwrap();
        // max(14_160 + tRTP, 0 + tRAS)
        assert_eq!(out.auto_precharge_at, Some(SimTime(32_000)));
        assert!(!r.legal(&Command::Rd { bank: 0, col: 2 }, SimTime(15_000)));
        assert!(!r.legal(&Command::Pre { bank: 0 }, SimTime(15_000)));
        assert_eq!(r.power_at(SimTime(31_999)), PowerState::Act);
        assert_eq!(r.power_at(SimTime(32_000)), PowerState::Idle);
        assert_eq!(
            r.earliest_issue(&Command::Act { bank: 0, row: 1 }, SimTime(15_000)),
            Some(SimTime(46_160))
        );
        r.settle(SimTime(40_000));
        let tr = r.drain_transitions();
        assert_eq!(
            tr,
            vec![
                (SimTime(0), PowerState::Idle),
                (SimTime(0), PowerState::Act),
                (SimTime(32_000), PowerState::Idle)
            ]
        );
    }

    #[test]
    fn powerdown_exit_waits_tcke_then_txp() {
        let mut r = rank();
        r.apply(Command::Pde, SimTime(0)).unwrap();
        assert!(!r.legal(&Command::Pdx, SimTime(4 * 833)));
        assert!(r.legal(&Command::Pdx, SimTime(5 * 833)));
        r.apply(Command::Pdx, SimTime(10_000)).unwrap();
        assert_eq!(
            r.earliest_issue(&Command::Act { bank: 0, row: 0 }, SimTime(10_000)),
            Some(SimTime(10_000 + 6 * 833))
        );
    }

    #[test]
    fn illegal_apply_reports_violation() {
        let mut r = rank();
        let err = r.apply(Command::Rd { bank: 0, col: 0 }, SimTime(0)).unwrap_err();
        assert_eq!(err.state, PowerState::Idle);
        assert_eq!(err.cmd, Command::Rd { bank: 0, col: 0 });
        let mut r = rank();
        r.apply(Command::Act { bank: 0, row: 0 }, SimTime(0)).unwrap();
        let err = r.apply(Command::Pre { bank: 0 }, SimTime(10)).unwrap_err();
        assert!(err.reason.contains("timing"), "{err}");
    }
}
