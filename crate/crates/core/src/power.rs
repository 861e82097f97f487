//! Residency accounting, current-based energy model, closed-form system power
//! estimates and DRAMPower command-trace export.
//!
//! Background power per state (W, currents in mA):
//!
//! | state | power                    |
//! |-------|--------------------------|
//! | ACT   | VDD·IDD3N + VPP·IPP3N    |
//! | IDLE  | VDD·IDD2N + VPP·IPP2N    |
//! | REF   | same as IDLE             |
//! | PDNA  | VDD·IDD3P + VPP·IPP3P    |
//! | PDNP  | VDD·IDD2P + VPP·IPP2N    |
//! | SREF  | VDD·IDD6  + VPP·IPP6     |
//!
//! Command increments are booked on top of background:
//! ACT `tRAS·(VDD·(IDD0−IDD3N)+VPP·(IPP0−IPP3N))`, PRE `tRP·VDD·(IDD0−IDD2N)`
//! per closed bank, RD/WR `tBURST·VDD·(IDD4x−IDD3N)`,
//! REFA `tRFC·(VDD·(IDD5−IDD2N)+VPP·(IPP5−IPP2N))`.

use std::fmt;
use std::io::{self, Write};
use std::ops::{Add, AddAssign, Sub};

use crate::device::{Command, DeviceConfig, PowerState};
use crate::engine::SimTime;

const MA: f64 = 1e-3;

/// One issued DRAM command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandRecord {
    pub issue_at: SimTime,
    pub rank: u32,
    pub cmd: Command,
    /// Rank power state just before the command.
    pub prior: PowerState,
    /// Banks closed by PRE/PREA.
    pub banks_closed: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub act: f64,
    pub pre: f64,
    pub rd: f64,
    pub wr: f64,
    pub refresh: f64,
    pub act_back: f64,
    pub pre_back: f64,
    pub pdna: f64,
    pub pdnp: f64,
    pub sref: f64,
}

impl EnergyBreakdown {
    pub const COMPONENTS: [&'static str; 10] = [
        "ACT_E",
        "PRE_E",
        "RD_E",
        "WR_E",
        "REF_E",
        "ACT_BACK_E",
        "PRE_BACK_E",
        "PDNA_E",
        "PDNP_E",
        "SREF_E",
    ];

    pub fn components(&self) -> [f64; 10] {
        [
            self.act,
            self.pre,
            self.rd,
            self.wr,
            self.refresh,
            self.act_back,
            self.pre_back,
            self.pdna,
            self.pdnp,
            self.sref,
        ]
    }

    pub fn total(&self) -> f64 {
        self.components().iter().sum()
    }

    pub fn background(&self) -> f64 {
        self.act_back + self.pre_back + self.pdna + self.pdnp + self.sref
    }

    pub fn low_power(&self) -> f64 {
        self.pdna + self.pdnp + self.sref
    }

    fn background_slot(&mut self, state: PowerState) -> &mut f64 {
        match state {
            PowerState::Act => &mut self.act_back,
            PowerState::Idle | PowerState::Ref => &mut self.pre_back,
            PowerState::Pdna => &mut self.pdna,
            PowerState::Pdnp => &mut self.pdnp,
            PowerState::Sref => &mut self.sref,
        }
    }
}

impl Add for EnergyBreakdown {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for EnergyBreakdown {
    fn add_assign(&mut self, r: Self) {
        self.act += r.act;
        self.pre += r.pre;
        self.rd += r.rd;
        self.wr += r.wr;
        self.refresh += r.refresh;
        self.act_back += r.act_back;
        self.pre_back += r.pre_back;
        self.pdna += r.pdna;
        self.pdnp += r.pdnp;
        self.sref += r.sref;
    }
}

impl Sub for EnergyBreakdown {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        EnergyBreakdown {
            act: self.act - r.act,
            pre: self.pre - r.pre,
            rd: self.rd - r.rd,
            wr: self.wr - r.wr,
            refresh: self.refresh - r.refresh,
            act_back: self.act_back - r.act_back,
            pre_back: self.pre_back - r.pre_back,
            pdna: self.pdna - r.pdna,
            pdnp: self.pdnp - r.pdnp,
            sref: self.sref - r.sref,
        }
    }
}

/// Time spent per power state, indexed by `PowerState::index`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Residency(pub [u64; 6]);

impl Residency {
    pub fn get(&self, s: PowerState) -> SimTime {
        SimTime(self.0[s.index()])
    }

    pub fn total(&self) -> SimTime {
        SimTime(self.0.iter().sum())
    }

    pub fn low_power(&self) -> SimTime {
        self.get(PowerState::Pdna) + self.get(PowerState::Pdnp) + self.get(PowerState::Sref)
    }
}

impl Sub for Residency {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        let mut out = [0; 6];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i] - r.0[i];
        }
        Residency(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidencyReport {
    pub per_rank: Vec<Residency>,
    pub total: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("state history out of order at index {index}: {at} after {prev}")]
pub struct AccountingError {
    pub index: usize,
    pub at: SimTime,
    pub prev: SimTime,
}

/// Sum a gap-free `(enter_at, state)` history over `[history[0].0, end]`.
pub fn accumulate_residency(
    history: &[(SimTime, PowerState)],
    end: SimTime,
) -> Result<Residency, AccountingError> {
    let mut out = Residency::default();
    for (i, w) in history.windows(2).enumerate() {
        let (a, s) = w[0];
        let (b, _) = w[1];
        if b < a {
            return Err(AccountingError {
                index: i + 1,
                at: b,
                prev: a,
            });
        }
        out.0[s.index()] += (b - a).0;
    }
    if let Some(&(a, s)) = history.last() {
        if end < a {
            return Err(AccountingError {
                index: history.len(),
                at: end,
                prev: a,
            });
        }
        out.0[s.index()] += (end - a).0;
    }
    Ok(out)
}

/// Background power in watts for a rank resting in `state`.
pub fn background_power(state: PowerState, cfg: &DeviceConfig) -> f64 {
    let c = &cfg.currents;
    let v = &cfg.voltages;
    let (idd, ipp) = match state {
        PowerState::Act => (c.idd3n, c.ipp3n),
        PowerState::Idle | PowerState::Ref => (c.idd2n, c.ipp2n),
        PowerState::Pdna => (c.idd3p, c.ipp3p),
        PowerState::Pdnp => (c.idd2p, c.ipp2n),
        PowerState::Sref => (c.idd6, c.ipp6),
    };
    (v.vdd * idd + v.vpp * ipp) * MA
}

pub fn background_energy(state: PowerState, dt: SimTime, cfg: &DeviceConfig) -> f64 {
    background_power(state, cfg) * dt.as_secs_f64()
}

/// Energy increment charged for one command on top of background power.
pub fn event_energy(cmd: &Command, banks_closed: u32, cfg: &DeviceConfig) -> EnergyBreakdown {
    let c = &cfg.currents;
    let v = &cfg.voltages;
    let t = &cfg.timing;
    let pre_one = t.t_rp.as_secs_f64() * v.vdd * (c.idd0 - c.idd2n) * MA;
    let rd = t.t_burst.as_secs_f64() * v.vdd * (c.idd4r - c.idd3n) * MA;
    let wr = t.t_burst.as_secs_f64() * v.vdd * (c.idd4w - c.idd3n) * MA;
    let mut e = EnergyBreakdown::default();
    match cmd {
        Command::Act { .. } => {
            e.act = t.t_ras.as_secs_f64()
                * (v.vdd * (c.idd0 - c.idd3n) + v.vpp * (c.ipp0 - c.ipp3n))
                * MA;
        }
        Command::Pre { .. } | Command::PreA => e.pre = pre_one * banks_closed as f64,
        Command::Rd { .. } => e.rd = rd,
        Command::Rda { .. } => {
            e.rd = rd;
            e.pre = pre_one;
        }
        Command::Wr { .. } => e.wr = wr,
        Command::Wra { .. } => {
            e.wr = wr;
            e.pre = pre_one;
        }
        Command::RefA => {
            e.refresh = t.t_rfc.as_secs_f64()
                * (v.vdd * (c.idd5 - c.idd2n) + v.vpp * (c.ipp5 - c.ipp2n))
                * MA;
        }
        Command::Pde | Command::Pdx | Command::SrefEn | Command::SrefEx => {}
    }
    e
}

/// Online residency and energy accumulator for one rank.
#[derive(Debug, Clone)]
pub struct RankMeter {
    state: PowerState,
    since: SimTime,
    residency: Residency,
    energy: EnergyBreakdown,
    background_w: [f64; 6],
    increments: CommandEnergies,
}

#[derive(Debug, Clone)]
struct CommandEnergies {
    act: EnergyBreakdown,
    pre: EnergyBreakdown,
    rd: EnergyBreakdown,
    rda: EnergyBreakdown,
    wr: EnergyBreakdown,
    wra: EnergyBreakdown,
    refresh: EnergyBreakdown,
}

impl RankMeter {
    pub fn new(cfg: &DeviceConfig, start: SimTime, state: PowerState) -> Self {
        let mut background_w = [0.0; 6];
        for s in PowerState::ALL {
            background_w[s.index()] = background_power(s, cfg);
        }
        let probe = |cmd: Command| event_energy(&cmd, 1, cfg);
        RankMeter {
            state,
            since: start,
            residency: Residency::default(),
            energy: EnergyBreakdown::default(),
            background_w,
            increments: CommandEnergies {
                act: probe(Command::Act { bank: 0, row: 0 }),
                pre: probe(Command::Pre { bank: 0 }),
                rd: probe(Command::Rd { bank: 0, col: 0 }),
                rda: probe(Command::Rda { bank: 0, col: 0 }),
                wr: probe(Command::Wr { bank: 0, col: 0 }),
                wra: probe(Command::Wra { bank: 0, col: 0 }),
                refresh: probe(Command::RefA),
            },
        }
    }

    pub fn state(&self) -> PowerState {
        self.state
    }

    /// Book background time up to `at` in the current state.
    pub fn flush(&mut self, at: SimTime) {
        assert!(
            at >= self.since,
            "residency accounting out of order: {} before {}",
            at,
            self.since
        );
        let dt = at - self.since;
        self.residency.0[self.state.index()] += dt.0;
        *self.energy.background_slot(self.state) +=
            self.background_w[self.state.index()] * dt.as_secs_f64();
        self.since = at;
    }

    pub fn transition(&mut self, at: SimTime, state: PowerState) {
        self.flush(at);
        self.state = state;
    }

    pub fn command(&mut self, rec: &CommandRecord) {
        let inc = &self.increments;
        let e = match rec.cmd {
            Command::Act { .. } => inc.act,
            Command::Pre { .. } | Command::PreA => {
                let mut e = inc.pre;
                e.pre *= rec.banks_closed as f64;
                e
            }
            Command::Rd { .. } => inc.rd,
            Command::Rda { .. } => inc.rda,
            Command::Wr { .. } => inc.wr,
            Command::Wra { .. } => inc.wra,
            Command::RefA => inc.refresh,
            _ => return,
        };
        self.energy += e;
    }

    pub fn residency(&self) -> Residency {
        self.residency
    }

    pub fn energy(&self) -> EnergyBreakdown {
        self.energy
    }
}

/// Parameters of one DIMM for the closed-form system power estimates.
/// Currents in mA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimmPower {
    pub vdd: f64,
    pub vpp: f64,
    pub idd5b: f64,
    pub ipp5b: f64,
    pub idd2n: f64,
    pub idd6: f64,
    pub ipp6: f64,
    pub t_rfc: SimTime,
    pub t_refi: SimTime,
}

impl DimmPower {
    /// 8 GB DDR4 DIMM (MTA8ATF1G64AZ class) refresh and standby figures.
    pub fn ddr4_8gb_dimm() -> Self {
        DimmPower {
            vdd: 1.2,
            vpp: 2.5,
            idd5b: 1800.0,
            ipp5b: 240.0,
            idd2n: 400.0,
            idd6: 240.0,
            ipp6: 40.0,
            t_rfc: SimTime::ns(350),
            t_refi: SimTime::ns(7_800),
        }
    }
}

/// Average standby power of `n_dimms` that are refreshed every tREFI and
/// otherwise sit in precharge standby.
pub fn standby_power_system(n_dimms: u32, d: &DimmPower) -> f64 {
    let t_rfc = d.t_rfc.as_secs_f64();
    let t_refi = d.t_refi.as_secs_f64();
    let refresh = t_rfc * (d.vdd * d.idd5b + d.vpp * d.ipp5b) * MA;
    let standby = d.vdd * (t_refi - t_rfc) * d.idd2n * MA;
    n_dimms as f64 * (refresh + standby) / t_refi
}

/// Self-refresh power of `n_dimms`.
pub fn selfrefresh_power_system(n_dimms: u32, d: &DimmPower) -> f64 {
    n_dimms as f64 * (d.vdd * d.idd6 + d.vpp * d.ipp6) * MA
}

/// DRAMPower command mnemonic.
pub fn drampower_mnemonic(rec: &CommandRecord) -> &'static str {
    match rec.cmd {
        Command::Act { .. } => "ACT",
        Command::Pre { .. } => "PRE",
        Command::PreA => "PREA",
        Command::Rd { .. } => "RD",
        Command::Rda { .. } => "RDA",
        Command::Wr { .. } => "WR",
        Command::Wra { .. } => "WRA",
        Command::RefA => "REF",
        Command::Pde => {
            if rec.prior == PowerState::Act {
                "PDN_F_ACT"
            } else {
                "PDN_F_PRE"
            }
        }
        Command::Pdx => {
            if rec.prior == PowerState::Pdna {
                "PUP_ACT"
            } else {
                "PUP_PRE"
            }
        }
        Command::SrefEn => "SREN",
        Command::SrefEx => "SREX",
    }
}

/// Write `<cycle>,<CMD>,<bank>` lines, cycle = floor(issue_at / tCK).
pub fn write_drampower_trace<W: Write>(
    mut out: W,
    records: &[CommandRecord],
    t_ck: SimTime,
) -> io::Result<()> {
    for rec in records {
        writeln!(
            out,
            "{},{},{}",
            rec.issue_at.0 / t_ck.0,
            drampower_mnemonic(rec),
            rec.cmd.bank().unwrap_or(0)
        )?;
    }
    out.flush()
}

pub fn export_drampower_trace(
    records: &[CommandRecord],
    t_ck: SimTime,
    path: &std::path::Path,
) -> io::Result<()> {
    let f = std::fs::File::create(path)?;
    write_drampower_trace(io::BufWriter::new(f), records, t_ck)
}

impl fmt::Display for EnergyBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in Self::COMPONENTS.iter().zip(self.components()) {
            write!(f, "{name}={v:.6e} ")?;
        }
        write!(f, "total={:.6e}", self.total())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DeviceConfig {
        DeviceConfig::ddr4_2400_8gb_x4()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-30)
    }

    #[test]
    fn single_idle_interval() {
        let r = accumulate_residency(&[(SimTime::ZERO, PowerState::Idle)], SimTime::us(250)).unwrap();
        assert_eq!(r.get(PowerState::Idle), SimTime::us(250));
        assert_eq!(r.total(), SimTime::us(250));
        assert_eq!(r.low_power(), SimTime::ZERO);
    }

    #[test]
    fn staggered_history_partitions_total() {
        let h = [
            (SimTime(0), PowerState::Act),
            (SimTime(833), PowerState::Pdna),
            (SimTime(7_800_000), PowerState::Act),
            (SimTime(7_805_000), PowerState::Idle),
            (SimTime(7_820_000), PowerState::Ref),
            (SimTime(8_170_000), PowerState::Idle),
            (SimTime(8_170_833), PowerState::Pdnp),
            (SimTime(15_600_000), PowerState::Sref),
        ];
        let end = SimTime::ms(10);
        let r = accumulate_residency(&h, end).unwrap();
        assert_eq!(r.total(), end);
        assert_eq!(r.get(PowerState::Sref), end - SimTime(15_600_000));
        assert_eq!(r.get(PowerState::Ref), SimTime(350_000));
    }

    #[test]
    fn out_of_order_history_is_rejected() {
        let h = [(SimTime(10), PowerState::Idle), (SimTime(5), PowerState::Act)];
        assert_eq!(
            accumulate_residency(&h, SimTime(20)),
            Err(AccountingError {
                index: 1,
                at: SimTime(5),
                prev: SimTime(10)
            })
        );
    }

    #[test]
    fn pdnp_background_one_microsecond() {
        let e = background_energy(PowerState::Pdnp, SimTime::us(1), &cfg());
        assert!(close(e, 1.2 * 0.025 * 1e-6, 1e-12), "{e}");
        assert_eq!(background_energy(PowerState::Act, SimTime::ZERO, &cfg()), 0.0);
    }

    #[test]
    fn sref_background_server_dimm() {
        let mut c = cfg();
        c.currents.idd6 = 240.0;
        c.currents.ipp6 = 40.0;
        let e = background_energy(PowerState::Sref, SimTime::ms(1000), &c);
        assert!(close(e, 0.388, 1e-12), "{e}");
    }

    #[test]
    fn command_increments() {
        let c = cfg();
        let act = event_energy(&Command::Act { bank: 0, row: 0 }, 0, &c);
        assert!(close(act.act, 0.192e-9, 1e-12), "{}", act.act);
        assert!(close(act.total(), act.act, 0.0));
        let rd = event_energy(&Command::Rd { bank: 0, col: 0 }, 0, &c);
        assert!(close(rd.rd, 3.332e-9 * 1.2 * 0.072, 1e-12));
        assert!(close(rd.rd, 0.2879e-9, 1e-4));
        let refa = event_energy(&Command::RefA, 0, &c);
        assert!(close(refa.refresh, 90.72e-9, 1e-12), "{}", refa.refresh);
        let prea = event_energy(&Command::PreA, 3, &c);
        assert!(close(prea.pre, 3.0 * 14.16e-9 * 1.2 * 0.009, 1e-12));
        let rda = event_energy(&Command::Rda { bank: 0, col: 0 }, 0, &c);
        assert!(close(rda.rd, rd.rd, 0.0));
        assert!(close(rda.pre, 14.16e-9 * 1.2 * 0.009, 1e-12));
        assert_eq!(event_energy(&Command::Pde, 0, &c).total(), 0.0);
    }

    #[test]
    fn server_dimm_self_refresh_power() {
        let d = DimmPower::ddr4_8gb_dimm();
        assert!(close(selfrefresh_power_system(512, &d), 198.656, 1e-12));
        assert!(close(selfrefresh_power_system(1, &d), 0.388, 1e-12));
        let no_vpp = DimmPower { ipp6: 0.0, ..d };
        assert!(close(selfrefresh_power_system(512, &no_vpp), 147.456, 1e-12));
    }

    #[test]
    fn server_dimm_standby_power() {
        let d = DimmPower::ddr4_8gb_dimm();
        // 512 * (350e-9 * 2.76 + 1.2 * 7.45e-6 * 0.4) / 7.8e-6
        assert!(close(standby_power_system(512, &d), 298.141_538_461_538_5, 1e-12));
        assert_eq!(standby_power_system(0, &d), 0.0);
        let tiny = DimmPower { t_rfc: SimTime(1), ..d };
        assert!(close(standby_power_system(512, &tiny), 245.76, 1e-4));
    }

    #[test]
    fn drampower_lines() {
        let rec = |at, cmd, prior| CommandRecord {
            issue_at: SimTime(at),
            rank: 0,
            cmd,
            prior,
            banks_closed: 0,
        };
        let recs = [
            rec(10_000, Command::Act { bank: 3, row: 0 }, PowerState::Idle),
            rec(20_000, Command::Pde, PowerState::Act),
            rec(30_000, Command::Pdx, PowerState::Pdna),
            rec(40_000, Command::SrefEn, PowerState::Idle),
            rec(50_000, Command::SrefEx, PowerState::Sref),
            rec(60_000, Command::Pde, PowerState::Idle),
            rec(70_000, Command::Pdx, PowerState::Pdnp),
            rec(80_000, Command::RefA, PowerState::Idle),
        ];
        let mut buf = Vec::new();
        write_drampower_trace(&mut buf, &recs, SimTime(833)).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "12,ACT,3\n24,PDN_F_ACT,0\n36,PUP_ACT,0\n48,SREN,0\n60,SREX,0\n\
             72,PDN_F_PRE,0\n84,PUP_PRE,0\n96,REF,0\n"
        );
        let mut empty = Vec::new();
        write_drampower_trace(&mut empty, &[], SimTime(833)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn meter_books_background_and_commands() {
        let c = cfg();
        let mut m = RankMeter::new(&c, SimTime::ZERO, PowerState::Idle);
        m.transition(SimTime::us(1), PowerState::Act);
        m.command(&CommandRecord {
            issue_at: SimTime::us(1),
            rank: 0,
            cmd: Command::Act { bank: 0, row: 0 },
            prior: PowerState::Idle,
            banks_closed: 0,
        });
        m.flush(SimTime::us(3));
        assert_eq!(m.residency().get(PowerState::Idle), SimTime::us(1));
        assert_eq!(m.residency().get(PowerState::Act), SimTime::us(2));
        let e = m.energy();
        assert!(close(e.pre_back, 0.0408e-6, 1e-12));
        assert!(close(e.act_back, 2.0 * 0.0531e-6, 1e-12));
        assert!(close(e.act, 0.192e-9, 1e-12));
    }
}
